use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TimeSeries;
use crate::error::{Error, Result};

/// Random-phase multisine with `n_lines` harmonics of `base_frequency`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultisineSpec {
    pub base_frequency: f64,
    pub n_lines: usize,
    pub amplitudes: Vec<f64>,
    pub sample_rate: f64,
    pub n_periods: usize,
    pub n_realizations: usize,
    pub rng_seed: u64,
}

impl MultisineSpec {
    /// Flat amplitude spectrum.
    pub fn flat(
        base_frequency: f64,
        n_lines: usize,
        amplitude: f64,
        sample_rate: f64,
        n_periods: usize,
        n_realizations: usize,
        rng_seed: u64,
    ) -> Self {
        Self {
            base_frequency,
            n_lines,
            amplitudes: vec![amplitude; n_lines],
            sample_rate,
            n_periods,
            n_realizations,
            rng_seed,
        }
    }

    /// Samples per period; errors unless `sample_rate / base_frequency` is an integer.
    pub fn period_length(&self) -> Result<usize> {
        let ratio = self.sample_rate / self.base_frequency;
        let rounded = ratio.round();
        if !ratio.is_finite() || rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * ratio {
            return Err(Error::invalid(
                "multisine",
                format!(
                    "sample rate {} / base frequency {} = {} is not an integer number of samples per period",
                    self.sample_rate, self.base_frequency, ratio
                ),
            ));
        }
        Ok(rounded as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |r: String| Err(Error::invalid("multisine", r));
        if !(self.base_frequency > 0.0) || !(self.sample_rate > 0.0) {
            return bad("base frequency and sample rate must be positive".into());
        }
        if self.n_lines == 0 || self.n_periods == 0 || self.n_realizations == 0 {
            return bad("line, period and realization counts must be positive".into());
        }
        if self.amplitudes.len() != self.n_lines {
            return bad(format!(
                "{} amplitudes for {} lines",
                self.amplitudes.len(),
                self.n_lines
            ));
        }
        if self.amplitudes.iter().any(|&a| !(a >= 0.0)) {
            return bad("amplitudes must be non-negative".into());
        }
        if self.base_frequency * self.n_lines as f64 >= self.sample_rate / 2.0 {
            return bad(format!(
                "highest line {} Hz is not below Nyquist {} Hz",
                self.base_frequency * self.n_lines as f64,
                self.sample_rate / 2.0
            ));
        }
        self.period_length()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepDirection {
    Up,
    Down,
    UpThenDown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub f_start: f64,
    pub f_end: f64,
    /// Duration of one sweep direction in seconds.
    pub sweep_duration: f64,
    pub amplitude: f64,
    pub sample_rate: f64,
    pub direction: SweepDirection,
    /// Seconds of zero input appended after the sweep.
    pub hold_tail: f64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate / 2.0;
        let in_band = |f: f64| (0.0..nyquist).contains(&f);
        if !(self.sample_rate > 0.0) {
            return Err(Error::invalid("sweep", "sample rate must be positive"));
        }
        if !in_band(self.f_start) || !in_band(self.f_end) {
            return Err(Error::invalid(
                "sweep",
                format!(
                    "sweep band [{}, {}] Hz outside [0, {}) Hz",
                    self.f_start, self.f_end, nyquist
                ),
            ));
        }
        if !(self.sweep_duration > 0.0) {
            return Err(Error::invalid("sweep", "sweep duration must be positive"));
        }
        if !(self.hold_tail >= 0.0) {
            return Err(Error::invalid("sweep", "hold tail must be non-negative"));
        }
        Ok(())
    }

    fn active_duration(&self) -> f64 {
        match self.direction {
            SweepDirection::UpThenDown => 2.0 * self.sweep_duration,
            _ => self.sweep_duration,
        }
    }
}

/// Phase of a linear chirp from `f0` to `f1` over `duration`, at time `t` into it.
fn chirp_phase(f0: f64, f1: f64, duration: f64, t: f64) -> f64 {
    2.0 * PI * (f0 * t + 0.5 * (f1 - f0) * t * t / duration)
}

fn chirp_frequency(f0: f64, f1: f64, duration: f64, t: f64) -> f64 {
    f0 + (f1 - f0) * t / duration
}

/// Analytic description of an input signal, sampled to build records and
/// differentiated exactly when a plant needs the input velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Excitation {
    Multisine {
        base_frequency: f64,
        amplitudes: Vec<f64>,
        phases: Vec<f64>,
    },
    Sweep(SweepSpec),
    RampedSine {
        f_target: f64,
        amplitude: f64,
        ramp_duration: f64,
        hold_duration: f64,
    },
    Sine {
        frequency: f64,
        amplitude: f64,
    },
}

impl Excitation {
    /// (phase, instantaneous frequency in Hz, amplitude) of the swept families,
    /// or `None` where the signal is held at zero.
    fn swept_state(&self, t: f64) -> Option<(f64, f64, f64)> {
        match self {
            Excitation::Sweep(s) => {
                let td = s.sweep_duration;
                let (phase, freq) = match s.direction {
                    SweepDirection::Up if t < td => (
                        chirp_phase(s.f_start, s.f_end, td, t),
                        chirp_frequency(s.f_start, s.f_end, td, t),
                    ),
                    SweepDirection::Down if t < td => (
                        chirp_phase(s.f_end, s.f_start, td, t),
                        chirp_frequency(s.f_end, s.f_start, td, t),
                    ),
                    SweepDirection::UpThenDown if t < td => (
                        chirp_phase(s.f_start, s.f_end, td, t),
                        chirp_frequency(s.f_start, s.f_end, td, t),
                    ),
                    SweepDirection::UpThenDown if t < 2.0 * td => {
                        let tau = t - td;
                        (
                            chirp_phase(s.f_start, s.f_end, td, td)
                                + chirp_phase(s.f_end, s.f_start, td, tau),
                            chirp_frequency(s.f_end, s.f_start, td, tau),
                        )
                    }
                    _ => return None,
                };
                Some((phase, freq, s.amplitude))
            }
            Excitation::RampedSine {
                f_target,
                amplitude,
                ramp_duration,
                hold_duration,
            } => {
                let ramp = *ramp_duration;
                if t < ramp {
                    Some((
                        chirp_phase(0.0, *f_target, ramp, t),
                        chirp_frequency(0.0, *f_target, ramp, t),
                        *amplitude,
                    ))
                } else if t < ramp + hold_duration {
                    let phase0 = if ramp > 0.0 {
                        chirp_phase(0.0, *f_target, ramp, ramp)
                    } else {
                        0.0
                    };
                    Some((
                        phase0 + 2.0 * PI * f_target * (t - ramp),
                        *f_target,
                        *amplitude,
                    ))
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Excitation::Multisine {
                base_frequency,
                amplitudes,
                phases,
            } => {
                let scale = 1.0 / (amplitudes.len() as f64).sqrt();
                let mut acc = 0.0;
                for (n, (a, p)) in amplitudes.iter().zip(phases).enumerate() {
                    acc += a * (2.0 * PI * (n + 1) as f64 * base_frequency * t + p).sin();
                }
                scale * acc
            }
            Excitation::Sine {
                frequency,
                amplitude,
            } => amplitude * (2.0 * PI * frequency * t).sin(),
            _ => self
                .swept_state(t)
                .map_or(0.0, |(phase, _, amp)| amp * phase.sin()),
        }
    }

    /// Exact time derivative of [`Excitation::value`].
    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Excitation::Multisine {
                base_frequency,
                amplitudes,
                phases,
            } => {
                let scale = 1.0 / (amplitudes.len() as f64).sqrt();
                let mut acc = 0.0;
                for (n, (a, p)) in amplitudes.iter().zip(phases).enumerate() {
                    let w = 2.0 * PI * (n + 1) as f64 * base_frequency;
                    acc += a * w * (w * t + p).cos();
                }
                scale * acc
            }
            Excitation::Sine {
                frequency,
                amplitude,
            } => {
                let w = 2.0 * PI * frequency;
                amplitude * w * (w * t).cos()
            }
            _ => self
                .swept_state(t)
                .map_or(0.0, |(phase, f, amp)| amp * 2.0 * PI * f * phase.cos()),
        }
    }

    /// Commanded instantaneous frequency in Hz, where defined.
    pub fn commanded_frequency(&self, t: f64) -> Option<f64> {
        match self {
            Excitation::Sine { frequency, .. } => Some(*frequency),
            Excitation::Multisine { .. } => None,
            _ => self.swept_state(t).map(|(_, f, _)| f),
        }
    }

    /// Natural record length in seconds; `None` for stationary signals.
    pub fn duration(&self) -> Option<f64> {
        match self {
            Excitation::Multisine { base_frequency, .. } => Some(1.0 / base_frequency),
            Excitation::Sweep(s) => Some(s.active_duration() + s.hold_tail),
            Excitation::RampedSine {
                ramp_duration,
                hold_duration,
                ..
            } => Some(ramp_duration + hold_duration),
            Excitation::Sine { .. } => None,
        }
    }

    /// Evaluate `n` samples at `i / sample_rate`.
    pub fn sample(&self, sample_rate: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.value(i as f64 / sample_rate)).collect()
    }

    pub fn sample_derivative(&self, sample_rate: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| self.derivative(i as f64 / sample_rate))
            .collect()
    }
}

/// Draw the phases of every realization. Realization `m` consumes draws
/// `m*N .. (m+1)*N` of a single ChaCha8 stream seeded with `rng_seed`.
pub fn multisine_realizations(spec: &MultisineSpec) -> Result<Vec<Excitation>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    Ok((0..spec.n_realizations)
        .map(|_| {
            let phases = (0..spec.n_lines)
                .map(|_| 2.0 * PI * rng.random::<f64>())
                .collect();
            Excitation::Multisine {
                base_frequency: spec.base_frequency,
                amplitudes: spec.amplitudes.clone(),
                phases,
            }
        })
        .collect())
}

/// Sample one multisine realization over `n_periods` periods. Every period is
/// evaluated on the same in-period time grid, so periods are bit-identical.
pub(crate) fn sample_multisine_periodic(
    excitation: &Excitation,
    sample_rate: f64,
    period_length: usize,
    n_periods: usize,
) -> Vec<f64> {
    let one: Vec<f64> = (0..period_length)
        .map(|i| excitation.value(i as f64 / sample_rate))
        .collect();
    let mut out = Vec::with_capacity(period_length * n_periods);
    for _ in 0..n_periods {
        out.extend_from_slice(&one);
    }
    out
}

pub(crate) fn sample_multisine_derivative_periodic(
    excitation: &Excitation,
    sample_rate: f64,
    period_length: usize,
    n_periods: usize,
) -> Vec<f64> {
    let one: Vec<f64> = (0..period_length)
        .map(|i| excitation.derivative(i as f64 / sample_rate))
        .collect();
    one.iter()
        .cycle()
        .take(period_length * n_periods)
        .copied()
        .collect()
}

pub fn generate_multisine(spec: &MultisineSpec) -> Result<Vec<TimeSeries>> {
    let period = spec.period_length()?;
    multisine_realizations(spec)?
        .iter()
        .enumerate()
        .map(|(m, exc)| {
            let x = sample_multisine_periodic(exc, spec.sample_rate, period, spec.n_periods);
            Ok(TimeSeries::new(spec.sample_rate, x)?
                .with_periods(period, spec.n_periods)?
                .with_label(format!("multisine_r{m}")))
        })
        .collect()
}

fn samples_for(duration: f64, sample_rate: f64) -> usize {
    (duration * sample_rate).round() as usize
}

pub fn generate_sweep(spec: &SweepSpec) -> Result<TimeSeries> {
    spec.validate()?;
    let n = samples_for(spec.active_duration() + spec.hold_tail, spec.sample_rate);
    let exc = Excitation::Sweep(spec.clone());
    Ok(TimeSeries::new(spec.sample_rate, exc.sample(spec.sample_rate, n))?
        .with_label(format!("sweep_A{}", spec.amplitude)))
}

/// Ramp duration used when none is given: 8 s for every multiple of the
/// reference frequency reached, i.e. a sweep rate of `f_ref / 8` Hz/s.
pub fn default_ramp_duration(f_target: f64, f_ref: f64) -> f64 {
    8.0 * f_target / f_ref
}

pub fn generate_ramped_sine(
    f_target: f64,
    amplitude: f64,
    ramp_duration: f64,
    hold_duration: f64,
    sample_rate: f64,
) -> Result<TimeSeries> {
    if !(sample_rate > 0.0) || !(f_target >= 0.0) || f_target >= sample_rate / 2.0 {
        return Err(Error::invalid(
            "ramped sine",
            format!("target {f_target} Hz must lie in [0, {}) Hz", sample_rate / 2.0),
        ));
    }
    if !(ramp_duration >= 0.0) || !(hold_duration >= 0.0) {
        return Err(Error::invalid("ramped sine", "durations must be non-negative"));
    }
    let exc = Excitation::RampedSine {
        f_target,
        amplitude,
        ramp_duration,
        hold_duration,
    };
    let n = samples_for(ramp_duration + hold_duration, sample_rate);
    Ok(TimeSeries::new(sample_rate, exc.sample(sample_rate, n))?
        .with_label(format!("ramped_f{f_target}_A{amplitude}")))
}
