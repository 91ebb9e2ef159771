//! Validation metrics and the single-sine validation suite.
//!
//! Each experiment drives the plant with a sine whose frequency is ramped up
//! from zero and then held. Metrics are computed on the held part only,
//! starting one reference period after the ramp ends.

use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::load_timeseries_csv;
use crate::optim::estimate_initial_state;
use crate::pnlss::{PnlssModel, SimulationState};
use crate::signals::{default_ramp_duration, generate_ramped_sine, Excitation, TimeSeries};
use crate::vdp::{simulate_vdp_from, VdpConfig, LOCKIN_INITIAL_STATE};

fn check_lengths(truth: &[f64], model: &[f64], context: &'static str) -> Result<()> {
    if truth.len() != model.len() {
        return Err(Error::Dimension {
            context,
            expected: truth.len(),
            actual: model.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::invalid(context, "empty signal"));
    }
    Ok(())
}

/// Relative rms error per part, combined with weights `N_i / N`.
pub fn weighted_rms_error<T: AsRef<[f64]>>(truth: &[T], model: &[T]) -> Result<f64> {
    if truth.len() != model.len() {
        return Err(Error::Dimension {
            context: "rms error parts",
            expected: truth.len(),
            actual: model.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::invalid("rms error", "no parts"));
    }
    let total: usize = truth.iter().map(|p| p.as_ref().len()).sum();
    let mut acc = 0.0;
    for (t, m) in truth.iter().zip(model) {
        let (t, m) = (t.as_ref(), m.as_ref());
        check_lengths(t, m, "rms error part")?;
        let num: f64 = t.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = t.iter().map(|a| a * a).sum();
        if den == 0.0 {
            return Err(Error::ZeroSignal("relative rms error"));
        }
        acc += t.len() as f64 / total as f64 * (num / den).sqrt();
    }
    Ok(acc)
}

/// Pearson correlation coefficient.
pub fn correlation(truth: &[f64], model: &[f64]) -> Result<f64> {
    check_lengths(truth, model, "correlation")?;
    let n = truth.len() as f64;
    let mt = truth.iter().sum::<f64>() / n;
    let mm = model.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in truth.iter().zip(model) {
        let (da, db) = (a - mt, b - mm);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroSignal("correlation of a constant signal"));
    }
    // sqrt of the product keeps R exactly 1 for identical signals
    let denom = match (sxx * syy).sqrt() {
        d if d.is_finite() && d > 0.0 => d,
        _ => sxx.sqrt() * syy.sqrt(),
    };
    Ok((sxy / denom).clamp(-1.0, 1.0))
}

/// `(max|truth| - max|model|) / max|truth|`; positive when the model peak is low.
pub fn max_amplitude_error(truth: &[f64], model: &[f64]) -> Result<f64> {
    if truth.is_empty() || model.is_empty() {
        return Err(Error::invalid("max amplitude error", "empty signal"));
    }
    let peak = |x: &[f64]| x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let pt = peak(truth);
    if pt == 0.0 {
        return Err(Error::ZeroSignal("max amplitude error"));
    }
    Ok((pt - peak(model)) / pt)
}

fn dft_magnitudes(x: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf.iter().map(|c| c.norm()).collect()
}

/// Relative error of the DFT magnitudes over the full grid, no window.
pub fn dft_magnitude_error(truth: &[f64], model: &[f64]) -> Result<f64> {
    check_lengths(truth, model, "dft error")?;
    let ct = dft_magnitudes(truth);
    let cm = dft_magnitudes(model);
    let den: f64 = ct.iter().map(|c| c * c).sum();
    if den == 0.0 {
        return Err(Error::ZeroSignal("dft magnitude error"));
    }
    let num: f64 = ct.iter().zip(&cm).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((num / den).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub e_rms: f64,
    pub r: f64,
    pub e_max_a: f64,
    pub e_dft: f64,
}

impl Metrics {
    pub fn compute(truth: &[f64], model: &[f64]) -> Result<Self> {
        Ok(Self {
            e_rms: weighted_rms_error(&[truth], &[model])?,
            r: correlation(truth, model)?,
            e_max_a: max_amplitude_error(truth, model)?,
            e_dft: dft_magnitude_error(truth, model)?,
        })
    }

    fn as_array(&self) -> [f64; 4] {
        [self.e_rms, self.r, self.e_max_a, self.e_dft]
    }

    fn from_array(a: [f64; 4]) -> Self {
        Self {
            e_rms: a[0],
            r: a[1],
            e_max_a: a[2],
            e_dft: a[3],
        }
    }
}

/// One single-sine experiment. `rel_frequency` is relative to the reference
/// (Strouhal or autonomous) frequency; `amplitude` is in the plant's input units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub label: String,
    pub rel_frequency: f64,
    pub amplitude: f64,
}

impl Experiment {
    /// Frequency-major grid numbered from 1.
    pub fn grid(rel_frequencies: &[f64], amplitudes: &[f64]) -> Vec<Experiment> {
        let mut out = Vec::with_capacity(rel_frequencies.len() * amplitudes.len());
        for &f in rel_frequencies {
            for &a in amplitudes {
                out.push(Experiment {
                    label: (out.len() + 1).to_string(),
                    rel_frequency: f,
                    amplitude: a,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSettings {
    /// Reference frequency in Hz.
    pub f_ref: f64,
    pub sample_rate: f64,
    /// Ramp length in seconds; `None` uses 8 s per multiple of `f_ref`.
    pub ramp_duration: Option<f64>,
    pub hold_duration: f64,
    pub estimate_u0: bool,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        Self {
            f_ref: 3.0,
            sample_rate: 50.0,
            ramp_duration: None,
            hold_duration: 20.0,
            estimate_u0: false,
        }
    }
}

impl SuiteSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_ref > 0.0) || !(self.sample_rate > 0.0) || !(self.hold_duration > 0.0) {
            return Err(Error::invalid(
                "validation settings",
                "f_ref, sample_rate and hold_duration must be positive",
            ));
        }
        if self.ramp_duration.is_some_and(|r| !(r >= 0.0)) {
            return Err(Error::invalid("validation settings", "negative ramp duration"));
        }
        Ok(())
    }

    pub fn ramp_for(&self, experiment: &Experiment) -> f64 {
        self.ramp_duration
            .unwrap_or_else(|| default_ramp_duration(experiment.rel_frequency * self.f_ref, self.f_ref))
    }

    /// Index of the first sample of the constant-frequency segment.
    pub fn hold_start(&self, experiment: &Experiment) -> usize {
        ((self.ramp_for(experiment) + 1.0 / self.f_ref) * self.sample_rate - 1e-9).ceil() as usize
    }

    pub fn excitation(&self, experiment: &Experiment) -> Excitation {
        Excitation::RampedSine {
            f_target: experiment.rel_frequency * self.f_ref,
            amplitude: experiment.amplitude,
            ramp_duration: self.ramp_for(experiment),
            hold_duration: self.hold_duration,
        }
    }
}

/// Source of ground truth. The returned record holds the model input and the
/// true output, sampled at the suite rate and aligned with the excitation.
pub trait Plant {
    fn respond(&self, experiment: &Experiment, settings: &SuiteSettings) -> Result<TimeSeries>;
}

/// Van der Pol oscillator driven by the ramped sine as displacement; the
/// model input is its velocity.
#[derive(Debug, Clone)]
pub struct VdpPlant {
    pub config: VdpConfig,
    pub initial_state: [f64; 2],
}

impl VdpPlant {
    pub fn new(config: VdpConfig) -> Self {
        Self {
            config,
            initial_state: LOCKIN_INITIAL_STATE,
        }
    }
}

impl Plant for VdpPlant {
    fn respond(&self, experiment: &Experiment, settings: &SuiteSettings) -> Result<TimeSeries> {
        let exc = settings.excitation(experiment);
        let y = generate_ramped_sine(
            experiment.rel_frequency * settings.f_ref,
            experiment.amplitude,
            settings.ramp_for(experiment),
            settings.hold_duration,
            settings.sample_rate,
        )?;
        let resp = simulate_vdp_from(&self.config, &y, Some(&exc), self.initial_state)?;
        Ok(resp.velocity_record()?.with_label(experiment.label.clone()))
    }
}

/// Externally supplied records, one CSV per experiment label.
#[derive(Debug, Clone, Default)]
pub struct CsvPlant {
    pub files: Vec<(String, PathBuf)>,
}

impl Plant for CsvPlant {
    fn respond(&self, experiment: &Experiment, settings: &SuiteSettings) -> Result<TimeSeries> {
        let path = self
            .files
            .iter()
            .find(|(label, _)| *label == experiment.label)
            .map(|(_, p)| p)
            .ok_or_else(|| {
                Error::invalid(
                    "validation data",
                    format!("no CSV supplied for experiment {}", experiment.label),
                )
            })?;
        Ok(load_timeseries_csv(path, settings.sample_rate)?.with_label(experiment.label.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub label: String,
    pub rel_frequency: f64,
    pub amplitude: f64,
    pub metrics: Option<Metrics>,
    pub initial_state: Option<SimulationState>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean: Metrics,
    /// Sample standard deviation; zero for a single experiment.
    pub std: Metrics,
}

impl Aggregate {
    pub fn from_metrics(metrics: &[Metrics]) -> Option<Self> {
        if metrics.is_empty() {
            return None;
        }
        let n = metrics.len() as f64;
        let mut mean = [0.0; 4];
        for m in metrics {
            for (acc, v) in mean.iter_mut().zip(m.as_array()) {
                *acc += v / n;
            }
        }
        let mut var = [0.0; 4];
        if metrics.len() > 1 {
            for m in metrics {
                for ((acc, v), mu) in var.iter_mut().zip(m.as_array()).zip(mean) {
                    *acc += (v - mu) * (v - mu) / (n - 1.0);
                }
            }
        }
        Some(Self {
            count: metrics.len(),
            mean: Metrics::from_array(mean),
            std: Metrics::from_array(var.map(f64::sqrt)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub settings: SuiteSettings,
    pub rows: Vec<ValidationRow>,
    pub aggregate: Option<Aggregate>,
}

impl ValidationReport {
    /// One row per experiment; failed experiments get NaN metrics.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "rel_freq,amplitude,e_rms,R,e_maxA,e_dft")?;
        for row in &self.rows {
            let m = row.metrics.map_or([f64::NAN; 4], |m| m.as_array());
            writeln!(
                w,
                "{},{},{},{},{},{}",
                row.rel_frequency, row.amplitude, m[0], m[1], m[2], m[3]
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn successful(&self) -> impl Iterator<Item = (&ValidationRow, Metrics)> {
        self.rows.iter().filter_map(|r| r.metrics.map(|m| (r, m)))
    }
}

fn run_one(
    model: &PnlssModel,
    experiment: &Experiment,
    plant: &dyn Plant,
    settings: &SuiteSettings,
) -> Result<(Metrics, SimulationState)> {
    let record = plant.respond(experiment, settings)?;
    let truth = record.require_output("validation")?;
    let start = settings.hold_start(experiment);
    if start + 2 > record.len() {
        return Err(Error::invalid(
            "validation record",
            format!(
                "{} samples leave no constant-frequency segment after sample {start}",
                record.len()
            ),
        ));
    }
    // the ramp, but at least two reference periods
    let min_window = (2.0 * settings.sample_rate / settings.f_ref).ceil() as usize;
    let window = start.max(min_window).min(record.len());
    let init = estimate_initial_state(model, &record, window, settings.estimate_u0)?.state;
    let sim = model.simulate_samples(record.input(), &init)?;
    Ok((Metrics::compute(&truth[start..], &sim[start..])?, init))
}

/// Run every experiment; a failing experiment is recorded and the suite continues.
pub fn run_validation_suite(
    model: &PnlssModel,
    experiments: &[Experiment],
    plant: &dyn Plant,
    settings: &SuiteSettings,
) -> Result<ValidationReport> {
    settings.validate()?;
    if experiments.is_empty() {
        return Err(Error::invalid("validation suite", "no experiments"));
    }
    if (model.sample_rate() - settings.sample_rate).abs() > 1e-9 * settings.sample_rate {
        return Err(Error::invalid(
            "validation suite",
            format!(
                "model sampled at {} Hz, suite at {} Hz",
                model.sample_rate(),
                settings.sample_rate
            ),
        ));
    }
    let mut rows = Vec::with_capacity(experiments.len());
    for exp in experiments {
        let (metrics, initial_state, error) = match run_one(model, exp, plant, settings) {
            Ok((m, s)) => (Some(m), Some(s), None),
            Err(e) => {
                log::warn!("validation experiment {} failed: {e}", exp.label);
                (None, None, Some(e.to_string()))
            }
        };
        rows.push(ValidationRow {
            label: exp.label.clone(),
            rel_frequency: exp.rel_frequency,
            amplitude: exp.amplitude,
            metrics,
            initial_state,
            error,
        });
    }
    let ok: Vec<Metrics> = rows.iter().filter_map(|r| r.metrics).collect();
    Ok(ValidationReport {
        settings: *settings,
        aggregate: Aggregate::from_metrics(&ok),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn wave(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = i as f64 / 50.0;
                (2.0 * PI * 3.0 * t).sin() + 0.3 * (2.0 * PI * 9.0 * t + 0.4).sin() + 0.1
            })
            .collect()
    }

    #[test]
    fn rms_error_trivial_cases() {
        let y = wave(200);
        assert_eq!(weighted_rms_error(&[&y[..]], &[&y[..]]).unwrap(), 0.0);
        let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        assert!((weighted_rms_error(&[&y[..]], &[&y2[..]]).unwrap() - 1.0).abs() < 1e-15);
        let z = vec![0.0; 10];
        assert!(matches!(
            weighted_rms_error(&[&z[..]], &[&z[..]]),
            Err(Error::ZeroSignal(_))
        ));
    }

    #[test]
    fn weighted_parts_example() {
        // part lengths N and 3N with part errors 0.1 and 0.2
        let n = 40;
        let a = wave(n);
        let b = wave(3 * n);
        let am: Vec<f64> = a.iter().map(|v| 1.1 * v).collect();
        let bm: Vec<f64> = b.iter().map(|v| 0.8 * v).collect();
        let e = weighted_rms_error(&[a, b], &[am, bm]).unwrap();
        assert!((e - 0.175).abs() < 1e-14, "{e}");
    }

    #[test]
    fn correlation_degenerate_cases() {
        let y = wave(300);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert_eq!(correlation(&y, &y).unwrap(), 1.0);
        assert_eq!(correlation(&y, &neg).unwrap(), -1.0);
        assert!(correlation(&y, &vec![2.0; 300]).is_err());
        assert!(correlation(&y, &y[1..]).is_err());
    }

    #[test]
    fn max_amplitude_cases() {
        let y = wave(300);
        let low: Vec<f64> = y.iter().map(|v| 0.9 * v).collect();
        assert_eq!(max_amplitude_error(&y, &y).unwrap(), 0.0);
        assert!((max_amplitude_error(&y, &low).unwrap() - 0.1).abs() < 1e-15);
        assert!(max_amplitude_error(&[0.0; 4], &y[..4]).is_err());
    }

    #[test]
    fn dft_error_matches_naive_dft() {
        let y = wave(64);
        let m: Vec<f64> = y.iter().enumerate().map(|(i, v)| v + 0.01 * (i as f64).cos()).collect();
        let naive = |x: &[f64]| -> Vec<f64> {
            let n = x.len();
            (0..n)
                .map(|k| {
                    x.iter()
                        .enumerate()
                        .map(|(i, &v)| {
                            let a = -2.0 * PI * (k * i % n) as f64 / n as f64;
                            Complex64::new(a.cos(), a.sin()) * v
                        })
                        .sum::<Complex64>()
                        .norm()
                })
                .collect()
        };
        let (ct, cm) = (naive(&y), naive(&m));
        let num: f64 = ct.iter().zip(&cm).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = ct.iter().map(|a| a * a).sum();
        let got = dft_magnitude_error(&y, &m).unwrap();
        assert!((got - (num / den).sqrt()).abs() < 1e-12);
        assert_eq!(dft_magnitude_error(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn hold_segment_boundary() {
        let s = SuiteSettings::default();
        let e = Experiment {
            label: "x".into(),
            rel_frequency: 1.1,
            amplitude: 1.0,
        };
        // ramp 8.8 s plus one period of 3 Hz
        assert_eq!(s.hold_start(&e), ((8.8 + 1.0 / 3.0) * 50.0f64).ceil() as usize);
        let fixed = SuiteSettings {
            ramp_duration: Some(2.0),
            ..s
        };
        assert_eq!(fixed.hold_start(&e), 117);
    }

    #[test]
    fn aggregate_statistics() {
        let m = |v: f64| Metrics::from_array([v; 4]);
        let a = Aggregate::from_metrics(&[m(1.0), m(2.0), m(3.0)]).unwrap();
        assert_eq!(a.mean.e_rms, 2.0);
        assert_eq!(a.std.e_dft, 1.0);
        assert_eq!(Aggregate::from_metrics(&[m(1.0)]).unwrap().std.r, 0.0);
        assert!(Aggregate::from_metrics(&[]).is_none());
    }

    #[test]
    fn grid_labels() {
        let g = Experiment::grid(&[0.5, 0.7], &[0.05, 0.1, 0.15]);
        assert_eq!(g.len(), 6);
        assert_eq!(g[0].label, "1");
        assert_eq!(g[5].label, "6");
        assert_eq!((g[3].rel_frequency, g[3].amplitude), (0.7, 0.05));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dft_error_shift_invariant(
            xs in prop::collection::vec(-5.0f64..5.0, 8..128),
            k in 0usize..1000,
        ) {
            prop_assume!(xs.iter().any(|v| v.abs() > 1e-3));
            let k = k % xs.len();
            let mut shifted = xs.clone();
            shifted.rotate_left(k);
            prop_assert!(dft_magnitude_error(&xs, &shifted).unwrap() <= 1e-12);
        }

        #[test]
        fn rms_error_scale_covariant(
            xs in prop::collection::vec(-5.0f64..5.0, 4..64),
            noise in prop::collection::vec(-1.0f64..1.0, 64),
            alpha in 0.01f64..100.0,
        ) {
            prop_assume!(xs.iter().any(|v| v.abs() > 1e-3));
            let m: Vec<f64> = xs.iter().zip(&noise).map(|(a, b)| a + b).collect();
            let xa: Vec<f64> = xs.iter().map(|v| alpha * v).collect();
            let ma: Vec<f64> = m.iter().map(|v| alpha * v).collect();
            let e = weighted_rms_error(&[&xs[..]], &[&m[..]]).unwrap();
            let ea = weighted_rms_error(&[&xa[..]], &[&ma[..]]).unwrap();
            prop_assert!((e - ea).abs() <= 1e-12 * e.max(1.0));
        }

        #[test]
        fn correlation_affine_invariant(
            xs in prop::collection::vec(-5.0f64..5.0, 4..64),
            noise in prop::collection::vec(-1.0f64..1.0, 64),
            slope in 0.01f64..100.0,
            offset in -10.0f64..10.0,
        ) {
            let m: Vec<f64> = xs.iter().zip(&noise).map(|(a, b)| a + b).collect();
            let r = correlation(&xs, &m);
            prop_assume!(r.is_ok());
            let ma: Vec<f64> = m.iter().map(|v| slope * v + offset).collect();
            let r = r.unwrap();
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((r - correlation(&xs, &ma).unwrap()).abs() < 1e-9);
        }
    }
}
