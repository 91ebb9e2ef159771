//! Forced Van der Pol oscillator used as a ground-truth plant:
//! `c'' + mu W (c^2 - 1) c' + W^2 c = y'`, with `W = 2 pi f_aut`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rustfft::FftPlanner;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freqid::LinearSsModel;
use crate::pnlss::{enumerate_basis, MonomialBasis, PnlssModel};
use crate::signals::{
    generate_multisine, multisine_realizations, sample_multisine_derivative_periodic, Excitation,
    MultisineSpec, TimeSeries,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VdpConfig {
    pub mu: f64,
    pub f_aut: f64,
    pub integrator_step: f64,
    pub output_sample_rate: f64,
}

impl Default for VdpConfig {
    fn default() -> Self {
        Self {
            mu: 0.3,
            f_aut: 3.0,
            integrator_step: 1e-3,
            output_sample_rate: 50.0,
        }
    }
}

impl VdpConfig {
    pub fn new(mu: f64, f_aut: f64, integrator_step: f64, output_sample_rate: f64) -> Result<Self> {
        let c = Self {
            mu,
            f_aut,
            integrator_step,
            output_sample_rate,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid("Van der Pol config", "mu must be positive"));
        }
        if !(self.f_aut > 0.0 && self.f_aut.is_finite()) {
            return Err(Error::invalid("Van der Pol config", "f_aut must be positive"));
        }
        if !(self.integrator_step > 0.0 && self.integrator_step <= 1.0 / (50.0 * self.f_aut)) {
            return Err(Error::invalid(
                "Van der Pol config",
                format!(
                    "integrator step {} must lie in (0, 1/(50 f_aut)] = (0, {}]",
                    self.integrator_step,
                    1.0 / (50.0 * self.f_aut)
                ),
            ));
        }
        if !(self.output_sample_rate > 0.0 && self.output_sample_rate.is_finite()) {
            return Err(Error::invalid("Van der Pol config", "output sample rate must be positive"));
        }
        Ok(())
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI * self.f_aut
    }
}

/// Simulated response. `record` carries the displacement excitation `y` as
/// input and `c_y` as output; `velocity` is `y'` at the same samples, which is
/// the input the oscillator actually sees.
#[derive(Debug, Clone)]
pub struct VdpResponse {
    pub record: TimeSeries,
    pub velocity: Vec<f64>,
}

impl VdpResponse {
    /// The record with `y'` as input, as used for identification.
    pub fn velocity_record(&self) -> Result<TimeSeries> {
        self.record.clone().with_input(self.velocity.clone())
    }
}

/// Central differences inside, one-sided at the edges.
pub fn differentiate(x: &[f64], sample_rate: f64) -> Vec<f64> {
    let n = x.len();
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|i| {
                if i == 0 {
                    (x[1] - x[0]) * sample_rate
                } else if i == n - 1 {
                    (x[n - 1] - x[n - 2]) * sample_rate
                } else {
                    (x[i + 1] - x[i - 1]) * sample_rate / 2.0
                }
            })
            .collect(),
    }
}

fn lerp_samples(x: &[f64], sample_rate: f64, t: f64) -> f64 {
    let s = (t * sample_rate).max(0.0);
    let k = s.floor() as usize;
    if k + 1 >= x.len() {
        return *x.last().unwrap_or(&0.0);
    }
    let w = s - k as f64;
    x[k] * (1.0 - w) + x[k + 1] * w
}

pub fn simulate_vdp(
    config: &VdpConfig,
    input: &TimeSeries,
    excitation: Option<&Excitation>,
) -> Result<VdpResponse> {
    simulate_vdp_from(config, input, excitation, [0.0, 0.0])
}

/// Integrate with fixed-step RK4 from `state = [c, c']`. With a known
/// excitation `y'` is evaluated analytically, else by differencing the samples.
pub fn simulate_vdp_from(
    config: &VdpConfig,
    input: &TimeSeries,
    excitation: Option<&Excitation>,
    state: [f64; 2],
) -> Result<VdpResponse> {
    config.validate()?;
    let fs = config.output_sample_rate;
    if (input.sample_rate() - fs).abs() > 1e-9 * fs {
        return Err(Error::invalid(
            "Van der Pol input",
            format!("sampled at {} Hz, expected {fs} Hz", input.sample_rate()),
        ));
    }
    let n = input.len();
    let sampled_velocity;
    let velocity: Vec<f64> = match excitation {
        Some(exc @ Excitation::Multisine { .. }) if input.period_length().is_some() => {
            let p = input.period_length().unwrap_or(n);
            let mut v = sample_multisine_derivative_periodic(exc, fs, p, n.div_ceil(p));
            v.truncate(n);
            v
        }
        Some(exc) => exc.sample_derivative(fs, n),
        None => differentiate(input.input(), fs),
    };
    if excitation.is_none() {
        sampled_velocity = velocity.clone();
    } else {
        sampled_velocity = Vec::new();
    }
    let forcing = |t: f64| -> f64 {
        match excitation {
            Some(exc) => exc.derivative(t),
            None => lerp_samples(&sampled_velocity, fs, t),
        }
    };

    let h = config.integrator_step;
    let w = config.omega();
    let mw = config.mu * w;
    let w2 = w * w;
    let rhs = |t: f64, c: f64, v: f64| -> (f64, f64) {
        (v, forcing(t) - mw * (c * c - 1.0) * v - w2 * c)
    };

    let mut out = Vec::with_capacity(n);
    let (mut c, mut v) = (state[0], state[1]);
    let mut k: usize = 0;
    for i in 0..n {
        let s = i as f64 / fs / h;
        // integrate up to the step bracketing the sample time
        let target = (s + 1e-9).floor() as usize;
        while k < target {
            let t = k as f64 * h;
            let (k1c, k1v) = rhs(t, c, v);
            let (k2c, k2v) = rhs(t + h / 2.0, c + h / 2.0 * k1c, v + h / 2.0 * k1v);
            let (k3c, k3v) = rhs(t + h / 2.0, c + h / 2.0 * k2c, v + h / 2.0 * k2v);
            let (k4c, k4v) = rhs(t + h, c + h * k3c, v + h * k3v);
            c += h / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c);
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            k += 1;
            if !c.is_finite() || !v.is_finite() {
                return Err(Error::Divergence { sample: i });
            }
        }
        let frac = s - k as f64;
        if frac <= 1e-9 {
            out.push(c);
        } else {
            // one trial step for the interpolation end point, not committed
            let t = k as f64 * h;
            let (k1c, k1v) = rhs(t, c, v);
            let (k2c, k2v) = rhs(t + h / 2.0, c + h / 2.0 * k1c, v + h / 2.0 * k1v);
            let (k3c, k3v) = rhs(t + h / 2.0, c + h / 2.0 * k2c, v + h / 2.0 * k2v);
            let (k4c, _) = rhs(t + h, c + h * k3c, v + h * k3v);
            let c_next = c + h / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c);
            out.push(c * (1.0 - frac) + c_next * frac);
        }
    }
    let record = input.clone().with_output(out)?;
    Ok(VdpResponse { record, velocity })
}

/// Amplitude of each sine in the identification multisine.
pub const IDENTIFICATION_LINE_AMPLITUDE: f64 = 15.0;

/// Identification design: lines 0.1..4.5 Hz at 50 Hz, six periods per
/// realization, every line at [`IDENTIFICATION_LINE_AMPLITUDE`]. The multisine
/// normalizes its sum by `1/sqrt(N)`, so the coefficients carry `sqrt(N)`.
pub fn identification_multisine(n_realizations: usize, rng_seed: u64) -> MultisineSpec {
    let n_lines = 45;
    MultisineSpec::flat(
        0.1,
        n_lines,
        IDENTIFICATION_LINE_AMPLITUDE * (n_lines as f64).sqrt(),
        50.0,
        6,
        n_realizations,
        rng_seed,
    )
}

/// Simulate every realization of a multisine design from rest. The returned
/// records carry `y'` as input and `c_y` as output, all periods kept.
pub fn multisine_records(config: &VdpConfig, spec: &MultisineSpec) -> Result<Vec<TimeSeries>> {
    if (spec.sample_rate - config.output_sample_rate).abs() > 1e-9 * spec.sample_rate {
        return Err(Error::invalid(
            "Van der Pol multisine",
            "multisine and output sample rates differ",
        ));
    }
    let inputs = generate_multisine(spec)?;
    let excitations = multisine_realizations(spec)?;
    inputs
        .iter()
        .zip(&excitations)
        .map(|(ts, exc)| simulate_vdp(config, ts, Some(exc))?.velocity_record())
        .collect()
}

/// Exact PNLSS form of the explicit Euler discretization with step `ts`.
/// The state basis holds the cubic monomials, of which only `x1^2 x2`
/// carries a coefficient.
pub fn vdp_to_pnlss(config: &VdpConfig, ts: f64) -> Result<PnlssModel> {
    if !(ts > 0.0) {
        return Err(Error::invalid("Euler step", "must be positive"));
    }
    let w = config.omega();
    let mu = config.mu;
    let a = DMatrix::from_row_slice(2, 2, &[1.0, ts, -ts * w * w, 1.0 + ts * mu * w]);
    let b = DVector::from_column_slice(&[0.0, ts]);
    let c = DVector::from_column_slice(&[1.0, 0.0]);
    let linear = LinearSsModel::new(a, b, c, 0.0, 1.0 / ts)?;
    let state_basis = if mu == 0.0 {
        MonomialBasis::empty(2)
    } else {
        enumerate_basis(2, 1, &[3])?
    };
    let mut e = DMatrix::zeros(2, state_basis.len());
    if let Some(j) = state_basis.position(&[2, 1, 0]) {
        e[(1, j)] = -ts * mu * w;
    }
    PnlssModel::new(linear, e, DVector::zeros(0), state_basis, MonomialBasis::empty(2))
}

/// Frequency of the largest periodogram peak, excluding DC. Hann window,
/// zero padding to at least 8x, parabolic interpolation of the log-magnitude peak.
pub fn dominant_frequency(x: &[f64], sample_rate: f64) -> Result<f64> {
    let n = x.len();
    if n < 4 {
        return Err(Error::invalid("periodogram", "fewer than 4 samples"));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    if x.iter().all(|&v| v == mean) {
        return Err(Error::ZeroSignal("dominant frequency"));
    }
    let nfft = (8 * n).next_power_of_two();
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    for (i, &v) in x.iter().enumerate() {
        let win = 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
        buf[i] = Complex64::new((v - mean) * win, 0.0);
    }
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let mag: Vec<f64> = buf[..nfft / 2].iter().map(|c| c.norm()).collect();
    let k = (1..mag.len())
        .max_by(|&a, &b| mag[a].total_cmp(&mag[b]))
        .unwrap_or(1);
    let mut offset = 0.0;
    if k + 1 < mag.len() && mag[k - 1] > 0.0 && mag[k + 1] > 0.0 {
        let (l, c, r) = (mag[k - 1].ln(), mag[k].ln(), mag[k + 1].ln());
        let den = l - 2.0 * c + r;
        if den < 0.0 {
            offset = 0.5 * (l - r) / den;
        }
    }
    Ok((k as f64 + offset) * sample_rate / nfft as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockinGrid {
    pub relative_frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// `locked[amplitude][frequency]`.
    pub locked: Vec<Vec<bool>>,
}

impl LockinGrid {
    /// Width in relative frequency of the contiguous locked run containing
    /// the grid point closest to 1.0; zero if that point is not locked.
    pub fn bandwidth(&self, amplitude_index: usize) -> f64 {
        let row = &self.locked[amplitude_index];
        let Some(center) = (0..self.relative_frequencies.len()).min_by(|&a, &b| {
            (self.relative_frequencies[a] - 1.0)
                .abs()
                .total_cmp(&(self.relative_frequencies[b] - 1.0).abs())
        }) else {
            return 0.0;
        };
        if !row[center] {
            return 0.0;
        }
        let mut lo = center;
        while lo > 0 && row[lo - 1] {
            lo -= 1;
        }
        let mut hi = center;
        while hi + 1 < row.len() && row[hi + 1] {
            hi += 1;
        }
        self.relative_frequencies[hi] - self.relative_frequencies[lo]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header: Vec<String> = self.relative_frequencies.iter().map(|f| f.to_string()).collect();
        writeln!(w, "amplitude,{}", header.join(","))?;
        for (a, row) in self.amplitudes.iter().zip(&self.locked) {
            let cells: Vec<&str> = row.iter().map(|&l| if l { "1" } else { "0" }).collect();
            writeln!(w, "{a},{}", cells.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Initial state of the lock-in runs, away from the unstable equilibrium.
pub const LOCKIN_INITIAL_STATE: [f64; 2] = [0.1, 0.0];

/// Drive `y = A sin(2 pi f t)` on every grid cell and test whether the
/// dominant response frequency follows the excitation.
pub fn map_lockin(
    config: &VdpConfig,
    rel_freqs: &[f64],
    amplitudes: &[f64],
    settle_time: f64,
    observe_time: f64,
    tolerance: f64,
) -> Result<LockinGrid> {
    config.validate()?;
    let fs = config.output_sample_rate;
    let n_settle = (settle_time * fs).round() as usize;
    let n_obs = (observe_time * fs).round() as usize;
    let mut locked = Vec::with_capacity(amplitudes.len());
    for &amp in amplitudes {
        let mut row = Vec::with_capacity(rel_freqs.len());
        for &rel in rel_freqs {
            let f_ex = rel * config.f_aut;
            if observe_time * f_ex < 20.0 {
                return Err(Error::invalid(
                    "lock-in map",
                    format!("observe time covers fewer than 20 cycles at {f_ex} Hz"),
                ));
            }
            let exc = Excitation::Sine {
                frequency: f_ex,
                amplitude: amp,
            };
            let input = TimeSeries::new(fs, exc.sample(fs, n_settle + n_obs))?;
            let resp = simulate_vdp_from(config, &input, Some(&exc), LOCKIN_INITIAL_STATE)?;
            let y = &resp.record.output().expect("simulated")[n_settle..];
            let f_peak = dominant_frequency(y, fs)?;
            row.push(((f_peak - f_ex) / f_ex).abs() < tolerance);
        }
        locked.push(row);
    }
    Ok(LockinGrid {
        relative_frequencies: rel_freqs.to_vec(),
        amplitudes: amplitudes.to_vec(),
        locked,
    })
}
