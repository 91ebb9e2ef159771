//! Nonparametric best linear approximation (BLA) and parametric linear fits.
//!
//! The BLA is estimated from periodic random-phase multisine records: input and
//! output spectra are averaged over periods, the per-realization FRFs are then
//! averaged over realizations. The period scatter measures noise, the
//! realization scatter measures noise plus stochastic nonlinear distortion.

mod fit;
mod linear;

pub use fit::{
    fit_fir, fit_rational, fit_rational_tf, scan_model_order, weighted_cost, ModelKind,
    TransferFunction,
};
pub use linear::LinearSsModel;

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::TimeSeries;

/// Fraction of lines on which `var_total < var_noise / P` may occur before
/// the estimate is flagged as inconsistent.
pub const DISTORTION_FLAG_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrfEstimate {
    pub sample_rate: f64,
    pub period_length: usize,
    /// DFT bin index of every excited line.
    pub lines: Vec<usize>,
    pub frequencies: Vec<f64>,
    pub g_bla: Vec<Complex64>,
    /// Noise variance of `g_bla` from the period-to-period scatter.
    pub var_noise: Vec<f64>,
    /// Total variance of `g_bla` from the realization-to-realization scatter.
    pub var_total: Vec<f64>,
    /// `false` where the input spectrum vanished; such lines carry NaN and are skipped by fits.
    pub valid: Vec<bool>,
    pub n_realizations: usize,
    pub n_periods: usize,
    /// Set when `var_total < var_noise / P` on more than 20% of the lines.
    pub inconsistent_variances: bool,
}

impl FrfEstimate {
    /// Build an estimate from known values (tests, external FRFs).
    pub fn from_values(
        sample_rate: f64,
        period_length: usize,
        lines: Vec<usize>,
        g_bla: Vec<Complex64>,
        var_total: Vec<f64>,
    ) -> Result<Self> {
        if g_bla.len() != lines.len() || var_total.len() != lines.len() {
            return Err(Error::Dimension {
                context: "FRF values",
                expected: lines.len(),
                actual: g_bla.len().min(var_total.len()),
            });
        }
        let frequencies = lines
            .iter()
            .map(|&k| k as f64 * sample_rate / period_length as f64)
            .collect();
        let n = lines.len();
        Ok(Self {
            sample_rate,
            period_length,
            lines,
            frequencies,
            g_bla,
            var_noise: vec![0.0; n],
            var_total,
            valid: vec![true; n],
            n_realizations: 1,
            n_periods: 1,
            inconsistent_variances: false,
        })
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// `z_k = exp(j 2 pi k / L)` of line `i`.
    pub fn z(&self, i: usize) -> Complex64 {
        Complex64::from_polar(1.0, 2.0 * PI * self.lines[i] as f64 / self.period_length as f64)
    }

    /// Variances used as fit weights: `var_total` floored at `1e-10` of its
    /// maximum, or all ones when every variance is zero.
    pub fn fit_variances(&self) -> Vec<f64> {
        let max = self
            .var_total
            .iter()
            .zip(&self.valid)
            .filter(|(v, ok)| **ok && v.is_finite())
            .fold(0.0f64, |m, (v, _)| m.max(*v));
        if max <= 0.0 {
            return vec![1.0; self.len()];
        }
        self.var_total
            .iter()
            .map(|&v| if v.is_finite() { v.max(1e-10 * max) } else { max })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "freq_hz,re_g,im_g,var_noise,var_total")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                self.frequencies[i],
                self.g_bla[i].re,
                self.g_bla[i].im,
                self.var_noise[i],
                self.var_total[i]
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Estimate the BLA at lines `1..=n_lines` from periodic records, one per
/// phase realization. Transients must already be removed.
pub fn estimate_bla(records: &[TimeSeries], n_lines: usize) -> Result<FrfEstimate> {
    let first = records
        .first()
        .ok_or_else(|| Error::invalid("BLA", "no records"))?;
    let period = first
        .period_length()
        .ok_or_else(|| Error::invalid("BLA", "records must be periodic"))?;
    let n_periods = first.n_periods();
    let fs = first.sample_rate();
    if n_periods < 2 {
        return Err(Error::invalid("BLA", "at least two periods are needed"));
    }
    if n_lines == 0 || 2 * n_lines >= period {
        return Err(Error::invalid(
            "BLA",
            format!("{n_lines} lines do not fit below Nyquist for period {period}"),
        ));
    }
    for r in records {
        if r.period_length() != Some(period) || r.n_periods() != n_periods || r.sample_rate() != fs
        {
            return Err(Error::invalid(
                "BLA",
                format!("record '{}' has a different period structure", r.label()),
            ));
        }
        r.require_output("BLA")?;
    }

    let m_count = records.len();
    let p_count = n_periods;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(period);
    let spectrum = |x: &[f64]| -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.process(&mut buf);
        buf[1..=n_lines].to_vec()
    };

    // per realization, per line: averaged spectra and per-period FRFs
    let mut g_real = vec![vec![Complex64::new(0.0, 0.0); n_lines]; m_count];
    let mut noise = vec![0.0; n_lines];
    let mut valid = vec![true; n_lines];
    let mut max_u = 0.0f64;
    let mut u_mean_all = vec![vec![Complex64::new(0.0, 0.0); n_lines]; m_count];
    for (m, rec) in records.iter().enumerate() {
        let u = rec.input();
        let y = rec.output().expect("checked above");
        let mut u_mean = vec![Complex64::new(0.0, 0.0); n_lines];
        let mut y_mean = vec![Complex64::new(0.0, 0.0); n_lines];
        let mut g_periods = Vec::with_capacity(p_count);
        for p in 0..p_count {
            let range = p * period..(p + 1) * period;
            let uk = spectrum(&u[range.clone()]);
            let yk = spectrum(&y[range]);
            for k in 0..n_lines {
                u_mean[k] += uk[k] / p_count as f64;
                y_mean[k] += yk[k] / p_count as f64;
            }
            g_periods.push(
                uk.iter()
                    .zip(&yk)
                    .map(|(a, b)| b / a)
                    .collect::<Vec<_>>(),
            );
        }
        for k in 0..n_lines {
            max_u = max_u.max(u_mean[k].norm());
            g_real[m][k] = y_mean[k] / u_mean[k];
            let mean: Complex64 =
                g_periods.iter().map(|g| g[k]).sum::<Complex64>() / p_count as f64;
            let s2: f64 = g_periods
                .iter()
                .map(|g| (g[k] - mean).norm_sqr())
                .sum::<f64>()
                / (p_count - 1) as f64;
            // variance of the period mean, then of the realization mean
            noise[k] += s2 / p_count as f64 / (m_count * m_count) as f64;
        }
        u_mean_all[m] = u_mean;
    }
    for k in 0..n_lines {
        if u_mean_all.iter().any(|u| !(u[k].norm() > 1e-12 * max_u)) {
            valid[k] = false;
        }
    }

    let mut g_bla = vec![Complex64::new(0.0, 0.0); n_lines];
    let mut total = vec![0.0; n_lines];
    for k in 0..n_lines {
        if !valid[k] {
            g_bla[k] = Complex64::new(f64::NAN, f64::NAN);
            noise[k] = f64::NAN;
            total[k] = f64::NAN;
            continue;
        }
        // offset from the first realization keeps identical records exact
        let g0 = g_real[0][k];
        g_bla[k] = g0 + g_real.iter().map(|g| g[k] - g0).sum::<Complex64>() / m_count as f64;
        total[k] = if m_count >= 2 {
            g_real
                .iter()
                .map(|g| (g[k] - g_bla[k]).norm_sqr())
                .sum::<f64>()
                / (m_count * (m_count - 1)) as f64
        } else {
            noise[k]
        };
    }
    if m_count < 2 {
        log::warn!("single realization: total variance falls back to the noise variance");
    }
    let violated = (0..n_lines)
        .filter(|&k| valid[k] && total[k] < noise[k] / p_count as f64)
        .count();
    let inconsistent = violated as f64 > DISTORTION_FLAG_FRACTION * n_lines as f64;
    if inconsistent {
        log::warn!("total variance below noise variance on {violated} of {n_lines} lines");
    }
    let lines: Vec<usize> = (1..=n_lines).collect();
    Ok(FrfEstimate {
        sample_rate: fs,
        period_length: period,
        frequencies: lines.iter().map(|&k| k as f64 * fs / period as f64).collect(),
        lines,
        g_bla,
        var_noise: noise,
        var_total: total,
        valid,
        n_realizations: m_count,
        n_periods: p_count,
        inconsistent_variances: inconsistent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{generate_multisine, MultisineSpec};

    /// Second-order IIR `(b0 + b1 q^-1) / (1 + a1 q^-1 + a2 q^-2)` by direct recursion.
    fn iir(u: &[f64], scale: f64) -> Vec<f64> {
        let (b0, b1, a1, a2) = (0.5 * scale, 0.3 * scale, -1.2, 0.5);
        let mut y = vec![0.0; u.len()];
        for t in 0..u.len() {
            let um1 = if t >= 1 { u[t - 1] } else { 0.0 };
            let ym1 = if t >= 1 { y[t - 1] } else { 0.0 };
            let ym2 = if t >= 2 { y[t - 2] } else { 0.0 };
            y[t] = b0 * u[t] + b1 * um1 - a1 * ym1 - a2 * ym2;
        }
        y
    }

    fn iir_response(z: Complex64) -> Complex64 {
        let zi = 1.0 / z;
        (0.5 + 0.3 * zi) / (1.0 - 1.2 * zi + 0.5 * zi * zi)
    }

    pub(crate) fn lti_records(amplitude: f64) -> Vec<TimeSeries> {
        let spec = MultisineSpec::flat(1.0, 40, amplitude, 128.0, 4, 4, 11);
        generate_multisine(&spec)
            .unwrap()
            .into_iter()
            .map(|ts| {
                let y = iir(ts.input(), 1.0);
                let ts = ts.with_output(y).unwrap();
                crate::signals::remove_transient_periods(&ts, 1).unwrap()
            })
            .collect()
    }

    #[test]
    fn recovers_lti_response() {
        let frf = estimate_bla(&lti_records(1.0), 40).unwrap();
        assert_eq!(frf.n_periods, 3);
        for i in 0..frf.len() {
            let want = iir_response(frf.z(i));
            assert!((frf.g_bla[i] - want).norm() < 1e-6 * want.norm());
            assert!(frf.var_total[i] < 1e-12 * frf.g_bla[i].norm_sqr());
        }
        let doubled = estimate_bla(&lti_records(2.0), 40).unwrap();
        for (a, b) in frf.g_bla.iter().zip(&doubled.g_bla) {
            assert!((a - b).norm() < 1e-10 * a.norm());
        }
    }

    #[test]
    fn identical_outputs_have_zero_total_variance() {
        let recs = lti_records(1.0);
        let copies: Vec<_> = (0..3).map(|_| recs[0].clone()).collect();
        let frf = estimate_bla(&copies, 40).unwrap();
        assert!(frf.var_total.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unexcited_line_is_flagged() {
        let mut spec = MultisineSpec::flat(1.0, 10, 1.0, 64.0, 2, 2, 1);
        spec.amplitudes[4] = 0.0;
        let recs: Vec<_> = generate_multisine(&spec)
            .unwrap()
            .into_iter()
            .map(|ts| {
                let y = iir(ts.input(), 1.0);
                ts.with_output(y).unwrap()
            })
            .collect();
        let frf = estimate_bla(&recs, 10).unwrap();
        assert_eq!(frf.len(), 10);
        assert!(!frf.valid[4]);
        assert!(frf.g_bla[4].re.is_nan());
        assert!(frf.valid.iter().filter(|v| **v).count() == 9);
    }

    #[test]
    fn rejects_mismatched_records() {
        let mut recs = lti_records(1.0);
        recs[1] = crate::signals::remove_transient_periods(&recs[1], 1).unwrap();
        assert!(estimate_bla(&recs, 40).is_err());
    }
}
