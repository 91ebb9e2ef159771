use std::f64::consts::PI;
use std::ops::Range;

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{Channel, TimeSeries};
use crate::error::{Error, Result};

/// Smoothed instantaneous frequency. Samples outside `valid` are NaN: the
/// moving average does not have a full window there.
#[derive(Debug, Clone)]
pub struct InstantaneousFrequency {
    pub hz: Vec<f64>,
    pub valid: Range<usize>,
}

impl InstantaneousFrequency {
    pub fn valid_values(&self) -> &[f64] {
        &self.hz[self.valid.clone()]
    }
}

/// Analytic signal by zeroing the negative half of the spectrum.
pub(crate) fn analytic_signal(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    for (k, c) in buf.iter_mut().enumerate() {
        if k == 0 || (n % 2 == 0 && k == half) {
            continue;
        }
        if k <= (n - 1) / 2 {
            *c *= 2.0;
        } else {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    buf
}

/// Instantaneous frequency from the phase derivative of the analytic signal,
/// smoothed by a centred moving average of `smoothing_window` samples.
pub fn estimate_instantaneous_frequency(
    ts: &TimeSeries,
    channel: Channel,
    smoothing_window: usize,
) -> Result<InstantaneousFrequency> {
    let x = ts.channel(channel)?;
    let w = smoothing_window.max(1);
    let n = x.len();
    if n < 4 * w || n < 3 {
        return Err(Error::invalid(
            "instantaneous frequency",
            format!("{n} samples is shorter than 4 x window {w}"),
        ));
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroSignal("instantaneous phase"));
    }
    let z = analytic_signal(x);
    let fs = ts.sample_rate();
    // phase increments via arg(z[i+1] z*[i-1]) avoid unwrapping
    let mut raw = vec![0.0; n];
    raw[0] = (z[1] * z[0].conj()).arg() * fs / (2.0 * PI);
    raw[n - 1] = (z[n - 1] * z[n - 2].conj()).arg() * fs / (2.0 * PI);
    for i in 1..n - 1 {
        raw[i] = (z[i + 1] * z[i - 1].conj()).arg() * fs / (4.0 * PI);
    }

    let half = w / 2;
    let valid = half..n - (w - 1 - half);
    let mut hz = vec![f64::NAN; n];
    let mut acc: f64 = raw[..w].iter().sum();
    hz[half] = acc / w as f64;
    for i in valid.start + 1..valid.end {
        acc += raw[i + w - 1 - half] - raw[i - half - 1];
        hz[i] = acc / w as f64;
    }
    Ok(InstantaneousFrequency { hz, valid })
}
