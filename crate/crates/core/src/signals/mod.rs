//! Excitation design and time-series bookkeeping.
//!
//! A [`TimeSeries`] is a uniformly sampled single-input single-output record.
//! Periodic records (multisines) carry their period structure so the frequency
//! domain estimators can average over periods; concatenated records keep the
//! boundaries of their parts so per-part metrics can be weighted.

mod excitation;
mod instfreq;
pub mod io;

pub use excitation::{
    default_ramp_duration, generate_multisine, generate_ramped_sine, generate_sweep,
    multisine_realizations, Excitation, MultisineSpec, SweepDirection, SweepSpec,
};
pub use instfreq::{estimate_instantaneous_frequency, InstantaneousFrequency};
pub(crate) use excitation::sample_multisine_derivative_periodic;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which channel of a [`TimeSeries`] an operation looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Input,
    Output,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    sample_rate: f64,
    input: Vec<f64>,
    output: Option<Vec<f64>>,
    period_length: Option<usize>,
    n_periods: usize,
    label: String,
    /// Start offsets of the concatenated parts; always begins with 0.
    part_starts: Vec<usize>,
}

impl TimeSeries {
    pub fn new(sample_rate: f64, input: Vec<f64>) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::invalid(
                "time series",
                format!("sample rate must be positive, got {sample_rate}"),
            ));
        }
        Ok(Self {
            sample_rate,
            input,
            output: None,
            period_length: None,
            n_periods: 1,
            label: String::new(),
            part_starts: vec![0],
        })
    }

    pub fn with_output(mut self, output: Vec<f64>) -> Result<Self> {
        if output.len() != self.input.len() {
            return Err(Error::Dimension {
                context: "time series output",
                expected: self.input.len(),
                actual: output.len(),
            });
        }
        self.output = Some(output);
        Ok(self)
    }

    pub fn with_periods(mut self, period_length: usize, n_periods: usize) -> Result<Self> {
        if period_length == 0 || n_periods == 0 {
            return Err(Error::invalid(
                "time series",
                "period length and period count must be positive",
            ));
        }
        if period_length * n_periods != self.input.len() {
            return Err(Error::invalid(
                "time series",
                format!(
                    "{} periods of {} samples do not match record length {}",
                    n_periods,
                    period_length,
                    self.input.len()
                ),
            ));
        }
        self.period_length = Some(period_length);
        self.n_periods = n_periods;
        Ok(self)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub(crate) fn with_part_starts(mut self, starts: Vec<usize>) -> Result<Self> {
        let ok = starts.first() == Some(&0)
            && starts.windows(2).all(|w| w[0] < w[1])
            && starts.last().is_some_and(|&s| s < self.len().max(1));
        if !ok {
            return Err(Error::invalid("time series", "malformed part boundaries"));
        }
        self.part_starts = starts;
        Ok(self)
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    pub fn input(&self) -> &[f64] {
        &self.input
    }

    pub fn output(&self) -> Option<&[f64]> {
        self.output.as_deref()
    }

    /// Output samples, or an error naming `context` when the record has not been measured.
    pub fn require_output(&self, context: &'static str) -> Result<&[f64]> {
        self.output
            .as_deref()
            .ok_or_else(|| Error::invalid(context, format!("record '{}' has no output", self.label)))
    }

    pub fn channel(&self, channel: Channel) -> Result<&[f64]> {
        match channel {
            Channel::Input => Ok(&self.input),
            Channel::Output => self.require_output("channel"),
        }
    }

    pub fn period_length(&self) -> Option<usize> {
        self.period_length
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        let dt = self.sample_period();
        (0..self.len()).map(move |i| i as f64 * dt)
    }

    /// Sample ranges of the concatenated parts (a single range for plain records).
    pub fn parts(&self) -> Vec<Range<usize>> {
        let mut ranges = Vec::with_capacity(self.part_starts.len());
        for (i, &start) in self.part_starts.iter().enumerate() {
            let end = self.part_starts.get(i + 1).copied().unwrap_or(self.len());
            ranges.push(start..end);
        }
        ranges
    }

    pub fn part_starts(&self) -> &[usize] {
        &self.part_starts
    }

    /// Copy of samples `range`, dropping period and part structure.
    pub fn slice(&self, range: Range<usize>) -> Result<TimeSeries> {
        if range.end > self.len() || range.start > range.end {
            return Err(Error::invalid(
                "slice",
                format!("range {range:?} outside record of length {}", self.len()),
            ));
        }
        let mut ts = TimeSeries::new(self.sample_rate, self.input[range.clone()].to_vec())?
            .with_label(self.label.clone());
        if let Some(out) = &self.output {
            ts = ts.with_output(out[range].to_vec())?;
        }
        Ok(ts)
    }

    /// Replace the input channel, keeping output and metadata.
    pub fn with_input(mut self, input: Vec<f64>) -> Result<Self> {
        if input.len() != self.input.len() {
            return Err(Error::Dimension {
                context: "time series input",
                expected: self.input.len(),
                actual: input.len(),
            });
        }
        self.input = input;
        Ok(self)
    }

    pub fn metadata(&self) -> Metadata {
        Metadata {
            sample_rate: self.sample_rate,
            period_length: self.period_length,
            n_periods: self.n_periods,
            label: self.label.clone(),
            part_starts: (self.part_starts.len() > 1).then(|| self.part_starts.clone()),
            excitation: None,
        }
    }
}

/// Sidecar description stored next to a CSV record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub sample_rate: f64,
    pub period_length: Option<usize>,
    pub n_periods: usize,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part_starts: Option<Vec<usize>>,
    /// Analytic description of the input, when it came from a known generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excitation: Option<Excitation>,
}

pub fn remove_transient_periods(ts: &TimeSeries, n_discard: usize) -> Result<TimeSeries> {
    let period = ts.period_length.ok_or_else(|| {
        Error::invalid(
            "transient removal",
            format!("record '{}' has no period structure", ts.label),
        )
    })?;
    if n_discard >= ts.n_periods {
        return Err(Error::invalid(
            "transient removal",
            format!(
                "cannot discard {} of {} periods",
                n_discard, ts.n_periods
            ),
        ));
    }
    let start = n_discard * period;
    let mut out = ts.slice(start..ts.len())?;
    out = out.with_periods(period, ts.n_periods - n_discard)?;
    Ok(out)
}

/// Join records end to end, remembering where each part starts.
pub fn concatenate(parts: &[TimeSeries]) -> Result<TimeSeries> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concatenate", "no parts given"))?;
    if parts.len() == 1 {
        return Ok(first.clone());
    }
    let fs = first.sample_rate;
    let with_output = first.output.is_some();
    let mut input = Vec::new();
    let mut output = Vec::new();
    let mut starts = Vec::new();
    let mut labels = Vec::new();
    for part in parts {
        if (part.sample_rate - fs).abs() > 1e-12 * fs {
            return Err(Error::invalid(
                "concatenate",
                format!(
                    "sample rate {} of '{}' differs from {}",
                    part.sample_rate, part.label, fs
                ),
            ));
        }
        if part.output.is_some() != with_output {
            return Err(Error::invalid(
                "concatenate",
                "either all parts or none must carry an output",
            ));
        }
        if part.is_empty() {
            continue;
        }
        // nested concatenations keep their inner boundaries
        starts.extend(part.part_starts.iter().map(|s| s + input.len()));
        input.extend_from_slice(&part.input);
        if let Some(out) = &part.output {
            output.extend_from_slice(out);
        }
        labels.push(part.label.as_str());
    }
    let mut ts = TimeSeries::new(fs, input)?.with_label(labels.join("+"));
    if with_output {
        ts = ts.with_output(output)?;
    }
    if starts.is_empty() {
        starts.push(0);
    }
    ts.with_part_starts(starts)
}
