//! `time,input,output` CSV records with a JSON metadata sidecar.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{Excitation, Metadata, TimeSeries};
use crate::error::{Error, Result};

/// Relative tolerance on sample spacing when loading uniform records.
pub const UNIFORM_SPACING_TOLERANCE: f64 = 1e-9;

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Raw columns of a `time,input,output` file; `output` is `None` when the
/// column is empty on every row.
pub(crate) struct RawColumns {
    pub time: Vec<f64>,
    pub input: Vec<f64>,
    pub output: Option<Vec<f64>>,
}

pub(crate) fn read_columns(path: &Path) -> Result<RawColumns> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let expect = ["time", "input", "output"];
    if headers.len() < 2 || headers.iter().zip(expect).any(|(h, e)| h != e) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            reason: format!(
                "expected header `time,input,output`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut time = Vec::new();
    let mut input = Vec::new();
    let mut output = Vec::new();
    let mut any_output = false;
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let parse = |idx: usize, name: &str| -> Result<Option<f64>> {
            match rec.get(idx) {
                None | Some("") => Ok(None),
                Some(s) => s.parse::<f64>().map(Some).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    reason: format!("bad {name} value `{s}`: {e}"),
                }),
            }
        };
        let missing = |name: &str| Error::Parse {
            path: path.to_path_buf(),
            row,
            reason: format!("missing {name}"),
        };
        time.push(parse(0, "time")?.ok_or_else(|| missing("time"))?);
        input.push(parse(1, "input")?.ok_or_else(|| missing("input"))?);
        let out = parse(2, "output")?;
        any_output |= out.is_some();
        output.push(out);
    }
    let output = if any_output {
        let mut vals = Vec::with_capacity(output.len());
        for (i, v) in output.into_iter().enumerate() {
            vals.push(v.ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                row: i + 2,
                reason: "missing output".into(),
            })?);
        }
        Some(vals)
    } else {
        None
    };
    Ok(RawColumns {
        time,
        input,
        output,
    })
}

/// Load a uniformly sampled record. Metadata comes from the sidecar when one
/// exists; otherwise the sample rate is inferred from the time column.
pub fn read_csv(path: &Path) -> Result<(TimeSeries, Option<Metadata>)> {
    let cols = read_columns(path)?;
    let n = cols.time.len();
    if n == 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 2,
            reason: "no samples".into(),
        });
    }
    let meta: Option<Metadata> = match File::open(sidecar_path(path)) {
        Ok(f) => Some(serde_json::from_reader(std::io::BufReader::new(f))?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    let fs = match &meta {
        Some(m) => m.sample_rate,
        None if n >= 2 => 1.0 / (cols.time[1] - cols.time[0]),
        None => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: 2,
                reason: "cannot infer sample rate from a single sample without sidecar".into(),
            })
        }
    };
    let dt = 1.0 / fs;
    for (i, w) in cols.time.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - dt).abs() > UNIFORM_SPACING_TOLERANCE * dt {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: i + 3,
                reason: format!("non-uniform spacing {step} (expected {dt})"),
            });
        }
    }
    let mut ts = TimeSeries::new(fs, cols.input)?;
    if let Some(out) = cols.output {
        ts = ts.with_output(out)?;
    }
    if let Some(m) = &meta {
        ts = ts.with_label(m.label.clone());
        if let Some(p) = m.period_length {
            ts = ts.with_periods(p, m.n_periods)?;
        }
        if let Some(starts) = &m.part_starts {
            ts = ts.with_part_starts(starts.clone())?;
        }
    }
    Ok((ts, meta))
}

/// Write a record and its sidecar. Output is deterministic: identical
/// records produce byte-identical files.
pub fn write_csv(path: &Path, ts: &TimeSeries, excitation: Option<&Excitation>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "time,input,output")?;
    let dt = ts.sample_period();
    for i in 0..ts.len() {
        let t = i as f64 * dt;
        match ts.output() {
            Some(out) => writeln!(w, "{},{},{}", t, ts.input()[i], out[i])?,
            None => writeln!(w, "{},{},", t, ts.input()[i])?,
        }
    }
    w.flush()?;
    let mut meta = ts.metadata();
    meta.excitation = excitation.cloned();
    let f = File::create(sidecar_path(path))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &meta)?;
    Ok(())
}
