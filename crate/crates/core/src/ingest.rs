//! External (CFD or experimental) records: resampling onto a uniform grid,
//! force nondimensionalization and blockage corrections.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::io::read_columns;
use crate::signals::TimeSeries;

/// Load a `time,input,output` CSV with arbitrary, strictly increasing time
/// stamps and interpolate linearly onto `t0 + k / target_sample_rate`.
pub fn load_timeseries_csv(path: &Path, target_sample_rate: f64) -> Result<TimeSeries> {
    if !(target_sample_rate > 0.0 && target_sample_rate.is_finite()) {
        return Err(Error::invalid(
            "target sample rate",
            format!("must be positive, got {target_sample_rate}"),
        ));
    }
    let cols = read_columns(path)?;
    if cols.time.len() < 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 2,
            reason: "need at least two samples to resample".into(),
        });
    }
    for (i, w) in cols.time.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: i + 3,
                reason: format!("time {} does not increase past {}", w[1], w[0]),
            });
        }
    }
    let mut steps: Vec<f64> = cols.time.windows(2).map(|w| w[1] - w[0]).collect();
    steps.sort_by(f64::total_cmp);
    let raw_nyquist = 0.5 / steps[steps.len() / 2];
    if target_sample_rate / 2.0 > raw_nyquist * (1.0 + 1e-9) {
        log::warn!(
            "{}: target rate {target_sample_rate} Hz exceeds twice the raw Nyquist {raw_nyquist} Hz",
            path.display()
        );
    }

    let t0 = cols.time[0];
    let span = cols.time[cols.time.len() - 1] - t0;
    let n = (span * target_sample_rate + 1e-9).floor() as usize + 1;
    let grid: Vec<f64> = (0..n).map(|k| t0 + k as f64 / target_sample_rate).collect();
    let input = interpolate(&cols.time, &cols.input, &grid);
    let mut ts = TimeSeries::new(target_sample_rate, input)?;
    if let Some(out) = &cols.output {
        ts = ts.with_output(interpolate(&cols.time, out, &grid))?;
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(ts.with_label(label))
}

/// Piecewise-linear interpolation of `(t, x)` at sorted `grid` points,
/// clamped at the ends.
fn interpolate(t: &[f64], x: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut j = 0;
    grid.iter()
        .map(|&g| {
            while j + 2 < t.len() && t[j + 1] <= g {
                j += 1;
            }
            if g <= t[0] {
                return x[0];
            }
            if g >= t[t.len() - 1] {
                return x[x.len() - 1];
            }
            let w = (g - t[j]) / (t[j + 1] - t[j]);
            if w == 0.0 {
                x[j]
            } else {
                x[j] + w * (x[j + 1] - x[j])
            }
        })
        .collect()
}

/// Free-stream conditions of a cylinder-in-crossflow simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConditions {
    /// Cylinder diameter `D` in m.
    pub diameter: f64,
    /// Unperturbed velocity `U` in m/s.
    pub free_stream_velocity: f64,
    pub density: f64,
    /// Domain height `H` in m.
    pub domain_height: f64,
    /// Uncorrected mean drag coefficient.
    pub mean_drag_coefficient: f64,
    /// Only needed for the Reynolds numbers.
    #[serde(default)]
    pub kinematic_viscosity: Option<f64>,
}

impl FlowConditions {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("diameter", self.diameter),
            ("free_stream_velocity", self.free_stream_velocity),
            ("density", self.density),
            ("domain_height", self.domain_height),
            ("mean_drag_coefficient", self.mean_drag_coefficient),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid("flow conditions", format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(nu) = self.kinematic_viscosity {
            if !(nu > 0.0 && nu.is_finite()) {
                return Err(Error::invalid("flow conditions", "kinematic_viscosity must be positive"));
            }
        }
        Ok(())
    }

    /// `D / H`.
    pub fn blockage_ratio(&self) -> f64 {
        self.diameter / self.domain_height
    }

    pub fn reynolds(&self) -> Option<f64> {
        self.kinematic_viscosity
            .map(|nu| self.free_stream_velocity * self.diameter / nu)
    }

    /// Reynolds number at the blockage-corrected velocity.
    pub fn corrected_reynolds(&self) -> Option<f64> {
        self.kinematic_viscosity
            .map(|nu| blockage_correct_velocity(self) * self.diameter / nu)
    }
}

/// `c_y = F_y / (rho U^2 D / 2)`, sample-wise.
pub fn force_coefficient(force: &[f64], cond: &FlowConditions) -> Vec<f64> {
    let q = 0.5 * cond.density * cond.free_stream_velocity.powi(2) * cond.diameter;
    force.iter().map(|f| f / q).collect()
}

/// `f_St = S U / D`.
pub fn strouhal_frequency(strouhal: f64, diameter: f64, velocity: f64) -> f64 {
    strouhal * velocity / diameter
}

pub fn blockage_correct_velocity(cond: &FlowConditions) -> f64 {
    let r = cond.blockage_ratio();
    cond.free_stream_velocity * (1.0 + 0.25 * cond.mean_drag_coefficient * r + 0.82 * r * r)
}

pub fn blockage_correct_drag(cond: &FlowConditions) -> f64 {
    let r = cond.blockage_ratio();
    let cd = cond.mean_drag_coefficient;
    cd * (1.0 - 0.5 * cd * r - 2.5 * r * r)
}
