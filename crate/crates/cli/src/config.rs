use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pnlss::freqid::ModelKind;
use pnlss::optim::TrainConfig;
use pnlss::signals::{MultisineSpec, SweepSpec};
use pnlss::valid::SuiteSettings;
use pnlss::vdp::VdpConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub rng_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub excitation: ExcitationConfig,
    /// Ground-truth plant; omit when all data comes from CSV files.
    pub vdp: Option<VdpConfig>,
    pub lockin: LockinConfig,
    pub bla: BlaConfig,
    pub linear_fit: LinearFitConfig,
    pub pnlss: DegreeConfig,
    pub training: TrainingConfig,
    pub simulate: SimulateConfig,
    pub validation: ValidationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            output_dir: None,
            excitation: ExcitationConfig::default(),
            vdp: Some(VdpConfig::default()),
            lockin: LockinConfig::default(),
            bla: BlaConfig::default(),
            linear_fit: LinearFitConfig::default(),
            pnlss: DegreeConfig::default(),
            training: TrainingConfig::default(),
            simulate: SimulateConfig::default(),
            validation: ValidationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultisineConfig {
    pub base_frequency: f64,
    pub n_lines: usize,
    /// Amplitude of every individual sine.
    pub line_amplitude: f64,
    pub sample_rate: f64,
    pub n_periods: usize,
    pub n_realizations: usize,
}

impl Default for MultisineConfig {
    fn default() -> Self {
        Self {
            base_frequency: 0.1,
            n_lines: 45,
            line_amplitude: 15.0,
            sample_rate: 50.0,
            n_periods: 6,
            n_realizations: 8,
        }
    }
}

impl MultisineConfig {
    pub fn spec(&self, rng_seed: u64) -> MultisineSpec {
        // the generator scales its sum by 1/sqrt(N)
        MultisineSpec::flat(
            self.base_frequency,
            self.n_lines,
            self.line_amplitude * (self.n_lines as f64).sqrt(),
            self.sample_rate,
            self.n_periods,
            self.n_realizations,
            rng_seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampedSineConfig {
    pub f_target: f64,
    pub amplitude: f64,
    /// Defaults to 8 s per multiple of `f_ref`.
    #[serde(default)]
    pub ramp_duration: Option<f64>,
    pub hold_duration: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcitationConfig {
    pub multisine: MultisineConfig,
    pub sweeps: Vec<SweepSpec>,
    pub ramped_sines: Vec<RampedSineConfig>,
    /// Reference frequency of the ramp default.
    pub f_ref: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LockinConfig {
    pub rel_frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub settle_time: f64,
    pub observe_time: f64,
    pub tolerance: f64,
}

impl Default for LockinConfig {
    fn default() -> Self {
        Self {
            rel_frequencies: (0..=20).map(|i| 0.5 + 0.05 * f64::from(i)).collect(),
            amplitudes: vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0],
            settle_time: 30.0,
            observe_time: 40.0,
            tolerance: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlaConfig {
    pub transient_periods: usize,
    /// Leading multisine realizations used for estimation; the rest validate.
    pub estimation_realizations: Option<usize>,
    /// Excited lines; defaults to the multisine line count.
    pub n_lines: Option<usize>,
    /// Periodic CSV records (with sidecars) replacing the simulated ones.
    pub records: Vec<PathBuf>,
}

impl Default for BlaConfig {
    fn default() -> Self {
        Self {
            transient_periods: 1,
            estimation_realizations: None,
            n_lines: None,
            records: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearFitConfig {
    pub kind: ModelKind,
    /// Denominator order of a rational fit, or tap count of a FIR fit.
    pub order: usize,
    pub numerator_order: usize,
    pub sk_iterations: usize,
    /// Orders reported in the scan; empty skips the scan.
    pub scan_orders: Vec<usize>,
}

impl Default for LinearFitConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Rational,
            order: 2,
            numerator_order: 1,
            sk_iterations: 20,
            scan_orders: vec![1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegreeConfig {
    pub state_degrees: Vec<u32>,
    pub output_degrees: Vec<u32>,
}

impl Default for DegreeConfig {
    fn default() -> Self {
        Self {
            state_degrees: vec![2, 3, 4, 5],
            output_degrees: vec![0, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    #[serde(flatten)]
    pub optimizer: TrainConfig,
    /// External training records, resampled to the model rate. When empty
    /// the simulated estimation realizations are used.
    pub records: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Defaults to the trained model.
    pub model: Option<PathBuf>,
    /// Defaults to the held-out multisine realizations.
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub settings: SuiteSettings,
    pub rel_frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// Experiment label to CSV file; when non-empty replaces the simulated plant.
    pub csv: BTreeMap<String, PathBuf>,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            settings: SuiteSettings::default(),
            rel_frequencies: vec![0.5, 0.7, 0.9, 1.1, 1.3],
            amplitudes: vec![5.0, 10.0, 20.0, 40.0, 80.0],
            csv: BTreeMap::new(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Contract(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Contract(format!("config {}: {e}", path.display())))?;
        // relative data paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.bla.records.iter_mut().for_each(rebase);
        cfg.training.records.iter_mut().for_each(rebase);
        cfg.simulate.inputs.iter_mut().for_each(rebase);
        if let Some(m) = cfg.simulate.model.as_mut() {
            rebase(m);
        }
        cfg.validation.csv.values_mut().for_each(rebase);
        if let Some(o) = cfg.output_dir.as_mut() {
            rebase(o);
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), CliError> {
        let degrees = [
            ("pnlss.state_degrees", &self.pnlss.state_degrees),
            ("pnlss.output_degrees", &self.pnlss.output_degrees),
        ];
        for (name, d) in degrees {
            if d.contains(&1) {
                return Err(CliError::Contract(format!(
                    "{name} must not contain 1; linear terms live in A, B, C, D"
                )));
            }
        }
        let files = self
            .bla
            .records
            .iter()
            .chain(&self.training.records)
            .chain(&self.simulate.inputs)
            .chain(self.simulate.model.iter())
            .chain(self.validation.csv.values());
        for f in files {
            if !f.is_file() {
                return Err(CliError::Contract(format!(
                    "referenced file {} does not exist",
                    f.display()
                )));
            }
        }
        Ok(())
    }

    /// Estimation realizations; the default keeps the last one for validation.
    pub fn n_estimation(&self) -> usize {
        let m = self.excitation.multisine.n_realizations;
        self.bla
            .estimation_realizations
            .unwrap_or(if m > 1 { m - 1 } else { m })
    }
}
