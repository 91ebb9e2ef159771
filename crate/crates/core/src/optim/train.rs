use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{cost, lm_minimize, make_subset, relative_rms, LmSchedule, SubsetKind};
use crate::error::{Error, Result};
use crate::pnlss::{PnlssModel, SimulationState};
use crate::signals::TimeSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_outer_iterations: usize,
    /// LM steps of the refinement run of each adopted combination.
    pub lm_steps_per_run: usize,
    /// LM steps used to screen each of the 90 combinations.
    pub probe_steps: usize,
    pub lm_lambda_init: f64,
    pub lm_lambda_up: f64,
    pub lm_lambda_down: f64,
    /// Relative improvement a combination must exceed to be adopted; 0 means any strict decrease.
    pub stop_tolerance: f64,
    /// Recorded for reproducibility; training itself draws no random numbers.
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_outer_iterations: 20,
            lm_steps_per_run: 1000,
            probe_steps: 100,
            lm_lambda_init: 1e-3,
            lm_lambda_up: 10.0,
            lm_lambda_down: 0.1,
            stop_tolerance: 0.0,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lm_steps_per_run == 0 || self.probe_steps == 0 {
            return Err(Error::invalid("train config", "step counts must be positive"));
        }
        if !(self.lm_lambda_init > 0.0) {
            return Err(Error::invalid("train config", "lm_lambda_init must be positive"));
        }
        if !(self.lm_lambda_up > 1.0) || !(self.lm_lambda_down > 0.0 && self.lm_lambda_down < 1.0) {
            return Err(Error::invalid(
                "train config",
                "lambda factors must satisfy up > 1 and 0 < down < 1",
            ));
        }
        if !(self.stop_tolerance >= 0.0 && self.stop_tolerance < 1.0) {
            return Err(Error::invalid("train config", "stop_tolerance must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LmSchedule {
        LmSchedule {
            lambda_init: self.lm_lambda_init,
            lambda_up: self.lm_lambda_up,
            lambda_down: self.lm_lambda_down,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedCombination {
    pub state_subset: SubsetKind,
    pub output_subset: SubsetKind,
    /// Cost after the probe run; `None` if every trial diverged.
    pub cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub state_subset: SubsetKind,
    pub output_subset: SubsetKind,
    pub cost: f64,
    pub e_rms: f64,
    pub evaluated: Vec<EvaluatedCombination>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptReport {
    pub config: TrainConfig,
    pub initial_cost: f64,
    pub initial_e_rms: f64,
    pub iterations: Vec<IterationRecord>,
    pub final_cost: f64,
    pub final_e_rms: f64,
    pub stop_reason: String,
    /// Accumulated over resumed sessions; excluded from determinism checks.
    pub wall_time_s: f64,
}

impl OptReport {
    /// Report without the wall time, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: PnlssModel,
    pub report: OptReport,
    pub finished: bool,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Write through a temporary file so an interrupted write leaves the old checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_string(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }
}

/// Subset-iteration training: each outer iteration screens all 90
/// combinations with short LM runs, refines the best and adopts it if the
/// cost improves.
pub fn train(
    init_model: &PnlssModel,
    data: &[TimeSeries],
    inits: &[SimulationState],
    config: &TrainConfig,
) -> Result<(PnlssModel, OptReport)> {
    run(init_model.clone(), None, data, inits, config, None)
}

/// [`train`] that saves a checkpoint after every outer iteration and resumes
/// from `checkpoint` when it exists.
pub fn train_resumable(
    init_model: &PnlssModel,
    data: &[TimeSeries],
    inits: &[SimulationState],
    config: &TrainConfig,
    checkpoint: &Path,
) -> Result<(PnlssModel, OptReport)> {
    if checkpoint.exists() {
        let cp = Checkpoint::load(checkpoint)?;
        if cp.report.config != *config {
            return Err(Error::invalid(
                "checkpoint",
                "training configuration differs from the checkpointed run",
            ));
        }
        if cp.finished {
            return Ok((cp.model, cp.report));
        }
        log::info!(
            "resuming after {} outer iterations from {}",
            cp.report.iterations.len(),
            checkpoint.display()
        );
        return run(cp.model, Some(cp.report), data, inits, config, Some(checkpoint));
    }
    run(init_model.clone(), None, data, inits, config, Some(checkpoint))
}

fn run(
    mut model: PnlssModel,
    report: Option<OptReport>,
    data: &[TimeSeries],
    inits: &[SimulationState],
    config: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<(PnlssModel, OptReport)> {
    config.validate()?;
    let started = Instant::now();
    let mut current = cost(&model, data, inits);
    if !current.is_finite() {
        super::check_data(&model, data, inits)?;
        return Err(Error::invalid("training", "the initial model diverges on the data"));
    }
    let mut report = report.unwrap_or_else(|| OptReport {
        config: config.clone(),
        initial_cost: current,
        initial_e_rms: relative_rms(current, data),
        iterations: Vec::new(),
        final_cost: current,
        final_e_rms: relative_rms(current, data),
        stop_reason: String::new(),
        wall_time_s: 0.0,
    });
    let prior_time = report.wall_time_s;
    let schedule = config.schedule();
    let combos = SubsetKind::combinations();

    let stop_reason = loop {
        let iteration = report.iterations.len() + 1;
        if iteration > config.max_outer_iterations {
            break format!("reached {} outer iterations", config.max_outer_iterations);
        }
        let mut evaluated = Vec::with_capacity(combos.len());
        let mut best: Option<(f64, usize, PnlssModel)> = None;
        for (k, &(s, o)) in combos.iter().enumerate() {
            let mask = make_subset(s, o, model.state_basis(), model.output_basis())?;
            let (m, trace) = lm_minimize(&model, data, inits, &mask, config.probe_steps, schedule)?;
            let c = *trace.last().expect("non-empty trace");
            evaluated.push(EvaluatedCombination {
                state_subset: s,
                output_subset: o,
                cost: c.is_finite().then_some(c),
            });
            // strict comparison keeps the earliest combination on ties
            if best.as_ref().is_none_or(|(bc, _, _)| c < *bc) {
                best = Some((c, k, m));
            }
        }
        let (probe_cost, k, probed) = best.expect("90 combinations evaluated");
        if !(probe_cost < current * (1.0 - config.stop_tolerance)) {
            break "no combination improves the cost".to_string();
        }
        let (s, o) = combos[k];
        let mask = make_subset(s, o, model.state_basis(), model.output_basis())?;
        let remaining = config.lm_steps_per_run.saturating_sub(config.probe_steps);
        let (refined, trace) = lm_minimize(&probed, data, inits, &mask, remaining, schedule)?;
        model = refined;
        current = *trace.last().expect("non-empty trace");
        log::info!(
            "iteration {iteration}: state {s}, output {o}, e_rms {:.4}",
            relative_rms(current, data)
        );
        report.iterations.push(IterationRecord {
            iteration,
            state_subset: s,
            output_subset: o,
            cost: current,
            e_rms: relative_rms(current, data),
            evaluated,
        });
        report.final_cost = current;
        report.final_e_rms = relative_rms(current, data);
        report.wall_time_s = prior_time + started.elapsed().as_secs_f64();
        if let Some(path) = checkpoint {
            Checkpoint {
                model: model.clone(),
                report: report.clone(),
                finished: false,
            }
            .save(path)?;
        }
    };
    report.stop_reason = stop_reason;
    report.final_cost = current;
    report.final_e_rms = relative_rms(current, data);
    report.wall_time_s = prior_time + started.elapsed().as_secs_f64();
    if let Some(path) = checkpoint {
        Checkpoint {
            model: model.clone(),
            report: report.clone(),
            finished: true,
        }
        .save(path)?;
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::tests::{random_input, random_model};

    fn data_from(model: &PnlssModel, seeds: &[u64]) -> (Vec<TimeSeries>, Vec<SimulationState>) {
        let init = SimulationState::zero(model.n_states());
        let recs = seeds
            .iter()
            .map(|&s| {
                let u = random_input(s, 150, 1.0);
                let y = model.simulate_samples(&u, &init).unwrap();
                TimeSeries::new(model.sample_rate(), u).unwrap().with_output(y).unwrap()
            })
            .collect::<Vec<_>>();
        let inits = vec![init; seeds.len()];
        (recs, inits)
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            max_outer_iterations: 2,
            lm_steps_per_run: 20,
            probe_steps: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn truth_needs_no_iterations() {
        let m = random_model(2, 2, &[0, 2, 3], 0.05);
        let (data, inits) = data_from(&m, &[1, 2]);
        let (fit, report) = train(&m, &data, &inits, &quick()).unwrap();
        assert!(report.iterations.is_empty());
        assert_eq!(fit, m);
    }

    #[test]
    fn outer_loop_is_monotone_and_deterministic() {
        let truth = random_model(5, 2, &[2, 3], 0.05);
        let (data, inits) = data_from(&truth, &[3, 4]);
        let start = truth.linearized();
        let (_, a) = train(&start, &data, &inits, &quick()).unwrap();
        let (_, b) = train(&start, &data, &inits, &quick()).unwrap();
        assert_eq!(a.without_timing(), b.without_timing());
        assert!(!a.iterations.is_empty());
        let mut prev = a.initial_cost;
        for it in &a.iterations {
            assert!(it.cost < prev);
            assert_eq!(it.evaluated.len(), 90);
            prev = it.cost;
        }
        let json = serde_json::to_string(&a).unwrap();
        assert!(json.contains("\"state_subset\""));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let truth = random_model(6, 2, &[2, 3], 0.05);
        let (data, inits) = data_from(&truth, &[7]);
        let start = truth.linearized();
        let dir = tempfile::tempdir().unwrap();
        let cp = dir.path().join("train.json");
        let one = TrainConfig {
            max_outer_iterations: 1,
            ..quick()
        };
        train_resumable(&start, &data, &inits, &one, &cp).unwrap();
        // continue the same checkpoint with a larger budget
        let mut saved = Checkpoint::load(&cp).unwrap();
        saved.finished = false;
        saved.report.config = quick();
        saved.save(&cp).unwrap();
        let (resumed, rep) = train_resumable(&start, &data, &inits, &quick(), &cp).unwrap();
        let (direct, rep_direct) = train(&start, &data, &inits, &quick()).unwrap();
        assert_eq!(resumed, direct);
        assert_eq!(rep.iterations, rep_direct.iterations);
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = TrainConfig::default();
        c.lm_lambda_up = 0.5;
        assert!(c.validate().is_err());
        c = TrainConfig::default();
        c.probe_steps = 0;
        assert!(c.validate().is_err());
    }
}
