use std::path::{Path, PathBuf};

use pnlss::freqid::{estimate_bla, fit_fir, fit_rational, scan_model_order, weighted_cost, FrfEstimate, LinearSsModel, ModelKind};
use pnlss::ingest::load_timeseries_csv;
use pnlss::optim::{cost, relative_rms, train_resumable};
use pnlss::pnlss::{PnlssModel, SimulationState};
use pnlss::signals::io::{read_csv, write_csv};
use pnlss::signals::{
    default_ramp_duration, generate_multisine, generate_ramped_sine, generate_sweep,
    multisine_realizations, remove_transient_periods, Excitation, TimeSeries,
};
use pnlss::valid::{run_validation_suite, CsvPlant, Experiment, Plant, VdpPlant};
use pnlss::vdp::{map_lockin, simulate_vdp, VdpConfig};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::manifest::{digest, stage_seed, Manifest};

pub struct Context {
    pub config: PipelineConfig,
    pub out: PathBuf,
    pub seed: u64,
}

/// Files a stage read and wrote, for its manifest.
#[derive(Default)]
struct Io {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Context {
    fn stage_dir(&self, stage: &str) -> Result<PathBuf, CliError> {
        let dir = self.out.join(stage);
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn finish(&self, stage: &str, section: impl Serialize, io: Io) -> Result<(), CliError> {
        let digests = |v: &[PathBuf]| -> Result<Vec<_>, CliError> {
            v.iter().map(|p| digest(&self.out, p)).collect()
        };
        Manifest {
            stage: stage.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            rng_seed: self.seed,
            stage_seed: stage_seed(self.seed, stage),
            config: serde_json::to_value(section)?,
            inputs: digests(&io.inputs)?,
            outputs: digests(&io.outputs)?,
        }
        .write(&self.out)?;
        log::info!("{stage}: wrote {} files to {}", io.outputs.len(), self.out.join(stage).display());
        Ok(())
    }

    fn vdp_config(&self, stage: &str) -> Result<VdpConfig, CliError> {
        self.config
            .vdp
            .ok_or_else(|| CliError::Contract(format!("stage `{stage}` needs a `vdp` config section")))
    }

    /// Simulated multisine records: (estimation, held-out).
    fn simulated_multisines(&self, consumer: &str, io: &mut Io) -> Result<(Vec<TimeSeries>, Vec<TimeSeries>), CliError> {
        let m = Manifest::verified(&self.out, "vdp", consumer)?;
        let paths = m.csv_outputs(&self.out, "multisine_");
        let n_est = self.config.n_estimation();
        if paths.is_empty() || n_est == 0 || n_est > paths.len() {
            return Err(CliError::Contract(format!(
                "stage `{consumer}`: {n_est} estimation realizations requested, `vdp` produced {}",
                paths.len()
            )));
        }
        let mut records = Vec::with_capacity(paths.len());
        for p in &paths {
            records.push(read_csv(p)?.0);
            io.inputs.push(p.clone());
        }
        let held_out = records.split_off(n_est);
        Ok((records, held_out))
    }

    fn trained_model(&self, consumer: &str, io: &mut Io) -> Result<PnlssModel, CliError> {
        Manifest::verified(&self.out, "train", consumer)?;
        let p = self.out.join("train").join("model.json");
        io.inputs.push(p.clone());
        Ok(serde_json::from_str(&std::fs::read_to_string(&p)?)?)
    }
}

fn write_json(path: &Path, value: &impl Serialize, io: &mut Io) -> Result<(), CliError> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    io.outputs.push(path.to_path_buf());
    Ok(())
}

fn write_record(path: &Path, ts: &TimeSeries, exc: Option<&Excitation>, io: &mut Io) -> Result<(), CliError> {
    write_csv(path, ts, exc)?;
    io.outputs.push(path.to_path_buf());
    io.outputs.push(pnlss::signals::io::sidecar_path(path));
    Ok(())
}

pub fn excite(ctx: &Context) -> Result<(), CliError> {
    let dir = ctx.stage_dir("excite")?;
    let cfg = &ctx.config.excitation;
    let mut io = Io::default();
    let spec = cfg.multisine.spec(stage_seed(ctx.seed, "excite"));
    let records = generate_multisine(&spec)?;
    let excitations = multisine_realizations(&spec)?;
    for (m, (ts, exc)) in records.iter().zip(&excitations).enumerate() {
        write_record(&dir.join(format!("multisine_r{m:02}.csv")), ts, Some(exc), &mut io)?;
    }
    for (i, s) in cfg.sweeps.iter().enumerate() {
        let ts = generate_sweep(s)?;
        write_record(&dir.join(format!("sweep_{i:02}.csv")), &ts, Some(&Excitation::Sweep(s.clone())), &mut io)?;
    }
    let f_ref = cfg.f_ref.or(ctx.config.vdp.map(|v| v.f_aut));
    for (i, r) in cfg.ramped_sines.iter().enumerate() {
        let ramp = match (r.ramp_duration, f_ref) {
            (Some(d), _) => d,
            (None, Some(f)) => default_ramp_duration(r.f_target, f),
            (None, None) => {
                return Err(CliError::Contract(
                    "ramped sine without ramp_duration needs excitation.f_ref or a vdp section".into(),
                ))
            }
        };
        let ts = generate_ramped_sine(r.f_target, r.amplitude, ramp, r.hold_duration, cfg.multisine.sample_rate)?;
        let exc = Excitation::RampedSine {
            f_target: r.f_target,
            amplitude: r.amplitude,
            ramp_duration: ramp,
            hold_duration: r.hold_duration,
        };
        write_record(&dir.join(format!("ramped_{i:02}.csv")), &ts, Some(&exc), &mut io)?;
    }
    ctx.finish("excite", cfg, io)
}

pub fn vdp(ctx: &Context) -> Result<(), CliError> {
    let vcfg = ctx.vdp_config("vdp")?;
    let m = Manifest::verified(&ctx.out, "excite", "vdp")?;
    let dir = ctx.stage_dir("vdp")?;
    let mut io = Io::default();
    for path in m.csv_outputs(&ctx.out, "") {
        let (ts, meta) = read_csv(&path)?;
        let exc = meta.and_then(|m| m.excitation);
        let rec = simulate_vdp(&vcfg, &ts, exc.as_ref())?.velocity_record()?;
        let name = path.file_name().expect("csv file name");
        write_record(&dir.join(name), &rec, None, &mut io)?;
        io.inputs.push(path);
    }
    ctx.finish("vdp", vcfg, io)
}

pub fn lockin(ctx: &Context) -> Result<(), CliError> {
    let vcfg = ctx.vdp_config("lockin")?;
    let l = &ctx.config.lockin;
    let dir = ctx.stage_dir("lockin")?;
    let mut io = Io::default();
    let grid = map_lockin(&vcfg, &l.rel_frequencies, &l.amplitudes, l.settle_time, l.observe_time, l.tolerance)?;
    let csv = dir.join("grid.csv");
    grid.write_csv(&csv)?;
    io.outputs.push(csv);
    write_json(&dir.join("grid.json"), &grid, &mut io)?;
    ctx.finish("lockin", (vcfg, l), io)
}

pub fn bla(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config.bla;
    let mut io = Io::default();
    let records = if cfg.records.is_empty() {
        ctx.simulated_multisines("bla", &mut io)?.0
    } else {
        let mut v = Vec::new();
        for p in &cfg.records {
            v.push(read_csv(p)?.0);
            io.inputs.push(p.clone());
        }
        v
    };
    let steady = records
        .iter()
        .map(|r| remove_transient_periods(r, cfg.transient_periods))
        .collect::<pnlss::Result<Vec<_>>>()?;
    let n_lines = cfg.n_lines.unwrap_or(ctx.config.excitation.multisine.n_lines);
    let frf = estimate_bla(&steady, n_lines)?;
    let dir = ctx.stage_dir("bla")?;
    write_json(&dir.join("frf.json"), &frf, &mut io)?;
    let csv = dir.join("frf.csv");
    frf.write_csv(&csv)?;
    io.outputs.push(csv);
    ctx.finish("bla", cfg, io)
}

#[derive(Serialize)]
struct FitSummary {
    kind: ModelKind,
    order: usize,
    weighted_cost: f64,
    stable: bool,
    scan: Vec<(usize, f64)>,
}

pub fn fit_linear(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config.linear_fit;
    Manifest::verified(&ctx.out, "bla", "fit-linear")?;
    let mut io = Io::default();
    let frf_path = ctx.out.join("bla").join("frf.json");
    let frf: FrfEstimate = serde_json::from_str(&std::fs::read_to_string(&frf_path)?)?;
    io.inputs.push(frf_path);
    let scan = if cfg.scan_orders.is_empty() {
        Vec::new()
    } else {
        scan_model_order(&frf, &cfg.scan_orders, cfg.kind)?
    };
    let model: LinearSsModel = match cfg.kind {
        ModelKind::Rational => fit_rational(&frf, cfg.numerator_order, cfg.order, cfg.sk_iterations)?,
        ModelKind::Fir => fit_fir(&frf, cfg.order)?,
    };
    let dir = ctx.stage_dir("fit-linear")?;
    write_json(&dir.join("model.json"), &model, &mut io)?;
    let summary = FitSummary {
        kind: cfg.kind,
        order: cfg.order,
        weighted_cost: weighted_cost(&frf, &model),
        stable: model.is_stable(),
        scan,
    };
    write_json(&dir.join("fit.json"), &summary, &mut io)?;
    ctx.finish("fit-linear", cfg, io)
}

pub fn train(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    Manifest::verified(&ctx.out, "fit-linear", "train")?;
    let mut io = Io::default();
    let lin_path = ctx.out.join("fit-linear").join("model.json");
    let lin: LinearSsModel = serde_json::from_str(&std::fs::read_to_string(&lin_path)?)?;
    io.inputs.push(lin_path);
    let init = PnlssModel::from_linear(lin, &cfg.pnlss.state_degrees, &cfg.pnlss.output_degrees)?;
    let data = if cfg.training.records.is_empty() {
        ctx.simulated_multisines("train", &mut io)?.0
    } else {
        let mut v = Vec::new();
        for p in &cfg.training.records {
            v.push(load_timeseries_csv(p, init.sample_rate())?);
            io.inputs.push(p.clone());
        }
        v
    };
    let inits = vec![SimulationState::zero(init.n_states()); data.len()];
    let mut opt = cfg.training.optimizer.clone();
    opt.rng_seed = stage_seed(ctx.seed, "train");
    let dir = ctx.stage_dir("train")?;
    let (model, report) = train_resumable(&init, &data, &inits, &opt, &dir.join("checkpoint.json"))?;
    log::info!(
        "train: e_rms {:.4} -> {:.4} ({})",
        report.initial_e_rms,
        report.final_e_rms,
        report.stop_reason
    );
    write_json(&dir.join("model.json"), &model, &mut io)?;
    write_json(&dir.join("report.json"), &report.without_timing(), &mut io)?;
    // wall time is kept apart so the files above are reproducible
    std::fs::write(dir.join("timing.json"), format!("{{\"wall_time_s\": {}}}\n", report.wall_time_s))?;
    ctx.finish("train", &opt, io)
}

#[derive(Serialize)]
struct SimulatedRecord {
    file: PathBuf,
    /// Relative rms error against the record's own output, when it has one.
    e_rms: Option<f64>,
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config.simulate;
    let mut io = Io::default();
    let model: PnlssModel = match &cfg.model {
        Some(p) => {
            io.inputs.push(p.clone());
            serde_json::from_str(&std::fs::read_to_string(p)?)?
        }
        None => ctx.trained_model("simulate", &mut io)?,
    };
    let named: Vec<(String, TimeSeries)> = if cfg.inputs.is_empty() {
        let held_out = ctx.simulated_multisines("simulate", &mut io)?.1;
        held_out
            .into_iter()
            .enumerate()
            .map(|(i, r)| (format!("heldout_{i:02}"), r))
            .collect()
    } else {
        let mut v = Vec::new();
        for p in &cfg.inputs {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            v.push((stem, load_timeseries_csv(p, model.sample_rate())?));
            io.inputs.push(p.clone());
        }
        v
    };
    let dir = ctx.stage_dir("simulate")?;
    let mut summary = Vec::new();
    for (name, rec) in &named {
        let sim = model.simulate(rec, &SimulationState::zero(model.n_states()))?;
        let path = dir.join(format!("{name}.csv"));
        write_record(&path, &sim, None, &mut io)?;
        let e_rms = match rec.output() {
            Some(y) => Some(pnlss::valid::weighted_rms_error(&[y], &[sim.output().expect("simulated")])?),
            None => None,
        };
        summary.push(SimulatedRecord {
            file: path.strip_prefix(&ctx.out).unwrap_or(&path).to_path_buf(),
            e_rms,
        });
    }
    write_json(&dir.join("summary.json"), &summary, &mut io)?;
    ctx.finish("simulate", cfg, io)
}

#[derive(Serialize)]
struct HeldOut {
    realizations: usize,
    e_rms: f64,
}

pub fn validate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config.validation;
    let mut io = Io::default();
    let model = ctx.trained_model("validate", &mut io)?;
    let experiments = Experiment::grid(&cfg.rel_frequencies, &cfg.amplitudes);
    let plant: Box<dyn Plant> = if cfg.csv.is_empty() {
        Box::new(VdpPlant::new(ctx.vdp_config("validate")?))
    } else {
        io.inputs.extend(cfg.csv.values().cloned());
        Box::new(CsvPlant {
            files: cfg.csv.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        })
    };
    let report = run_validation_suite(&model, &experiments, plant.as_ref(), &cfg.settings)?;
    let dir = ctx.stage_dir("validate")?;
    let csv = dir.join("report.csv");
    report.write_csv(&csv)?;
    io.outputs.push(csv);
    write_json(&dir.join("report.json"), &report, &mut io)?;
    if let Some(agg) = &report.aggregate {
        log::info!(
            "validate: {} experiments, mean e_rms {:.4}, R {:.3}, e_maxA {:.4}, e_dft {:.4}",
            agg.count,
            agg.mean.e_rms,
            agg.mean.r,
            agg.mean.e_max_a,
            agg.mean.e_dft
        );
    }
    // held-out multisines, when the simulated pipeline produced them
    if ctx.config.training.records.is_empty() && ctx.out.join("vdp").join(crate::manifest::MANIFEST).exists() {
        let held_out = ctx.simulated_multisines("validate", &mut io)?.1;
        if !held_out.is_empty() {
            let inits = vec![SimulationState::zero(model.n_states()); held_out.len()];
            let e_rms = relative_rms(cost(&model, &held_out, &inits), &held_out);
            log::info!("validate: held-out multisine e_rms {e_rms:.4}");
            write_json(
                &dir.join("heldout.json"),
                &HeldOut {
                    realizations: held_out.len(),
                    e_rms,
                },
                &mut io,
            )?;
        }
    }
    ctx.finish("validate", cfg, io)
}
