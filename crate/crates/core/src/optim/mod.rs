//! Output-error training of PNLSS models.
//!
//! Jacobians come from the forward sensitivity recursion
//! `dx(t+1) = (A + E dzeta/dx) dx(t) + direct(t)`. Levenberg-Marquardt runs on
//! column-normalized Jacobians and reuses one eigendecomposition of `J'J`
//! for all damping trials of an iteration.

mod subset;
mod train;

pub use subset::{make_subset, SubsetKind, SubsetMask};
pub use train::{
    train, train_resumable, Checkpoint, EvaluatedCombination, IterationRecord, OptReport,
    TrainConfig,
};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::pnlss::{row_major, PnlssModel, PowerTable, SimulationState};
use crate::signals::TimeSeries;

/// A differentiation variable: a model parameter or an initial condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Variable {
    Theta(usize),
    X0(usize),
    U0,
}

#[derive(Debug, Clone, Copy)]
enum Direct {
    A(usize, usize),
    B(usize),
    C(usize),
    D,
    E(usize, usize),
    F(usize),
    X0,
    U0,
}

fn classify(model: &PnlssModel, v: Variable) -> Direct {
    let l = model.layout();
    let n = l.n_x;
    match v {
        Variable::X0(_) => Direct::X0,
        Variable::U0 => Direct::U0,
        Variable::Theta(i) => {
            if i < n * n {
                Direct::A(i % n, i / n)
            } else if i < l.b(0) + n {
                Direct::B(i - l.b(0))
            } else if i < l.c(0) + n {
                Direct::C(i - l.c(0))
            } else if i == l.d() {
                Direct::D
            } else if i < l.f(0) {
                let k = i - l.e(0, 0);
                Direct::E(k % n, k / n)
            } else {
                Direct::F(i - l.f(0))
            }
        }
    }
}

/// Output trajectory and its sensitivities (`len x vars`, row-major).
pub(crate) fn output_sensitivities(
    model: &PnlssModel,
    u: &[f64],
    init: &SimulationState,
    vars: &[Variable],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = model.n_states();
    if init.x0.len() != n {
        return Err(Error::Dimension {
            context: "initial state",
            expected: n,
            actual: init.x0.len(),
        });
    }
    let p = vars.len();
    let kinds: Vec<Direct> = vars.iter().map(|&v| classify(model, v)).collect();
    let a = row_major(&model.linear.a);
    let e = row_major(&model.e);
    let b = model.linear.b.as_slice();
    let c = model.linear.c.as_slice();
    let d = model.linear.d;
    let f = model.f.as_slice();
    let sb = model.state_basis();
    let ob = model.output_basis();
    let nz = sb.len();
    let ne = ob.len();
    let mut table = PowerTable::new(n + 1, sb.max_degree().max(ob.max_degree()));
    let mut zeta = vec![0.0; nz];
    let mut eta = vec![0.0; ne];
    // dzeta[j * nz + k] = d zeta_k / d var_j, var n is the input
    let mut dzeta = vec![0.0; (n + 1) * nz];
    let mut deta = vec![0.0; (n + 1) * ne];
    let mut m = vec![0.0; n * n];
    let mut g = vec![0.0; n];

    let mut s = vec![0.0; n * p];
    for (q, v) in vars.iter().enumerate() {
        if let Variable::X0(i) = v {
            s[i * p + q] = 1.0;
        }
    }
    let mut s_next = vec![0.0; n * p];
    let mut x = init.x0.clone();
    let mut x_next = vec![0.0; n];
    let mut y = Vec::with_capacity(u.len());
    let mut jac = vec![0.0; u.len() * p];

    for (t, &ut) in u.iter().enumerate() {
        let ut = if t == 0 { init.u0.unwrap_or(ut) } else { ut };
        table.fill(&x, ut);
        table.monomials(sb, &mut zeta);
        table.monomials(ob, &mut eta);
        let need_u = t == 0 && kinds.iter().any(|k| matches!(k, Direct::U0));
        let n_vars = if need_u { n + 1 } else { n };
        for j in 0..n_vars {
            table.partials(sb, j, &mut dzeta[j * nz..(j + 1) * nz]);
            table.partials(ob, j, &mut deta[j * ne..(j + 1) * ne]);
        }

        let mut yt = 0.0;
        for j in 0..n {
            yt += c[j] * x[j];
        }
        yt += d * ut;
        for j in 0..ne {
            yt += f[j] * eta[j];
        }
        y.push(yt);

        for j in 0..n {
            let dj = &deta[j * ne..(j + 1) * ne];
            g[j] = c[j] + f.iter().zip(dj).map(|(a, b)| a * b).sum::<f64>();
        }
        for i in 0..n {
            let erow = &e[i * nz..(i + 1) * nz];
            for j in 0..n {
                let dj = &dzeta[j * nz..(j + 1) * nz];
                m[i * n + j] = a[i * n + j] + erow.iter().zip(dj).map(|(a, b)| a * b).sum::<f64>();
            }
        }

        let row = &mut jac[t * p..(t + 1) * p];
        for q in 0..p {
            let mut acc = 0.0;
            for j in 0..n {
                acc += g[j] * s[j * p + q];
            }
            acc += match kinds[q] {
                Direct::C(j) => x[j],
                Direct::D => ut,
                Direct::F(k) => eta[k],
                Direct::U0 if t == 0 => {
                    let du = &deta[n * ne..(n + 1) * ne];
                    d + f.iter().zip(du).map(|(a, b)| a * b).sum::<f64>()
                }
                _ => 0.0,
            };
            row[q] = acc;
        }

        for i in 0..n {
            let mrow = &m[i * n..(i + 1) * n];
            let out = &mut s_next[i * p..(i + 1) * p];
            out.fill(0.0);
            for (j, &mij) in mrow.iter().enumerate() {
                if mij != 0.0 {
                    let sj = &s[j * p..(j + 1) * p];
                    for (o, &v) in out.iter_mut().zip(sj) {
                        *o += mij * v;
                    }
                }
            }
            for q in 0..p {
                out[q] += match kinds[q] {
                    Direct::A(r, col) if r == i => x[col],
                    Direct::B(r) if r == i => ut,
                    Direct::E(r, k) if r == i => zeta[k],
                    Direct::U0 if t == 0 => {
                        let du = &dzeta[n * nz..(n + 1) * nz];
                        b[i] + e[i * nz..(i + 1) * nz]
                            .iter()
                            .zip(du)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                    }
                    _ => 0.0,
                };
            }
        }

        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += a[i * n + j] * x[j];
            }
            acc += b[i] * ut;
            let erow = &e[i * nz..(i + 1) * nz];
            for j in 0..nz {
                acc += erow[j] * zeta[j];
            }
            x_next[i] = acc;
        }
        if !yt.is_finite()
            || x_next.iter().any(|v| !(v.abs() <= crate::pnlss::DIVERGENCE_THRESHOLD))
            || s_next.iter().any(|v| !v.is_finite())
        {
            return Err(Error::Divergence { sample: t });
        }
        std::mem::swap(&mut x, &mut x_next);
        std::mem::swap(&mut s, &mut s_next);
    }
    Ok((y, jac))
}

fn check_data(model: &PnlssModel, data: &[TimeSeries], inits: &[SimulationState]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("training data", "no records"));
    }
    if data.len() != inits.len() {
        return Err(Error::Dimension {
            context: "initial states per record",
            expected: data.len(),
            actual: inits.len(),
        });
    }
    for r in data {
        r.require_output("training")?;
        let fs = model.sample_rate();
        if (r.sample_rate() - fs).abs() > 1e-9 * fs {
            return Err(Error::invalid(
                "training data",
                format!("record '{}' sampled at {} Hz, model at {fs} Hz", r.label(), r.sample_rate()),
            ));
        }
    }
    Ok(())
}

/// Concatenated residuals `measured - simulated`; `None` on divergence.
fn residuals(model: &PnlssModel, data: &[TimeSeries], inits: &[SimulationState]) -> Option<Vec<f64>> {
    let mut r = Vec::new();
    for (rec, init) in data.iter().zip(inits) {
        let y = model.simulate_samples(rec.input(), init).ok()?;
        let meas = rec.output()?;
        r.extend(meas.iter().zip(&y).map(|(m, s)| m - s));
    }
    Some(r)
}

/// `V = ||e||^2` over all records; infinite when a simulation diverges.
pub fn cost(model: &PnlssModel, data: &[TimeSeries], inits: &[SimulationState]) -> f64 {
    if check_data(model, data, inits).is_err() {
        return f64::INFINITY;
    }
    residuals(model, data, inits)
        .map(|r| r.iter().map(|v| v * v).sum())
        .unwrap_or(f64::INFINITY)
}

/// `sqrt(V / sum y^2)` over the concatenated outputs.
pub fn relative_rms(cost: f64, data: &[TimeSeries]) -> f64 {
    let energy: f64 = data
        .iter()
        .filter_map(|r| r.output())
        .flat_map(|y| y.iter().map(|v| v * v))
        .sum();
    (cost / energy).sqrt()
}

/// Output sensitivities `dy/dtheta` for the masked parameters, one row per sample.
pub fn jacobian(
    model: &PnlssModel,
    data: &TimeSeries,
    init: &SimulationState,
    mask: &SubsetMask,
) -> Result<DMatrix<f64>> {
    let idx = mask.parameter_indices(&model.layout())?;
    let vars: Vec<Variable> = idx.into_iter().map(Variable::Theta).collect();
    let (_, jac) = output_sensitivities(model, data.input(), init, &vars)?;
    Ok(DMatrix::from_row_slice(data.len(), vars.len(), &jac))
}

fn stacked_jacobian(
    model: &PnlssModel,
    data: &[TimeSeries],
    inits: &[SimulationState],
    vars: &[Variable],
) -> Option<DMatrix<f64>> {
    let rows: usize = data.iter().map(|r| r.len()).sum();
    let mut all = Vec::with_capacity(rows * vars.len());
    for (rec, init) in data.iter().zip(inits) {
        let (_, j) = output_sensitivities(model, rec.input(), init, vars).ok()?;
        all.extend_from_slice(&j);
    }
    Some(DMatrix::from_row_slice(rows, vars.len(), &all))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmSchedule {
    /// Initial damping relative to the mean diagonal of the normalized `J'J`.
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
}

impl Default for LmSchedule {
    fn default() -> Self {
        Self {
            lambda_init: 1e-3,
            lambda_up: 10.0,
            lambda_down: 0.1,
        }
    }
}

/// Damping beyond which no step can make progress.
const LAMBDA_MAX: f64 = 1e16;

/// Generic LM on `theta`. `residual` returns `measured - model`, `jac` the
/// model sensitivities. Returns the best point and the accepted cost trace,
/// starting with the initial cost. Every trial counts as a step.
fn levenberg_marquardt(
    theta0: Vec<f64>,
    steps: usize,
    schedule: LmSchedule,
    residual: impl Fn(&[f64]) -> Option<Vec<f64>>,
    jac: impl Fn(&[f64]) -> Option<DMatrix<f64>>,
) -> (Vec<f64>, Vec<f64>) {
    let mut theta = theta0;
    let Some(mut r) = residual(&theta) else {
        return (theta, vec![f64::INFINITY]);
    };
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let mut trace = vec![cost];
    if theta.is_empty() {
        return (theta, trace);
    }
    let mut lambda = f64::NAN;
    let mut taken = 0;
    'outer: while taken < steps && cost > 0.0 {
        let Some(mut j) = jac(&theta) else { break };
        let scale: Vec<f64> = j
            .column_iter()
            .map(|c| {
                let n = c.norm();
                if n > 0.0 {
                    n
                } else {
                    1.0
                }
            })
            .collect();
        for (q, s) in scale.iter().enumerate() {
            j.column_mut(q).scale_mut(1.0 / s);
        }
        let h = j.tr_mul(&j);
        let rv = DVector::from_column_slice(&r);
        let grad = j.tr_mul(&rv);
        if lambda.is_nan() {
            lambda = schedule.lambda_init * h.diagonal().mean();
        }
        let eig = SymmetricEigen::new(h);
        let gv = eig.eigenvectors.tr_mul(&grad);
        loop {
            if taken >= steps || lambda > LAMBDA_MAX {
                break 'outer;
            }
            taken += 1;
            let mut w = gv.clone();
            for (wi, &li) in w.iter_mut().zip(eig.eigenvalues.iter()) {
                *wi /= li.max(0.0) + lambda;
            }
            let delta = &eig.eigenvectors * w;
            let trial: Vec<f64> = theta
                .iter()
                .zip(delta.iter().zip(&scale))
                .map(|(t, (dq, s))| t + dq / s)
                .collect();
            let accepted = residual(&trial).and_then(|rt| {
                let ct: f64 = rt.iter().map(|v| v * v).sum();
                (ct < cost).then_some((rt, ct))
            });
            match accepted {
                Some((rt, ct)) => {
                    theta = trial;
                    r = rt;
                    cost = ct;
                    trace.push(cost);
                    lambda *= schedule.lambda_down;
                    continue 'outer;
                }
                None => lambda *= schedule.lambda_up,
            }
        }
    }
    (theta, trace)
}

/// LM over the masked parameters. Unmasked parameters are left bit-identical.
/// Returns the best model and its accepted cost trace.
pub fn lm_minimize(
    model: &PnlssModel,
    data: &[TimeSeries],
    inits: &[SimulationState],
    mask: &SubsetMask,
    steps: usize,
    schedule: LmSchedule,
) -> Result<(PnlssModel, Vec<f64>)> {
    check_data(model, data, inits)?;
    let idx = mask.parameter_indices(&model.layout())?;
    let vars: Vec<Variable> = idx.iter().copied().map(Variable::Theta).collect();
    let base = model.flatten_parameters();
    let assemble = |sub: &[f64]| -> Vec<f64> {
        let mut full = base.clone();
        for (&i, &v) in idx.iter().zip(sub) {
            full[i] = v;
        }
        full
    };
    let build = |sub: &[f64]| model.unflatten_parameters(&assemble(sub)).ok();
    let theta0: Vec<f64> = idx.iter().map(|&i| base[i]).collect();
    let (best, trace) = levenberg_marquardt(
        theta0,
        steps,
        schedule,
        |sub| residuals(&build(sub)?, data, inits),
        |sub| stacked_jacobian(&build(sub)?, data, inits, &vars),
    );
    Ok((model.unflatten_parameters(&assemble(&best))?, trace))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialStateEstimate {
    pub state: SimulationState,
    /// Relative rms output error on the fitted window.
    pub residual_rms: f64,
}

/// LM over `x0` (and `u0`) on the first `window` samples, starting from zero.
pub fn estimate_initial_state(
    model: &PnlssModel,
    record: &TimeSeries,
    window: usize,
    estimate_u0: bool,
) -> Result<InitialStateEstimate> {
    let y = record.require_output("initial state estimation")?;
    if window == 0 || window > record.len() {
        return Err(Error::invalid(
            "initial state window",
            format!("{window} samples for a record of {}", record.len()),
        ));
    }
    let n = model.n_states();
    let u = &record.input()[..window];
    let y = &y[..window];
    let mut vars: Vec<Variable> = (0..n).map(Variable::X0).collect();
    if estimate_u0 {
        vars.push(Variable::U0);
    }
    let to_state = |p: &[f64]| SimulationState {
        x0: p[..n].to_vec(),
        u0: estimate_u0.then(|| p[n]),
    };
    let (best, trace) = levenberg_marquardt(
        vec![0.0; vars.len()],
        200,
        LmSchedule::default(),
        |p| {
            let sim = model.simulate_samples(u, &to_state(p)).ok()?;
            Some(y.iter().zip(&sim).map(|(a, b)| a - b).collect())
        },
        |p| {
            let (_, j) = output_sensitivities(model, u, &to_state(p), &vars).ok()?;
            Some(DMatrix::from_row_slice(window, vars.len(), &j))
        },
    );
    let energy: f64 = y.iter().map(|v| v * v).sum();
    let last = *trace.last().expect("trace starts with the initial cost");
    Ok(InitialStateEstimate {
        state: to_state(&best),
        residual_rms: if energy > 0.0 { (last / energy).sqrt() } else { last.sqrt() },
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::freqid::LinearSsModel;
    use crate::pnlss::enumerate_basis;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Small stable model with modest nonlinear coefficients.
    pub(crate) fn random_model(seed: u64, n: usize, degrees: &[u32], scale: f64) -> PnlssModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        // Frobenius norm bounds the spectral norm: a contraction
        a *= 0.8 / a.norm();
        let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let c = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let lin = LinearSsModel::new(a, b, c, rng.random_range(-0.5..0.5), 10.0).unwrap();
        let sb = enumerate_basis(n, 1, degrees).unwrap();
        let ob = enumerate_basis(n, 1, degrees).unwrap();
        let e = DMatrix::from_fn(n, sb.len(), |_, _| scale * rng.random_range(-1.0..1.0));
        let f = DVector::from_fn(ob.len(), |_, _| scale * rng.random_range(-1.0..1.0));
        PnlssModel::new(lin, e, f, sb, ob).unwrap()
    }

    pub(crate) fn random_input(seed: u64, n: usize, amp: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| amp * rng.random_range(-1.0..1.0)).collect()
    }

    fn record(model: &PnlssModel, u: Vec<f64>, init: &SimulationState) -> TimeSeries {
        let y = model.simulate_samples(&u, init).unwrap();
        TimeSeries::new(model.sample_rate(), u).unwrap().with_output(y).unwrap()
    }

    /// Central differences of the simulated output over every variable.
    fn fd_jacobian(model: &PnlssModel, u: &[f64], init: &SimulationState, vars: &[Variable]) -> DMatrix<f64> {
        let h = 1e-6;
        let theta = model.flatten_parameters();
        let mut out = DMatrix::zeros(u.len(), vars.len());
        for (q, v) in vars.iter().enumerate() {
            let eval = |sign: f64| {
                let mut th = theta.clone();
                let mut st = init.clone();
                match *v {
                    Variable::Theta(i) => th[i] += sign * h,
                    Variable::X0(i) => st.x0[i] += sign * h,
                    Variable::U0 => st.u0 = Some(st.u0.unwrap_or(u[0]) + sign * h),
                }
                model.unflatten_parameters(&th).unwrap().simulate_samples(u, &st).unwrap()
            };
            let (p, m) = (eval(1.0), eval(-1.0));
            for t in 0..u.len() {
                out[(t, q)] = (p[t] - m[t]) / (2.0 * h);
            }
        }
        out
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for seed in 0..5 {
            let m = random_model(seed, 2, &[0, 2, 3], 0.05);
            let u = random_input(seed + 100, 60, 0.8);
            let init = SimulationState { x0: vec![0.1, -0.2], u0: Some(0.3) };
            let mut vars: Vec<Variable> = (0..m.n_parameters()).map(Variable::Theta).collect();
            vars.extend([Variable::X0(0), Variable::X0(1), Variable::U0]);
            let (y, j) = output_sensitivities(&m, &u, &init, &vars).unwrap();
            assert_eq!(y, m.simulate_samples(&u, &init).unwrap());
            let j = DMatrix::from_row_slice(u.len(), vars.len(), &j);
            let fd = fd_jacobian(&m, &u, &init, &vars);
            let rel = (&j - &fd).norm() / fd.norm();
            assert!(rel < 1e-4, "seed {seed}: {rel}");
        }
    }

    #[test]
    fn jacobian_for_d_is_input() {
        let m = random_model(3, 3, &[0, 2], 0.1).linearized();
        let u = random_input(1, 50, 1.0);
        let ts = TimeSeries::new(10.0, u.clone()).unwrap();
        let full = jacobian(&m, &ts, &SimulationState::zero(3), &SubsetMask::full(m.state_basis(), m.output_basis())).unwrap();
        let d = m.layout().d();
        for t in 0..u.len() {
            assert_eq!(full[(t, d)], u[t]);
        }
    }

    #[test]
    fn masked_columns_are_slices_of_full() {
        let m = random_model(7, 2, &[0, 2, 3], 0.05);
        let ts = TimeSeries::new(10.0, random_input(2, 40, 1.0)).unwrap();
        let init = SimulationState::zero(2);
        let full_mask = SubsetMask::full(m.state_basis(), m.output_basis());
        let full = jacobian(&m, &ts, &init, &full_mask).unwrap();
        for (s, o) in SubsetKind::combinations() {
            let mask = make_subset(s, o, m.state_basis(), m.output_basis()).unwrap();
            let idx = mask.parameter_indices(&m.layout()).unwrap();
            let sub = jacobian(&m, &ts, &init, &mask).unwrap();
            for (q, &i) in idx.iter().enumerate() {
                assert_eq!(sub.column(q), full.column(i));
            }
        }
    }

    #[test]
    fn cost_zero_at_truth_and_quadratic_nearby() {
        let m = random_model(11, 2, &[0, 2, 3], 0.05);
        let init = SimulationState::zero(2);
        let data = vec![record(&m, random_input(5, 200, 1.0), &init)];
        let inits = vec![init];
        assert_eq!(cost(&m, &data, &inits), 0.0);
        let theta = m.flatten_parameters();
        let i = m.layout().e(1, 3);
        let at = |delta: f64| {
            let mut th = theta.clone();
            th[i] += delta;
            cost(&m.unflatten_parameters(&th).unwrap(), &data, &inits)
        };
        let (c1, c2) = (at(1e-4), at(2e-4));
        // V(2d) / V(d) = 4 for a quadratic minimum
        assert!((c2 / c1 - 4.0).abs() < 1e-2, "{}", c2 / c1);
        // second difference equals 2 |dy/dtheta|^2
        let j = jacobian(&m, &data[0], &inits[0], &SubsetMask::full(m.state_basis(), m.output_basis())).unwrap();
        let curvature = 2.0 * j.column(i).norm_squared();
        let second = (at(1e-4) - 2.0 * at(0.0) + at(-1e-4)) / 1e-8;
        assert!((second - curvature).abs() < 1e-3 * curvature);
    }

    #[test]
    fn divergence_gives_infinite_cost() {
        let mut m = random_model(1, 2, &[2], 0.0);
        m.linear.a[(0, 0)] = 3.0;
        let data = vec![TimeSeries::new(10.0, vec![1.0; 200]).unwrap().with_output(vec![0.0; 200]).unwrap()];
        assert!(cost(&m, &data, &[SimulationState::zero(2)]).is_infinite());
    }

    #[test]
    fn lm_solves_linear_in_parameter_problem() {
        // with A, B, E fixed the output is linear in F
        let truth = random_model(21, 2, &[0, 2, 3], 0.05);
        let init = SimulationState::zero(2);
        let u = random_input(8, 300, 1.0);
        let mut target = truth.clone();
        target.f.iter_mut().enumerate().for_each(|(k, v)| *v += 0.01 * k as f64);
        let data = vec![record(&target, u.clone(), &init)];
        let mut mask = SubsetMask::full(truth.state_basis(), truth.output_basis());
        mask.include_linear = false;
        mask.selected_e_columns.clear();
        let (fit, trace) =
            lm_minimize(&truth, &data, &[init.clone()], &mask, 50, LmSchedule::default()).unwrap();
        assert!(trace.len() <= 51 && trace.windows(2).all(|w| w[1] < w[0]));

        // oracle: ordinary least squares on the output monomial regressors
        let zero_f = {
            let mut m = truth.clone();
            m.f.fill(0.0);
            m
        };
        let base = zero_f.simulate_samples(&u, &init).unwrap();
        let ne = truth.output_basis().len();
        let mut regress = DMatrix::zeros(u.len(), ne);
        for k in 0..ne {
            let mut m = zero_f.clone();
            m.f[k] = 1.0;
            let yk = m.simulate_samples(&u, &init).unwrap();
            for t in 0..u.len() {
                regress[(t, k)] = yk[t] - base[t];
            }
        }
        let y = data[0].output().unwrap();
        let rhs = DVector::from_fn(u.len(), |t, _| y[t] - base[t]);
        let ls = regress.svd(true, true).solve(&rhs, 1e-14).unwrap();
        for k in 0..ne {
            assert!((fit.f[k] - ls[k]).abs() < 1e-10, "{k}: {} vs {}", fit.f[k], ls[k]);
        }
    }

    #[test]
    fn masked_run_keeps_other_parameters() {
        let truth = random_model(4, 2, &[0, 2, 3], 0.05);
        let init = SimulationState::zero(2);
        let data = vec![record(&truth, random_input(9, 200, 1.0), &init)];
        let mut start = truth.linearized();
        start.f[0] = 0.123;
        let mask = make_subset(SubsetKind::Diagonal, SubsetKind::InputOnly, start.state_basis(), start.output_basis()).unwrap();
        let (fit, trace) = lm_minimize(&start, &data, &[init], &mask, 30, LmSchedule::default()).unwrap();
        assert!(trace.len() > 1);
        let free = mask.parameter_indices(&start.layout()).unwrap();
        for (i, (a, b)) in fit.flatten_parameters().iter().zip(start.flatten_parameters()).enumerate() {
            if !free.contains(&i) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn initial_state_round_trip() {
        let m = random_model(13, 2, &[0, 2, 3], 0.03);
        let truth = SimulationState { x0: vec![0.4, -0.3], u0: None };
        let rec = record(&m, random_input(3, 100, 0.5), &truth);
        let est = estimate_initial_state(&m, &rec, 40, false).unwrap();
        for (a, b) in est.state.x0.iter().zip(&truth.x0) {
            assert!((a - b).abs() < 1e-6, "{:?}", est.state);
        }
        let zero = record(&m, random_input(3, 100, 0.5), &SimulationState::zero(2));
        let est0 = estimate_initial_state(&m, &zero, 40, false).unwrap();
        assert!(est0.state.x0.iter().all(|v| v.abs() < 1e-9));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn jacobian_fd_for_every_subset(seed in 0u64..1000) {
            let m = random_model(seed, 2, &[0, 2, 3], 0.05);
            let u = random_input(seed ^ 0xabc, 40, 0.7);
            let init = SimulationState { x0: vec![0.05, 0.1], u0: None };
            let ts = TimeSeries::new(10.0, u.clone()).unwrap();
            for (s, o) in [(SubsetKind::Diagonal, SubsetKind::All), (SubsetKind::OddDegrees, SubsetKind::AffineInStates), (SubsetKind::All, SubsetKind::FullStateAffine)] {
                let mask = make_subset(s, o, m.state_basis(), m.output_basis()).unwrap();
                let idx = mask.parameter_indices(&m.layout()).unwrap();
                let vars: Vec<Variable> = idx.iter().copied().map(Variable::Theta).collect();
                let j = jacobian(&m, &ts, &init, &mask).unwrap();
                let fd = fd_jacobian(&m, &u, &init, &vars);
                prop_assert!((&j - &fd).norm() < 1e-4 * fd.norm());
            }
        }
    }
}
