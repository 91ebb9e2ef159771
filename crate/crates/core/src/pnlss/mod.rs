//! The polynomial nonlinear state-space model class.
//!
//! ```text
//! x(t+1) = A x(t) + B u(t) + E zeta(x(t), u(t))
//!   y(t) = C x(t) + D u(t) + F eta(x(t), u(t))
//! ```
//!
//! `zeta` and `eta` are monomial vectors over the states and the input (see
//! [`MonomialBasis`]). Parameters flatten column-wise in the order
//! `vec(A), vec(B), vec(C), vec(D), vec(E), vec(F)`.

mod basis;

pub use basis::{enumerate_basis, monomial_count, MonomialBasis};
pub(crate) use basis::PowerTable;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freqid::LinearSsModel;
use crate::signals::TimeSeries;

/// States beyond this magnitude are treated as a diverged simulation.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct PnlssModel {
    pub linear: LinearSsModel,
    /// `n_x x n_zeta`.
    pub e: DMatrix<f64>,
    /// One coefficient per output monomial.
    pub f: DVector<f64>,
    state_basis: MonomialBasis,
    output_basis: MonomialBasis,
}

/// Initial condition of a simulation. When `u0` is set it replaces the
/// record's first input sample at `t = 0`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimulationState {
    pub x0: Vec<f64>,
    pub u0: Option<f64>,
}

impl SimulationState {
    pub fn zero(n_x: usize) -> Self {
        Self {
            x0: vec![0.0; n_x],
            u0: None,
        }
    }
}

/// Offsets of each matrix block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_x: usize,
    pub n_zeta: usize,
    pub n_eta: usize,
}

impl ParamLayout {
    pub fn a(&self, row: usize, col: usize) -> usize {
        col * self.n_x + row
    }
    pub fn b(&self, row: usize) -> usize {
        self.n_x * self.n_x + row
    }
    pub fn c(&self, col: usize) -> usize {
        self.n_x * self.n_x + self.n_x + col
    }
    pub fn d(&self) -> usize {
        self.n_x * self.n_x + 2 * self.n_x
    }
    pub fn e(&self, row: usize, col: usize) -> usize {
        self.d() + 1 + col * self.n_x + row
    }
    pub fn f(&self, col: usize) -> usize {
        self.d() + 1 + self.n_x * self.n_zeta + col
    }
    pub fn n_linear(&self) -> usize {
        self.d() + 1
    }
    pub fn len(&self) -> usize {
        self.n_linear() + self.n_x * self.n_zeta + self.n_eta
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PnlssModel {
    pub fn new(
        linear: LinearSsModel,
        e: DMatrix<f64>,
        f: DVector<f64>,
        state_basis: MonomialBasis,
        output_basis: MonomialBasis,
    ) -> Result<Self> {
        let n = linear.n_states();
        for (ctx, expected, actual) in [
            ("E rows", n, e.nrows()),
            ("E columns", state_basis.len(), e.ncols()),
            ("F columns", output_basis.len(), f.len()),
            ("state basis states", n, state_basis.n_states()),
            ("output basis states", n, output_basis.n_states()),
        ] {
            if expected != actual {
                return Err(Error::Dimension {
                    context: ctx,
                    expected,
                    actual,
                });
            }
        }
        Ok(Self {
            linear,
            e,
            f,
            state_basis,
            output_basis,
        })
    }

    /// Nonlinear model initialised from a linear one, with `E = F = 0`.
    pub fn from_linear(
        linear: LinearSsModel,
        state_degrees: &[u32],
        output_degrees: &[u32],
    ) -> Result<Self> {
        let n = linear.n_states();
        let sb = enumerate_basis(n, 1, state_degrees)?;
        let ob = enumerate_basis(n, 1, output_degrees)?;
        let e = DMatrix::zeros(n, sb.len());
        let f = DVector::zeros(ob.len());
        Self::new(linear, e, f, sb, ob)
    }

    pub fn n_states(&self) -> usize {
        self.linear.n_states()
    }

    pub fn sample_rate(&self) -> f64 {
        self.linear.sample_rate
    }

    pub fn state_basis(&self) -> &MonomialBasis {
        &self.state_basis
    }

    pub fn output_basis(&self) -> &MonomialBasis {
        &self.output_basis
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            n_x: self.n_states(),
            n_zeta: self.state_basis.len(),
            n_eta: self.output_basis.len(),
        }
    }

    pub fn n_parameters(&self) -> usize {
        self.layout().len()
    }

    /// Copy with the nonlinear coefficients cleared.
    pub fn linearized(&self) -> Self {
        let mut m = self.clone();
        m.e.fill(0.0);
        m.f.fill(0.0);
        m
    }

    pub fn flatten_parameters(&self) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.n_parameters());
        theta.extend(self.linear.a.iter());
        theta.extend(self.linear.b.iter());
        theta.extend(self.linear.c.iter());
        theta.push(self.linear.d);
        theta.extend(self.e.iter());
        theta.extend(self.f.iter());
        theta
    }

    /// Inverse of [`PnlssModel::flatten_parameters`], using `self` as the template.
    pub fn unflatten_parameters(&self, theta: &[f64]) -> Result<Self> {
        let l = self.layout();
        if theta.len() != l.len() {
            return Err(Error::Dimension {
                context: "parameter vector",
                expected: l.len(),
                actual: theta.len(),
            });
        }
        let n = l.n_x;
        let mut m = self.clone();
        m.linear.a = DMatrix::from_column_slice(n, n, &theta[..n * n]);
        m.linear.b = DVector::from_column_slice(&theta[l.b(0)..l.b(0) + n]);
        m.linear.c = DVector::from_column_slice(&theta[l.c(0)..l.c(0) + n]);
        m.linear.d = theta[l.d()];
        m.e = DMatrix::from_column_slice(n, l.n_zeta, &theta[l.n_linear()..l.n_linear() + n * l.n_zeta]);
        m.f = DVector::from_column_slice(&theta[l.len() - l.n_eta..]);
        Ok(m)
    }

    /// Simulate the output for a raw input sequence.
    pub fn simulate_samples(&self, u: &[f64], init: &SimulationState) -> Result<Vec<f64>> {
        let n = self.n_states();
        if init.x0.len() != n {
            return Err(Error::Dimension {
                context: "initial state",
                expected: n,
                actual: init.x0.len(),
            });
        }
        let a = row_major(&self.linear.a);
        let e = row_major(&self.e);
        let b = self.linear.b.as_slice();
        let c = self.linear.c.as_slice();
        let d = self.linear.d;
        let f = self.f.as_slice();
        let nz = self.state_basis.len();
        let ne = self.output_basis.len();

        let mut table = PowerTable::new(
            n + 1,
            self.state_basis.max_degree().max(self.output_basis.max_degree()),
        );
        let mut zeta = vec![0.0; nz];
        let mut eta = vec![0.0; ne];
        let mut x = init.x0.clone();
        let mut next = vec![0.0; n];
        let mut y = Vec::with_capacity(u.len());
        for (t, &ut) in u.iter().enumerate() {
            let ut = if t == 0 { init.u0.unwrap_or(ut) } else { ut };
            table.fill(&x, ut);
            table.monomials(&self.state_basis, &mut zeta);
            table.monomials(&self.output_basis, &mut eta);

            let mut yt = 0.0;
            for j in 0..n {
                yt += c[j] * x[j];
            }
            yt += d * ut;
            for j in 0..ne {
                yt += f[j] * eta[j];
            }
            y.push(yt);

            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += a[i * n + j] * x[j];
                }
                acc += b[i] * ut;
                let row = &e[i * nz..(i + 1) * nz];
                for j in 0..nz {
                    acc += row[j] * zeta[j];
                }
                next[i] = acc;
            }
            if !yt.is_finite() || next.iter().any(|v| !(v.abs() <= DIVERGENCE_THRESHOLD)) {
                return Err(Error::Divergence { sample: t });
            }
            std::mem::swap(&mut x, &mut next);
        }
        Ok(y)
    }

    pub fn simulate(&self, input: &TimeSeries, init: &SimulationState) -> Result<TimeSeries> {
        let fs = self.sample_rate();
        if (input.sample_rate() - fs).abs() > 1e-9 * fs {
            return Err(Error::invalid(
                "simulate",
                format!(
                    "input sampled at {} Hz, model at {} Hz",
                    input.sample_rate(),
                    fs
                ),
            ));
        }
        let y = self.simulate_samples(input.input(), init)?;
        let mut out = TimeSeries::new(fs, input.input().to_vec())?
            .with_output(y)?
            .with_label(input.label());
        if let Some(p) = input.period_length() {
            out = out.with_periods(p, input.n_periods())?;
        }
        out.with_part_starts(input.part_starts().to_vec())
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// JSON layout: matrices as arrays of rows, exponent tuples spelled out.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    n_x: usize,
    sample_rate: f64,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: f64,
    e: Vec<Vec<f64>>,
    f: Vec<f64>,
    state_degrees: Vec<u32>,
    output_degrees: Vec<u32>,
    state_exponents: Vec<Vec<u32>>,
    output_exponents: Vec<Vec<u32>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &'static str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(Error::Dimension {
            context: what,
            expected: nrows,
            actual: rows.len(),
        });
    }
    if let Some(r) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::Dimension {
            context: what,
            expected: ncols,
            actual: r.len(),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl From<PnlssModel> for ModelFile {
    fn from(m: PnlssModel) -> Self {
        ModelFile {
            n_x: m.n_states(),
            sample_rate: m.sample_rate(),
            a: rows(&m.linear.a),
            b: m.linear.b.iter().copied().collect(),
            c: m.linear.c.iter().copied().collect(),
            d: m.linear.d,
            e: rows(&m.e),
            f: m.f.iter().copied().collect(),
            state_degrees: m.state_basis.degrees().to_vec(),
            output_degrees: m.output_basis.degrees().to_vec(),
            state_exponents: m.state_basis.exponents().to_vec(),
            output_exponents: m.output_basis.exponents().to_vec(),
        }
    }
}

impl TryFrom<ModelFile> for PnlssModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let n = f.n_x;
        let sb = enumerate_basis(n, 1, &f.state_degrees)?;
        let ob = enumerate_basis(n, 1, &f.output_degrees)?;
        if sb.exponents() != f.state_exponents.as_slice()
            || ob.exponents() != f.output_exponents.as_slice()
        {
            return Err(Error::invalid(
                "model file",
                "exponent tuples do not match the canonical enumeration of the degree sets",
            ));
        }
        let a = from_rows(&f.a, n, n, "A")?;
        let e = from_rows(&f.e, n, sb.len(), "E")?;
        let linear = LinearSsModel::new(
            a,
            DVector::from_vec(f.b),
            DVector::from_vec(f.c),
            f.d,
            f.sample_rate,
        )?;
        PnlssModel::new(linear, e, DVector::from_vec(f.f), sb, ob)
    }
}
