use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete-time SISO state-space model `x(t+1) = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSsModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
    pub sample_rate: f64,
}

impl LinearSsModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: DVector<f64>,
        d: f64,
        sample_rate: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension {
                context: "A must be square",
                expected: n,
                actual: a.ncols(),
            });
        }
        for (context, len) in [("B rows", b.len()), ("C columns", c.len())] {
            if len != n {
                return Err(Error::Dimension {
                    context,
                    expected: n,
                    actual: len,
                });
            }
        }
        if !(sample_rate > 0.0) {
            return Err(Error::invalid("linear model", "sample rate must be positive"));
        }
        Ok(Self {
            a,
            b,
            c,
            d,
            sample_rate,
        })
    }

    pub fn zeros(n_x: usize, sample_rate: f64) -> Self {
        Self {
            a: DMatrix::zeros(n_x, n_x),
            b: DVector::zeros(n_x),
            c: DVector::zeros(n_x),
            d: 0.0,
            sample_rate,
        }
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    /// `C (zI - A)^{-1} B + D` at the complex point `z`.
    pub fn transfer_at(&self, z: Complex64) -> Complex64 {
        let n = self.n_states();
        if n == 0 {
            return Complex64::new(self.d, 0.0);
        }
        let mut m = self.a.map(|v| Complex64::new(-v, 0.0));
        for i in 0..n {
            m[(i, i)] += z;
        }
        let rhs = self.b.map(|v| Complex64::new(v, 0.0));
        match m.lu().solve(&rhs) {
            Some(x) => {
                let mut acc = Complex64::new(self.d, 0.0);
                for i in 0..n {
                    acc += x[i] * self.c[i];
                }
                acc
            }
            None => Complex64::new(f64::INFINITY, f64::INFINITY),
        }
    }

    /// Frequency response at `freqs_hz`.
    pub fn frequency_response(&self, freqs_hz: &[f64]) -> Vec<Complex64> {
        freqs_hz
            .iter()
            .map(|&f| {
                let w = 2.0 * std::f64::consts::PI * f / self.sample_rate;
                self.transfer_at(Complex64::from_polar(1.0, w))
            })
            .collect()
    }

    /// Eigenvalues of A.
    pub fn poles(&self) -> Vec<Complex64> {
        if self.n_states() == 0 {
            return Vec::new();
        }
        self.a.complex_eigenvalues().iter().copied().collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }
}
