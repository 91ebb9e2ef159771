use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{FrfEstimate, LinearSsModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Fir,
    Rational,
}

/// `B(q^-1) / A(q^-1)` with `num = [b0, .., b_nb]` and `den = [1, a1, .., a_na]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

fn poly_inv(coeffs: &[f64], zi: Complex64) -> Complex64 {
    // Horner in z^-1
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * zi + c)
}

impl TransferFunction {
    pub fn eval(&self, z: Complex64) -> Complex64 {
        let zi = 1.0 / z;
        poly_inv(&self.num, zi) / poly_inv(&self.den, zi)
    }

    /// Roots of `z^na + a1 z^(na-1) + .. + a_na`.
    pub fn poles(&self) -> Vec<Complex64> {
        let n = self.den.len() - 1;
        if n == 0 {
            return Vec::new();
        }
        companion(&self.den).complex_eigenvalues().iter().copied().collect()
    }

    /// Controllable canonical realization. Requires `num.len() <= den.len()`.
    pub fn to_state_space(&self, sample_rate: f64) -> Result<LinearSsModel> {
        let n = self.den.len() - 1;
        if self.num.len() > self.den.len() {
            return Err(Error::invalid(
                "transfer function",
                "numerator order exceeds denominator order",
            ));
        }
        let b0 = self.num[0];
        let a = companion(&self.den);
        let mut b = DVector::zeros(n);
        if n > 0 {
            b[0] = 1.0;
        }
        let c = DVector::from_fn(n, |i, _| {
            let bi = self.num.get(i + 1).copied().unwrap_or(0.0);
            bi - b0 * self.den[i + 1]
        });
        LinearSsModel::new(a, b, c, b0, sample_rate)
    }
}

fn companion(den: &[f64]) -> DMatrix<f64> {
    let n = den.len() - 1;
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        a[(0, j)] = -den[j + 1];
    }
    for i in 1..n {
        a[(i, i - 1)] = 1.0;
    }
    a
}

/// Indices of lines usable for fitting.
fn valid_lines(frf: &FrfEstimate) -> Vec<usize> {
    (0..frf.len())
        .filter(|&i| frf.valid[i] && frf.g_bla[i].re.is_finite() && frf.g_bla[i].im.is_finite())
        .collect()
}

/// Weighted complex least squares: rows `row(i)` with target `rhs(i)` and
/// weight `w(i)`, split into real and imaginary parts. Columns are scaled
/// to unit norm before the SVD.
fn complex_lstsq(
    lines: &[usize],
    unknowns: usize,
    mut fill: impl FnMut(usize, &mut [Complex64]) -> (Complex64, f64),
) -> Result<Vec<f64>> {
    let m = 2 * lines.len();
    let mut mat = DMatrix::zeros(m, unknowns);
    let mut rhs = DVector::zeros(m);
    let mut row = vec![Complex64::new(0.0, 0.0); unknowns];
    for (r, &i) in lines.iter().enumerate() {
        let (target, w) = fill(i, &mut row);
        for j in 0..unknowns {
            mat[(2 * r, j)] = w * row[j].re;
            mat[(2 * r + 1, j)] = w * row[j].im;
        }
        rhs[2 * r] = w * target.re;
        rhs[2 * r + 1] = w * target.im;
    }
    let scale: Vec<f64> = (0..unknowns)
        .map(|j| {
            let n = mat.column(j).norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    for j in 0..unknowns {
        let s = scale[j];
        mat.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = mat.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * (m.max(unknowns) as f64) * f64::EPSILON * 16.0;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if m < unknowns || rank < unknowns {
        return Err(Error::RankDeficient {
            rank,
            unknowns,
            lines: lines.len(),
        });
    }
    let sol = svd
        .solve(&rhs, tol)
        .map_err(|e| Error::invalid("least squares", e.to_string()))?;
    Ok((0..unknowns).map(|j| sol[j] / scale[j]).collect())
}

/// `V = sum_k |G_k - G_model(z_k)|^2 / var_k` over valid lines.
pub fn weighted_cost(frf: &FrfEstimate, model: &LinearSsModel) -> f64 {
    let var = frf.fit_variances();
    valid_lines(frf)
        .into_iter()
        .map(|i| (frf.g_bla[i] - model.transfer_at(frf.z(i))).norm_sqr() / var[i])
        .sum()
}

/// FIR fit with taps `h_0 .. h_{n_taps}`, realized as a shift register of
/// `n_taps` past inputs.
pub fn fit_fir(frf: &FrfEstimate, n_taps: usize) -> Result<LinearSsModel> {
    let h = fir_taps(frf, n_taps)?;
    fir_state_space(&h, frf.sample_rate)
}

pub(crate) fn fir_taps(frf: &FrfEstimate, n_taps: usize) -> Result<Vec<f64>> {
    if n_taps < 1 {
        return Err(Error::invalid("FIR fit", "n_taps must be at least 1"));
    }
    let var = frf.fit_variances();
    let lines = valid_lines(frf);
    complex_lstsq(&lines, n_taps + 1, |i, row| {
        let zi = 1.0 / frf.z(i);
        let mut p = Complex64::new(1.0, 0.0);
        for r in row.iter_mut() {
            *r = p;
            p *= zi;
        }
        (frf.g_bla[i], 1.0 / var[i].sqrt())
    })
}

pub(crate) fn fir_state_space(h: &[f64], sample_rate: f64) -> Result<LinearSsModel> {
    let n = h.len() - 1;
    let mut a = DMatrix::zeros(n, n);
    for i in 1..n {
        a[(i, i - 1)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[0] = 1.0;
    let c = DVector::from_fn(n, |i, _| h[i + 1]);
    LinearSsModel::new(a, b, c, h[0], sample_rate)
}

/// Sanathanan-Koerner fit of `B/A` with `n_num + 1` numerator and `n_den`
/// free denominator coefficients. The first iteration is the plain Levy fit.
pub fn fit_rational_tf(
    frf: &FrfEstimate,
    n_num: usize,
    n_den: usize,
    n_sk_iters: usize,
) -> Result<TransferFunction> {
    if n_den < 1 {
        return Err(Error::invalid("rational fit", "n_den must be at least 1"));
    }
    if n_sk_iters < 1 {
        return Err(Error::invalid("rational fit", "at least one SK iteration is needed"));
    }
    let var = frf.fit_variances();
    let lines = valid_lines(frf);
    let nb = n_num + 1;
    let mut den = vec![0.0; n_den + 1];
    den[0] = 1.0;
    let mut num = vec![0.0; nb];
    for _ in 0..n_sk_iters {
        let prev = den.clone();
        let sol = complex_lstsq(&lines, nb + n_den, |i, row| {
            let zi = 1.0 / frf.z(i);
            let g = frf.g_bla[i];
            let mut p = Complex64::new(1.0, 0.0);
            for r in row[..nb].iter_mut() {
                *r = p;
                p *= zi;
            }
            let mut p = zi;
            for r in row[nb..].iter_mut() {
                *r = -g * p;
                p *= zi;
            }
            let w = 1.0 / (var[i].sqrt() * poly_inv(&prev, zi).norm());
            (g, w)
        })?;
        num.copy_from_slice(&sol[..nb]);
        den[1..].copy_from_slice(&sol[nb..]);
    }

    let tf = TransferFunction { num, den };
    let poles = tf.poles();
    if poles.iter().all(|p| p.norm() < 1.0) {
        return Ok(tf);
    }
    log::warn!("rational fit has unstable poles; reflecting them inside the unit circle");
    let reflected: Vec<Complex64> = poles
        .iter()
        .map(|&p| if p.norm() >= 1.0 { 1.0 / p.conj() } else { p })
        .collect();
    let den = poly_from_roots(&reflected);
    let sol = complex_lstsq(&lines, nb, |i, row| {
        let zi = 1.0 / frf.z(i);
        let d = poly_inv(&den, zi);
        let mut p = Complex64::new(1.0, 0.0);
        for r in row.iter_mut() {
            *r = p / d;
            p *= zi;
        }
        (frf.g_bla[i], 1.0 / var[i].sqrt())
    })?;
    Ok(TransferFunction { num: sol, den })
}

/// Rational fit converted to a controllable canonical state-space model.
pub fn fit_rational(
    frf: &FrfEstimate,
    n_num: usize,
    n_den: usize,
    n_sk_iters: usize,
) -> Result<LinearSsModel> {
    if n_num > n_den {
        return Err(Error::invalid(
            "rational fit",
            "numerator order above denominator order has no proper realization",
        ));
    }
    fit_rational_tf(frf, n_num, n_den, n_sk_iters)?.to_state_space(frf.sample_rate)
}

/// Monic polynomial `[1, a1, .., an]` in `z^-1` with the given roots; conjugate pairs give real coefficients.
fn poly_from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, &ci) in c.iter().enumerate() {
            next[i] += ci;
            next[i + 1] -= ci * r;
        }
        c = next;
    }
    c.iter().map(|v| v.re).collect()
}

/// Number of SK iterations used by order scans.
pub const SCAN_SK_ITERATIONS: usize = 20;

/// Weighted cost for each candidate order. Rational order `n` means `n_num = n_den = n`.
pub fn scan_model_order(
    frf: &FrfEstimate,
    candidate_orders: &[usize],
    kind: ModelKind,
) -> Result<Vec<(usize, f64)>> {
    if candidate_orders.is_empty() {
        return Err(Error::invalid("order scan", "no candidate orders"));
    }
    candidate_orders
        .iter()
        .map(|&n| {
            let model = match kind {
                ModelKind::Fir => fit_fir(frf, n)?,
                ModelKind::Rational => fit_rational(frf, n, n, SCAN_SK_ITERATIONS)?,
            };
            Ok((n, weighted_cost(frf, &model)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn synthetic(n_lines: usize, period: usize, g: impl Fn(Complex64) -> Complex64) -> FrfEstimate {
        let lines: Vec<usize> = (1..=n_lines).collect();
        let vals = lines
            .iter()
            .map(|&k| g(Complex64::from_polar(1.0, 2.0 * PI * k as f64 / period as f64)))
            .collect();
        let var = lines.iter().map(|&k| 1e-4 * (1.0 + k as f64)).collect();
        FrfEstimate::from_values(50.0, period, lines, vals, var).unwrap()
    }

    fn second_order(z: Complex64) -> Complex64 {
        let zi = 1.0 / z;
        (0.2 + 0.4 * zi) / (1.0 - 1.5 * zi + 0.7 * zi * zi)
    }

    #[test]
    fn pure_delay_taps() {
        let frf = synthetic(30, 100, |z| 1.0 / (z * z));
        let h = fir_taps(&frf, 2).unwrap();
        for (got, want) in h.iter().zip([0.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-10);
        }
        let h5 = fir_taps(&frf, 5).unwrap();
        assert!((h5[2] - 1.0).abs() < 1e-10);
        assert!(h5.iter().enumerate().all(|(i, v)| i == 2 || v.abs() < 1e-10));
    }

    #[test]
    fn fir_state_space_matches_polynomial() {
        let frf = synthetic(40, 100, second_order);
        let h = fir_taps(&frf, 6).unwrap();
        let ss = fir_state_space(&h, 50.0).unwrap();
        assert_eq!(ss.n_states(), 6);
        for i in 0..frf.len() {
            let z = frf.z(i);
            let poly = poly_inv(&h, 1.0 / z);
            assert!((ss.transfer_at(z) - poly).norm() < 1e-12 * (1.0 + poly.norm()));
        }
    }

    #[test]
    fn nested_fir_cost_non_increasing() {
        let frf = synthetic(40, 100, second_order);
        let scan = scan_model_order(&frf, &(1..=10).collect::<Vec<_>>(), ModelKind::Fir).unwrap();
        for w in scan.windows(2) {
            assert!(w[1].1 <= w[0].1 * (1.0 + 1e-9), "{scan:?}");
        }
    }

    #[test]
    fn fir_argmin_invariant_to_variance_scale() {
        let frf = synthetic(40, 100, second_order);
        let mut scaled = frf.clone();
        scaled.var_total.iter_mut().for_each(|v| *v *= 37.5);
        let a = fir_taps(&frf, 5).unwrap();
        let b = fir_taps(&scaled, 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
        }
        let ma = fit_fir(&frf, 5).unwrap();
        let ratio = weighted_cost(&frf, &ma) / weighted_cost(&scaled, &ma);
        assert!((ratio - 37.5).abs() < 1e-9 * 37.5);
    }

    #[test]
    fn rank_deficiency_reports_lines() {
        let frf = synthetic(3, 100, second_order);
        match fit_fir(&frf, 8) {
            Err(Error::RankDeficient { lines, unknowns, .. }) => {
                assert_eq!(lines, 3);
                assert_eq!(unknowns, 9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rational_recovers_poles() {
        let frf = synthetic(40, 100, second_order);
        let ss = fit_rational(&frf, 1, 2, 5).unwrap();
        // true poles from the quadratic formula
        let disc = Complex64::new(1.5 * 1.5 - 4.0 * 0.7, 0.0).sqrt();
        let truth = [(1.5 + disc) / 2.0, (1.5 - disc) / 2.0];
        let got = ss.poles();
        for t in truth {
            assert!(got.iter().any(|p| (p - t).norm() < 1e-6), "{got:?}");
        }
        for i in 0..frf.len() {
            let z = frf.z(i);
            assert!((ss.transfer_at(z) - second_order(z)).norm() < 1e-8);
        }
    }

    #[test]
    fn sk_iterations_do_not_worsen_residual() {
        let frf = synthetic(40, 100, second_order);
        let one = fit_rational(&frf, 1, 2, 1).unwrap();
        let many = fit_rational(&frf, 1, 2, 10).unwrap();
        assert!(weighted_cost(&frf, &many) <= weighted_cost(&frf, &one) + 1e-9);
    }

    #[test]
    fn constant_frf_gives_dc_gain() {
        let frf = synthetic(20, 100, |_| Complex64::new(2.5, 0.0));
        let tf = fit_rational_tf(&frf, 0, 1, 3).unwrap();
        let dc = tf.eval(Complex64::new(1.0, 0.0));
        assert!((dc.re - 2.5).abs() < 1e-9 && dc.im.abs() < 1e-12);
        let ss = fit_rational(&frf, 0, 1, 3).unwrap();
        assert!((ss.transfer_at(Complex64::new(1.0, 0.0)).re - 2.5).abs() < 1e-9);
    }

    #[test]
    fn unstable_poles_are_reflected() {
        // anti-stable system: pole at z = 1.25
        let frf = synthetic(40, 100, |z| 1.0 / (1.0 - 1.25 / z));
        let ss = fit_rational(&frf, 0, 1, 3).unwrap();
        let p = ss.poles();
        assert!((p[0].re - 0.8).abs() < 1e-9, "{p:?}");
        assert!(ss.is_stable());
    }

    #[test]
    fn rejects_bad_orders() {
        let frf = synthetic(20, 100, second_order);
        assert!(fit_fir(&frf, 0).is_err());
        assert!(fit_rational(&frf, 1, 0, 3).is_err());
        assert!(fit_rational(&frf, 1, 2, 0).is_err());
        assert!(scan_model_order(&frf, &[], ModelKind::Fir).is_err());
    }

    #[test]
    fn controllable_form_matches_transfer_function() {
        let tf = TransferFunction {
            num: vec![0.3, -0.1, 0.05],
            den: vec![1.0, -0.9, 0.2],
        };
        let ss = tf.to_state_space(10.0).unwrap();
        for k in 1..20 {
            let z = Complex64::from_polar(1.0, 0.15 * k as f64);
            assert!((ss.transfer_at(z) - tf.eval(z)).norm() < 1e-12);
        }
    }
}
