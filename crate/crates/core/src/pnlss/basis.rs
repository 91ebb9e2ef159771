use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Monomials in the states and the input whose total degree lies in a
/// prescribed set. Each exponent tuple is `(l_1, .., l_nx, k)`: state powers
/// first, input power last. Tuples are unique and sorted lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonomialBasis {
    n_states: usize,
    n_inputs: usize,
    degrees: Vec<u32>,
    exponents: Vec<Vec<u32>>,
}

fn push_tuples(vars: usize, degree: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if vars == 1 {
        prefix.push(degree);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for e in 0..=degree {
        prefix.push(e);
        push_tuples(vars - 1, degree - e, prefix, out);
        prefix.pop();
    }
}

/// Number of monomials of total degree `d` in `v` variables, `C(v+d-1, d)`.
pub fn monomial_count(n_vars: usize, degree: u32) -> usize {
    let mut c: u128 = 1;
    for i in 0..degree as u128 {
        c = c * (n_vars as u128 + i) / (i + 1);
    }
    c as usize
}

pub fn enumerate_basis(n_x: usize, n_u: usize, degree_set: &[u32]) -> Result<MonomialBasis> {
    if n_u != 1 {
        return Err(Error::invalid("monomial basis", "only single-input models are supported"));
    }
    if degree_set.contains(&1) {
        return Err(Error::invalid(
            "monomial basis",
            "degree 1 belongs to the linear part and cannot appear in the degree set",
        ));
    }
    let mut degrees = degree_set.to_vec();
    degrees.sort_unstable();
    degrees.dedup();
    let vars = n_x + n_u;
    let mut exponents = Vec::new();
    let mut prefix = Vec::with_capacity(vars);
    for &d in &degrees {
        push_tuples(vars, d, &mut prefix, &mut exponents);
    }
    exponents.sort();
    Ok(MonomialBasis {
        n_states: n_x,
        n_inputs: n_u,
        degrees,
        exponents,
    })
}

impl MonomialBasis {
    pub fn empty(n_x: usize) -> Self {
        Self {
            n_states: n_x,
            n_inputs: 1,
            degrees: Vec::new(),
            exponents: Vec::new(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn max_degree(&self) -> u32 {
        self.degrees.last().copied().unwrap_or(0)
    }

    /// Column index of an exponent tuple.
    pub fn position(&self, exponent: &[u32]) -> Option<usize> {
        self.exponents
            .binary_search_by(|e| e.as_slice().cmp(exponent))
            .ok()
    }

    /// Monomial vector in canonical order; `0^0 = 1`.
    pub fn evaluate(&self, x: &[f64], u: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        let mut work = PowerTable::new(self.n_states + 1, self.max_degree());
        work.fill(x, u);
        work.monomials(self, &mut out);
        out
    }
}

/// Powers `v_j^e` of every variable, so monomials and their partial
/// derivatives are products of table entries.
pub(crate) struct PowerTable {
    stride: usize,
    n_vars: usize,
    pows: Vec<f64>,
}

impl PowerTable {
    pub fn new(n_vars: usize, max_degree: u32) -> Self {
        let stride = max_degree as usize + 1;
        Self {
            stride,
            n_vars,
            pows: vec![1.0; stride * n_vars],
        }
    }

    pub fn fill(&mut self, x: &[f64], u: f64) {
        for j in 0..self.n_vars {
            let v = if j < x.len() { x[j] } else { u };
            let row = &mut self.pows[j * self.stride..(j + 1) * self.stride];
            row[0] = 1.0;
            for e in 1..self.stride {
                row[e] = row[e - 1] * v;
            }
        }
    }

    #[inline]
    fn pow(&self, var: usize, e: u32) -> f64 {
        self.pows[var * self.stride + e as usize]
    }

    pub fn monomials(&self, basis: &MonomialBasis, out: &mut [f64]) {
        for (o, exps) in out.iter_mut().zip(&basis.exponents) {
            let mut acc = 1.0;
            for (j, &e) in exps.iter().enumerate() {
                acc *= self.pow(j, e);
            }
            *o = acc;
        }
    }

    /// Partial derivatives of every monomial with respect to variable `var`.
    pub fn partials(&self, basis: &MonomialBasis, var: usize, out: &mut [f64]) {
        for (o, exps) in out.iter_mut().zip(&basis.exponents) {
            let ev = exps[var];
            if ev == 0 {
                *o = 0.0;
                continue;
            }
            let mut acc = ev as f64;
            for (j, &e) in exps.iter().enumerate() {
                acc *= if j == var { self.pow(j, e - 1) } else { self.pow(j, e) };
            }
            *o = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Every tuple over `vars` variables with entries up to `max`, filtered by total degree.
    fn brute_force(vars: usize, degrees: &[u32]) -> Vec<Vec<u32>> {
        let max = degrees.iter().copied().max().unwrap_or(0);
        let mut all = vec![vec![]];
        for _ in 0..vars {
            let mut next = Vec::new();
            for t in &all {
                for e in 0..=max {
                    let mut t2: Vec<u32> = t.clone();
                    t2.push(e);
                    next.push(t2);
                }
            }
            all = next;
        }
        let mut keep: Vec<Vec<u32>> = all
            .into_iter()
            .filter(|t| degrees.contains(&t.iter().sum()))
            .collect();
        keep.sort();
        keep
    }

    #[test]
    fn two_state_cubic_count() {
        let b = enumerate_basis(2, 1, &[0, 2, 3]).unwrap();
        assert_eq!(b.len(), 17);
        assert_eq!(b.exponents(), brute_force(3, &[0, 2, 3]).as_slice());
    }

    #[test]
    fn cylinder_sized_basis() {
        let b = enumerate_basis(5, 1, &[0, 2, 3, 4, 5]).unwrap();
        assert_eq!(b.len(), 456);
    }

    #[test]
    fn empty_and_invalid() {
        assert!(enumerate_basis(3, 1, &[]).unwrap().is_empty());
        assert!(enumerate_basis(3, 1, &[0, 1, 2]).is_err());
    }

    #[test]
    fn evaluation_special_points() {
        let b = enumerate_basis(3, 1, &[0, 2, 3]).unwrap();
        let z = b.evaluate(&[0.0, 0.0, 0.0], 0.0);
        let dc = b.position(&[0, 0, 0, 0]).unwrap();
        for (i, v) in z.iter().enumerate() {
            assert_eq!(*v, if i == dc { 1.0 } else { 0.0 });
        }
        assert!(b.evaluate(&[1.0; 3], 1.0).iter().all(|&v| v == 1.0));
    }

    proptest! {
        #[test]
        fn evaluation_matches_naive(x in prop::collection::vec(-2.0f64..2.0, 3), u in -2.0f64..2.0) {
            let b = enumerate_basis(3, 1, &[0, 2, 3, 4]).unwrap();
            let fast = b.evaluate(&x, u);
            for (v, e) in fast.iter().zip(b.exponents()) {
                let vars = [x[0], x[1], x[2], u];
                let naive: f64 = vars.iter().zip(e).map(|(v, &p)| v.powi(p as i32)).product();
                prop_assert!((v - naive).abs() <= 1e-12 * (1.0 + naive.abs()));
            }
        }

        #[test]
        fn count_formula_matches_enumeration(
            n_x in 1usize..=8,
            degs in prop::sample::subsequence(vec![0u32, 2, 3, 4, 5, 6], 0..=6),
        ) {
            let vars = n_x + 1;
            let b = enumerate_basis(n_x, 1, &degs).unwrap();
            let formula: usize = degs.iter().map(|&d| monomial_count(vars, d)).sum();
            prop_assert_eq!(b.len(), formula);
            if vars <= 4 && degs.iter().all(|&d| d <= 4) {
                let brute = brute_force(vars, &degs);
                prop_assert_eq!(b.exponents(), brute.as_slice());
            }
            prop_assert_eq!(&b, &enumerate_basis(n_x, 1, &degs).unwrap());
        }

        #[test]
        fn partials_match_finite_differences(x in prop::collection::vec(-1.5f64..1.5, 2), u in -1.5f64..1.5) {
            let b = enumerate_basis(2, 1, &[0, 2, 3, 5]).unwrap();
            let mut t = PowerTable::new(3, b.max_degree());
            t.fill(&x, u);
            let h = 1e-6;
            for var in 0..3 {
                let mut d = vec![0.0; b.len()];
                t.partials(&b, var, &mut d);
                let mut xp = x.clone(); let mut xm = x.clone();
                let (mut up, mut um) = (u, u);
                if var < 2 { xp[var] += h; xm[var] -= h; } else { up += h; um -= h; }
                let fp = b.evaluate(&xp, up);
                let fm = b.evaluate(&xm, um);
                for i in 0..b.len() {
                    let fd = (fp[i] - fm[i]) / (2.0 * h);
                    prop_assert!((fd - d[i]).abs() < 1e-6 * (1.0 + d[i].abs()));
                }
            }
        }
    }
}
