use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pnlss::{MonomialBasis, ParamLayout};

/// Predefined monomial subsets. The declaration order is the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetKind {
    /// Pure powers of state `i` in state equation `i`.
    Diagonal,
    InputOnly,
    /// Exactly one state, appearing linearly, times an input power.
    AffineInStates,
    /// Pure powers of a single variable.
    NoCrossProducts,
    /// At most one state, linear if present.
    FullStateAffine,
    DegreeAtMost3,
    StatesOnly,
    OddDegrees,
    AllButDc,
    All,
}

impl SubsetKind {
    pub const ALL: [SubsetKind; 10] = [
        SubsetKind::Diagonal,
        SubsetKind::InputOnly,
        SubsetKind::AffineInStates,
        SubsetKind::NoCrossProducts,
        SubsetKind::FullStateAffine,
        SubsetKind::DegreeAtMost3,
        SubsetKind::StatesOnly,
        SubsetKind::OddDegrees,
        SubsetKind::AllButDc,
        SubsetKind::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SubsetKind::Diagonal => "diagonal",
            SubsetKind::InputOnly => "input_only",
            SubsetKind::AffineInStates => "affine_in_states",
            SubsetKind::NoCrossProducts => "no_cross_products",
            SubsetKind::FullStateAffine => "full_state_affine",
            SubsetKind::DegreeAtMost3 => "degree_at_most_3",
            SubsetKind::StatesOnly => "states_only",
            SubsetKind::OddDegrees => "odd_degrees",
            SubsetKind::AllButDc => "all_but_dc",
            SubsetKind::All => "all",
        }
    }

    /// Whether a monomial `(l_1, .., l_nx, k)` belongs to the subset. The
    /// diagonal subset is row-dependent; here it admits any pure state power.
    pub fn contains(self, exponent: &[u32]) -> bool {
        let (states, input) = exponent.split_at(exponent.len() - 1);
        let k = input[0];
        let total: u32 = exponent.iter().sum();
        let state_deg: u32 = states.iter().sum();
        let n_states_present = states.iter().filter(|&&l| l > 0).count();
        let vars_present = n_states_present + usize::from(k > 0);
        match self {
            SubsetKind::Diagonal => k == 0 && n_states_present == 1,
            SubsetKind::InputOnly => state_deg == 0 && k > 0,
            SubsetKind::AffineInStates => n_states_present == 1 && state_deg == 1,
            SubsetKind::NoCrossProducts => vars_present == 1,
            SubsetKind::FullStateAffine => state_deg <= 1,
            SubsetKind::DegreeAtMost3 => total <= 3,
            SubsetKind::StatesOnly => k == 0 && state_deg > 0,
            SubsetKind::OddDegrees => total % 2 == 1,
            SubsetKind::AllButDc => total > 0,
            SubsetKind::All => true,
        }
    }

    /// Every admissible (state, output) combination: 10 x 9.
    pub fn combinations() -> Vec<(SubsetKind, SubsetKind)> {
        let mut out = Vec::with_capacity(90);
        for s in SubsetKind::ALL {
            for o in SubsetKind::ALL {
                if o != SubsetKind::Diagonal {
                    out.push((s, o));
                }
            }
        }
        out
    }
}

impl std::fmt::Display for SubsetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters free during one optimization run. The linear matrices are
/// always free.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetMask {
    pub state_subset: SubsetKind,
    pub output_subset: SubsetKind,
    pub include_linear: bool,
    pub selected_e_columns: Vec<usize>,
    pub selected_f_columns: Vec<usize>,
    /// For each selected E column, the single free row (diagonal subset) or `None` for all rows.
    e_rows: Vec<Option<usize>>,
}

pub fn make_subset(
    state_subset: SubsetKind,
    output_subset: SubsetKind,
    state_basis: &MonomialBasis,
    output_basis: &MonomialBasis,
) -> Result<SubsetMask> {
    if output_subset == SubsetKind::Diagonal {
        return Err(Error::invalid(
            "subset",
            "the diagonal subset only applies to the state equation",
        ));
    }
    let mut selected_e_columns = Vec::new();
    let mut e_rows = Vec::new();
    for (j, exp) in state_basis.exponents().iter().enumerate() {
        if state_subset.contains(exp) {
            selected_e_columns.push(j);
            e_rows.push(if state_subset == SubsetKind::Diagonal {
                exp[..exp.len() - 1].iter().position(|&l| l > 0)
            } else {
                None
            });
        }
    }
    let selected_f_columns = output_basis
        .exponents()
        .iter()
        .enumerate()
        .filter(|(_, exp)| output_subset.contains(exp))
        .map(|(j, _)| j)
        .collect();
    Ok(SubsetMask {
        state_subset,
        output_subset,
        include_linear: true,
        selected_e_columns,
        selected_f_columns,
        e_rows,
    })
}

impl SubsetMask {
    /// Every parameter free.
    pub fn full(state_basis: &MonomialBasis, output_basis: &MonomialBasis) -> Self {
        make_subset(SubsetKind::All, SubsetKind::All, state_basis, output_basis)
            .expect("'all' is valid for both equations")
    }

    /// Only `A, B, C, D` free.
    pub fn linear_only() -> Self {
        Self {
            state_subset: SubsetKind::All,
            output_subset: SubsetKind::All,
            include_linear: true,
            selected_e_columns: Vec::new(),
            selected_f_columns: Vec::new(),
            e_rows: Vec::new(),
        }
    }

    /// Sorted indices into the flat parameter vector.
    pub fn parameter_indices(&self, layout: &ParamLayout) -> Result<Vec<usize>> {
        if let Some(&j) = self.selected_e_columns.iter().find(|&&j| j >= layout.n_zeta) {
            return Err(Error::invalid("subset", format!("E column {j} out of range")));
        }
        if let Some(&j) = self.selected_f_columns.iter().find(|&&j| j >= layout.n_eta) {
            return Err(Error::invalid("subset", format!("F column {j} out of range")));
        }
        let mut idx: Vec<usize> = if self.include_linear {
            (0..layout.n_linear()).collect()
        } else {
            Vec::new()
        };
        for (&j, row) in self.selected_e_columns.iter().zip(&self.e_rows) {
            match row {
                Some(r) => idx.push(layout.e(*r, j)),
                None => idx.extend((0..layout.n_x).map(|r| layout.e(r, j))),
            }
        }
        idx.extend(self.selected_f_columns.iter().map(|&j| layout.f(j)));
        idx.sort_unstable();
        Ok(idx)
    }
}
