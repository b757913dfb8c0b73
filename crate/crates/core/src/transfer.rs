//! Prolongation and restriction between adjacent levels, the row sums used to
//! map bounds downward, and active-set truncation.

use crate::bounds::BoundBox;
use crate::error::{check_len, Error, Result};
use crate::grid::NodeGrid;
use crate::sparse::CsrMatrix;

/// `P` (fine x coarse), `R` (coarse x fine) and the row sums of `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferPair {
    p: CsrMatrix,
    r: CsrMatrix,
    sigma: Vec<f64>,
    /// Factor with `R = restriction_scale * P^T`; `None` when `R` was given explicitly.
    restriction_scale: Option<f64>,
}

/// Row sums of `P` with empty rows mapped to 1.
pub fn row_sums(p: &CsrMatrix) -> Vec<f64> {
    p.row_sums()
        .into_iter()
        .map(|s| if s == 0.0 { 1.0 } else { s })
        .collect()
}

impl TransferPair {
    /// Pair with `R = scale * P^T`.
    pub fn from_prolongation(p: CsrMatrix, scale: f64) -> Result<Self> {
        if !p.is_nonnegative() || !(scale > 0.0) {
            return Err(Error::Config("transfer operators must be nonnegative".into()));
        }
        let r = p.transpose().scaled(scale);
        let sigma = row_sums(&p);
        Ok(Self {
            p,
            r,
            sigma,
            restriction_scale: Some(scale),
        })
    }

    /// Pair with an arbitrary nonnegative restriction.
    pub fn new(p: CsrMatrix, r: CsrMatrix) -> Result<Self> {
        check_len(p.rows(), r.cols())?;
        check_len(p.cols(), r.rows())?;
        if !p.is_nonnegative() || !r.is_nonnegative() {
            return Err(Error::Config("transfer operators must be nonnegative".into()));
        }
        let sigma = row_sums(&p);
        Ok(Self {
            p,
            r,
            sigma,
            restriction_scale: None,
        })
    }

    pub fn p(&self) -> &CsrMatrix {
        &self.p
    }

    pub fn r(&self) -> &CsrMatrix {
        &self.r
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn fine_dim(&self) -> usize {
        self.p.rows()
    }

    pub fn coarse_dim(&self) -> usize {
        self.p.cols()
    }

    /// Composition `self ∘ coarser`: fine of `self` to coarse of `coarser`.
    pub fn compose(&self, coarser: &TransferPair) -> Result<TransferPair> {
        check_len(self.coarse_dim(), coarser.fine_dim())?;
        let p = self.p.matmul(&coarser.p);
        match (self.restriction_scale, coarser.restriction_scale) {
            (Some(a), Some(b)) => TransferPair::from_prolongation(p, a * b),
            _ => TransferPair::new(p, coarser.r.matmul(&self.r)),
        }
    }

    /// Zeroes the rows of `P` listed in `active` and rebuilds `R` and `sigma`.
    pub fn truncate(&self, active: &[usize]) -> TransferPair {
        if active.is_empty() {
            return self.clone();
        }
        let p = self.p.with_zero_rows(active);
        let r = match self.restriction_scale {
            Some(scale) => p.transpose().scaled(scale),
            None => {
                let mut masked = vec![false; self.fine_dim()];
                active.iter().for_each(|&i| masked[i] = true);
                let t: Vec<_> = self.r.triplets().filter(|(_, j, _)| !masked[*j]).collect();
                CsrMatrix::from_triplets(self.r.rows(), self.r.cols(), &t)
            }
        };
        let sigma = row_sums(&p);
        TransferPair {
            p,
            r,
            sigma,
            restriction_scale: self.restriction_scale,
        }
    }
}

/// Piecewise-linear interpolation between a grid and its factor-two coarsening,
/// with `R = 2^{-dim} P^T`. Rows and columns cover free nodes only.
pub fn build_linear_interpolation(fine: &NodeGrid, coarse: &NodeGrid) -> Result<TransferPair> {
    let nested_err = || Error::NonNestedGrids {
        fine: fine.cells(),
        coarse: coarse.cells(),
    };
    if fine.dim() != coarse.dim() || fine.cells() != 2 * coarse.cells() {
        return Err(nested_err());
    }
    for dof in 0..coarse.num_dofs() {
        let ix: Vec<usize> = coarse.multi_index(coarse.node_of(dof)).iter().map(|i| 2 * i).collect();
        if fine.dof_of(fine.node_index(&ix)).is_none() {
            return Err(nested_err());
        }
    }
    let mut triplets = Vec::new();
    for fdof in 0..fine.num_dofs() {
        let fix = fine.multi_index(fine.node_of(fdof));
        // Per-axis stencil: coincident node weight 1, midpoint (1/2, 1/2).
        let axes: Vec<Vec<(usize, f64)>> = fix
            .iter()
            .map(|&i| {
                if i % 2 == 0 {
                    vec![(i / 2, 1.0)]
                } else {
                    vec![(i / 2, 0.5), (i / 2 + 1, 0.5)]
                }
            })
            .collect();
        let mut combos: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
        for axis in &axes {
            combos = combos
                .iter()
                .flat_map(|(ix, w)| {
                    axis.iter().map(move |&(c, a)| {
                        let mut ix = ix.clone();
                        ix.push(c);
                        (ix, w * a)
                    })
                })
                .collect();
        }
        for (cix, w) in combos {
            if let Some(cdof) = coarse.dof_of(coarse.node_index(&cix)) {
                triplets.push((fdof, cdof, w));
            }
        }
    }
    let p = CsrMatrix::from_triplets(fine.num_dofs(), coarse.num_dofs(), &triplets);
    TransferPair::from_prolongation(p, 0.5f64.powi(fine.dim() as i32))
}

/// `(x0_coarse, w_coarse) = (R x, R w)`; weights are floored by the caller.
pub fn restrict_state(r: &CsrMatrix, x_fine: &[f64], w_fine: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (r.mul_vec(x_fine), r.mul_vec(w_fine))
}

/// Coarse bounds guaranteeing that every coarse iterate prolongates to a fine
/// iterate inside `box_fine`:
/// `l_i = x0_i + max_{q: P_qi > 0} (l_q - x_q) / sigma_q`, symmetric for `u`.
/// Columns without nonzeros get infinite bounds.
pub fn lower_level_bounds(
    p: &CsrMatrix,
    sigma: &[f64],
    x_fine: &[f64],
    x0_coarse: &[f64],
    box_fine: &BoundBox,
) -> Result<BoundBox> {
    check_len(p.rows(), x_fine.len())?;
    check_len(p.cols(), x0_coarse.len())?;
    check_len(p.rows(), box_fine.dim())?;
    check_len(p.rows(), sigma.len())?;
    let n = p.cols();
    // Offsets kept in double-double so that x0 + (l - x) / 1 rounds to l exactly.
    let mut lo: Vec<Option<(f64, f64)>> = vec![None; n];
    let mut up: Vec<Option<(f64, f64)>> = vec![None; n];
    let (lf, uf) = (box_fine.lower(), box_fine.upper());
    for (q, i, v) in p.triplets() {
        if v <= 0.0 {
            continue;
        }
        let s = sigma[q];
        assert!(s > 0.0, "row {q} of P has a positive entry but zero row sum");
        if lf[q].is_finite() {
            let o = dd_offset(lf[q], x_fine[q], s);
            if lo[i].is_none_or(|cur| dd_gt(o, cur)) {
                lo[i] = Some(o);
            }
        }
        if uf[q].is_finite() {
            let o = dd_offset(uf[q], x_fine[q], s);
            if up[i].is_none_or(|cur| dd_gt(cur, o)) {
                up[i] = Some(o);
            }
        }
    }
    let mut lower = vec![f64::NEG_INFINITY; n];
    let mut upper = vec![f64::INFINITY; n];
    for i in 0..n {
        if let Some(o) = lo[i] {
            lower[i] = dd_add(x0_coarse[i], o).min(x0_coarse[i]);
        }
        if let Some(o) = up[i] {
            upper[i] = dd_add(x0_coarse[i], o).max(x0_coarse[i]);
        }
    }
    BoundBox::new(lower, upper)
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// `(a - b) / s` as an unevaluated sum of two doubles.
fn dd_offset(a: f64, b: f64, s: f64) -> (f64, f64) {
    let (dh, dl) = two_sum(a, -b);
    if s == 1.0 {
        return (dh, dl);
    }
    let qh = dh / s;
    let r = (-qh).mul_add(s, dh);
    (qh, (r + dl) / s)
}

fn dd_gt(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 > b.1)
}

/// `x + (h + l)` rounded once at the end.
fn dd_add(x: f64, (h, l): (f64, f64)) -> f64 {
    let (s, e) = two_sum(x, h);
    s + (e + l)
}

/// Fine step `P * correction`.
pub fn prolong_step(p: &CsrMatrix, correction: &[f64]) -> Vec<f64> {
    p.mul_vec(correction)
}
