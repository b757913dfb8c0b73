//! Box constraints, the box projector and the first-order criticality measures.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::norm;

/// Per-variable bounds `lower[i] <= x[i] <= upper[i]`. Infinite entries are
/// allowed and mean the component is unconstrained on that side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoundBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_len(lower.len(), upper.len())?;
        for (i, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u {
                return Err(Error::InvalidBounds {
                    index: i,
                    lower: l,
                    upper: u,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_unbounded(&self) -> bool {
        self.lower.iter().all(|l| *l == f64::NEG_INFINITY)
            && self.upper.iter().all(|u| *u == f64::INFINITY)
    }

    /// Sub-box made of the listed components, in the given order.
    pub fn select(&self, indices: &[usize]) -> BoundBox {
        BoundBox {
            lower: indices.iter().map(|&i| self.lower[i]).collect(),
            upper: indices.iter().map(|&i| self.upper[i]).collect(),
        }
    }

    #[inline]
    pub fn clamp_component(&self, i: usize, v: f64) -> f64 {
        v.max(self.lower[i]).min(self.upper[i])
    }

    /// Largest bound violation of `x` (zero when feasible).
    pub fn violation(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.violation(x) == 0.0
    }

    pub fn check_feasible(&self, x: &[f64]) -> Result<()> {
        check_len(self.dim(), x.len())?;
        for (i, &v) in x.iter().enumerate() {
            if !(v >= self.lower[i] && v <= self.upper[i]) {
                return Err(Error::Infeasible {
                    index: i,
                    value: v,
                    lower: self.lower[i],
                    upper: self.upper[i],
                });
            }
        }
        Ok(())
    }

    /// Components sitting exactly on one of their bounds.
    pub fn active_set(&self, x: &[f64]) -> Vec<usize> {
        x.iter()
            .enumerate()
            .filter(|(i, &v)| v == self.lower[*i] || v == self.upper[*i])
            .map(|(i, _)| i)
            .collect()
    }
}

/// Euclidean projection onto the box (componentwise clamp).
pub fn project_box(x: &[f64], bounds: &BoundBox) -> Result<Vec<f64>> {
    check_len(bounds.dim(), x.len())?;
    Ok(project_unchecked(x, bounds))
}

pub(crate) fn project_unchecked(x: &[f64], bounds: &BoundBox) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| bounds.clamp_component(i, v))
        .collect()
}

pub(crate) fn project_in_place(x: &mut [f64], bounds: &BoundBox) {
    for (i, v) in x.iter_mut().enumerate() {
        *v = bounds.clamp_component(i, *v);
    }
}

/// Projected-gradient step `P_F(x - g) - x`. `x` must be feasible.
pub fn criticality_d(x: &[f64], g: &[f64], bounds: &BoundBox) -> Result<Vec<f64>> {
    check_len(bounds.dim(), g.len())?;
    bounds.check_feasible(x)?;
    Ok(criticality_unchecked(x, g, bounds))
}

pub(crate) fn criticality_unchecked(x: &[f64], g: &[f64], bounds: &BoundBox) -> Vec<f64> {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&xi, &gi))| bounds.clamp_component(i, xi - gi) - xi)
        .collect()
}

/// The reporting optimality measure `||P_F(x - G) - x||` for an exact gradient `G`.
pub fn criticality_xi(x: &[f64], exact_g: &[f64], bounds: &BoundBox) -> Result<f64> {
    check_len(bounds.dim(), x.len())?;
    check_len(bounds.dim(), exact_g.len())?;
    Ok(norm(&criticality_unchecked(x, exact_g, bounds)))
}
