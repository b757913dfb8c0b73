//! Gradient-evaluation cost normalized to fine-level evaluations.
//!
//! With `n_r` the fine dimension, grid levels contribute `(n_l / n_r) #_l`
//! and subdomains contribute `(n_max / n_r) #_max`, the parallel cost of the
//! largest subdomain.

use serde::{Deserialize, Serialize};

use crate::oracle::EvalCounter;

/// Live counters of one run.
#[derive(Debug, Clone, Default)]
pub struct CostLedger {
    /// Grid levels, finest first.
    levels: Vec<(usize, EvalCounter)>,
    subdomains: Vec<(usize, EvalCounter)>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a grid level (call finest first) and returns its counter.
    pub fn add_level(&mut self, dim: usize) -> EvalCounter {
        let c = EvalCounter::new();
        self.levels.push((dim, c.clone()));
        c
    }

    pub fn add_subdomain(&mut self, dim: usize) -> EvalCounter {
        let c = EvalCounter::new();
        self.subdomains.push((dim, c.clone()));
        c
    }

    pub fn level_counter(&self, i: usize) -> &EvalCounter {
        &self.levels[i].1
    }

    pub fn snapshot(&self) -> CostSnapshot {
        CostSnapshot {
            level_dims: self.levels.iter().map(|(d, _)| *d).collect(),
            level_evals: self.levels.iter().map(|(_, c)| c.get()).collect(),
            subdomain_dims: self.subdomains.iter().map(|(d, _)| *d).collect(),
            subdomain_evals: self.subdomains.iter().map(|(_, c)| c.get()).collect(),
        }
    }
}

/// Raw counts at one instant; all cost figures derive from these.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostSnapshot {
    pub level_dims: Vec<usize>,
    pub level_evals: Vec<u64>,
    pub subdomain_dims: Vec<usize>,
    pub subdomain_evals: Vec<u64>,
}

impl CostSnapshot {
    fn fine_dim(&self) -> f64 {
        self.level_dims.first().copied().unwrap_or(1) as f64
    }

    /// `sum_l (n_l / n_r) #_l`.
    pub fn grid_cost(&self) -> f64 {
        let nr = self.fine_dim();
        self.level_dims
            .iter()
            .zip(&self.level_evals)
            .map(|(&n, &e)| n as f64 / nr * e as f64)
            .sum()
    }

    pub fn max_subdomain_dim(&self) -> usize {
        self.subdomain_dims.iter().copied().max().unwrap_or(0)
    }

    pub fn max_subdomain_evals(&self) -> u64 {
        self.subdomain_evals.iter().copied().max().unwrap_or(0)
    }

    /// True when subdomains did not all use the same number of evaluations.
    pub fn unequal_subdomain_counts(&self) -> bool {
        self.subdomain_evals.windows(2).any(|w| w[0] != w[1])
    }

    /// `(n_max / n_r) #_max`.
    pub fn subdomain_cost(&self) -> f64 {
        self.max_subdomain_dim() as f64 / self.fine_dim() * self.max_subdomain_evals() as f64
    }

    /// The cost of the run: `C_ML`, `C_DD` or `C_ML-DD` depending on which
    /// counters exist.
    pub fn total(&self) -> f64 {
        self.grid_cost() + self.subdomain_cost()
    }

    pub fn fine_evals(&self) -> u64 {
        self.level_evals.first().copied().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multilevel_formula() {
        let mut l = CostLedger::new();
        l.add_level(100).add(10);
        l.add_level(25).add(40);
        l.add_level(4).add(100);
        let s = l.snapshot();
        assert_eq!(s.total(), 10.0 + 10.0 + 4.0);
    }

    #[test]
    fn single_subdomain_is_serial_cost() {
        let mut l = CostLedger::new();
        l.add_level(64).add(5);
        l.add_subdomain(64).add(30);
        assert_eq!(l.snapshot().total(), 35.0);
    }

    #[test]
    fn halving_largest_subdomain_halves_term() {
        let s = CostSnapshot {
            level_dims: vec![64],
            level_evals: vec![3],
            subdomain_dims: vec![32, 32],
            subdomain_evals: vec![10, 10],
        };
        let mut t = s.clone();
        t.subdomain_dims = vec![16, 16];
        assert_eq!(s.subdomain_cost(), 2.0 * t.subdomain_cost());
        assert!(!s.unequal_subdomain_counts());
    }

    #[test]
    fn unequal_counts_use_max_and_flag() {
        let s = CostSnapshot {
            level_dims: vec![10],
            level_evals: vec![0],
            subdomain_dims: vec![5, 6],
            subdomain_evals: vec![4, 9],
        };
        assert!(s.unequal_subdomain_counts());
        assert!((s.total() - 0.6 * 9.0).abs() < 1e-15);
    }
}
