//! Benchmark objectives. Problems expose raw, uncounted math; solvers only see
//! them through a [`ProblemOracle`], which charges every gradient and
//! Hessian-vector product to an [`EvalCounter`].

mod membrane;
mod minsurf;
mod quadratic;
mod synthetic;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::BoundBox;
use crate::error::{Error, Result};
use crate::grid::NodeGrid;
use crate::oracle::{EvalCounter, GradientOracle};

pub use membrane::{membrane, membrane_obstacle};
pub use minsurf::{minsurf, minsurf_boundary, minsurf_classical, minsurf_lower, minsurf_upper, MinSurfClassical};
pub use quadratic::QuadraticProblem;
pub use synthetic::{enumerate_kkt, synthetic_quadratic_obstacle, SyntheticInstance};

pub trait Problem: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn bounds(&self) -> &BoundBox;

    /// Grid behind the unknowns, if any.
    fn grid(&self) -> Option<&NodeGrid> {
        None
    }

    /// Starting point before projection onto the box.
    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    /// Objective value, for reporting only. Every call is counted so tests
    /// can check that solvers never ask for it.
    fn objective(&self, x: &[f64]) -> f64;

    fn objective_calls(&self) -> u64;

    fn gradient(&self, x: &[f64], g: &mut [f64]);

    /// Selected gradient components. The default computes the full gradient.
    fn gradient_rows(&self, x: &[f64], rows: &[usize], out: &mut [f64]) {
        let mut g = vec![0.0; self.dim()];
        self.gradient(x, &mut g);
        for (o, &r) in out.iter_mut().zip(rows) {
            *o = g[r];
        }
    }

    fn hess_vec(&self, x: &[f64], v: &[f64], out: &mut [f64]);
}

/// Counted oracle over a problem.
#[derive(Clone)]
pub struct ProblemOracle {
    problem: Arc<dyn Problem>,
    counter: EvalCounter,
}

impl ProblemOracle {
    pub fn new(problem: Arc<dyn Problem>) -> Self {
        Self {
            problem,
            counter: EvalCounter::new(),
        }
    }

    pub fn with_counter(problem: Arc<dyn Problem>, counter: EvalCounter) -> Self {
        Self { problem, counter }
    }

    pub fn counter(&self) -> &EvalCounter {
        &self.counter
    }

    pub fn problem(&self) -> &Arc<dyn Problem> {
        &self.problem
    }
}

impl GradientOracle for ProblemOracle {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        self.counter.add(1);
        self.problem.gradient(x, g);
    }

    fn has_hess_vec(&self) -> bool {
        true
    }

    fn hess_vec(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        self.counter.add(1);
        self.problem.hess_vec(x, v, out);
    }
}

/// Named benchmark families, buildable at any admissible mesh size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Membrane,
    Minsurf,
    MinsurfClassical,
}

impl ProblemKind {
    pub fn build(self, cells: usize) -> Result<Arc<dyn Problem>> {
        if cells < 4 {
            return Err(Error::Config(format!("mesh needs at least 4 cells per side, got {cells}")));
        }
        Ok(match self {
            ProblemKind::Membrane => Arc::new(membrane(cells)?),
            ProblemKind::Minsurf => Arc::new(minsurf(cells)?),
            ProblemKind::MinsurfClassical => Arc::new(minsurf_classical(cells)?),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Membrane => "membrane",
            ProblemKind::Minsurf => "minsurf",
            ProblemKind::MinsurfClassical => "minsurf-classical",
        }
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "membrane" => Ok(ProblemKind::Membrane),
            "minsurf" => Ok(ProblemKind::Minsurf),
            "minsurf-classical" => Ok(ProblemKind::MinsurfClassical),
            other => Err(Error::Config(format!("unknown problem `{other}`"))),
        }
    }
}

/// Builds the problem at `cells` and at every factor-two coarsening, finest first.
pub fn build_family(kind: ProblemKind, cells: usize, levels: usize) -> Result<Vec<Arc<dyn Problem>>> {
    if levels == 0 {
        return Err(Error::Config("at least one level is required".into()));
    }
    let step = 1usize << (levels - 1);
    if !cells.is_multiple_of(step) || cells / step < 4 {
        return Err(Error::Config(format!(
            "{cells} cells cannot be coarsened {} times down to at least 4 cells",
            levels - 1
        )));
    }
    (0..levels).map(|l| kind.build(cells >> l)).collect()
}
