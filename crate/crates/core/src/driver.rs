//! Outer loop shared by all solvers: repeat cycles from the top level until
//! the criticality measure (computed with exact, uncounted gradients) is small.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adagb2::WeightState;
use crate::bounds::{criticality_xi, BoundBox};
use crate::cost::{CostLedger, CostSnapshot};
use crate::error::{Error, Result};
use crate::level::{LevelOutcome, Observer};
use crate::multilevel::MultilevelSolver;
use crate::oracle::GradientOracle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopRule {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_cycles: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            abs_tol: 1e-7,
            rel_tol: 1e-9,
            max_cycles: 10_000,
        }
    }
}

impl StopRule {
    pub fn validate(&self) -> Result<()> {
        if self.abs_tol >= 0.0 && self.rel_tol >= 0.0 && self.max_cycles >= 1 {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid stopping rule {self:?}")))
        }
    }

    pub fn satisfied(&self, xi: f64, xi0: f64) -> Option<StopReason> {
        if xi < self.abs_tol {
            Some(StopReason::Absolute)
        } else if xi0 > 0.0 && xi / xi0 < self.rel_tol {
            Some(StopReason::Relative)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Absolute,
    Relative,
    MaxCycles,
    /// The run hit an error (e.g. a non-finite gradient) and stopped early.
    Aborted(String),
}

impl StopReason {
    pub fn converged(&self) -> bool {
        matches!(self, StopReason::Absolute | StopReason::Relative)
    }
}

/// State after one cycle (cycle 0 is the starting point).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleStats {
    pub cycle: usize,
    /// `||d||` at the first top-level iteration of the cycle (NaN for cycle 0).
    pub d_norm: f64,
    pub xi_norm: f64,
    pub cost: CostSnapshot,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub cycles: Vec<CycleStats>,
    pub stop: StopReason,
    /// Whether `||d_{r,0}||^2 >= varsigma` held at the first iteration.
    pub event_e: Option<bool>,
}

impl RunResult {
    pub fn converged(&self) -> bool {
        self.stop.converged()
    }

    pub fn final_xi(&self) -> f64 {
        self.cycles.last().map_or(f64::NAN, |c| c.xi_norm)
    }

    pub fn num_cycles(&self) -> usize {
        self.cycles.len().saturating_sub(1)
    }
}

/// Something that advances the top-level iterate by one cycle.
pub trait CycleSolver {
    fn cycle(&self, x: Vec<f64>, w: Vec<f64>, bounds: &BoundBox, observer: &dyn Observer) -> Result<LevelOutcome>;
}

impl CycleSolver for MultilevelSolver {
    fn cycle(&self, x: Vec<f64>, w: Vec<f64>, bounds: &BoundBox, observer: &dyn Observer) -> Result<LevelOutcome> {
        MultilevelSolver::cycle(self, x, w, bounds, observer)
    }
}

/// Everything the outer loop needs besides the solver.
pub struct RunSetup<'a> {
    pub bounds: &'a BoundBox,
    /// Exact gradient for the criticality measure; its calls are not charged.
    pub exact: &'a dyn GradientOracle,
    pub ledger: &'a CostLedger,
    pub stop: StopRule,
    pub varsigma: f64,
}

/// Runs cycles from `x0` (which must be feasible). `on_cycle` sees each
/// record together with the current iterate.
pub fn run_cycles(
    solver: &dyn CycleSolver,
    setup: &RunSetup<'_>,
    x0: Vec<f64>,
    observer: &dyn Observer,
    on_cycle: &mut dyn FnMut(&CycleStats, &[f64]),
) -> Result<RunResult> {
    setup.stop.validate()?;
    setup.bounds.check_feasible(&x0)?;
    let start = Instant::now();
    let xi_of = |x: &[f64]| criticality_xi(x, &setup.exact.gradient_vec(x), setup.bounds);
    let xi0 = xi_of(&x0)?;
    let first = CycleStats {
        cycle: 0,
        d_norm: f64::NAN,
        xi_norm: xi0,
        cost: setup.ledger.snapshot(),
        wall_seconds: 0.0,
    };
    on_cycle(&first, &x0);
    let mut cycles = vec![first];
    let mut x = x0;
    let mut w = WeightState::top_level(x.len(), setup.varsigma).into_weights();
    let mut event_e = None;
    let mut stop = setup.stop.satisfied(xi0, xi0);
    let mut cycle = 0;
    while stop.is_none() {
        if cycle == setup.stop.max_cycles {
            stop = Some(StopReason::MaxCycles);
            break;
        }
        cycle += 1;
        let out = match solver.cycle(x.clone(), w.clone(), setup.bounds, observer) {
            Ok(out) => out,
            Err(e @ Error::NonFiniteGradient { .. }) => {
                stop = Some(StopReason::Aborted(e.to_string()));
                break;
            }
            Err(e) => return Err(e),
        };
        if event_e.is_none() {
            event_e = Some(out.first_d_norm * out.first_d_norm >= setup.varsigma);
        }
        x = out.x;
        w = out.w;
        let xi = xi_of(&x)?;
        let stats = CycleStats {
            cycle,
            d_norm: out.first_d_norm,
            xi_norm: xi,
            cost: setup.ledger.snapshot(),
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_cycle(&stats, &x);
        cycles.push(stats);
        stop = setup.stop.satisfied(xi, xi0);
    }
    Ok(RunResult {
        x,
        w,
        cycles,
        stop: stop.unwrap_or(StopReason::MaxCycles),
        event_e,
    })
}
