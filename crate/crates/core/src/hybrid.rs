//! Coarse-level correction combined with decomposition steps. Each cycle runs
//! a recursive iteration on a single coarse level and a decomposition
//! iteration; a step that comes back empty is replaced by a Taylor step.

use serde::{Deserialize, Serialize};

use crate::bounds::BoundBox;
use crate::driver::CycleSolver;
use crate::error::{check_len, Error, Result};
use crate::grid::NodeGrid;
use crate::level::{
    run_level, IterationContext, IterationKind, LevelOutcome, LevelRun, LevelTag, NoGainPolicy, Observer,
    ThetaContract,
};
use crate::multilevel::MultilevelSolver;
use crate::schwarz::DdSolver;
use crate::transfer::{build_linear_interpolation, TransferPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridSchedule {
    /// Iterations of the coarse solve; 0 replaces the recursive step by a Taylor step.
    pub coarse_iters: usize,
    /// Iterations of each subdomain solve; 0 drops the decomposition step.
    pub dd_iters: usize,
    /// Coarse levels are this many factor-two coarsenings below the fine grid.
    pub coarsening_log2: u32,
    pub coarse_first: bool,
}

impl Default for HybridSchedule {
    fn default() -> Self {
        Self {
            coarse_iters: 10,
            dd_iters: 10,
            coarsening_log2: 3,
            coarse_first: true,
        }
    }
}

impl HybridSchedule {
    pub fn cycle_kinds(&self) -> Vec<IterationKind> {
        use IterationKind::*;
        match (self.coarse_iters > 0, self.dd_iters > 0) {
            (true, true) if self.coarse_first => vec![Recursive, Decomposition],
            (true, true) => vec![Decomposition, Recursive],
            (true, false) => vec![Recursive],
            (false, true) => vec![Decomposition, Taylor],
            (false, false) => vec![Taylor],
        }
    }
}

/// Transfer from `grid` to its coarsening by `2^log2`, composed from
/// factor-two interpolations. Returns the coarse grid too.
pub fn coarse_transfer(grid: &NodeGrid, log2: u32) -> Result<(NodeGrid, TransferPair)> {
    if log2 == 0 {
        return Err(Error::Config("the coarse level must be coarser than the fine one".into()));
    }
    let mut fine = grid.clone();
    let mut acc: Option<TransferPair> = None;
    for _ in 0..log2 {
        let coarse = fine.coarsen()?;
        let t = build_linear_interpolation(&fine, &coarse)?;
        acc = Some(match acc {
            None => t,
            Some(a) => a.compose(&t)?,
        });
        fine = coarse;
    }
    Ok((fine, acc.expect("at least one coarsening")))
}

pub struct HybridSolver {
    ml: MultilevelSolver,
    dd: DdSolver,
    schedule: HybridSchedule,
}

impl HybridSolver {
    /// `ml` must be a two-level hierarchy whose coarse budget is the coarse
    /// iteration count; `dd` shares the fine oracle.
    pub fn new(ml: MultilevelSolver, dd: DdSolver, schedule: HybridSchedule) -> Result<Self> {
        if ml.hierarchy().top() != 1 {
            return Err(Error::Config("the hybrid solver needs exactly one coarse level".into()));
        }
        check_len(ml.hierarchy().dims()[1], dd.operators().dim())?;
        if schedule.coarse_iters > 0 && ml.config().schedule.coarsest != schedule.coarse_iters {
            return Err(Error::Config("coarse budget does not match the hybrid schedule".into()));
        }
        if schedule.dd_iters > 0 && dd.config().subdomain_iters != schedule.dd_iters {
            return Err(Error::Config("subdomain budget does not match the hybrid schedule".into()));
        }
        Ok(Self { ml, dd, schedule })
    }

    pub fn schedule(&self) -> &HybridSchedule {
        &self.schedule
    }
}

impl CycleSolver for HybridSolver {
    fn cycle(&self, x: Vec<f64>, w: Vec<f64>, bounds: &BoundBox, observer: &dyn Observer) -> Result<LevelOutcome> {
        let kinds = self.schedule.cycle_kinds();
        let schedule = |k: usize| kinds[k];
        let fine = self.dd.fine().clone();
        let mut provider = |kind: IterationKind, ctx: &IterationContext<'_>| match kind {
            IterationKind::Recursive => self.ml.descend(1, &*fine, ctx, observer),
            IterationKind::Decomposition => self.dd.decomposition_step(ctx, observer),
            IterationKind::Taylor => Ok(None),
        };
        run_level(
            LevelRun {
                tag: LevelTag::level(1),
                oracle: &*fine,
                bounds,
                is_top: true,
                contract: ThetaContract::TOP,
                budget: kinds.len(),
                initial_gradient: None,
                on_nogain: NoGainPolicy::Taylor,
            },
            x,
            w,
            &self.dd.config().params,
            &schedule,
            &mut provider,
            observer,
        )
    }
}
