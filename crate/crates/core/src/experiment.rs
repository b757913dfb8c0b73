//! Builds a solver from a configuration, runs it and records the trace.

use std::path::PathBuf;
use std::sync::Arc;

use crate::bounds::project_box;
use crate::config::{ExperimentConfig, SolverKind};
use crate::cost::CostLedger;
use crate::driver::{run_cycles, CycleSolver, RunResult, RunSetup, StopReason};
use crate::error::{Error, Result};
use crate::hybrid::{coarse_transfer, HybridSolver};
use crate::level::{NoObserver, Observer};
use crate::multilevel::{Hierarchy, Level, MultilevelConfig, MultilevelSolver, VCycleSchedule};
use crate::noise::NoisyOracle;
use crate::oracle::{EvalCounter, GradientOracle};
use crate::problems::{build_family, Problem, ProblemOracle};
use crate::schwarz::{build_block_covering, build_operators, DdConfig, DdSolver, SubdomainNoise};
use crate::trace::{CycleRecord, Trace, TraceMeta, TRACE_FORMAT};
use crate::transfer::build_linear_interpolation;

pub const OUTPUT_DIR_ENV: &str = "OFFO_OUTPUT_DIR";

/// Process exit codes of a run.
pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_BUDGET: i32 = 2;

/// A solver ready to run, with the problem and counters behind it.
pub struct Prepared {
    pub problem: Arc<dyn Problem>,
    pub solver: Box<dyn CycleSolver>,
    pub ledger: CostLedger,
    /// Exact, uncounted oracle for the criticality measure.
    pub exact: Arc<dyn GradientOracle>,
    pub x0: Vec<f64>,
    pub subdomain_dims: Vec<usize>,
}

fn uncounted(problem: &Arc<dyn Problem>) -> Arc<dyn GradientOracle> {
    Arc::new(ProblemOracle::with_counter(problem.clone(), EvalCounter::new()))
}

/// Counted (and possibly noisy) oracle of one grid level.
fn level_oracle(cfg: &ExperimentConfig, problem: &Arc<dyn Problem>, counter: EvalCounter, stream: u64, is_fine: bool) -> Arc<dyn GradientOracle> {
    let base = ProblemOracle::with_counter(problem.clone(), counter);
    let noisy = !cfg.noise.schedule.is_none() && (is_fine || !cfg.noise.fine_only);
    if noisy {
        Arc::new(NoisyOracle::new(base, cfg.noise.schedule, cfg.seed, stream))
    } else {
        Arc::new(base)
    }
}

fn grid_of(problem: &Arc<dyn Problem>) -> Result<&crate::grid::NodeGrid> {
    problem
        .grid()
        .ok_or_else(|| Error::Config(format!("problem `{}` has no grid", problem.name())))
}

fn multilevel(cfg: &ExperimentConfig, levels: usize, ledger: &mut CostLedger) -> Result<(Arc<dyn Problem>, MultilevelSolver)> {
    let family = build_family(cfg.problem.name, cfg.problem.cells, levels)?;
    let mut built: Vec<Level> = Vec::with_capacity(levels);
    for (depth, p) in family.iter().enumerate() {
        let counter = ledger.add_level(p.dim());
        let oracle = level_oracle(cfg, p, counter, depth as u64, depth == 0);
        let transfer = match family.get(depth + 1) {
            Some(coarse) => Some(build_linear_interpolation(grid_of(p)?, grid_of(coarse)?)?),
            None => None,
        };
        built.push(Level { oracle, transfer });
    }
    built.reverse();
    let s = &cfg.solver;
    let config = MultilevelConfig {
        params: cfg.params,
        schedule: s.vcycle,
        coarse_model: s.coarse_model,
        truncation: s.truncation,
        ..Default::default()
    };
    Ok((family[0].clone(), MultilevelSolver::new(Hierarchy::new(built)?, config)?))
}

fn dd_solver(cfg: &ExperimentConfig, problem: &Arc<dyn Problem>, fine: Arc<dyn GradientOracle>, ledger: &mut CostLedger, subdomain_iters: usize) -> Result<(DdSolver, Vec<usize>)> {
    let s = &cfg.solver;
    let covering = build_block_covering(grid_of(problem)?, s.subdomains, s.overlap)?;
    let ops = build_operators(&covering, s.variant);
    let dims: Vec<usize> = ops.subdomains.iter().map(|o| o.indices.len()).collect();
    let counters = dims.iter().map(|&d| ledger.add_subdomain(d)).collect();
    let noise = (!cfg.noise.schedule.is_none() && !cfg.noise.fine_only).then_some(SubdomainNoise {
        schedule: cfg.noise.schedule,
        seed: cfg.seed,
    });
    let config = DdConfig {
        params: cfg.params,
        variant: s.variant,
        subdomain_iters,
        divide_kappa_1st: s.divide_kappa_1st,
        ..Default::default()
    };
    Ok((DdSolver::new(fine, uncounted(problem), ops, counters, noise, config)?, dims))
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let mut ledger = CostLedger::new();
    let mut subdomain_dims = Vec::new();
    let (problem, solver): (Arc<dyn Problem>, Box<dyn CycleSolver>) = match cfg.solver.kind {
        SolverKind::Adagb2 => {
            let (p, s) = multilevel(cfg, 1, &mut ledger)?;
            (p, Box::new(s))
        }
        SolverKind::Ml => {
            let (p, s) = multilevel(cfg, cfg.solver.levels, &mut ledger)?;
            (p, Box::new(s))
        }
        SolverKind::Dd => {
            let p = cfg.problem.name.build(cfg.problem.cells)?;
            let fine = level_oracle(cfg, &p, ledger.add_level(p.dim()), 0, true);
            let (dd, dims) = dd_solver(cfg, &p, fine, &mut ledger, cfg.solver.subdomain_iters)?;
            subdomain_dims = dims;
            (p, Box::new(dd))
        }
        SolverKind::MlDd => {
            let h = cfg.solver.hybrid;
            let p = cfg.problem.name.build(cfg.problem.cells)?;
            let (coarse_grid, transfer) = coarse_transfer(grid_of(&p)?, h.coarsening_log2)?;
            let coarse = cfg.problem.name.build(coarse_grid.cells())?;
            if coarse.dim() != transfer.coarse_dim() {
                return Err(Error::Config("coarse problem does not match the coarse grid".into()));
            }
            let fine = level_oracle(cfg, &p, ledger.add_level(p.dim()), 0, true);
            let coarse_oracle = level_oracle(cfg, &coarse, ledger.add_level(coarse.dim()), 1, false);
            let hierarchy = Hierarchy::new(vec![
                Level {
                    oracle: coarse_oracle,
                    transfer: None,
                },
                Level {
                    oracle: fine.clone(),
                    transfer: Some(transfer),
                },
            ])?;
            let ml = MultilevelSolver::new(
                hierarchy,
                MultilevelConfig {
                    params: cfg.params,
                    schedule: VCycleSchedule {
                        coarsest: h.coarse_iters.max(1),
                        ..cfg.solver.vcycle
                    },
                    ..Default::default()
                },
            )?;
            let (dd, dims) = dd_solver(cfg, &p, fine, &mut ledger, h.dd_iters.max(1))?;
            subdomain_dims = dims;
            (p, Box::new(HybridSolver::new(ml, dd, h)?))
        }
    };
    let x0 = project_box(&problem.initial_point(), problem.bounds())?;
    Ok(Prepared {
        exact: uncounted(&problem),
        problem,
        solver,
        ledger,
        x0,
        subdomain_dims,
    })
}

pub struct Outcome {
    pub trace: Trace,
    pub result: RunResult,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self.result.stop {
            StopReason::Absolute | StopReason::Relative => EXIT_CONVERGED,
            StopReason::MaxCycles => EXIT_BUDGET,
            StopReason::Aborted(_) => EXIT_FAILED,
        }
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    run_observed(cfg, &NoObserver)
}

/// Runs with an observer attached to every level instance.
pub fn run_observed(cfg: &ExperimentConfig, observer: &dyn Observer) -> Result<Outcome> {
    let prep = prepare(cfg)?;
    let setup = RunSetup {
        bounds: prep.problem.bounds(),
        exact: &*prep.exact,
        ledger: &prep.ledger,
        stop: cfg.stop,
        varsigma: cfg.params.varsigma,
    };
    let mut records = Vec::new();
    let problem = prep.problem.clone();
    let mut report = |stats: &crate::driver::CycleStats, x: &[f64]| {
        records.push(CycleRecord::from_stats(stats, Some(problem.objective(x))));
    };
    let result = run_cycles(&*prep.solver, &setup, prep.x0.clone(), observer, &mut report)?;
    let snapshot = prep.ledger.snapshot();
    let s = &cfg.solver;
    let (levels, subdomains, overlap, variant) = match s.kind {
        SolverKind::Adagb2 => (1, 0, 0, None),
        SolverKind::Ml => (s.levels, 0, 0, None),
        SolverKind::Dd => (1, s.subdomains, s.overlap, Some(s.variant.as_str().to_string())),
        SolverKind::MlDd => (2, s.subdomains, s.overlap, Some(s.variant.as_str().to_string())),
    };
    let meta = TraceMeta {
        format: TRACE_FORMAT.into(),
        config_hash: cfg.hash(),
        git_revision: None,
        seed: cfg.seed,
        problem: cfg.problem.name.as_str().into(),
        cells: cfg.problem.cells,
        solver: s.kind.as_str().into(),
        dim: prep.problem.dim(),
        levels,
        subdomains,
        overlap,
        variant,
        level_dims: snapshot.level_dims.clone(),
        subdomain_dims: prep.subdomain_dims.clone(),
        curvature_charge: "analytic Hessian-vector product, 1 evaluation".into(),
        event_e: result.event_e,
        stop: result.stop.clone(),
        converged: result.converged(),
        config: serde_json::to_value(cfg).map_err(|e| Error::Trace(e.to_string()))?,
    };
    Ok(Outcome {
        trace: Trace { meta, cycles: records },
        result,
    })
}

/// Trace location: the configured path, or a name derived from the run,
/// under `OFFO_OUTPUT_DIR` (default `offo-output`).
pub fn output_stem(cfg: &ExperimentConfig) -> PathBuf {
    let root = std::env::var_os(OUTPUT_DIR_ENV).map_or_else(|| PathBuf::from("offo-output"), PathBuf::from);
    match &cfg.output {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => root.join(p),
        None => root.join(format!(
            "{}-{}-{}",
            cfg.problem.name.as_str(),
            cfg.solver.kind.as_str(),
            &cfg.hash()[..12]
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::ProblemKind;

    fn quick(kind: SolverKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(ProblemKind::Membrane, 8, kind);
        c.solver.levels = 2;
        c.solver.subdomains = 2;
        c.solver.overlap = 1;
        c.solver.hybrid.coarsening_log2 = 1;
        c.stop.max_cycles = 20;
        c
    }

    #[test]
    fn every_solver_runs_and_never_reads_objective_values() {
        for kind in [SolverKind::Adagb2, SolverKind::Ml, SolverKind::Dd, SolverKind::MlDd] {
            let cfg = quick(kind);
            let out = run(&cfg).unwrap();
            assert_eq!(out.trace.cycles.len(), out.result.cycles.len());
            assert_eq!(out.trace.meta.config_hash, cfg.hash());
            let last = out.trace.last().unwrap();
            assert!(last.cost > 0.0, "{kind:?}");
            assert!(out.trace.cycles.iter().all(|c| c.objective.is_some()));
        }
    }

    #[test]
    fn objective_calls_come_from_reporting_only() {
        let cfg = quick(SolverKind::Ml);
        let prep = prepare(&cfg).unwrap();
        let setup = RunSetup {
            bounds: prep.problem.bounds(),
            exact: &*prep.exact,
            ledger: &prep.ledger,
            stop: cfg.stop,
            varsigma: 0.01,
        };
        run_cycles(&*prep.solver, &setup, prep.x0.clone(), &NoObserver, &mut |_, _| {}).unwrap();
        assert_eq!(prep.problem.objective_calls(), 0);
    }

    #[test]
    fn exit_codes() {
        let mut cfg = quick(SolverKind::Adagb2);
        cfg.stop.max_cycles = 2;
        assert_eq!(run(&cfg).unwrap().exit_code(), EXIT_BUDGET);
    }

    #[test]
    fn fixed_seed_gives_identical_traces() {
        let mut cfg = quick(SolverKind::Dd);
        cfg.noise.schedule = crate::noise::NoiseSchedule::Constant { variance: 1e-6 };
        let strip = |mut t: Trace| {
            t.cycles.iter_mut().for_each(|c| c.wall_seconds = 0.0);
            t
        };
        let a = strip(run(&cfg).unwrap().trace);
        let b = strip(run(&cfg).unwrap().trace);
        assert_eq!(a, b);
        cfg.seed = 1;
        assert_ne!(a, strip(run(&cfg).unwrap().trace));
    }
}
