//! Invariant suite: exact solutions of small obstacle problems, feasibility
//! of every accepted iterate, subdomain bounds against restricted bounds and
//! derivative consistency of the benchmarks.

use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds::BoundBox;
use crate::config::{ExperimentConfig, SolverKind};
use crate::cost::CostLedger;
use crate::driver::{run_cycles, RunSetup, StopRule};
use crate::error::Result;
use crate::experiment::prepare;
use crate::grid::NodeGrid;
use crate::level::{AcceptedEvent, AlgorithmParams, NoObserver, Observer};
use crate::linalg::norm;
use crate::multilevel::{Hierarchy, Level, MultilevelConfig, MultilevelSolver};
use crate::oracle::EvalCounter;
use crate::problems::synthetic_quadratic_obstacle;
use crate::problems::{Problem, ProblemKind, ProblemOracle};
use crate::schwarz::{build_block_covering, build_operators, restrict_bounds, subdomain_bounds, Covering, SchwarzVariant};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Problem sizes of the suite; `quick` keeps `offo verify` to a few seconds.
#[derive(Debug, Clone, Copy)]
pub struct SuiteSize {
    pub synthetic_instances: usize,
    pub feasibility_runs: usize,
    pub feasibility_cells: usize,
    pub bound_trials: usize,
}

impl SuiteSize {
    pub fn quick() -> Self {
        Self {
            synthetic_instances: 40,
            feasibility_runs: 4,
            feasibility_cells: 16,
            bound_trials: 200,
        }
    }

    pub fn full() -> Self {
        Self {
            synthetic_instances: 200,
            feasibility_runs: 50,
            feasibility_cells: 16,
            bound_trials: 1000,
        }
    }
}

pub fn run_suite(size: SuiteSize, seed: u64) -> Result<Vec<Check>> {
    let mut out = vec![check_synthetic(size.synthetic_instances, seed)?];
    for kind in [ProblemKind::Membrane, ProblemKind::Minsurf] {
        out.push(check_feasibility(kind, size.feasibility_cells, size.feasibility_runs, seed)?);
    }
    out.extend(check_subdomain_bounds(size.bound_trials, seed)?);
    out.push(check_derivatives(seed)?);
    Ok(out)
}

/// Worst single-instance outcome of the synthetic suite.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticReport {
    pub instances: usize,
    pub unconverged: usize,
    pub max_iterations: usize,
    pub max_error: f64,
}

pub fn synthetic_report(instances: usize, seed: u64, max_iterations: usize) -> Result<SyntheticReport> {
    let mut rep = SyntheticReport {
        instances,
        ..Default::default()
    };
    for i in 0..instances {
        let n = 1 + i % 10;
        let inst = synthetic_quadratic_obstacle(n, seed.wrapping_mul(7919).wrapping_add(i as u64))?;
        let problem: Arc<dyn Problem> = Arc::new(inst.problem);
        let mut ledger = CostLedger::new();
        let counter = ledger.add_level(n);
        let oracle = Arc::new(ProblemOracle::with_counter(problem.clone(), counter));
        let exact = ProblemOracle::with_counter(problem.clone(), EvalCounter::new());
        let solver = MultilevelSolver::new(
            Hierarchy::new(vec![Level { oracle, transfer: None }])?,
            MultilevelConfig::default(),
        )?;
        let x0 = crate::bounds::project_box(&vec![0.0; n], problem.bounds())?;
        let setup = RunSetup {
            bounds: problem.bounds(),
            exact: &exact,
            ledger: &ledger,
            stop: StopRule {
                abs_tol: 1e-6,
                rel_tol: 0.0,
                max_cycles: max_iterations,
            },
            varsigma: AlgorithmParams::default().varsigma,
        };
        let res = run_cycles(&solver, &setup, x0, &NoObserver, &mut |_, _| {})?;
        if !res.converged() {
            rep.unconverged += 1;
        }
        rep.max_iterations = rep.max_iterations.max(res.num_cycles());
        let err: Vec<f64> = res.x.iter().zip(&inst.solution).map(|(a, b)| a - b).collect();
        rep.max_error = rep.max_error.max(norm(&err));
    }
    Ok(rep)
}

fn check_synthetic(instances: usize, seed: u64) -> Result<Check> {
    let r = synthetic_report(instances, seed, 10_000)?;
    Ok(Check::new(
        "synthetic obstacle solutions",
        r.unconverged == 0 && r.max_error < 1e-5,
        format!(
            "{} instances, {} unconverged, at most {} iterations, max |x - x*| = {:.2e}",
            r.instances, r.unconverged, r.max_iterations, r.max_error
        ),
    ))
}

/// Records the largest bound violation of any accepted iterate on any level.
#[derive(Default)]
pub struct FeasibilityObserver {
    worst: Mutex<(f64, String)>,
    count: Mutex<u64>,
}

impl FeasibilityObserver {
    pub fn worst(&self) -> (f64, String) {
        self.worst.lock().expect("observer lock").clone()
    }

    pub fn accepted_count(&self) -> u64 {
        *self.count.lock().expect("observer lock")
    }
}

impl Observer for FeasibilityObserver {
    fn accepted(&self, ev: &AcceptedEvent<'_>) {
        let v = ev.bounds.violation(ev.x);
        *self.count.lock().expect("observer lock") += 1;
        let mut w = self.worst.lock().expect("observer lock");
        if v > w.0 || w.1.is_empty() {
            *w = (v.max(w.0), format!("{:?} k={}", ev.tag, ev.k));
        }
    }
}

fn random_feasible(b: &BoundBox, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..b.dim())
        .map(|i| {
            let (l, u) = (b.lower()[i], b.upper()[i]);
            match (l.is_finite(), u.is_finite()) {
                (true, true) => rng.gen_range(l..=u),
                (true, false) => l + rng.gen_range(0.0..1.0),
                (false, true) => u - rng.gen_range(0.0..1.0),
                (false, false) => rng.gen_range(-1.0..1.0),
            }
        })
        .collect()
}

/// Accepted iterates of randomized three-level runs (random starting points,
/// coarse models and truncation) against their level-dependent bounds.
pub fn feasibility_report(kind: ProblemKind, cells: usize, runs: usize, seed: u64) -> Result<(f64, String, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfea5);
    let obs = FeasibilityObserver::default();
    for r in 0..runs {
        let mut cfg = ExperimentConfig::new(kind, cells, SolverKind::Ml);
        cfg.solver.levels = 3;
        cfg.solver.coarse_model = if rng.gen_bool(0.5) {
            crate::multilevel::CoarseModel::Galerkin
        } else {
            crate::multilevel::CoarseModel::TauCorrected
        };
        cfg.solver.truncation = rng.gen_bool(0.5);
        cfg.seed = r as u64;
        cfg.stop.max_cycles = 8;
        let prep = prepare(&cfg)?;
        let x0 = random_feasible(prep.problem.bounds(), &mut rng);
        let setup = RunSetup {
            bounds: prep.problem.bounds(),
            exact: &*prep.exact,
            ledger: &prep.ledger,
            stop: cfg.stop,
            varsigma: cfg.params.varsigma,
        };
        let res = run_cycles(&*prep.solver, &setup, x0, &obs, &mut |_, _| {})?;
        prep.problem.bounds().check_feasible(&res.x)?;
    }
    let (v, at) = obs.worst();
    Ok((v, at, obs.accepted_count()))
}

fn check_feasibility(kind: ProblemKind, cells: usize, runs: usize, seed: u64) -> Result<Check> {
    let (v, at, n) = feasibility_report(kind, cells, runs, seed)?;
    Ok(Check::new(
        format!("{} level-bound feasibility", kind.as_str()),
        v <= 1e-12,
        if v > 0.0 {
            format!("{runs} runs, {n} accepted iterates, worst violation {v:.2e} at {at}")
        } else {
            format!("{runs} runs, {n} accepted iterates, no violation")
        },
    ))
}

/// Random covering of `0..n`: a random partition, each part grown by random
/// extra indices.
pub fn random_covering(rng: &mut ChaCha8Rng, n: usize) -> Result<Covering> {
    let m = rng.gen_range(1..=n.min(6));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut partition = vec![Vec::new(); m];
    for (k, &i) in order.iter().enumerate() {
        let p = if k < m { k } else { rng.gen_range(0..m) };
        partition[p].push(i);
    }
    let domains = partition
        .iter()
        .map(|part| {
            let mut d = part.clone();
            for i in 0..n {
                if !d.contains(&i) && rng.gen_bool(0.25) {
                    d.push(i);
                }
            }
            d
        })
        .collect();
    Covering::new(n, domains, partition)
}

fn random_box(rng: &mut ChaCha8Rng, n: usize) -> Result<(BoundBox, Vec<f64>)> {
    let mut lo = Vec::with_capacity(n);
    let mut up = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.gen_range(-5.0..5.0);
        let b = a + rng.gen_range(0.0..3.0);
        lo.push(if rng.gen_bool(0.15) { f64::NEG_INFINITY } else { a });
        up.push(if rng.gen_bool(0.15) { f64::INFINITY } else { b });
        x.push(rng.gen_range(a..=b));
    }
    Ok((BoundBox::new(lo, up)?, x))
}

/// Per-variant agreement between the subdomain bounds used by the solver and
/// the restricted bounds.
#[derive(Debug, Clone, Copy)]
pub struct BoundAgreement {
    pub variant: SchwarzVariant,
    pub boxes: usize,
    /// Boxes that are not bit-identical.
    pub differing: usize,
    /// Largest componentwise `|a - b| / max(|a|, |b|)`.
    pub max_relative: f64,
    /// Largest `|a - b| / max(|a|, |b|, |y0|)`, relative to the operands of
    /// `y0 + offset`.
    pub max_operand_relative: f64,
}

pub fn subdomain_bound_report(trials: usize, seed: u64) -> Result<Vec<BoundAgreement>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5c4a);
    let mut out: Vec<BoundAgreement> = SchwarzVariant::ALL
        .iter()
        .map(|&variant| BoundAgreement {
            variant,
            boxes: 0,
            differing: 0,
            max_relative: 0.0,
            max_operand_relative: 0.0,
        })
        .collect();
    for t in 0..trials {
        let covering = if t % 2 == 0 {
            let n = rng.gen_range(1..16);
            random_covering(&mut rng, n)?
        } else {
            let cells = rng.gen_range(3..9);
            let grid = NodeGrid::interior(2, cells)?;
            let rows = cells - 1;
            build_block_covering(&grid, rng.gen_range(1..=rows), rng.gen_range(0..3))?
        };
        let n = covering.dim();
        let (b, x) = random_box(&mut rng, n)?;
        for entry in out.iter_mut() {
            let ops = build_operators(&covering, entry.variant);
            for p in 0..ops.num_subdomains() {
                let op = &ops.subdomains[p];
                let y0 = op.r.mul_vec(&x);
                let lb = subdomain_bounds(&ops, p, &x, &y0, &b)?;
                let rb = restrict_bounds(&op.r, &b)?;
                entry.boxes += 1;
                if lb != rb {
                    entry.differing += 1;
                }
                let pairs = lb.lower().iter().zip(rb.lower()).chain(lb.upper().iter().zip(rb.upper()));
                for (j, (a, c)) in pairs.enumerate() {
                    let (rel, op_rel) = if a == c {
                        (0.0, 0.0)
                    } else if a.is_finite() && c.is_finite() {
                        let diff = (a - c).abs();
                        let scale = a.abs().max(c.abs());
                        let y = y0[j % y0.len()].abs();
                        (diff / scale.max(f64::MIN_POSITIVE), diff / scale.max(y).max(f64::MIN_POSITIVE))
                    } else {
                        (f64::INFINITY, f64::INFINITY)
                    };
                    entry.max_relative = entry.max_relative.max(rel);
                    entry.max_operand_relative = entry.max_operand_relative.max(op_rel);
                }
            }
        }
    }
    Ok(out)
}

fn check_subdomain_bounds(trials: usize, seed: u64) -> Result<Vec<Check>> {
    Ok(subdomain_bound_report(trials, seed)?
        .into_iter()
        .map(|a| {
            let passed = if a.variant == SchwarzVariant::Wash {
                a.max_operand_relative < 1e-14
            } else {
                a.differing == 0
            };
            Check::new(
                format!("{} subdomain bounds equal restricted bounds", a.variant.as_str()),
                passed,
                format!(
                    "{}/{} subdomain boxes differ, max relative difference {:.2e} ({:.2e} relative to the operands)",
                    a.differing, a.boxes, a.max_relative, a.max_operand_relative
                ),
            )
        })
        .collect())
}

/// Gradients against central differences of the objective and curvature
/// products against differences of the gradient, at random feasible points.
pub fn derivative_errors(kind: ProblemKind, cells: usize, seed: u64) -> Result<(f64, f64)> {
    let p = kind.build(cells)?;
    let n = p.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1ff);
    let (mut eg, mut eh) = (0.0f64, 0.0f64);
    for _ in 0..3 {
        let x = random_feasible(p.bounds(), &mut rng);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = vec![0.0; n];
        p.gradient(&x, &mut g);
        let h = 1e-6;
        let shift = |s: f64| -> Vec<f64> { x.iter().zip(&v).map(|(a, b)| a + s * b).collect() };
        let fd = (p.objective(&shift(h)) - p.objective(&shift(-h))) / (2.0 * h);
        let dir: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        eg = eg.max((fd - dir).abs() / dir.abs().max(1e-8));
        let mut hv = vec![0.0; n];
        p.hess_vec(&x, &v, &mut hv);
        let (mut gp, mut gm) = (vec![0.0; n], vec![0.0; n]);
        p.gradient(&shift(h), &mut gp);
        p.gradient(&shift(-h), &mut gm);
        let fdh: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let diff: Vec<f64> = fdh.iter().zip(&hv).map(|(a, b)| a - b).collect();
        eh = eh.max(norm(&diff) / norm(&hv).max(1e-8));
    }
    Ok((eg, eh))
}

fn check_derivatives(seed: u64) -> Result<Check> {
    let mut worst = (0.0f64, 0.0f64);
    let mut detail = Vec::new();
    for kind in [ProblemKind::Membrane, ProblemKind::Minsurf, ProblemKind::MinsurfClassical] {
        let (g, h) = derivative_errors(kind, 8, seed)?;
        worst = (worst.0.max(g), worst.1.max(h));
        detail.push(format!("{} {g:.1e}/{h:.1e}", kind.as_str()));
    }
    Ok(Check::new(
        "benchmark derivatives match differences",
        worst.0 < 1e-6 && worst.1 < 1e-5,
        format!("gradient/curvature relative errors: {}", detail.join(", ")),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes_except_plain_additive() {
        let checks = run_suite(
            SuiteSize {
                synthetic_instances: 10,
                feasibility_runs: 1,
                feasibility_cells: 16,
                bound_trials: 30,
            },
            1,
        )
        .unwrap();
        for c in &checks {
            let known_gap = c.name.starts_with("as ") || c.name.starts_with("ash ");
            assert!(c.passed || known_gap, "{}", c.line());
        }
    }

    #[test]
    fn random_coverings_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in 1..20 {
            let c = random_covering(&mut rng, n).unwrap();
            assert_eq!(c.dim(), n);
        }
    }
}
