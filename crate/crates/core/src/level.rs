//! The per-level iteration loop shared by every driver. A level instance
//! computes its gradient, updates its weights, applies the entry contract when
//! it sits below the top, and then takes either a Taylor step or a step
//! supplied by the caller (a recursive descent or a decomposition step).

use serde::{Deserialize, Serialize};

use crate::adagb2::{
    first_order_measure, linear_step, readjust_level_entry_in, step_conditions_hold, taylor_from_linear,
    update_weights, RadiusNorm, StepMode,
};
use crate::bounds::{criticality_unchecked, project_in_place, BoundBox};
use crate::error::{check_len, Error, Result};
use crate::linalg::{all_finite, dot, norm};
use crate::oracle::{default_curvature, CurvatureOracle, GradientOracle};

/// Algorithm constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmParams {
    pub varsigma: f64,
    pub kappa_1st: f64,
    pub kappa_2nd: f64,
    pub kappa_gs: f64,
    pub kappa_s: f64,
    pub step_mode: StepMode,
    pub radius_norm: RadiusNorm,
}

impl Default for AlgorithmParams {
    fn default() -> Self {
        Self {
            varsigma: 0.01,
            kappa_1st: 0.95,
            kappa_2nd: 10.0,
            kappa_gs: 1.0,
            kappa_s: 1.0,
            step_mode: StepMode::Cauchy,
            radius_norm: RadiusNorm::Max,
        }
    }
}

impl AlgorithmParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.varsigma > 0.0
            && self.kappa_1st > 0.0
            && self.kappa_2nd > 0.0
            && self.kappa_gs > 0.0
            && self.kappa_gs <= 1.0
            && self.kappa_s >= 1.0;
        if !ok {
            return Err(Error::Config(format!("invalid algorithm constants: {self:?}")));
        }
        if let StepMode::FirstOrder { learning_rate } = self.step_mode {
            if !(learning_rate > 0.0) {
                return Err(Error::Config("learning rate must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Thresholds inherited from the level above: minimal first-order
/// achievement `theta1` and maximal radius norm `theta2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaContract {
    pub theta1: f64,
    pub theta2: f64,
}

impl ThetaContract {
    pub const TOP: ThetaContract = ThetaContract {
        theta1: 0.0,
        theta2: f64::INFINITY,
    };

    /// Contract handed to a lower level from the descending iteration.
    pub fn at_descent(kappa_1st: f64, kappa_2nd: f64, first_order: f64, s_l_norm: f64) -> Self {
        Self {
            theta1: kappa_1st * first_order,
            theta2: kappa_2nd * s_l_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IterationKind {
    Taylor,
    Recursive,
    Decomposition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitReason {
    Budget,
    NoGain,
    SlopeCondition,
}

/// What to do when a recursive or decomposition step comes back empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoGainPolicy {
    /// Take a zero step.
    Skip,
    /// Take a Taylor step instead.
    Taylor,
}

/// Identifies a level instance in observer events.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelTag {
    pub level: usize,
    pub subdomain: Option<usize>,
}

impl LevelTag {
    pub fn level(level: usize) -> Self {
        Self {
            level,
            subdomain: None,
        }
    }

    pub fn subdomain(level: usize, p: usize) -> Self {
        Self {
            level,
            subdomain: Some(p),
        }
    }
}

/// State of the current iteration, handed to the step provider.
pub struct IterationContext<'a> {
    pub tag: LevelTag,
    pub k: usize,
    pub x: &'a [f64],
    pub g: &'a [f64],
    pub d: &'a [f64],
    pub w: &'a [f64],
    pub delta: &'a [f64],
    pub s_l: &'a [f64],
    pub bounds: &'a BoundBox,
    pub first_order: f64,
}

impl IterationContext<'_> {
    pub fn contract(&self, params: &AlgorithmParams, kappa_1st: f64) -> ThetaContract {
        ThetaContract::at_descent(kappa_1st, params.kappa_2nd, self.first_order, norm(self.s_l))
    }
}

pub struct EntryEvent {
    pub tag: LevelTag,
    pub first_order: f64,
    pub delta_norm: f64,
    pub contract: ThetaContract,
    pub nogain: bool,
}

pub struct IterationEvent {
    pub tag: LevelTag,
    pub k: usize,
    pub kind: IterationKind,
    pub d_norm: f64,
    pub first_order: f64,
    /// Cauchy scaling of Taylor steps.
    pub gamma: Option<f64>,
    pub curvature_finite: bool,
}

pub struct AcceptedEvent<'a> {
    pub tag: LevelTag,
    pub k: usize,
    /// The new iterate before the rounding guard clamps it into the box.
    pub x: &'a [f64],
    pub bounds: &'a BoundBox,
}

/// Hooks for tests and diagnostics. Called from worker threads during
/// parallel subdomain solves.
pub trait Observer: Sync {
    fn level_entry(&self, _ev: &EntryEvent) {}
    fn iteration(&self, _ev: &IterationEvent) {}
    fn accepted(&self, _ev: &AcceptedEvent<'_>) {}
}

pub struct NoObserver;

impl Observer for NoObserver {}

struct OracleCurvature<'a>(&'a dyn GradientOracle);

impl CurvatureOracle for OracleCurvature<'_> {
    fn curvature(&self, x: &[f64], s: &[f64]) -> f64 {
        default_curvature(self.0, x, s)
    }
}

/// Everything fixed for one call of [`run_level`].
pub struct LevelRun<'a> {
    pub tag: LevelTag,
    pub oracle: &'a dyn GradientOracle,
    pub bounds: &'a BoundBox,
    pub is_top: bool,
    pub contract: ThetaContract,
    /// Number of iterations before returning.
    pub budget: usize,
    /// Gradient at `x0` when the caller already has it (e.g. `P^T G` for a
    /// tau-corrected model), so the entry test costs nothing.
    pub initial_gradient: Option<Vec<f64>>,
    pub on_nogain: NoGainPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelOutcome {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub iterations: usize,
    pub exit: ExitReason,
    /// `||d||` of the first and last computed iterations (NaN if none).
    pub first_d_norm: f64,
    pub last_d_norm: f64,
}

/// Step provider for non-Taylor iterations. Returning `None` signals that the
/// lower level made no progress.
pub type StepProvider<'a> =
    dyn FnMut(IterationKind, &IterationContext<'_>) -> Result<Option<Vec<f64>>> + 'a;

/// Runs one level instance. `schedule(k)` picks the iteration type.
pub fn run_level(
    run: LevelRun<'_>,
    x0: Vec<f64>,
    w_init: Vec<f64>,
    params: &AlgorithmParams,
    schedule: &dyn Fn(usize) -> IterationKind,
    provider: &mut StepProvider<'_>,
    observer: &dyn Observer,
) -> Result<LevelOutcome> {
    let n = run.oracle.dim();
    check_len(n, x0.len())?;
    check_len(n, w_init.len())?;
    check_len(n, run.bounds.dim())?;
    run.bounds.check_feasible(&x0)?;
    let curvature = OracleCurvature(run.oracle);
    let mut x = x0.clone();
    let mut w_prev = w_init;
    let mut g = vec![0.0; n];
    let mut initial = run.initial_gradient;
    let mut g0: Vec<f64> = Vec::new();
    let mut slope_ref = 0.0;
    let mut last_d_norm = f64::NAN;
    let mut first_d_norm = f64::NAN;

    for k in 0..run.budget {
        match initial.take() {
            Some(gi) if k == 0 => {
                check_len(n, gi.len())?;
                g = gi;
            }
            _ => run.oracle.gradient(&x, &mut g),
        }
        if !all_finite(&g) {
            return Err(Error::NonFiniteGradient {
                level: run.tag.level,
                iteration: k,
            });
        }
        let d = criticality_unchecked(&x, &g, run.bounds);
        last_d_norm = norm(&d);
        if k == 0 {
            first_d_norm = last_d_norm;
        }
        let (mut w, mut delta) = update_weights(&w_prev, &d);
        if k == 0 && !run.is_top {
            let (w2, delta2) = readjust_level_entry_in(params.radius_norm, &w, &delta, run.contract.theta2);
            w = w2;
            delta = delta2;
            let fo = first_order_measure(&d, &delta);
            let nogain = fo < run.contract.theta1;
            observer.level_entry(&EntryEvent {
                tag: run.tag,
                first_order: fo,
                delta_norm: params.radius_norm.of(&delta),
                contract: run.contract,
                nogain,
            });
            if nogain {
                return Ok(LevelOutcome {
                    x: x0,
                    w: w_prev,
                    iterations: 0,
                    exit: ExitReason::NoGain,
                    first_d_norm,
                    last_d_norm,
                });
            }
            debug_assert!(params.radius_norm.of(&delta) <= run.contract.theta2 * (1.0 + 1e-12) || run.contract.theta2 <= 0.0);
        }
        let s_l = linear_step(&x, &g, &delta, run.bounds);
        let first_order = first_order_measure(&d, &delta);
        let mut kind = schedule(k);
        let mut external = None;
        if kind != IterationKind::Taylor {
            let ctx = IterationContext {
                tag: run.tag,
                k,
                x: &x,
                g: &g,
                d: &d,
                w: &w,
                delta: &delta,
                s_l: &s_l,
                bounds: run.bounds,
                first_order,
            };
            external = provider(kind, &ctx)?;
            if external.is_none() && run.on_nogain == NoGainPolicy::Taylor {
                kind = IterationKind::Taylor;
            }
        }
        let (s, gamma, curvature_finite) = match (kind, external) {
            (IterationKind::Taylor, _) => {
                let bundle = taylor_from_linear(
                    &x,
                    &g,
                    d,
                    delta,
                    s_l,
                    run.bounds,
                    &curvature,
                    params.kappa_s,
                    params.step_mode,
                );
                debug_assert!(step_conditions_hold(
                    &x,
                    &g,
                    &bundle.s,
                    &bundle.s,
                    &bundle.delta,
                    run.bounds,
                    bundle.gamma * bundle.gamma * bundle.curvature,
                    bundle.gamma * bundle.gamma * bundle.curvature,
                    params.kappa_s,
                    1.0,
                    1e-10,
                ));
                (bundle.s, Some(bundle.gamma), bundle.curvature_finite)
            }
            (_, Some(step)) => {
                check_len(n, step.len())?;
                (step, None, true)
            }
            (_, None) => (vec![0.0; n], None, true),
        };
        observer.iteration(&IterationEvent {
            tag: run.tag,
            k,
            kind,
            d_norm: last_d_norm,
            first_order,
            gamma,
            curvature_finite,
        });

        let mut x_next: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a + b).collect();
        if !run.is_top {
            if k == 0 {
                g0 = g.clone();
                slope_ref = params.kappa_gs * dot(&g0, &s);
            } else {
                let moved: f64 = g0
                    .iter()
                    .zip(x_next.iter().zip(&x0))
                    .map(|(gi, (a, b))| gi * (a - b))
                    .sum();
                if moved > slope_ref {
                    return Ok(LevelOutcome {
                        x,
                        w,
                        iterations: k,
                        exit: ExitReason::SlopeCondition,
                        first_d_norm,
                        last_d_norm,
                    });
                }
            }
        }
        observer.accepted(&AcceptedEvent {
            tag: run.tag,
            k,
            x: &x_next,
            bounds: run.bounds,
        });
        debug_assert!(
            run.bounds.violation(&x_next) <= 1e-9 * (1.0 + norm(&x_next)),
            "iterate left the feasible box at level {:?}, k = {k}",
            run.tag
        );
        project_in_place(&mut x_next, run.bounds);
        x = x_next;
        w_prev = w;
    }
    Ok(LevelOutcome {
        x,
        w: w_prev,
        iterations: run.budget,
        exit: ExitReason::Budget,
        first_d_norm,
        last_d_norm,
    })
}
