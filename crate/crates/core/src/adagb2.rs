//! The single-level step engine: AdaGrad-style weights, the scaled box, the
//! projected linear step, Cauchy scaling and the Taylor step. Every level and
//! every subdomain uses these verbatim.

use serde::{Deserialize, Serialize};

use crate::bounds::{criticality_unchecked, BoundBox};
use crate::linalg::{dot, norm};
use crate::oracle::CurvatureOracle;

/// Weights that would be exactly zero are replaced by this value. Happens at
/// lower levels when a restriction row is empty.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// How the Taylor step is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
#[derive(Default)]
pub enum StepMode {
    /// `s = gamma * s^L` with `gamma` from the curvature along `s^L`.
    #[default]
    Cauchy,
    /// `B = 0`: `s = lr * s^L`, clipped to the scaled box.
    FirstOrder { learning_rate: f64 },
}

/// Norm of the radius vector in the entry readjustment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadiusNorm {
    Euclidean,
    /// Largest component; only rescales when some radius exceeds `theta2`.
    #[default]
    Max,
}

impl RadiusNorm {
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            RadiusNorm::Euclidean => norm(v),
            RadiusNorm::Max => v.iter().fold(0.0f64, |a, b| a.max(b.abs())),
        }
    }
}


/// Per-variable AdaGrad accumulators of one level instance.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    w: Vec<f64>,
    prev_initialized: bool,
}

impl WeightState {
    /// Top-level start: every weight equal to `varsigma^2`.
    pub fn top_level(n: usize, varsigma: f64) -> Self {
        Self {
            w: vec![varsigma * varsigma; n],
            prev_initialized: false,
        }
    }

    /// Weights inherited from the level above (already restricted).
    pub fn inherited(mut w: Vec<f64>) -> Self {
        floor_weights(&mut w);
        Self {
            w,
            prev_initialized: false,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.w
    }

    pub fn is_updated(&self) -> bool {
        self.prev_initialized
    }

    /// Applies one update with the projected step `d`, returning `Delta`.
    pub fn update(&mut self, d: &[f64]) -> Vec<f64> {
        let (w, delta) = update_weights(&self.w, d);
        self.w = w;
        self.prev_initialized = true;
        delta
    }
}

pub(crate) fn floor_weights(w: &mut [f64]) {
    for wi in w.iter_mut() {
        if !(*wi > WEIGHT_FLOOR) {
            *wi = WEIGHT_FLOOR;
        }
    }
}

/// `w_i = sqrt(prev_i^2 + d_i^2)`, `Delta_i = |d_i| / w_i`.
pub fn update_weights(prev_w: &[f64], d: &[f64]) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(prev_w.len(), d.len());
    let mut w = Vec::with_capacity(d.len());
    let mut delta = Vec::with_capacity(d.len());
    for (&p, &di) in prev_w.iter().zip(d) {
        let wi = p.hypot(di);
        if wi > 0.0 {
            w.push(wi);
            delta.push((di.abs() / wi).min(1.0));
        } else {
            w.push(WEIGHT_FLOOR);
            delta.push(0.0);
        }
    }
    (w, delta)
}

/// Entry readjustment below the top level: scales the weights up and `Delta`
/// down so that `||Delta|| <= theta2`.
pub fn readjust_level_entry(w0: &[f64], delta0: &[f64], theta2: f64) -> (Vec<f64>, Vec<f64>) {
    readjust_level_entry_in(RadiusNorm::Euclidean, w0, delta0, theta2)
}

pub fn readjust_level_entry_in(which: RadiusNorm, w0: &[f64], delta0: &[f64], theta2: f64) -> (Vec<f64>, Vec<f64>) {
    let dn = which.of(delta0);
    if dn == 0.0 || dn <= theta2 {
        return (w0.to_vec(), delta0.to_vec());
    }
    if theta2 <= 0.0 {
        // Limit of the formula: infinite weights, zero radii.
        return (w0.to_vec(), vec![0.0; delta0.len()]);
    }
    let grow = dn / theta2;
    let shrink = theta2 / dn;
    (
        w0.iter().map(|w| w * grow).collect(),
        delta0.iter().map(|d| d * shrink).collect(),
    )
}

/// `|d^T Delta| = sum_i d_i^2 / w_i`, the first-order achievement of an iteration.
pub fn first_order_measure(d: &[f64], delta: &[f64]) -> f64 {
    dot(d, delta).abs()
}

/// True when the level should return its starting point without iterating.
pub fn nogain_check(d0: &[f64], delta0: &[f64], theta1: f64) -> bool {
    first_order_measure(d0, delta0) < theta1
}

/// `s^L = P_{F ∩ B}(x - g) - x` where `B` is the box `|y_i - x_i| <= Delta_i`.
pub fn linear_step(x: &[f64], g: &[f64], delta: &[f64], bounds: &BoundBox) -> Vec<f64> {
    let (lo, up) = (bounds.lower(), bounds.upper());
    x.iter()
        .zip(g)
        .zip(delta)
        .enumerate()
        .map(|(i, ((&xi, &gi), &di))| {
            let l = (lo[i] - xi).max(-di);
            let u = (up[i] - xi).min(di);
            (-gi).max(l).min(u)
        })
        .collect()
}

/// Result of the Cauchy scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cauchy {
    pub gamma: f64,
    /// False when the curvature estimate was NaN or infinite.
    pub curvature_finite: bool,
}

/// `gamma = min(1, -g^T s^L / curv)` when `curv > 0`, else 1.
pub fn cauchy_scaling(g: &[f64], s_l: &[f64], curv: f64) -> Cauchy {
    if !curv.is_finite() {
        return Cauchy {
            gamma: 1.0,
            curvature_finite: false,
        };
    }
    let gamma = if curv > 0.0 {
        let slope = -dot(g, s_l);
        (slope / curv).min(1.0)
    } else {
        1.0
    };
    Cauchy {
        gamma,
        curvature_finite: true,
    }
}

/// Everything computed for one Taylor iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBundle {
    pub d: Vec<f64>,
    pub delta: Vec<f64>,
    pub s_l: Vec<f64>,
    pub gamma: f64,
    pub s: Vec<f64>,
    pub first_order: f64,
    /// `(s^L)^T B s^L` as returned by the curvature oracle (0 in first-order mode).
    pub curvature: f64,
    pub curvature_finite: bool,
}

/// Taylor step from precomputed `d`, `Delta` and `s^L`.
pub fn taylor_from_linear(
    x: &[f64],
    g: &[f64],
    d: Vec<f64>,
    delta: Vec<f64>,
    s_l: Vec<f64>,
    bounds: &BoundBox,
    curvature: &dyn CurvatureOracle,
    kappa_s: f64,
    mode: StepMode,
) -> StepBundle {
    let first_order = first_order_measure(&d, &delta);
    let zero_step = s_l.iter().all(|v| *v == 0.0);
    let (gamma, curv, finite, s) = match mode {
        _ if zero_step => (1.0, 0.0, true, vec![0.0; s_l.len()]),
        StepMode::Cauchy => {
            let curv = curvature.curvature(x, &s_l);
            let c = cauchy_scaling(g, &s_l, curv);
            let s = s_l.iter().map(|v| c.gamma * v).collect();
            (c.gamma, curv, c.curvature_finite, s)
        }
        StepMode::FirstOrder { learning_rate } => {
            let s = s_l
                .iter()
                .zip(&delta)
                .enumerate()
                .map(|(i, (&v, &di))| {
                    let r = kappa_s * di;
                    let si = (learning_rate * v).max(-r).min(r);
                    bounds.clamp_component(i, x[i] + si) - x[i]
                })
                .collect();
            (learning_rate, 0.0, true, s)
        }
    };
    StepBundle {
        d,
        delta,
        s_l,
        gamma,
        s,
        first_order,
        curvature: curv,
        curvature_finite: finite,
    }
}

/// Full Taylor iteration at `x` with scaled-box radii `delta`.
pub fn taylor_step(
    x: &[f64],
    g: &[f64],
    delta: &[f64],
    bounds: &BoundBox,
    curvature: &dyn CurvatureOracle,
    kappa_s: f64,
    mode: StepMode,
) -> StepBundle {
    let d = criticality_unchecked(x, g, bounds);
    let s_l = linear_step(x, g, delta, bounds);
    taylor_from_linear(x, g, d, delta.to_vec(), s_l, bounds, curvature, kappa_s, mode)
}

/// Checks the three acceptance clauses for a Taylor step: feasibility of
/// `x + s` (to `tol`), `|s_i| <= kappa_s Delta_i`, and the model decrease
/// `m(s) <= tau m(s^Q)` given the curvatures along `s` and `s^Q`.
#[allow(clippy::too_many_arguments)]
pub fn step_conditions_hold(
    x: &[f64],
    g: &[f64],
    s: &[f64],
    s_q: &[f64],
    delta: &[f64],
    bounds: &BoundBox,
    curv_s: f64,
    curv_q: f64,
    kappa_s: f64,
    tau: f64,
    tol: f64,
) -> bool {
    let trial: Vec<f64> = x.iter().zip(s).map(|(a, b)| a + b).collect();
    let feasible = bounds.violation(&trial) <= tol;
    let inside = s
        .iter()
        .zip(delta)
        .all(|(si, di)| si.abs() <= kappa_s * di * (1.0 + tol) + tol);
    let model_s = dot(g, s) + 0.5 * curv_s;
    let model_q = dot(g, s_q) + 0.5 * curv_q;
    let decrease = model_s <= tau * model_q + tol * (1.0 + model_q.abs());
    feasible && inside && decrease
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ZeroCurvature;
    use proptest::prelude::*;

    const INF: f64 = f64::INFINITY;

    struct Constant(f64);
    impl CurvatureOracle for Constant {
        fn curvature(&self, _x: &[f64], _s: &[f64]) -> f64 {
            self.0
        }
    }

    struct Diagonal(Vec<f64>);
    impl CurvatureOracle for Diagonal {
        fn curvature(&self, _x: &[f64], s: &[f64]) -> f64 {
            s.iter().zip(&self.0).map(|(si, hi)| hi * si * si).sum()
        }
    }

    fn rel_eq(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn weights_direct_arithmetic() {
        let (w, delta) = update_weights(&[1.0, 1.0], &[3.0, 4.0]);
        assert!(rel_eq(w[0], 10f64.sqrt()) && rel_eq(w[1], 17f64.sqrt()));
        assert!(rel_eq(delta[0], 3.0 / 10f64.sqrt()));
        assert!(rel_eq(delta[1], 4.0 / 17f64.sqrt()));
        assert!((delta[0] - 0.9487).abs() < 1e-4 && (delta[1] - 0.9701).abs() < 1e-4);
    }

    #[test]
    fn zero_projected_step_keeps_weights() {
        let (w, delta) = update_weights(&[0.5, 2.0], &[0.0, 0.0]);
        assert_eq!(w, vec![0.5, 2.0]);
        assert_eq!(delta, vec![0.0, 0.0]);
    }

    #[test]
    fn top_level_start_weights() {
        let mut ws = WeightState::top_level(1, 0.01);
        assert_eq!(ws.weights(), &[1e-4]);
        let delta = ws.update(&[0.3]);
        let w = ws.weights()[0];
        assert!(rel_eq(w, (1e-8f64 + 0.09).sqrt()));
        assert!((w - 0.300000017).abs() < 1e-9);
        assert!(rel_eq(delta[0], 0.3 / (1e-8f64 + 0.09).sqrt()));
        assert!((delta[0] - 0.99999998).abs() < 1e-7);
    }

    #[test]
    fn zero_weights_are_floored() {
        let (w, delta) = update_weights(&[0.0], &[0.0]);
        assert_eq!(w, vec![WEIGHT_FLOOR]);
        assert_eq!(delta, vec![0.0]);
        let ws = WeightState::inherited(vec![0.0, 2.0]);
        assert_eq!(ws.weights(), &[WEIGHT_FLOOR, 2.0]);
    }

    #[test]
    fn readjust_halves_radius() {
        // ||Delta|| = 2, theta2 = 1.
        let (w, delta) = readjust_level_entry(&[1.0, 3.0], &[2.0, 0.0], 1.0);
        assert_eq!(w, vec![2.0, 6.0]);
        assert_eq!(delta, vec![1.0, 0.0]);
    }

    #[test]
    fn readjust_noop_when_within_radius() {
        let (w, delta) = readjust_level_entry(&[1.0], &[0.5], 1.0);
        assert_eq!((w, delta), (vec![1.0], vec![0.5]));
        let (w, delta) = readjust_level_entry(&[1.0], &[0.5], INF);
        assert_eq!((w, delta), (vec![1.0], vec![0.5]));
        let (w, delta) = readjust_level_entry(&[1.0], &[0.0], 0.1);
        assert_eq!((w, delta), (vec![1.0], vec![0.0]));
    }

    #[test]
    fn max_norm_readjust_only_caps_largest_radius() {
        let (w, delta) = readjust_level_entry_in(RadiusNorm::Max, &[1.0, 1.0], &[0.6, 0.8], 1.0);
        assert_eq!((w, delta), (vec![1.0, 1.0], vec![0.6, 0.8]));
        let (w, delta) = readjust_level_entry_in(RadiusNorm::Max, &[1.0, 2.0], &[0.5, 0.25], 0.25);
        assert_eq!(w, vec![2.0, 4.0]);
        assert_eq!(delta, vec![0.25, 0.125]);
    }

    #[test]
    fn nogain_cases() {
        assert!(!nogain_check(&[1.0], &[0.5], 0.0));
        assert!(nogain_check(&[1.0], &[0.5], 0.6));
        assert!(nogain_check(&[0.0, 0.0], &[0.3, 0.1], 1e-3));
    }

    #[test]
    fn linear_step_clamps_to_radius() {
        let b = BoundBox::unbounded(2);
        let s = linear_step(&[0.0, 0.0], &[-0.5, 2.0], &[1.0, 1.0], &b);
        assert_eq!(s, vec![0.5, -1.0]);
        assert_eq!(linear_step(&[0.3], &[0.0], &[1.0], &BoundBox::unbounded(1)), vec![0.0]);
    }

    #[test]
    fn linear_step_feasible_bound_tighter() {
        let b = BoundBox::new(vec![-INF], vec![0.4]).unwrap();
        assert_eq!(linear_step(&[0.0], &[-3.0], &[1.0], &b), vec![0.4]);
    }

    #[test]
    fn cauchy_cases() {
        assert_eq!(cauchy_scaling(&[-1.0, 0.0], &[1.0, 0.0], 1.0).gamma, 1.0);
        assert_eq!(cauchy_scaling(&[-1.0, 0.0], &[2.0, 0.0], 4.0).gamma, 0.5);
        assert_eq!(cauchy_scaling(&[-1.0, 0.0], &[2.0, 0.0], -5.0).gamma, 1.0);
        let c = cauchy_scaling(&[-1.0], &[1.0], f64::NAN);
        assert_eq!(c.gamma, 1.0);
        assert!(!c.curvature_finite);
    }

    #[test]
    fn taylor_step_reaches_1d_minimizer() {
        // f = x^2 / 2 at x = 1 with Delta = 1.
        let b = BoundBox::unbounded(1);
        let step = taylor_step(&[1.0], &[1.0], &[1.0], &b, &Constant(1.0), 1.0, StepMode::Cauchy);
        assert_eq!(step.s_l, vec![-1.0]);
        assert_eq!(step.gamma, 1.0);
        assert_eq!(step.s, vec![-1.0]);
    }

    #[test]
    fn taylor_step_zero_gradient() {
        let b = BoundBox::unbounded(2);
        let step = taylor_step(&[1.0, 2.0], &[0.0, 0.0], &[0.5, 0.5], &b, &Constant(1.0), 1.0, StepMode::Cauchy);
        assert_eq!(step.s, vec![0.0, 0.0]);
    }

    #[test]
    fn first_order_mode_scales_by_learning_rate() {
        let b = BoundBox::unbounded(2);
        let step = taylor_step(
            &[0.0, 0.0],
            &[1.0, -2.0],
            &[5.0, 5.0],
            &b,
            &ZeroCurvature,
            1.0,
            StepMode::FirstOrder { learning_rate: 1e-2 },
        );
        assert_eq!(step.s_l, vec![-1.0, 2.0]);
        assert!(rel_eq(step.s[0], -1e-2) && rel_eq(step.s[1], 2e-2));
    }

    #[test]
    fn first_order_mode_clipped_to_kappa_s_delta() {
        let b = BoundBox::unbounded(1);
        let step = taylor_step(&[0.0], &[-1.0], &[0.1], &b, &ZeroCurvature, 1.0, StepMode::FirstOrder { learning_rate: 5.0 });
        assert_eq!(step.s, vec![0.1]);
    }

    #[test]
    fn cauchy_matches_grid_search() {
        // argmin over gamma in [0,1] of gamma g^T s + gamma^2 curv / 2.
        let cases = [(-1.0, 4.0), (-3.0, 1.0), (-0.2, 0.3), (-2.0, -1.0), (-1.0, 0.0), (-0.5, 10.0)];
        for (slope, curv) in cases {
            let gamma = cauchy_scaling(&[slope], &[1.0], curv).gamma;
            let model = |t: f64| t * slope + 0.5 * t * t * curv;
            let best = (0..=10_000)
                .map(|i| i as f64 / 10_000.0)
                .min_by(|a, b| model(*a).partial_cmp(&model(*b)).unwrap())
                .unwrap();
            assert!((gamma - best).abs() <= 1e-4, "slope {slope} curv {curv}: {gamma} vs {best}");
            assert!(model(gamma) <= model(best) + 1e-12);
        }
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1usize..10).prop_flat_map(|n| {
            (
                prop::collection::vec(-3.0f64..0.0, n),
                prop::collection::vec(0.0f64..3.0, n),
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(-1.0f64..4.0, n),
            )
        })
        .prop_map(|(lo, up, t, g, delta, h)| {
            let x = lo.iter().zip(&up).zip(&t).map(|((l, u), t)| l + (u - l) * t).collect();
            (lo, up, x, g, delta, h)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn linear_step_invariants((lo, up, x, g, delta, _h) in instance()) {
            let b = BoundBox::new(lo, up).unwrap();
            let s_l = linear_step(&x, &g, &delta, &b);
            prop_assert!(norm(&s_l) <= norm(&delta) * (1.0 + 1e-14));
            prop_assert!(dot(&g, &s_l) <= -dot(&s_l, &s_l) + 1e-12);
        }

        #[test]
        fn weights_monotone_and_delta_in_unit_interval(
            prev in prop::collection::vec(0.0f64..3.0, 1..8),
            d in prop::collection::vec(-3.0f64..3.0, 8),
        ) {
            let d = &d[..prev.len()];
            let (w, delta) = update_weights(&prev, d);
            for i in 0..prev.len() {
                prop_assert!(w[i] >= prev[i]);
                prop_assert!((0.0..=1.0).contains(&delta[i]));
                if d[i] == 0.0 { prop_assert_eq!(delta[i], 0.0); }
            }
        }

        #[test]
        fn readjusted_radius_within_theta2(
            w in prop::collection::vec(0.01f64..3.0, 4),
            delta in prop::collection::vec(0.0f64..1.0, 4),
            theta2 in 1e-3f64..3.0,
        ) {
            let (w2, d2) = readjust_level_entry(&w, &delta, theta2);
            prop_assert!(norm(&d2) <= theta2 * (1.0 + 1e-12));
            for i in 0..4 { prop_assert!(w2[i] >= w[i]); }
        }

        #[test]
        fn default_step_satisfies_acceptance_clauses((lo, up, x, g, delta, h) in instance()) {
            let b = BoundBox::new(lo, up).unwrap();
            let curv = Diagonal(h);
            let step = taylor_step(&x, &g, &delta, &b, &curv, 1.0, StepMode::Cauchy);
            let c_s = curv.curvature(&x, &step.s);
            prop_assert!(step.gamma > 0.0 && step.gamma <= 1.0 || step.s_l.iter().all(|v| *v == 0.0));
            prop_assert!(step_conditions_hold(&x, &g, &step.s, &step.s, &delta, &b, c_s, c_s, 1.0, 1.0, 1e-12));
        }
    }
}
