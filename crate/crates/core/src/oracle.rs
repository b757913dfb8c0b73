//! Gradient and curvature oracles.
//!
//! Solvers never see objective values: everything they consume goes through
//! [`GradientOracle`]. Concrete oracles count their own evaluations through a
//! shared [`EvalCounter`]; wrappers (noise, coarse models) delegate and leave
//! counting to whatever they wrap, so a charge always lands on the level whose
//! function was actually evaluated.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::linalg::{dot, norm};

/// Thread-safe evaluation counter. Clones share the same count.
#[derive(Debug, Clone, Default)]
pub struct EvalCounter(Arc<AtomicU64>);

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

pub trait GradientOracle: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes an approximation of the gradient at `x` into `g`.
    fn gradient(&self, x: &[f64], g: &mut [f64]);

    fn has_hess_vec(&self) -> bool {
        false
    }

    /// Hessian-vector product `out = H(x) v`. Only called when
    /// [`has_hess_vec`](Self::has_hess_vec) returns true.
    fn hess_vec(&self, _x: &[f64], _v: &[f64], _out: &mut [f64]) {
        panic!("hess_vec called on an oracle without a Hessian-vector product");
    }

    fn gradient_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient(x, &mut g);
        g
    }
}

impl<T: GradientOracle + ?Sized> GradientOracle for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        (**self).gradient(x, g)
    }
    fn has_hess_vec(&self) -> bool {
        (**self).has_hess_vec()
    }
    fn hess_vec(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        (**self).hess_vec(x, v, out)
    }
}

impl<T: GradientOracle + ?Sized> GradientOracle for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        (**self).gradient(x, g)
    }
    fn has_hess_vec(&self) -> bool {
        (**self).has_hess_vec()
    }
    fn hess_vec(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        (**self).hess_vec(x, v, out)
    }
}

type GradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type HessVecFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// Oracle backed by closures. Every gradient call and every Hessian-vector
/// product increments the counter by one.
pub struct FnOracle {
    dim: usize,
    grad: Box<GradFn>,
    hess_vec: Option<Box<HessVecFn>>,
    counter: EvalCounter,
}

impl FnOracle {
    pub fn new(dim: usize, grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self {
            dim,
            grad: Box::new(grad),
            hess_vec: None,
            counter: EvalCounter::new(),
        }
    }

    pub fn with_hess_vec(
        mut self,
        hv: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.hess_vec = Some(Box::new(hv));
        self
    }

    pub fn with_counter(mut self, counter: EvalCounter) -> Self {
        self.counter = counter;
        self
    }

    pub fn counter(&self) -> &EvalCounter {
        &self.counter
    }
}

impl GradientOracle for FnOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        self.counter.add(1);
        (self.grad)(x, g);
    }

    fn has_hess_vec(&self) -> bool {
        self.hess_vec.is_some()
    }

    fn hess_vec(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        self.counter.add(1);
        match &self.hess_vec {
            Some(hv) => hv(x, v, out),
            None => panic!("FnOracle has no Hessian-vector product"),
        }
    }
}

/// Approximates `s^T H(x) s` without forming `H`.
pub trait CurvatureOracle {
    fn curvature(&self, x: &[f64], s: &[f64]) -> f64;
}

/// Central difference of the gradient along `s`:
/// `s^T (g(x + h s/|s|) - g(x - h s/|s|)) |s| / (2h)`, `h = sqrt(eps) max(1, |x|)`.
/// Costs two gradient evaluations.
pub struct FiniteDifferenceCurvature<'a> {
    oracle: &'a dyn GradientOracle,
}

impl<'a> FiniteDifferenceCurvature<'a> {
    pub fn new(oracle: &'a dyn GradientOracle) -> Self {
        Self { oracle }
    }
}

impl CurvatureOracle for FiniteDifferenceCurvature<'_> {
    fn curvature(&self, x: &[f64], s: &[f64]) -> f64 {
        let s_norm = norm(s);
        if s_norm == 0.0 {
            return 0.0;
        }
        let h = f64::EPSILON.sqrt() * norm(x).max(1.0);
        let step = h / s_norm;
        let plus: Vec<f64> = x.iter().zip(s).map(|(xi, si)| xi + step * si).collect();
        let minus: Vec<f64> = x.iter().zip(s).map(|(xi, si)| xi - step * si).collect();
        let gp = self.oracle.gradient_vec(&plus);
        let gm = self.oracle.gradient_vec(&minus);
        let diff: f64 = s.iter().zip(gp.iter().zip(&gm)).map(|(si, (a, b))| si * (a - b)).sum();
        diff * s_norm / (2.0 * h)
    }
}

/// Exact `s^T H s` through the oracle's Hessian-vector product (one evaluation).
pub struct HessVecCurvature<'a> {
    oracle: &'a dyn GradientOracle,
}

impl<'a> HessVecCurvature<'a> {
    pub fn new(oracle: &'a dyn GradientOracle) -> Self {
        Self { oracle }
    }
}

impl CurvatureOracle for HessVecCurvature<'_> {
    fn curvature(&self, x: &[f64], s: &[f64]) -> f64 {
        let mut hs = vec![0.0; s.len()];
        self.oracle.hess_vec(x, s, &mut hs);
        dot(s, &hs)
    }
}

/// `B = 0`: the purely first-order mode.
pub struct ZeroCurvature;

impl CurvatureOracle for ZeroCurvature {
    fn curvature(&self, _x: &[f64], _s: &[f64]) -> f64 {
        0.0
    }
}

/// Analytic product when the oracle has one, central differences otherwise.
pub fn default_curvature(oracle: &dyn GradientOracle, x: &[f64], s: &[f64]) -> f64 {
    if oracle.has_hess_vec() {
        HessVecCurvature::new(oracle).curvature(x, s)
    } else {
        FiniteDifferenceCurvature::new(oracle).curvature(x, s)
    }
}

/// `H(x) v` through the oracle's product when available, otherwise by central
/// differences of the gradient (two evaluations).
pub fn hess_vec_or_fd(oracle: &dyn GradientOracle, x: &[f64], v: &[f64], out: &mut [f64]) {
    if oracle.has_hess_vec() {
        oracle.hess_vec(x, v, out);
        return;
    }
    let v_norm = norm(v);
    if v_norm == 0.0 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let h = f64::EPSILON.sqrt() * norm(x).max(1.0) / v_norm;
    let plus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let minus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
    let gp = oracle.gradient_vec(&plus);
    let gm = oracle.gradient_vec(&minus);
    for (o, (a, b)) in out.iter_mut().zip(gp.iter().zip(&gm)) {
        *o = (a - b) / (2.0 * h);
    }
}
