//! Additive Gaussian gradient noise.
//!
//! Each call draws its noise from a generator seeded by a hash of
//! `(seed, stream, call index)`, so the noise of a call depends on nothing but
//! that tuple. Concurrent subdomain solves with distinct streams therefore
//! stay reproducible regardless of scheduling.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::GradientOracle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseSchedule {
    #[default]
    None,
    Constant {
        variance: f64,
    },
    /// `variance_k = initial_variance * exp(-decay * k)`.
    Exponential {
        initial_variance: f64,
        decay: f64,
    },
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseSchedule::None => true,
            NoiseSchedule::Constant { variance } => variance >= 0.0,
            NoiseSchedule::Exponential {
                initial_variance,
                decay,
            } => initial_variance >= 0.0 && decay >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid noise schedule {self:?}")))
        }
    }

    pub fn variance(&self, k: u64) -> f64 {
        match *self {
            NoiseSchedule::None => 0.0,
            NoiseSchedule::Constant { variance } => variance,
            NoiseSchedule::Exponential {
                initial_variance,
                decay,
            } => initial_variance * (-decay * k as f64).exp(),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, NoiseSchedule::None)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn call_rng(seed: u64, stream: u64, call: u64) -> ChaCha8Rng {
    let key = splitmix(splitmix(splitmix(seed) ^ stream) ^ call);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(stream);
    rng
}

/// Gradient oracle plus noise. Hessian-vector products pass through noise-free.
pub struct NoisyOracle<O> {
    inner: O,
    schedule: NoiseSchedule,
    seed: u64,
    stream: u64,
    calls: Arc<AtomicU64>,
}

impl<O: GradientOracle> NoisyOracle<O> {
    pub fn new(inner: O, schedule: NoiseSchedule, seed: u64, stream: u64) -> Self {
        Self {
            inner,
            schedule,
            seed,
            stream,
            calls: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Wrapper continuing the call index of an earlier wrapper, for oracles
    /// rebuilt at every iteration that must not replay the same noise.
    pub fn with_calls(inner: O, schedule: NoiseSchedule, seed: u64, stream: u64, calls: Arc<AtomicU64>) -> Self {
        Self {
            inner,
            schedule,
            seed,
            stream,
            calls,
        }
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

pub fn wrap_noisy<O: GradientOracle>(oracle: O, schedule: NoiseSchedule, seed: u64) -> NoisyOracle<O> {
    NoisyOracle::new(oracle, schedule, seed, 0)
}

impl<O: GradientOracle> GradientOracle for NoisyOracle<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let k = self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.gradient(x, g);
        let var = self.schedule.variance(k);
        if var > 0.0 {
            let sd = var.sqrt();
            let mut rng = call_rng(self.seed, self.stream, k);
            for gi in g.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *gi += sd * z;
            }
        }
    }

    fn has_hess_vec(&self) -> bool {
        self.inner.has_hess_vec()
    }

    fn hess_vec(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        self.inner.hess_vec(x, v, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::FnOracle;

    fn zero_grad(n: usize) -> FnOracle {
        FnOracle::new(n, |_x, g| g.iter_mut().for_each(|v| *v = 0.0))
    }

    #[test]
    fn none_is_exact() {
        let o = wrap_noisy(FnOracle::new(2, |x, g| g.copy_from_slice(x)), NoiseSchedule::None, 1);
        assert_eq!(o.gradient_vec(&[0.3, -0.2]), vec![0.3, -0.2]);
    }

    #[test]
    fn exponential_variance_formula() {
        let s = NoiseSchedule::Exponential {
            initial_variance: 1e-7,
            decay: 5e-2,
        };
        let v = s.variance(20);
        assert!((v - 1e-7 * (-1.0f64).exp()).abs() <= 1e-12 * 1e-7);
    }

    #[test]
    fn constant_variance_and_zero_mean() {
        let var = 1e-7;
        let o = wrap_noisy(zero_grad(2), NoiseSchedule::Constant { variance: var }, 42);
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        let mut g = [0.0; 2];
        for _ in 0..n {
            o.gradient(&[0.0, 0.0], &mut g);
            for c in 0..2 {
                sum[c] += g[c];
                sq[c] += g[c] * g[c];
            }
        }
        for c in 0..2 {
            let mean = sum[c] / n as f64;
            let sample_var = sq[c] / n as f64 - mean * mean;
            assert!((sample_var / var - 1.0).abs() < 0.05, "variance {sample_var}");
            assert!(mean.abs() < 4.0 * var.sqrt() / (n as f64).sqrt(), "mean {mean}");
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let s = NoiseSchedule::Constant { variance: 1.0 };
        let a = wrap_noisy(zero_grad(3), s, 7);
        let b = wrap_noisy(zero_grad(3), s, 7);
        let c = wrap_noisy(zero_grad(3), s, 8);
        for _ in 0..5 {
            let ga = a.gradient_vec(&[0.0; 3]);
            assert_eq!(ga, b.gradient_vec(&[0.0; 3]));
            assert_ne!(ga, c.gradient_vec(&[0.0; 3]));
        }
    }

    #[test]
    fn streams_are_independent_of_call_order() {
        let s = NoiseSchedule::Constant { variance: 1.0 };
        let a = NoisyOracle::new(zero_grad(2), s, 1, 3);
        let b = NoisyOracle::new(zero_grad(2), s, 1, 3);
        let other = NoisyOracle::new(zero_grad(2), s, 1, 4);
        let first = a.gradient_vec(&[0.0; 2]);
        other.gradient_vec(&[0.0; 2]);
        assert_eq!(first, b.gradient_vec(&[0.0; 2]));
    }
}
