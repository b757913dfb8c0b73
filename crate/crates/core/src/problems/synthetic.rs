//! Small random box-constrained quadratics with an exact reference solution
//! obtained by enumerating active sets.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bounds::BoundBox;
use crate::error::{Error, Result};
use crate::problems::QuadraticProblem;
use crate::sparse::CsrMatrix;

pub struct SyntheticInstance {
    pub problem: QuadraticProblem,
    /// Dense SPD Hessian.
    pub a: Vec<Vec<f64>>,
    /// `f = 1/2 x^T A x - b^T x`.
    pub b: Vec<f64>,
    pub solution: Vec<f64>,
}

/// Random SPD `A = M^T M / n + I/2`, right-hand side and box; about one bound
/// in five is infinite.
pub fn synthetic_quadratic_obstacle(n: usize, seed: u64) -> Result<SyntheticInstance> {
    if n == 0 || n > 12 {
        return Err(Error::Config(format!("synthetic instances need 1 <= n <= 12, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let a = m.transpose() * &m / n as f64 + DMatrix::identity(n, n) * 0.5;
    let b: Vec<f64> = (0..n).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for _ in 0..n {
        lower.push(if rng.gen_bool(0.2) { f64::NEG_INFINITY } else { -rng.gen_range(0.1..1.0) });
        upper.push(if rng.gen_bool(0.2) { f64::INFINITY } else { rng.gen_range(0.1..1.0) });
    }
    let bounds = BoundBox::new(lower, upper)?;
    let a_rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect();
    let solution = enumerate_kkt(&a_rows, &b, &bounds)
        .ok_or_else(|| Error::Config("active-set enumeration found no KKT point".into()))?;
    let h = CsrMatrix::from_dense(&a_rows);
    let neg_b: Vec<f64> = b.iter().map(|v| -v).collect();
    let problem = QuadraticProblem::new(format!("synthetic-{n}-{seed}"), h, neg_b, 0.0, bounds)?;
    Ok(SyntheticInstance {
        problem,
        a: a_rows,
        b,
        solution,
    })
}

/// Minimizer of `1/2 x^T A x - b^T x` on the box for SPD `A`, by trying every
/// assignment of each variable to {free, lower, upper} and keeping the first
/// that satisfies the KKT conditions.
pub fn enumerate_kkt(a: &[Vec<f64>], b: &[f64], bounds: &BoundBox) -> Option<Vec<f64>> {
    let n = b.len();
    let tol = 1e-10;
    let (lo, up) = (bounds.lower(), bounds.upper());
    // 0 = free, 1 = at lower, 2 = at upper.
    let mut pattern = vec![0u8; n];
    let total = 3usize.pow(n as u32);
    'patterns: for code in 0..total {
        let mut c = code;
        for p in pattern.iter_mut() {
            *p = (c % 3) as u8;
            c /= 3;
        }
        let mut x = vec![0.0; n];
        for i in 0..n {
            match pattern[i] {
                1 if lo[i].is_finite() => x[i] = lo[i],
                2 if up[i].is_finite() => x[i] = up[i],
                0 => {}
                _ => continue 'patterns,
            }
        }
        let free: Vec<usize> = (0..n).filter(|&i| pattern[i] == 0).collect();
        if !free.is_empty() {
            let k = free.len();
            let af = DMatrix::from_fn(k, k, |r, c| a[free[r]][free[c]]);
            let rhs = DVector::from_fn(k, |r, _| {
                let i = free[r];
                b[i] - (0..n).filter(|j| pattern[*j] != 0).map(|j| a[i][j] * x[j]).sum::<f64>()
            });
            let sol = af.cholesky()?.solve(&rhs);
            for (r, &i) in free.iter().enumerate() {
                x[i] = sol[r];
            }
        }
        if bounds.violation(&x) > tol {
            continue;
        }
        for i in 0..n {
            let gi: f64 = (0..n).map(|j| a[i][j] * x[j]).sum::<f64>() - b[i];
            let ok = match pattern[i] {
                1 => gi >= -tol,
                2 => gi <= tol,
                _ => true,
            };
            if !ok {
                continue 'patterns;
            }
        }
        return Some(x);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::criticality_xi;
    use crate::problems::Problem;

    #[test]
    fn unconstrained_solution_is_a_inverse_b() {
        let a = vec![vec![2.0, 0.5], vec![0.5, 1.0]];
        let b = vec![1.0, -1.0];
        let x = enumerate_kkt(&a, &b, &BoundBox::unbounded(2)).unwrap();
        let det = 2.0 - 0.25;
        let expect = [(1.0 * 1.0 - -0.5) / det, (-2.0 - 0.5 * 1.0) / det];
        assert!((x[0] - expect[0]).abs() < 1e-14 && (x[1] - expect[1]).abs() < 1e-14);
    }

    #[test]
    fn one_active_bound_by_hand() {
        // Unconstrained minimizer (1, 0) for A = I, b = (1, 0); upper bound 0.5 on x0.
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let b = vec![1.0, 0.0];
        let bx = BoundBox::new(vec![-1.0, -1.0], vec![0.5, 1.0]).unwrap();
        assert_eq!(enumerate_kkt(&a, &b, &bx).unwrap(), vec![0.5, 0.0]);
    }

    #[test]
    fn oracle_solution_is_critical() {
        for seed in 0..20 {
            let inst = synthetic_quadratic_obstacle(2 + seed as usize % 8, seed).unwrap();
            let mut g = vec![0.0; inst.problem.dim()];
            inst.problem.gradient(&inst.solution, &mut g);
            let xi = criticality_xi(&inst.solution, &g, inst.problem.bounds()).unwrap();
            assert!(xi < 1e-10, "seed {seed}: {xi}");
        }
    }
}
