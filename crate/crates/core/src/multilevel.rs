//! Recursive multilevel driver (V-cycles).
//!
//! Levels are indexed from 0 (coarsest) to `r` (finest). A level below the
//! top minimizes a coarse model of the level above: either the coarse
//! objective shifted so its gradient at the restricted iterate matches the
//! restricted fine gradient, or the fine quadratic model pushed through the
//! transfer operators.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::adagb2::floor_weights;
use crate::bounds::BoundBox;
use crate::error::{check_len, Error, Result};
use crate::level::{
    run_level, AlgorithmParams, ExitReason, IterationContext, IterationKind, LevelOutcome, LevelRun, LevelTag,
    NoGainPolicy, Observer, ThetaContract,
};
use crate::oracle::{hess_vec_or_fd, GradientOracle};
use crate::sparse::CsrMatrix;
use crate::transfer::{lower_level_bounds, prolong_step, restrict_state, TransferPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CoarseModel {
    #[default]
    TauCorrected,
    Galerkin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VCycleSchedule {
    pub pre: usize,
    pub post: usize,
    pub coarsest: usize,
}

impl Default for VCycleSchedule {
    fn default() -> Self {
        Self {
            pre: 3,
            post: 3,
            coarsest: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultilevelConfig {
    pub params: AlgorithmParams,
    pub schedule: VCycleSchedule,
    pub coarse_model: CoarseModel,
    pub truncation: bool,
    pub on_nogain: NoGainPolicy,
}

impl Default for MultilevelConfig {
    fn default() -> Self {
        Self {
            params: AlgorithmParams::default(),
            schedule: VCycleSchedule::default(),
            coarse_model: CoarseModel::TauCorrected,
            truncation: false,
            on_nogain: NoGainPolicy::Skip,
        }
    }
}

/// `x -> (target - grad f(x0)) + grad f(x)`: the coarse objective with a
/// linear shift so that its gradient at `x0` equals `target`. The shift is
/// evaluated on first use so a level that exits on entry costs nothing.
pub struct TauCorrected<'a> {
    base: &'a dyn GradientOracle,
    target: Vec<f64>,
    x0: Vec<f64>,
    shift: OnceLock<Vec<f64>>,
}

impl<'a> TauCorrected<'a> {
    pub fn lazy(base: &'a dyn GradientOracle, target: Vec<f64>, x0: Vec<f64>) -> Self {
        Self {
            base,
            target,
            x0,
            shift: OnceLock::new(),
        }
    }

    fn shift(&self) -> &[f64] {
        self.shift.get_or_init(|| {
            let g0 = self.base.gradient_vec(&self.x0);
            self.target.iter().zip(&g0).map(|(t, g)| t - g).collect()
        })
    }
}

/// Eager construction: `P^T G_fine - g_coarse(x0)` from a coarse gradient
/// already evaluated at `x0`.
pub fn tau_correct<'a>(
    coarse: &'a dyn GradientOracle,
    p: &CsrMatrix,
    g_fine: &[f64],
    g_coarse_at_x0: &[f64],
    x0: Vec<f64>,
) -> TauCorrected<'a> {
    let target = p.mul_vec_transpose(g_fine);
    let shift: Vec<f64> = target.iter().zip(g_coarse_at_x0).map(|(t, g)| t - g).collect();
    let cell = OnceLock::new();
    let _ = cell.set(shift);
    TauCorrected {
        base: coarse,
        target,
        x0,
        shift: cell,
    }
}

impl GradientOracle for TauCorrected<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let shift = self.shift().to_vec();
        self.base.gradient(x, g);
        for (gi, s) in g.iter_mut().zip(&shift) {
            *gi += s;
        }
    }

    fn has_hess_vec(&self) -> bool {
        self.base.has_hess_vec()
    }

    fn hess_vec(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        self.base.hess_vec(x, v, out)
    }
}

/// Quadratic model `h(y) = (R g)^T s + 1/2 s^T R B P s`, `s = y - y0`, with the
/// products by `B` delegated to the fine model at the fine iterate.
pub struct GalerkinModel<'a> {
    fine: &'a dyn GradientOracle,
    x_fine: Vec<f64>,
    rg: Vec<f64>,
    p: CsrMatrix,
    r: CsrMatrix,
    y0: Vec<f64>,
}

impl<'a> GalerkinModel<'a> {
    pub fn new(fine: &'a dyn GradientOracle, x_fine: &[f64], g_fine: &[f64], transfer: &TransferPair, y0: Vec<f64>) -> Self {
        Self {
            fine,
            x_fine: x_fine.to_vec(),
            rg: transfer.r().mul_vec(g_fine),
            p: transfer.p().clone(),
            r: transfer.r().clone(),
            y0,
        }
    }

    pub fn restricted_gradient(&self) -> &[f64] {
        &self.rg
    }

    fn rbp(&self, v: &[f64]) -> Vec<f64> {
        let pv = self.p.mul_vec(v);
        let mut bpv = vec![0.0; pv.len()];
        hess_vec_or_fd(self.fine, &self.x_fine, &pv, &mut bpv);
        self.r.mul_vec(&bpv)
    }
}

impl GradientOracle for GalerkinModel<'_> {
    fn dim(&self) -> usize {
        self.rg.len()
    }

    fn gradient(&self, y: &[f64], g: &mut [f64]) {
        let s: Vec<f64> = y.iter().zip(&self.y0).map(|(a, b)| a - b).collect();
        g.copy_from_slice(&self.rg);
        if s.iter().any(|v| *v != 0.0) {
            for (gi, v) in g.iter_mut().zip(self.rbp(&s)) {
                *gi += v;
            }
        }
    }

    fn has_hess_vec(&self) -> bool {
        true
    }

    fn hess_vec(&self, _y: &[f64], v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.rbp(v));
    }
}

/// One grid level: its objective and the transfer to the next coarser level.
pub struct Level {
    pub oracle: Arc<dyn GradientOracle>,
    /// `P` maps level `l - 1` to level `l`; `None` on the coarsest level.
    pub transfer: Option<TransferPair>,
}

pub struct Hierarchy {
    levels: Vec<Level>,
}

impl Hierarchy {
    /// `levels[0]` is the coarsest level.
    pub fn new(levels: Vec<Level>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Config("hierarchy needs at least one level".into()));
        }
        for (l, level) in levels.iter().enumerate() {
            match (&level.transfer, l) {
                (None, 0) => {}
                (Some(t), l) if l > 0 => {
                    check_len(level.oracle.dim(), t.fine_dim())?;
                    check_len(levels[l - 1].oracle.dim(), t.coarse_dim())?;
                }
                _ => return Err(Error::Config(format!("level {l} has a misplaced transfer operator"))),
            }
        }
        Ok(Self { levels })
    }

    pub fn top(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, l: usize) -> &Level {
        &self.levels[l]
    }

    pub fn dims(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.oracle.dim()).collect()
    }
}

pub struct MultilevelSolver {
    hierarchy: Hierarchy,
    config: MultilevelConfig,
}

impl MultilevelSolver {
    pub fn new(hierarchy: Hierarchy, config: MultilevelConfig) -> Result<Self> {
        config.params.validate()?;
        Ok(Self { hierarchy, config })
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn config(&self) -> &MultilevelConfig {
        &self.config
    }

    fn budget(&self, l: usize) -> usize {
        let s = self.config.schedule;
        if l == 0 {
            if self.hierarchy.top() == 0 {
                1
            } else {
                s.coarsest
            }
        } else {
            s.pre + 1 + s.post
        }
    }

    /// One V-cycle from the top level.
    pub fn cycle(&self, x: Vec<f64>, w: Vec<f64>, bounds: &BoundBox, observer: &dyn Observer) -> Result<LevelOutcome> {
        let top = self.hierarchy.top();
        let oracle = self.hierarchy.levels[top].oracle.clone();
        self.solve_level(top, &*oracle, x, bounds, w, ThetaContract::TOP, None, true, observer)
    }

    /// Runs level `l` on `model` from `x0`.
    #[allow(clippy::too_many_arguments)]
    pub fn solve_level(
        &self,
        l: usize,
        model: &dyn GradientOracle,
        x0: Vec<f64>,
        bounds: &BoundBox,
        w: Vec<f64>,
        contract: ThetaContract,
        initial_gradient: Option<Vec<f64>>,
        is_top: bool,
        observer: &dyn Observer,
    ) -> Result<LevelOutcome> {
        let pre = self.config.schedule.pre;
        let schedule = move |k: usize| {
            if l > 0 && k == pre {
                IterationKind::Recursive
            } else {
                IterationKind::Taylor
            }
        };
        let mut provider = |_kind: IterationKind, ctx: &IterationContext<'_>| self.descend(l, model, ctx, observer);
        run_level(
            LevelRun {
                tag: LevelTag::level(l),
                oracle: model,
                bounds,
                is_top,
                contract,
                budget: self.budget(l),
                initial_gradient,
                on_nogain: self.config.on_nogain,
            },
            x0,
            w,
            &self.config.params,
            &schedule,
            &mut provider,
            observer,
        )
    }

    /// Recursive iteration at level `l`: restrict, solve level `l - 1`, prolongate.
    /// `None` when the lower level exits on entry.
    pub fn descend(
        &self,
        l: usize,
        model: &dyn GradientOracle,
        ctx: &IterationContext<'_>,
        observer: &dyn Observer,
    ) -> Result<Option<Vec<f64>>> {
        let full = self.hierarchy.levels[l]
            .transfer
            .as_ref()
            .ok_or_else(|| Error::Config(format!("level {l} has no coarser level")))?;
        let truncated;
        let transfer = if self.config.truncation {
            truncated = full.truncate(&ctx.bounds.active_set(ctx.x));
            &truncated
        } else {
            full
        };
        let (x0c, mut wc) = restrict_state(transfer.r(), ctx.x, ctx.w);
        floor_weights(&mut wc);
        let box_c = lower_level_bounds(transfer.p(), transfer.sigma(), ctx.x, &x0c, ctx.bounds)?;
        let contract = ctx.contract(&self.config.params, self.config.params.kappa_1st);
        let outcome = match self.config.coarse_model {
            CoarseModel::TauCorrected => {
                let target = transfer.p().mul_vec_transpose(ctx.g);
                let base = &*self.hierarchy.levels[l - 1].oracle;
                let coarse = TauCorrected::lazy(base, target.clone(), x0c.clone());
                self.solve_level(l - 1, &coarse, x0c.clone(), &box_c, wc, contract, Some(target), false, observer)?
            }
            CoarseModel::Galerkin => {
                let coarse = GalerkinModel::new(model, ctx.x, ctx.g, transfer, x0c.clone());
                let g0 = coarse.restricted_gradient().to_vec();
                self.solve_level(l - 1, &coarse, x0c.clone(), &box_c, wc, contract, Some(g0), false, observer)?
            }
        };
        if outcome.exit == ExitReason::NoGain {
            return Ok(None);
        }
        let correction: Vec<f64> = outcome.x.iter().zip(&x0c).map(|(a, b)| a - b).collect();
        Ok(Some(prolong_step(transfer.p(), &correction)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::NodeGrid;
    use crate::level::NoObserver;
    use crate::oracle::FnOracle;
    use crate::transfer::build_linear_interpolation;

    fn laplace_1d(n: usize, h: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 / h));
            if i > 0 {
                t.push((i, i - 1, -1.0 / h));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0 / h));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    fn quad_oracle(a: CsrMatrix, b: Vec<f64>) -> FnOracle {
        let a2 = a.clone();
        FnOracle::new(b.len(), move |x, g| {
            let ax = a.mul_vec(x);
            for i in 0..g.len() {
                g[i] = ax[i] - b[i];
            }
        })
        .with_hess_vec(move |_x, v, out| out.copy_from_slice(&a2.mul_vec(v)))
    }

    #[test]
    fn tau_corrected_gradient_at_x0_is_target() {
        let base = FnOracle::new(2, |x, g| {
            g[0] = x[0] * x[0];
            g[1] = 3.0 * x[1];
        });
        let m = TauCorrected::lazy(&base, vec![0.5, -1.0], vec![2.0, 1.0]);
        assert_eq!(m.gradient_vec(&[2.0, 1.0]), vec![0.5, -1.0]);
        // Gradient difference is that of the base oracle.
        let g = m.gradient_vec(&[1.0, 0.0]);
        assert_eq!(g, vec![0.5 + 1.0 - 4.0, -1.0 + 0.0 - 3.0]);
    }

    #[test]
    fn eager_tau_matches_p_transpose_g() {
        let base = FnOracle::new(1, |x, g| g[0] = 2.0 * x[0]).with_hess_vec(|_x, v, o| o[0] = 2.0 * v[0]);
        let p = CsrMatrix::from_dense(&[vec![1.0], vec![0.5]]);
        let m = tau_correct(&base, &p, &[2.0, 4.0], &[1.0], vec![0.5]);
        assert_eq!(m.gradient_vec(&[0.5]), vec![4.0]);
        let mut hv = [0.0];
        m.hess_vec(&[0.0], &[3.0], &mut hv);
        assert_eq!(hv, [6.0]);
    }

    #[test]
    fn tau_two_level_reproduces_coarse_grid_correction() {
        // Fine: 3 interior nodes on (0,1); coarse: 1 interior node.
        let fine = NodeGrid::interior(1, 4).unwrap();
        let coarse = fine.coarsen().unwrap();
        let t = build_linear_interpolation(&fine, &coarse).unwrap();
        let af = laplace_1d(3, 0.25);
        let ac = laplace_1d(1, 0.5);
        let b = vec![0.25, 0.25, 0.25];
        let fo = quad_oracle(af.clone(), b.clone());
        let co = quad_oracle(ac.clone(), vec![0.0]);
        let x = vec![0.1, -0.2, 0.3];
        let gf = fo.gradient_vec(&x);
        let x0 = t.r().mul_vec(&x);
        let gc0 = co.gradient_vec(&x0);
        let m = tau_correct(&co, t.p(), &gf, &gc0, x0.clone());
        // Coarse minimizer: A_c (y - x0) = -P^T g.
        let ptg = t.p().mul_vec_transpose(&gf);
        let y = x0[0] - ptg[0] / ac.get(0, 0);
        assert!(m.gradient_vec(&[y])[0].abs() < 1e-14);
    }

    #[test]
    fn galerkin_examples() {
        let fine = NodeGrid::interior(1, 8).unwrap();
        let t = build_linear_interpolation(&fine, &fine.coarsen().unwrap()).unwrap();
        let ident = FnOracle::new(7, |x, g| g.copy_from_slice(x)).with_hess_vec(|_x, v, o| o.copy_from_slice(v));
        let g: Vec<f64> = (0..7).map(|i| i as f64 * 0.1 - 0.2).collect();
        let y0 = vec![0.0; 3];
        let m = GalerkinModel::new(&ident, &[0.0; 7], &g, &t, y0.clone());
        assert_eq!(m.gradient_vec(&y0), t.r().mul_vec(&g));
        // B = I: Hessian action R P s.
        let s = [0.3, -0.1, 0.7];
        let mut hv = [0.0; 3];
        m.hess_vec(&y0, &s, &mut hv);
        assert_eq!(hv.to_vec(), t.r().mul_vec(&t.p().mul_vec(&s)));
        // Masked rows have no influence.
        let tt = t.truncate(&[3]);
        let mut g2 = g.clone();
        g2[3] += 10.0;
        let a = GalerkinModel::new(&ident, &[0.0; 7], &g, &tt, y0.clone());
        let b = GalerkinModel::new(&ident, &[0.0; 7], &g2, &tt, y0.clone());
        assert_eq!(a.gradient_vec(&s), b.gradient_vec(&s));
    }

    fn two_level_1d(truncation: bool, model: CoarseModel) -> (MultilevelSolver, Arc<FnOracle>) {
        let fine = NodeGrid::interior(1, 16).unwrap();
        let coarse = fine.coarsen().unwrap();
        let t = build_linear_interpolation(&fine, &coarse).unwrap();
        let nf = fine.num_dofs();
        let fo = Arc::new(quad_oracle(laplace_1d(nf, 1.0 / 16.0), vec![1.0 / 16.0; nf]));
        let co = Arc::new(quad_oracle(laplace_1d(coarse.num_dofs(), 1.0 / 8.0), vec![1.0 / 8.0; coarse.num_dofs()]));
        let h = Hierarchy::new(vec![
            Level {
                oracle: co,
                transfer: None,
            },
            Level {
                oracle: fo.clone(),
                transfer: Some(t),
            },
        ])
        .unwrap();
        let config = MultilevelConfig {
            truncation,
            coarse_model: model,
            ..Default::default()
        };
        (MultilevelSolver::new(h, config).unwrap(), fo)
    }

    fn run_to_tolerance(solver: &MultilevelSolver, oracle: &FnOracle, bounds: &BoundBox) -> usize {
        let n = oracle.dim();
        let mut x = vec![0.0; n];
        let mut w = vec![1e-4; n];
        for cycle in 1..=5000 {
            let out = solver.cycle(x, w, bounds, &NoObserver).unwrap();
            x = out.x;
            w = out.w;
            let g = oracle.gradient_vec(&x);
            let xi = crate::bounds::criticality_xi(&x, &g, bounds).unwrap();
            if xi < 1e-7 {
                return cycle;
            }
        }
        panic!("no convergence");
    }

    #[test]
    fn two_level_1d_quadratic_converges() {
        let (solver, fo) = two_level_1d(false, CoarseModel::TauCorrected);
        let cycles = run_to_tolerance(&solver, &fo, &BoundBox::unbounded(15));
        assert!(cycles > 1 && cycles < 5000);
    }

    #[test]
    fn two_level_1d_obstacle_galerkin_truncated() {
        let (solver, fo) = two_level_1d(true, CoarseModel::Galerkin);
        let b = BoundBox::new(vec![f64::NEG_INFINITY; 15], vec![0.05; 15]).unwrap();
        run_to_tolerance(&solver, &fo, &b);
    }

    #[test]
    fn single_level_cycle_is_one_taylor_iteration() {
        let o = Arc::new(FnOracle::new(1, |x, g| g[0] = x[0]).with_hess_vec(|_x, v, out| out[0] = v[0]));
        let h = Hierarchy::new(vec![Level {
            oracle: o.clone(),
            transfer: None,
        }])
        .unwrap();
        let solver = MultilevelSolver::new(h, MultilevelConfig::default()).unwrap();
        let out = solver.cycle(vec![1.0], vec![1.0], &BoundBox::unbounded(1), &NoObserver).unwrap();
        assert_eq!(out.iterations, 1);
        // w = sqrt(2), Delta = 1/sqrt(2); s^L = -Delta, curvature 1/2, gamma = 1.
        assert!((out.x[0] - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-15);
        // One gradient plus one Hessian-vector product.
        assert_eq!(o.counter().get(), 2);
    }
}
