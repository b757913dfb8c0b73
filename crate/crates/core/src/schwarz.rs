//! Additive-Schwarz domain decomposition: coverings, the six prolongation /
//! restriction pairings, subdomain objectives and the decomposition step,
//! whose subdomain solves run in parallel.

use std::sync::atomic::AtomicU64;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adagb2::floor_weights;
use crate::bounds::BoundBox;
use crate::error::{check_len, Error, Result};
use crate::grid::NodeGrid;
use crate::level::{
    run_level, AlgorithmParams, ExitReason, IterationContext, IterationKind, LevelOutcome, LevelRun, LevelTag,
    NoGainPolicy, Observer, ThetaContract,
};
use crate::noise::{NoiseSchedule, NoisyOracle};
use crate::oracle::{EvalCounter, GradientOracle};
use crate::sparse::CsrMatrix;
use crate::transfer::lower_level_bounds;

/// Noise stream of subdomain `p`; grid levels use their level index.
pub const SUBDOMAIN_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SchwarzVariant {
    As,
    Ras,
    #[default]
    Wras,
    Ash,
    Rash,
    Wash,
}

impl SchwarzVariant {
    pub const ALL: [SchwarzVariant; 6] = [
        SchwarzVariant::As,
        SchwarzVariant::Ras,
        SchwarzVariant::Wras,
        SchwarzVariant::Ash,
        SchwarzVariant::Rash,
        SchwarzVariant::Wash,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchwarzVariant::As => "as",
            SchwarzVariant::Ras => "ras",
            SchwarzVariant::Wras => "wras",
            SchwarzVariant::Ash => "ash",
            SchwarzVariant::Rash => "rash",
            SchwarzVariant::Wash => "wash",
        }
    }
}

impl std::str::FromStr for SchwarzVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchwarzVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown Schwarz variant `{s}`")))
    }
}

/// Overlapping subdomains `D_p` and a disjoint refinement `D̂_p ⊆ D_p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Covering {
    n: usize,
    domains: Vec<Vec<usize>>,
    partition: Vec<Vec<usize>>,
}

impl Covering {
    pub fn new(n: usize, mut domains: Vec<Vec<usize>>, mut partition: Vec<Vec<usize>>) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidCovering(msg));
        if domains.is_empty() || domains.len() != partition.len() {
            return bad("need one partition block per subdomain".into());
        }
        let mut covered = vec![false; n];
        let mut owner = vec![usize::MAX; n];
        for (p, (d, dh)) in domains.iter_mut().zip(partition.iter_mut()).enumerate() {
            d.sort_unstable();
            d.dedup();
            dh.sort_unstable();
            dh.dedup();
            if d.is_empty() {
                return bad(format!("subdomain {p} is empty"));
            }
            if d.last().is_some_and(|&i| i >= n) || dh.last().is_some_and(|&i| i >= n) {
                return bad(format!("subdomain {p} has an index out of range"));
            }
            d.iter().for_each(|&i| covered[i] = true);
            for &i in dh.iter() {
                if owner[i] != usize::MAX {
                    return bad(format!("index {i} is in partition blocks {} and {p}", owner[i]));
                }
                if d.binary_search(&i).is_err() {
                    return bad(format!("partition block {p} is not inside its subdomain"));
                }
                owner[i] = p;
            }
        }
        if let Some(i) = covered.iter().position(|c| !c) {
            return bad(format!("index {i} is not covered"));
        }
        if let Some(i) = owner.iter().position(|&o| o == usize::MAX) {
            return bad(format!("index {i} is in no partition block"));
        }
        Ok(Self { n, domains, partition })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn num_subdomains(&self) -> usize {
        self.domains.len()
    }

    pub fn domain(&self, p: usize) -> &[usize] {
        &self.domains[p]
    }

    pub fn partition(&self, p: usize) -> &[usize] {
        &self.partition[p]
    }

    /// `theta_i`: number of subdomains containing `i`.
    pub fn multiplicity(&self) -> Vec<usize> {
        let mut theta = vec![0; self.n];
        self.domains.iter().flatten().for_each(|&i| theta[i] += 1);
        theta
    }
}

/// Splits ordered layers of indices into `m` contiguous blocks and extends
/// each block by `overlap` layers on both sides.
pub fn covering_from_layers(n: usize, layers: &[Vec<usize>], m: usize, overlap: usize) -> Result<Covering> {
    let nl = layers.len();
    if m == 0 || m > nl {
        return Err(Error::InvalidCovering(format!("{m} subdomains requested for {nl} layers")));
    }
    let (base, extra) = (nl / m, nl % m);
    let mut domains = Vec::with_capacity(m);
    let mut partition = Vec::with_capacity(m);
    let mut start = 0;
    for p in 0..m {
        let end = start + base + usize::from(p < extra);
        let gather = |a: usize, b: usize| layers[a..b].iter().flatten().copied().collect::<Vec<_>>();
        partition.push(gather(start, end));
        domains.push(gather(start.saturating_sub(overlap), (end + overlap).min(nl)));
        start = end;
    }
    Covering::new(n, domains, partition)
}

/// Block covering of a grid: layers are the rows of nodes sharing the last
/// coordinate (single nodes in 1D).
pub fn build_block_covering(grid: &NodeGrid, m: usize, overlap: usize) -> Result<Covering> {
    let last = grid.dim() - 1;
    let mut layers = vec![Vec::new(); grid.nodes_per_side()];
    for dof in 0..grid.num_dofs() {
        layers[grid.multi_index(grid.node_of(dof))[last]].push(dof);
    }
    layers.retain(|l| !l.is_empty());
    covering_from_layers(grid.num_dofs(), &layers, m, overlap)
}

/// `P^(p)` (n x n_p) and `R^(p)` (n_p x n) of one subdomain.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainOperator {
    pub indices: Vec<usize>,
    pub p: CsrMatrix,
    pub r: CsrMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchwarzOperators {
    pub variant: SchwarzVariant,
    pub subdomains: Vec<SubdomainOperator>,
    /// Row sums of the concatenated prolongation `[P^(1) ... P^(M)]`.
    pub sigma: Vec<f64>,
}

impl SchwarzOperators {
    pub fn num_subdomains(&self) -> usize {
        self.subdomains.len()
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }
}

pub fn build_operators(covering: &Covering, variant: SchwarzVariant) -> SchwarzOperators {
    use SchwarzVariant::*;
    let n = covering.dim();
    let theta = covering.multiplicity();
    let mut owner = vec![0; n];
    for p in 0..covering.num_subdomains() {
        covering.partition(p).iter().for_each(|&i| owner[i] = p);
    }
    let mut sigma = vec![0.0; n];
    let subdomains = (0..covering.num_subdomains())
        .map(|p| {
            let d = covering.domain(p);
            let build = |kind: char| {
                let t: Vec<_> = d
                    .iter()
                    .enumerate()
                    .filter_map(|(j, &i)| match kind {
                        'u' => Some((i, j, 1.0)),
                        'h' => (owner[i] == p).then_some((i, j, 1.0)),
                        _ => Some((i, j, 1.0 / theta[i] as f64)),
                    })
                    .collect();
                CsrMatrix::from_triplets(n, d.len(), &t)
            };
            let (pk, rk) = match variant {
                As => ('u', 'u'),
                Ras => ('h', 'u'),
                Wras => ('w', 'u'),
                Ash => ('u', 'h'),
                Rash => ('h', 'h'),
                Wash => ('u', 'w'),
            };
            let pm = build(pk);
            SubdomainOperator {
                indices: d.to_vec(),
                p: pm,
                r: build(rk).transpose(),
            }
        })
        .collect();
    // Row sums of the assembled P, kept exact: multiplicity for U, one otherwise.
    if matches!(variant, As | Ash | Wash) {
        sigma = theta.iter().map(|&t| t as f64).collect();
    } else {
        sigma.iter_mut().for_each(|s| *s = 1.0);
    }
    SchwarzOperators {
        variant,
        subdomains,
        sigma,
    }
}

/// `(R l, R u)` with only positive entries of `R` contributing.
pub fn restrict_bounds(r: &CsrMatrix, bounds: &BoundBox) -> Result<BoundBox> {
    check_len(r.cols(), bounds.dim())?;
    let apply = |v: &[f64]| -> Vec<f64> {
        (0..r.rows())
            .map(|j| r.row(j).filter(|(_, a)| *a > 0.0).map(|(i, a)| a * v[i]).sum())
            .collect()
    };
    BoundBox::new(apply(bounds.lower()), apply(bounds.upper()))
}

/// Bounds of subdomain `p` at `x`: the lower-level bounds of `(P^(p), sigma)`,
/// with `(R l, R u)` on variables that `P^(p)` never prolongates.
pub fn subdomain_bounds(ops: &SchwarzOperators, p: usize, x: &[f64], y0: &[f64], bounds: &BoundBox) -> Result<BoundBox> {
    let op = &ops.subdomains[p];
    let lb = lower_level_bounds(&op.p, &ops.sigma, x, y0, bounds)?;
    let mut used = vec![false; op.p.cols()];
    op.p.triplets().filter(|t| t.2 > 0.0).for_each(|(_, j, _)| used[j] = true);
    if used.iter().all(|u| *u) {
        return Ok(lb);
    }
    let rb = restrict_bounds(&op.r, bounds)?;
    let pick = |a: &[f64], b: &[f64]| -> Vec<f64> { (0..used.len()).map(|j| if used[j] { a[j] } else { b[j] }).collect() };
    BoundBox::new(pick(lb.lower(), rb.lower()), pick(lb.upper(), rb.upper()))
}

/// `y -> U_p^T grad f(x + U_p (y - y0))`: the full objective with the
/// variables outside `D_p` frozen at `x`. Charges one evaluation per gradient
/// or Hessian-vector product to `counter`; `base` itself must not count.
pub struct SubdomainOracle<'a> {
    base: &'a dyn GradientOracle,
    x: &'a [f64],
    indices: &'a [usize],
    y0: Vec<f64>,
    counter: EvalCounter,
}

impl<'a> SubdomainOracle<'a> {
    pub fn new(base: &'a dyn GradientOracle, x: &'a [f64], indices: &'a [usize], y0: Vec<f64>, counter: EvalCounter) -> Self {
        Self {
            base,
            x,
            indices,
            y0,
            counter,
        }
    }

    fn splice(&self, y: &[f64]) -> Vec<f64> {
        let mut z = self.x.to_vec();
        for ((&i, a), b) in self.indices.iter().zip(y).zip(&self.y0) {
            // Plain replacement when the restriction injects, avoiding rounding.
            z[i] = if *b == self.x[i] { *a } else { self.x[i] + (a - b) };
        }
        z
    }

    fn gather(&self, full: &[f64], out: &mut [f64]) {
        for (o, &i) in out.iter_mut().zip(self.indices) {
            *o = full[i];
        }
    }
}

impl GradientOracle for SubdomainOracle<'_> {
    fn dim(&self) -> usize {
        self.indices.len()
    }

    fn gradient(&self, y: &[f64], g: &mut [f64]) {
        self.counter.add(1);
        let full = self.base.gradient_vec(&self.splice(y));
        self.gather(&full, g);
    }

    fn has_hess_vec(&self) -> bool {
        self.base.has_hess_vec()
    }

    fn hess_vec(&self, y: &[f64], v: &[f64], out: &mut [f64]) {
        self.counter.add(1);
        let mut vf = vec![0.0; self.base.dim()];
        for (&i, a) in self.indices.iter().zip(v) {
            vf[i] = *a;
        }
        let mut hv = vec![0.0; vf.len()];
        self.base.hess_vec(&self.splice(y), &vf, &mut hv);
        self.gather(&hv, out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdConfig {
    pub params: AlgorithmParams,
    pub variant: SchwarzVariant,
    /// Taylor iterations of each subdomain solve.
    pub subdomain_iters: usize,
    /// Use `kappa_1st / M` for the subdomain first-order threshold.
    pub divide_kappa_1st: bool,
    pub on_nogain: NoGainPolicy,
}

impl Default for DdConfig {
    fn default() -> Self {
        Self {
            params: AlgorithmParams::default(),
            variant: SchwarzVariant::Wras,
            subdomain_iters: 10,
            divide_kappa_1st: true,
            on_nogain: NoGainPolicy::Skip,
        }
    }
}

/// Noise applied to subdomain gradients.
#[derive(Debug, Clone)]
pub struct SubdomainNoise {
    pub schedule: NoiseSchedule,
    pub seed: u64,
}

/// The decomposition step and the DD cycle `[decomposition, Taylor]`.
pub struct DdSolver {
    fine: Arc<dyn GradientOracle>,
    base: Arc<dyn GradientOracle>,
    ops: SchwarzOperators,
    counters: Vec<EvalCounter>,
    noise: Option<SubdomainNoise>,
    calls: Vec<Arc<AtomicU64>>,
    config: DdConfig,
}

impl DdSolver {
    /// `fine` is the counted top-level oracle, `base` an uncounted, noise-free
    /// oracle of the same objective used inside the subdomains.
    pub fn new(
        fine: Arc<dyn GradientOracle>,
        base: Arc<dyn GradientOracle>,
        ops: SchwarzOperators,
        counters: Vec<EvalCounter>,
        noise: Option<SubdomainNoise>,
        config: DdConfig,
    ) -> Result<Self> {
        config.params.validate()?;
        check_len(fine.dim(), ops.dim())?;
        check_len(base.dim(), ops.dim())?;
        check_len(ops.num_subdomains(), counters.len())?;
        if config.subdomain_iters == 0 {
            return Err(Error::Config("subdomain solves need at least one iteration".into()));
        }
        let calls = (0..ops.num_subdomains()).map(|_| Arc::new(AtomicU64::new(0))).collect();
        Ok(Self {
            fine,
            base,
            ops,
            counters,
            noise,
            calls,
            config,
        })
    }

    pub fn operators(&self) -> &SchwarzOperators {
        &self.ops
    }

    pub fn config(&self) -> &DdConfig {
        &self.config
    }

    pub fn fine(&self) -> &Arc<dyn GradientOracle> {
        &self.fine
    }

    fn solve_subdomain(&self, p: usize, ctx: &IterationContext<'_>, contract: ThetaContract, observer: &dyn Observer) -> Result<Option<Vec<f64>>> {
        let op = &self.ops.subdomains[p];
        let y0 = op.r.mul_vec(ctx.x);
        let mut wp = op.r.mul_vec(ctx.w);
        floor_weights(&mut wp);
        let box_p = subdomain_bounds(&self.ops, p, ctx.x, &y0, ctx.bounds)?;
        let g_init: Vec<f64> = op.indices.iter().map(|&i| ctx.g[i]).collect();
        let plain = SubdomainOracle::new(&*self.base, ctx.x, &op.indices, y0.clone(), self.counters[p].clone());
        let noisy;
        let oracle: &dyn GradientOracle = match &self.noise {
            Some(nz) if !nz.schedule.is_none() => {
                noisy = NoisyOracle::with_calls(plain, nz.schedule, nz.seed, SUBDOMAIN_STREAM_BASE + p as u64, self.calls[p].clone());
                &noisy
            }
            _ => &plain,
        };
        let outcome = run_subdomain(oracle, &box_p, ctx.tag.level, p, contract, self.config.subdomain_iters, g_init, y0.clone(), wp, &self.config.params, observer)?;
        if outcome.exit == ExitReason::NoGain {
            return Ok(None);
        }
        let correction: Vec<f64> = outcome.x.iter().zip(&y0).map(|(a, b)| a - b).collect();
        Ok(Some(op.p.mul_vec(&correction)))
    }

    /// Solves all subdomains in parallel and sums the prolongated corrections
    /// in ascending subdomain order. `None` when every subdomain hits nogain.
    pub fn decomposition_step(&self, ctx: &IterationContext<'_>, observer: &dyn Observer) -> Result<Option<Vec<f64>>> {
        let m = self.ops.num_subdomains();
        let kappa = if self.config.divide_kappa_1st {
            self.config.params.kappa_1st / m as f64
        } else {
            self.config.params.kappa_1st
        };
        let contract = ctx.contract(&self.config.params, kappa);
        let steps: Vec<Result<Option<Vec<f64>>>> = (0..m)
            .into_par_iter()
            .map(|p| self.solve_subdomain(p, ctx, contract, observer))
            .collect();
        let mut total: Option<Vec<f64>> = None;
        for step in steps {
            if let Some(s) = step? {
                let acc = total.get_or_insert_with(|| vec![0.0; s.len()]);
                acc.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
            }
        }
        Ok(total)
    }

    /// One DD cycle: a decomposition iteration followed by a Taylor iteration.
    pub fn cycle(&self, x: Vec<f64>, w: Vec<f64>, bounds: &BoundBox, observer: &dyn Observer) -> Result<LevelOutcome> {
        let schedule = |k: usize| {
            if k == 0 {
                IterationKind::Decomposition
            } else {
                IterationKind::Taylor
            }
        };
        let mut provider = |_kind: IterationKind, ctx: &IterationContext<'_>| self.decomposition_step(ctx, observer);
        run_level(
            LevelRun {
                tag: LevelTag::level(1),
                oracle: &*self.fine,
                bounds,
                is_top: true,
                contract: ThetaContract::TOP,
                budget: 2,
                initial_gradient: None,
                on_nogain: self.config.on_nogain,
            },
            x,
            w,
            &self.config.params,
            &schedule,
            &mut provider,
            observer,
        )
    }
}

impl crate::driver::CycleSolver for DdSolver {
    fn cycle(&self, x: Vec<f64>, w: Vec<f64>, bounds: &BoundBox, observer: &dyn Observer) -> Result<LevelOutcome> {
        DdSolver::cycle(self, x, w, bounds, observer)
    }
}

#[allow(clippy::too_many_arguments)]
fn run_subdomain(
    oracle: &dyn GradientOracle,
    bounds: &BoundBox,
    level: usize,
    p: usize,
    contract: ThetaContract,
    budget: usize,
    g_init: Vec<f64>,
    y0: Vec<f64>,
    w: Vec<f64>,
    params: &AlgorithmParams,
    observer: &dyn Observer,
) -> Result<LevelOutcome> {
    let taylor = |_k: usize| IterationKind::Taylor;
    let mut none = |_kind: IterationKind, _ctx: &IterationContext<'_>| Ok(None);
    run_level(
        LevelRun {
            tag: LevelTag::subdomain(level.saturating_sub(1), p),
            oracle,
            bounds,
            is_top: false,
            contract,
            budget,
            initial_gradient: Some(g_init),
            on_nogain: NoGainPolicy::Skip,
        },
        y0,
        w,
        params,
        &taylor,
        &mut none,
        observer,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::project_box;
    use crate::level::NoObserver;
    use crate::linalg::norm;
    use crate::oracle::FnOracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Mutex;

    const INF: f64 = f64::INFINITY;

    fn line(n: usize) -> NodeGrid {
        NodeGrid::interior(1, n + 1).unwrap()
    }

    #[test]
    fn single_subdomain() {
        let c = build_block_covering(&line(8), 1, 0).unwrap();
        assert_eq!(c.domain(0), &(0..8).collect::<Vec<_>>()[..]);
        assert_eq!(c.partition(0), c.domain(0));
    }

    #[test]
    fn even_split_and_overlap() {
        let c = build_block_covering(&line(8), 2, 0).unwrap();
        assert_eq!((c.domain(0), c.domain(1)), (&[0, 1, 2, 3][..], &[4, 5, 6, 7][..]));
        let c = build_block_covering(&line(8), 2, 1).unwrap();
        assert_eq!((c.domain(0), c.domain(1)), (&[0, 1, 2, 3, 4][..], &[3, 4, 5, 6, 7][..]));
        assert_eq!((c.partition(0), c.partition(1)), (&[0, 1, 2, 3][..], &[4, 5, 6, 7][..]));
    }

    #[test]
    fn too_many_subdomains_rejected() {
        assert!(matches!(build_block_covering(&line(4), 5, 0), Err(Error::InvalidCovering(_))));
    }

    #[test]
    fn grid_layers_are_node_rows() {
        let g = NodeGrid::interior(2, 8).unwrap();
        let c = build_block_covering(&g, 7, 0).unwrap();
        for p in 0..7 {
            assert_eq!(c.domain(p).len(), 7);
            let rows: Vec<usize> = c.domain(p).iter().map(|&d| g.multi_index(g.node_of(d))[1]).collect();
            assert!(rows.iter().all(|&r| r == rows[0]));
        }
    }

    #[test]
    fn invalid_coverings() {
        assert!(Covering::new(3, vec![vec![0, 1]], vec![vec![0, 1]]).is_err());
        assert!(Covering::new(2, vec![vec![0, 1], vec![1]], vec![vec![0, 1], vec![1]]).is_err());
        assert!(Covering::new(2, vec![vec![0], vec![1]], vec![vec![1], vec![0]]).is_err());
        assert!(Covering::new(2, vec![vec![0, 1], vec![]], vec![vec![0, 1], vec![]]).is_err());
    }

    fn overlapping() -> Covering {
        build_block_covering(&line(8), 2, 1).unwrap()
    }

    #[test]
    fn weights_are_inverse_multiplicity() {
        let ops = build_operators(&overlapping(), SchwarzVariant::Wras);
        // Index 3 sits in both subdomains.
        assert_eq!(ops.subdomains[0].p.get(3, 3), 0.5);
        assert_eq!(ops.subdomains[1].p.get(3, 0), 0.5);
        assert_eq!(ops.subdomains[0].p.get(2, 2), 1.0);
    }

    #[test]
    fn no_overlap_variants_coincide() {
        let c = build_block_covering(&line(8), 3, 0).unwrap();
        let reference = build_operators(&c, SchwarzVariant::As);
        for v in SchwarzVariant::ALL {
            let ops = build_operators(&c, v);
            assert_eq!(ops.subdomains, reference.subdomains);
            assert!(ops.sigma.iter().all(|&s| s == 1.0));
        }
    }

    #[test]
    fn additive_schwarz_sum_is_multiplicity() {
        let c = overlapping();
        let ops = build_operators(&c, SchwarzVariant::As);
        let theta = c.multiplicity();
        let mut sum = vec![vec![0.0; 8]; 8];
        for op in &ops.subdomains {
            let pr = op.p.matmul(&op.r).to_dense();
            for i in 0..8 {
                for j in 0..8 {
                    sum[i][j] += pr[i][j];
                }
            }
        }
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(sum[i][j], if i == j { theta[i] as f64 } else { 0.0 });
            }
        }
    }

    #[test]
    fn operator_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.gen_range(2..30);
            let m = rng.gen_range(1..=n);
            let c = build_block_covering(&line(n), m, rng.gen_range(0..4)).unwrap();
            for v in SchwarzVariant::ALL {
                let ops = build_operators(&c, v);
                let mut assembled_max: f64 = 0.0;
                for op in &ops.subdomains {
                    assert!(op.p.is_nonnegative() && op.r.is_nonnegative());
                    let mut col = vec![0; op.p.cols()];
                    op.p.triplets().for_each(|(_, j, _)| col[j] += 1);
                    assert!(col.iter().all(|&k| k <= 1));
                }
                let mut sums = vec![0.0; ops.dim()];
                for op in &ops.subdomains {
                    op.p.row_sums().iter().zip(sums.iter_mut()).for_each(|(a, b)| *b += a);
                }
                for (s, t) in ops.sigma.iter().zip(&sums) {
                    assert!((s - t).abs() < 1e-15);
                    assembled_max = assembled_max.max(*s);
                }
                let normalized = matches!(v, SchwarzVariant::Ras | SchwarzVariant::Wras | SchwarzVariant::Rash);
                if normalized {
                    assert_eq!(assembled_max, 1.0);
                }
            }
        }
    }

    #[test]
    fn restrict_bounds_examples() {
        let c = Covering::new(6, vec![vec![1, 4], vec![0, 2, 3, 5]], vec![vec![1, 4], vec![0, 2, 3, 5]]).unwrap();
        let ops = build_operators(&c, SchwarzVariant::As);
        let l: Vec<f64> = (0..6).map(|i| -(i as f64)).collect();
        let b = BoundBox::new(l, vec![INF; 6]).unwrap();
        assert_eq!(restrict_bounds(&ops.subdomains[0].r, &b).unwrap().lower(), &[-1.0, -4.0]);
        assert!(restrict_bounds(&ops.subdomains[1].r, &BoundBox::unbounded(6)).unwrap().is_unbounded());

        let ops = build_operators(&overlapping(), SchwarzVariant::Wash);
        let b = BoundBox::new(vec![-3.0; 8], vec![2.0; 8]).unwrap();
        let rb = restrict_bounds(&ops.subdomains[0].r, &b).unwrap();
        assert_eq!(rb.lower()[3], -1.5);
        assert_eq!(rb.lower()[2], -3.0);
        let x = vec![0.3; 8];
        let y0 = ops.subdomains[0].r.mul_vec(&x);
        let lb = subdomain_bounds(&ops, 0, &x, &y0, &b).unwrap();
        assert!((lb.lower()[3] - -1.5).abs() <= 1e-15 * 1.5);
    }

    fn random_case(rng: &mut ChaCha8Rng) -> (Covering, BoundBox, Vec<f64>) {
        let n = rng.gen_range(2..24);
        let m = rng.gen_range(1..=n);
        let c = build_block_covering(&line(n), m, rng.gen_range(0..4)).unwrap();
        let mut lo = Vec::new();
        let mut up = Vec::new();
        let mut x = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.gen_range(-5.0..5.0);
            let b = a + rng.gen_range(0.0..3.0);
            lo.push(if rng.gen_bool(0.2) { -INF } else { a });
            up.push(if rng.gen_bool(0.2) { INF } else { b });
            x.push(rng.gen_range(a..=b));
        }
        (c, BoundBox::new(lo, up).unwrap(), x)
    }

    #[test]
    fn bounds_coincide_for_unit_row_sum_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let (c, b, x) = random_case(&mut rng);
            for v in [SchwarzVariant::Ras, SchwarzVariant::Wras, SchwarzVariant::Rash] {
                let ops = build_operators(&c, v);
                for p in 0..ops.num_subdomains() {
                    let op = &ops.subdomains[p];
                    let y0 = op.r.mul_vec(&x);
                    assert_eq!(subdomain_bounds(&ops, p, &x, &y0, &b).unwrap(), restrict_bounds(&op.r, &b).unwrap());
                }
            }
        }
    }

    #[test]
    fn plain_additive_schwarz_bounds_differ_with_overlap() {
        // With overlap the assembled row sums exceed one, so the subdomain box
        // from the feasibility-preserving construction is strictly smaller than R l.
        let c = overlapping();
        let ops = build_operators(&c, SchwarzVariant::As);
        let b = BoundBox::new(vec![-1.0; 8], vec![1.0; 8]).unwrap();
        let x = vec![0.0; 8];
        let y0 = ops.subdomains[0].r.mul_vec(&x);
        let lb = subdomain_bounds(&ops, 0, &x, &y0, &b).unwrap();
        let rb = restrict_bounds(&ops.subdomains[0].r, &b).unwrap();
        assert_eq!(lb.lower()[3], -0.5);
        assert_eq!(rb.lower()[3], -1.0);
        assert_eq!(lb.lower()[0], rb.lower()[0]);
    }

    fn quadratic(n: usize, coupling: f64) -> (Arc<FnOracle>, Vec<Vec<f64>>) {
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = 2.0 + i as f64 * 0.1;
            if i + 1 < n {
                a[i][i + 1] = -coupling;
                a[i + 1][i] = -coupling;
            }
        }
        let (a1, a2) = (a.clone(), a.clone());
        let o = FnOracle::new(n, move |x, g| {
            for i in 0..x.len() {
                g[i] = a1[i].iter().zip(x).map(|(p, q)| p * q).sum::<f64>() - 1.0;
            }
        })
        .with_hess_vec(move |_x, v, out| {
            for i in 0..v.len() {
                out[i] = a2[i].iter().zip(v).map(|(p, q)| p * q).sum();
            }
        });
        (Arc::new(o), a)
    }

    #[test]
    fn subdomain_gradient_sees_frozen_complement() {
        let (o, a) = quadratic(6, 0.7);
        let x: Vec<f64> = (0..6).map(|i| 0.1 * i as f64).collect();
        let idx = vec![2, 3];
        let sub = SubdomainOracle::new(&*o, &x, &idx, vec![x[2], x[3]], EvalCounter::new());
        let y = [0.5, -0.5];
        let g = sub.gradient_vec(&y);
        let mut z = x.clone();
        z[2] = 0.5;
        z[3] = -0.5;
        for (k, &i) in idx.iter().enumerate() {
            let expect: f64 = a[i].iter().zip(&z).map(|(p, q)| p * q).sum::<f64>() - 1.0;
            assert!((g[k] - expect).abs() < 1e-14);
        }
        // Finite differences of the spliced gradient's potential.
        let h = 1e-6;
        let mut hv = [0.0; 2];
        sub.hess_vec(&y, &[1.0, 0.0], &mut hv);
        let gp = sub.gradient_vec(&[y[0] + h, y[1]]);
        let gm = sub.gradient_vec(&[y[0] - h, y[1]]);
        for k in 0..2 {
            assert!(((gp[k] - gm[k]) / (2.0 * h) - hv[k]).abs() < 1e-6);
        }
        assert_eq!(sub.counter.get(), 4);
    }

    #[test]
    fn full_domain_subdomain_is_the_objective() {
        let (o, _) = quadratic(4, 0.3);
        let x = vec![0.2; 4];
        let idx: Vec<usize> = (0..4).collect();
        let sub = SubdomainOracle::new(&*o, &x, &idx, x.clone(), EvalCounter::new());
        let y = [0.1, 0.9, -0.3, 0.0];
        assert_eq!(sub.gradient_vec(&y), o.gradient_vec(&y));
    }

    fn dd(o: Arc<FnOracle>, c: &Covering, v: SchwarzVariant) -> DdSolver {
        let ops = build_operators(c, v);
        let counters = (0..c.num_subdomains()).map(|_| EvalCounter::new()).collect();
        DdSolver::new(o.clone(), o, ops, counters, None, DdConfig::default()).unwrap()
    }

    fn context_parts(o: &FnOracle, x: &[f64], b: &BoundBox) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let g = o.gradient_vec(x);
        let d = crate::bounds::criticality_d(x, &g, b).unwrap();
        let (w, delta) = crate::adagb2::update_weights(&vec![10.0; x.len()], &d);
        let s_l = crate::adagb2::linear_step(x, &g, &delta, b);
        (g, d, w, delta, s_l)
    }

    fn with_context<R>(o: &FnOracle, x: &[f64], b: &BoundBox, f: impl FnOnce(&IterationContext<'_>) -> R) -> R {
        let (g, d, w, delta, s_l) = context_parts(o, x, b);
        let ctx = IterationContext {
            tag: LevelTag::level(1),
            k: 0,
            x,
            g: &g,
            d: &d,
            w: &w,
            delta: &delta,
            s_l: &s_l,
            bounds: b,
            first_order: crate::adagb2::first_order_measure(&d, &delta),
        };
        f(&ctx)
    }

    #[test]
    fn separable_objective_gives_concatenated_solves() {
        let (o, _) = quadratic(8, 0.0);
        let c = build_block_covering(&line(8), 2, 0).unwrap();
        let solver = dd(o.clone(), &c, SchwarzVariant::Wras);
        let b = BoundBox::new(vec![-1.0; 8], vec![0.3; 8]).unwrap();
        let x = vec![0.0; 8];
        let step = with_context(&o, &x, &b, |ctx| solver.decomposition_step(ctx, &NoObserver)).unwrap().unwrap();
        // Independent solves of each half with the same contract.
        let contract = with_context(&o, &x, &b, |ctx| ctx.contract(&AlgorithmParams::default(), 0.95 / 2.0));
        let (g, _, w, _, _) = context_parts(&o, &x, &b);
        let mut expected = Vec::new();
        for p in 0..2 {
            let idx = c.domain(p).to_vec();
            let local = SubdomainOracle::new(&*o, &x, &idx, vec![0.0; 4], EvalCounter::new());
            let bp = b.select(&idx);
            let gi: Vec<f64> = idx.iter().map(|&i| g[i]).collect();
            let wi: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
            let out = run_subdomain(&local, &bp, 1, p, contract, 10, gi, vec![0.0; 4], wi, &AlgorithmParams::default(), &NoObserver).unwrap();
            expected.extend(out.x);
        }
        assert_eq!(step, expected);
    }

    #[test]
    fn single_additive_subdomain_matches_identity_descent() {
        let (o, _) = quadratic(5, 0.4);
        let c = build_block_covering(&line(5), 1, 0).unwrap();
        let solver = DdSolver::new(
            o.clone(),
            o.clone(),
            build_operators(&c, SchwarzVariant::As),
            vec![EvalCounter::new()],
            None,
            DdConfig {
                divide_kappa_1st: false,
                ..Default::default()
            },
        )
        .unwrap();
        let b = BoundBox::new(vec![-0.2; 5], vec![0.25; 5]).unwrap();
        let x = vec![0.1; 5];
        let step = with_context(&o, &x, &b, |ctx| solver.decomposition_step(ctx, &NoObserver)).unwrap().unwrap();
        // A lower level with identity transfers: same objective, same bounds.
        let (g, _, w, _, _) = context_parts(&o, &x, &b);
        let contract = with_context(&o, &x, &b, |ctx| ctx.contract(&AlgorithmParams::default(), 0.95));
        let out = run_subdomain(&*o, &b, 1, 0, contract, 10, g, x.clone(), w, &AlgorithmParams::default(), &NoObserver).unwrap();
        let expected: Vec<f64> = out.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        assert_eq!(step, expected);
    }

    #[test]
    fn all_nogain_gives_no_step() {
        let (o, _) = quadratic(6, 0.2);
        let c = build_block_covering(&line(6), 3, 1).unwrap();
        let solver = dd(o.clone(), &c, SchwarzVariant::Ras);
        let b = BoundBox::unbounded(6);
        let x = vec![0.0; 6];
        let (g, d, w, delta, s_l) = context_parts(&o, &x, &b);
        let ctx = IterationContext {
            tag: LevelTag::level(1),
            k: 0,
            x: &x,
            g: &g,
            d: &d,
            w: &w,
            delta: &delta,
            s_l: &s_l,
            bounds: &b,
            // Inflated threshold: no subdomain can meet it.
            first_order: 1e6,
        };
        assert_eq!(solver.decomposition_step(&ctx, &NoObserver).unwrap(), None);
        assert!(solver.counters.iter().all(|c| c.get() == 0));
    }

    struct Feasibility(Mutex<f64>);

    impl Observer for Feasibility {
        fn accepted(&self, ev: &crate::level::AcceptedEvent<'_>) {
            let v = ev.bounds.violation(ev.x);
            let mut m = self.0.lock().unwrap();
            *m = m.max(v);
        }
    }

    #[test]
    fn dd_cycles_stay_feasible_and_converge() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for v in SchwarzVariant::ALL {
            let (o, _) = quadratic(12, 0.9);
            let c = build_block_covering(&line(12), 3, 2).unwrap();
            let solver = dd(o.clone(), &c, v);
            let up: Vec<f64> = (0..12).map(|_| rng.gen_range(0.2..0.8)).collect();
            let b = BoundBox::new(vec![-INF; 12], up).unwrap();
            let obs = Feasibility(Mutex::new(0.0));
            let mut x = project_box(&[0.0; 12], &b).unwrap();
            let mut w = vec![1e-4; 12];
            for _ in 0..200 {
                let out = solver.cycle(x, w, &b, &obs).unwrap();
                x = out.x;
                w = out.w;
            }
            assert!(*obs.0.lock().unwrap() <= 1e-12, "{v:?}");
            let g = o.gradient_vec(&x);
            let xi = crate::bounds::criticality_xi(&x, &g, &b).unwrap();
            assert!(xi < 1e-6, "{v:?}: {xi}");
            assert!(norm(&x) > 0.0);
        }
    }

    #[test]
    fn reduction_is_deterministic() {
        let (o, _) = quadratic(16, 0.8);
        let c = build_block_covering(&line(16), 4, 2).unwrap();
        let solver = dd(o.clone(), &c, SchwarzVariant::Wras);
        let b = BoundBox::unbounded(16);
        let run = || {
            let mut x = vec![0.0; 16];
            let mut w = vec![1e-4; 16];
            for _ in 0..5 {
                let out = solver.cycle(x, w, &b, &NoObserver).unwrap();
                x = out.x;
                w = out.w;
            }
            x
        };
        let a = run();
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
        assert_eq!(a, single);
    }
}
