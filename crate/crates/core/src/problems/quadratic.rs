use std::sync::atomic::{AtomicU64, Ordering};

use crate::bounds::BoundBox;
use crate::error::{check_len, Result};
use crate::grid::NodeGrid;
use crate::problems::Problem;
use crate::sparse::CsrMatrix;

/// `f(x) = 1/2 x^T H x + b^T x + c` on a box.
pub struct QuadraticProblem {
    name: String,
    h: CsrMatrix,
    b: Vec<f64>,
    c: f64,
    bounds: BoundBox,
    grid: Option<NodeGrid>,
    objective_calls: AtomicU64,
}

impl QuadraticProblem {
    pub fn new(name: impl Into<String>, h: CsrMatrix, b: Vec<f64>, c: f64, bounds: BoundBox) -> Result<Self> {
        check_len(h.rows(), h.cols())?;
        check_len(h.rows(), b.len())?;
        check_len(h.rows(), bounds.dim())?;
        Ok(Self {
            name: name.into(),
            h,
            b,
            c,
            bounds,
            grid: None,
            objective_calls: AtomicU64::new(0),
        })
    }

    pub fn with_grid(mut self, grid: NodeGrid) -> Self {
        self.grid = Some(grid);
        self
    }

    pub fn hessian(&self) -> &CsrMatrix {
        &self.h
    }

    pub fn linear_term(&self) -> &[f64] {
        &self.b
    }

    /// Energy over all grid nodes, `1/2 z^T A z + a^T z + c0`, restricted to
    /// the free nodes with the others fixed at `fixed[node]`.
    pub(crate) fn eliminate(
        name: &str,
        grid: NodeGrid,
        a_full: &CsrMatrix,
        load_full: &[f64],
        c0: f64,
        fixed: &[f64],
        bounds: BoundBox,
    ) -> Result<Self> {
        let n = grid.num_dofs();
        let mut t = Vec::new();
        let mut b = vec![0.0; n];
        let mut c = c0;
        for node in 0..grid.num_nodes() {
            match grid.dof_of(node) {
                Some(i) => {
                    b[i] += load_full[node];
                    for (m, v) in a_full.row(node) {
                        match grid.dof_of(m) {
                            Some(j) => t.push((i, j, v)),
                            None => b[i] += v * fixed[m],
                        }
                    }
                }
                None => {
                    c += load_full[node] * fixed[node];
                    for (m, v) in a_full.row(node) {
                        if grid.dof_of(m).is_none() {
                            c += 0.5 * fixed[node] * v * fixed[m];
                        }
                    }
                }
            }
        }
        let h = CsrMatrix::from_triplets(n, n, &t);
        Ok(Self::new(name, h, b, c, bounds)?.with_grid(grid))
    }
}

impl Problem for QuadraticProblem {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.b.len()
    }

    fn bounds(&self) -> &BoundBox {
        &self.bounds
    }

    fn grid(&self) -> Option<&NodeGrid> {
        self.grid.as_ref()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.objective_calls.fetch_add(1, Ordering::Relaxed);
        let hx = self.h.mul_vec(x);
        x.iter()
            .zip(&hx)
            .zip(&self.b)
            .map(|((xi, hi), bi)| 0.5 * xi * hi + bi * xi)
            .sum::<f64>()
            + self.c
    }

    fn objective_calls(&self) -> u64 {
        self.objective_calls.load(Ordering::Relaxed)
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = self.h.mul_vec_row(i, x) + self.b[i];
        }
    }

    fn gradient_rows(&self, x: &[f64], rows: &[usize], out: &mut [f64]) {
        for (o, &i) in out.iter_mut().zip(rows) {
            *o = self.h.mul_vec_row(i, x) + self.b[i];
        }
    }

    fn hess_vec(&self, _x: &[f64], v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.h.mul_vec_row(i, v);
        }
    }
}
