//! Minimal-surface benchmark on linear triangles (two per cell, split along
//! the main diagonal) with sinusoidal Dirichlet data and an obstacle/ceiling
//! pair. [`minsurf`] uses the integrand `1 + |∇z|^2`; [`minsurf_classical`]
//! uses `sqrt(1 + |∇z|^2)`.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::bounds::BoundBox;
use crate::error::{Error, Result};
use crate::grid::NodeGrid;
use crate::problems::{Problem, QuadraticProblem};
use crate::sparse::CsrMatrix;

pub fn minsurf_boundary(x1: f64, x2: f64) -> f64 {
    use std::f64::consts::PI;
    if x2 == 0.0 || x2 == 1.0 {
        -0.3 * (2.0 * PI * x1).sin()
    } else if x1 == 0.0 {
        -0.3 * (2.0 * PI * x2).sin()
    } else {
        0.3 * (2.0 * PI * x2).sin()
    }
}

pub fn minsurf_lower(x1: f64, x2: f64) -> f64 {
    0.25 - 8.0 * (x1 - 0.7).powi(2) - 8.0 * (x2 - 0.7).powi(2)
}

pub fn minsurf_upper(x1: f64, x2: f64) -> f64 {
    -(0.4 - 8.0 * (x1 - 0.3).powi(2) - 8.0 * (x2 - 0.3).powi(2))
}

/// One P1 triangle: node ids, area and the constant basis gradients.
#[derive(Debug, Clone)]
struct Triangle {
    nodes: [usize; 3],
    area: f64,
    grads: [[f64; 2]; 3],
}

fn triangles(grid: &NodeGrid) -> Vec<Triangle> {
    let cells = grid.cells();
    let side = cells + 1;
    let mut out = Vec::with_capacity(2 * cells * cells);
    for j in 0..cells {
        for i in 0..cells {
            let n00 = j * side + i;
            let n10 = n00 + 1;
            let n11 = n10 + side;
            let n01 = n00 + side;
            for nodes in [[n00, n10, n11], [n00, n11, n01]] {
                let p: Vec<Vec<f64>> = nodes.iter().map(|&n| grid.coords(n)).collect();
                let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
                let mut grads = [[0.0; 2]; 3];
                for a in 0..3 {
                    let (b, c) = ((a + 1) % 3, (a + 2) % 3);
                    grads[a] = [(p[b][1] - p[c][1]) / det, (p[c][0] - p[b][0]) / det];
                }
                out.push(Triangle {
                    nodes,
                    area: det.abs() / 2.0,
                    grads,
                });
            }
        }
    }
    out
}

struct Setup {
    grid: NodeGrid,
    fixed: Vec<f64>,
    bounds: BoundBox,
}

fn setup(cells: usize) -> Result<Setup> {
    let grid = NodeGrid::interior(2, cells)?;
    let fixed: Vec<f64> = (0..grid.num_nodes())
        .map(|node| match grid.dof_of(node) {
            Some(_) => 0.0,
            None => {
                let c = grid.coords(node);
                minsurf_boundary(c[0], c[1])
            }
        })
        .collect();
    let n = grid.num_dofs();
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for dof in 0..n {
        let c = grid.dof_coords(dof);
        let (l, u) = (minsurf_lower(c[0], c[1]), minsurf_upper(c[0], c[1]));
        if l > u {
            return Err(Error::InvalidBounds {
                index: dof,
                lower: l,
                upper: u,
            });
        }
        lower.push(l);
        upper.push(u);
    }
    Ok(Setup {
        grid,
        fixed,
        bounds: BoundBox::new(lower, upper)?,
    })
}

/// `∫ 1 + |∇z|^2`, a quadratic in the free node values.
pub fn minsurf(cells: usize) -> Result<QuadraticProblem> {
    let Setup { grid, fixed, bounds } = setup(cells)?;
    let mut t = Vec::new();
    for tri in triangles(&grid) {
        for a in 0..3 {
            for b in 0..3 {
                let kab = tri.area * (tri.grads[a][0] * tri.grads[b][0] + tri.grads[a][1] * tri.grads[b][1]);
                // Energy z^T K z = 1/2 z^T (2K) z.
                t.push((tri.nodes[a], tri.nodes[b], 2.0 * kab));
            }
        }
    }
    let a = CsrMatrix::from_triplets(grid.num_nodes(), grid.num_nodes(), &t);
    let load = vec![0.0; grid.num_nodes()];
    QuadraticProblem::eliminate("minsurf", grid, &a, &load, 1.0, &fixed, bounds)
}

/// `∫ sqrt(1 + |∇z|^2)`, exact on each triangle since `∇z` is constant there.
pub struct MinSurfClassical {
    grid: NodeGrid,
    fixed: Vec<f64>,
    bounds: BoundBox,
    tris: Vec<Triangle>,
    objective_calls: AtomicU64,
}

pub fn minsurf_classical(cells: usize) -> Result<MinSurfClassical> {
    let Setup { grid, fixed, bounds } = setup(cells)?;
    let tris = triangles(&grid);
    Ok(MinSurfClassical {
        grid,
        fixed,
        bounds,
        tris,
        objective_calls: AtomicU64::new(0),
    })
}

impl MinSurfClassical {
    fn nodal(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.fixed.clone();
        for (dof, v) in x.iter().enumerate() {
            z[self.grid.node_of(dof)] = *v;
        }
        z
    }

    fn slope(tri: &Triangle, z: &[f64]) -> [f64; 2] {
        let mut p = [0.0; 2];
        for a in 0..3 {
            p[0] += tri.grads[a][0] * z[tri.nodes[a]];
            p[1] += tri.grads[a][1] * z[tri.nodes[a]];
        }
        p
    }
}

impl Problem for MinSurfClassical {
    fn name(&self) -> &str {
        "minsurf-classical"
    }

    fn dim(&self) -> usize {
        self.grid.num_dofs()
    }

    fn bounds(&self) -> &BoundBox {
        &self.bounds
    }

    fn grid(&self) -> Option<&NodeGrid> {
        Some(&self.grid)
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.objective_calls.fetch_add(1, Ordering::Relaxed);
        let z = self.nodal(x);
        self.tris
            .iter()
            .map(|t| {
                let p = Self::slope(t, &z);
                t.area * (1.0 + p[0] * p[0] + p[1] * p[1]).sqrt()
            })
            .sum()
    }

    fn objective_calls(&self) -> u64 {
        self.objective_calls.load(Ordering::Relaxed)
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let z = self.nodal(x);
        g.iter_mut().for_each(|v| *v = 0.0);
        for t in &self.tris {
            let p = Self::slope(t, &z);
            let s = (1.0 + p[0] * p[0] + p[1] * p[1]).sqrt();
            for a in 0..3 {
                if let Some(dof) = self.grid.dof_of(t.nodes[a]) {
                    g[dof] += t.area * (p[0] * t.grads[a][0] + p[1] * t.grads[a][1]) / s;
                }
            }
        }
    }

    fn hess_vec(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        let z = self.nodal(x);
        let mut vn = vec![0.0; self.grid.num_nodes()];
        for (dof, vi) in v.iter().enumerate() {
            vn[self.grid.node_of(dof)] = *vi;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for t in &self.tris {
            let p = Self::slope(t, &z);
            let q = Self::slope(t, &vn);
            let s2 = 1.0 + p[0] * p[0] + p[1] * p[1];
            let s = s2.sqrt();
            let pq = p[0] * q[0] + p[1] * q[1];
            // (I / s - p p^T / s^3) q
            let m = [q[0] / s - p[0] * pq / (s2 * s), q[1] / s - p[1] * pq / (s2 * s)];
            for a in 0..3 {
                if let Some(dof) = self.grid.dof_of(t.nodes[a]) {
                    out[dof] += t.area * (m[0] * t.grads[a][0] + m[1] * t.grads[a][1]);
                }
            }
        }
    }
}
