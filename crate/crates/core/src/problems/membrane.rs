//! Membrane over an obstacle: `1/2 ∫ |∇z|^2 + ∫ z` on the unit square with
//! bilinear elements, `z = 0` on the left edge and a circular lower bound on
//! the right edge.

use crate::bounds::BoundBox;
use crate::error::Result;
use crate::grid::NodeGrid;
use crate::problems::QuadraticProblem;
use crate::sparse::CsrMatrix;

/// Element stiffness of the Laplacian for a square bilinear element, corners
/// counter-clockwise from the lower left. Independent of the mesh size in 2D.
const Q1_STIFFNESS: [[f64; 4]; 4] = [
    [4.0, -1.0, -2.0, -1.0],
    [-1.0, 4.0, -1.0, -2.0],
    [-2.0, -1.0, 4.0, -1.0],
    [-1.0, -2.0, -1.0, 4.0],
];

/// Lower bound on the right edge `x1 = 1`.
pub fn membrane_obstacle(x2: f64) -> f64 {
    let c = (x2 - 0.5).powi(2) - 1.0 + 1.3 * 1.3;
    (-2.6 + (2.6f64 * 2.6 - 4.0 * c).sqrt()) / 2.0
}

pub fn membrane(cells: usize) -> Result<QuadraticProblem> {
    let grid = NodeGrid::new(2, cells, |ix| ix[0] > 0)?;
    let side = cells + 1;
    let h = grid.h();
    let mut t = Vec::with_capacity(16 * cells * cells);
    let mut load = vec![0.0; grid.num_nodes()];
    for j in 0..cells {
        for i in 0..cells {
            let corners = [
                j * side + i,
                j * side + i + 1,
                (j + 1) * side + i + 1,
                (j + 1) * side + i,
            ];
            for (a, &na) in corners.iter().enumerate() {
                load[na] += h * h / 4.0;
                for (b, &nb) in corners.iter().enumerate() {
                    t.push((na, nb, Q1_STIFFNESS[a][b] / 6.0));
                }
            }
        }
    }
    let k = CsrMatrix::from_triplets(grid.num_nodes(), grid.num_nodes(), &t);
    let n = grid.num_dofs();
    let mut lower = vec![f64::NEG_INFINITY; n];
    for (dof, l) in lower.iter_mut().enumerate() {
        let ix = grid.multi_index(grid.node_of(dof));
        if ix[0] == cells {
            *l = membrane_obstacle(ix[1] as f64 * h);
        }
    }
    let bounds = BoundBox::new(lower, vec![f64::INFINITY; n])?;
    let fixed = vec![0.0; grid.num_nodes()];
    QuadraticProblem::eliminate("membrane", grid, &k, &load, 0.0, &fixed, bounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use crate::problems::checks::{gradient_matches_fd, hess_vec_matches_fd};
    use crate::problems::Problem;

    #[test]
    fn obstacle_at_mid_edge() {
        assert!((membrane_obstacle(0.5) - -0.3).abs() < 1e-15);
    }

    #[test]
    fn bounds_only_on_right_edge() {
        let p = membrane(8).unwrap();
        let g = p.grid().unwrap();
        assert_eq!(p.dim(), 8 * 9);
        for dof in 0..p.dim() {
            let ix = g.multi_index(g.node_of(dof));
            assert_eq!(p.bounds().lower()[dof].is_finite(), ix[0] == 8);
            assert_eq!(p.bounds().upper()[dof], f64::INFINITY);
        }
        let mid = g.dof_of(g.node_index(&[8, 4])).unwrap();
        assert!((p.bounds().lower()[mid] - -0.3).abs() < 1e-15);
    }

    #[test]
    fn zero_field() {
        let p = membrane(8).unwrap();
        let z = vec![0.0; p.dim()];
        assert_eq!(p.objective(&z), 0.0);
        let mut g = vec![0.0; p.dim()];
        p.gradient(&z, &mut g);
        assert_eq!(g, p.linear_term());
    }

    #[test]
    fn load_integrates_area() {
        // b^T 1 is the integral of 1 over the cells touching free nodes; with
        // only the left column removed that is everything minus the left half-cells.
        let p = membrane(8).unwrap();
        let total: f64 = p.linear_term().iter().sum();
        let h = 1.0 / 8.0;
        assert!((total - (1.0 - 8.0 * h * h / 2.0)).abs() < 1e-14);
    }

    #[test]
    fn gradient_and_hess_vec_consistent() {
        let p = membrane(8).unwrap();
        gradient_matches_fd(&p, 100, 1);
        hess_vec_matches_fd(&p, 10, 2);
    }

    #[test]
    fn convex_curvature() {
        let p = membrane(8).unwrap();
        let n = p.dim();
        for s in 0..20 {
            let v: Vec<f64> = (0..n).map(|i| ((i * 7 + s * 13) % 11) as f64 - 5.0).collect();
            let mut hv = vec![0.0; n];
            p.hess_vec(&v, &v, &mut hv);
            assert!(dot(&v, &hv) >= 0.0);
        }
    }
}
