//! Uniform tensor node grids on the unit interval or square, with a subset of
//! nodes selected as free degrees of freedom (the rest carry Dirichlet data).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NodeGrid {
    dim: usize,
    cells: usize,
    dof_to_node: Vec<usize>,
    node_to_dof: Vec<Option<usize>>,
}

impl NodeGrid {
    /// Grid with the free nodes chosen by `is_free(multi_index)`. Multi-indices
    /// have `dim` entries in `0..=cells`; the first entry varies fastest.
    pub fn new(dim: usize, cells: usize, is_free: impl Fn(&[usize]) -> bool) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Config(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if cells == 0 {
            return Err(Error::Config("grid needs at least one cell".into()));
        }
        let per_side = cells + 1;
        let total = per_side.pow(dim as u32);
        let mut dof_to_node = Vec::new();
        let mut node_to_dof = vec![None; total];
        let mut idx = vec![0usize; dim];
        for node in 0..total {
            let mut rem = node;
            for slot in idx.iter_mut() {
                *slot = rem % per_side;
                rem /= per_side;
            }
            if is_free(&idx) {
                node_to_dof[node] = Some(dof_to_node.len());
                dof_to_node.push(node);
            }
        }
        Ok(Self {
            dim,
            cells,
            dof_to_node,
            node_to_dof,
        })
    }

    /// All nodes off the boundary are free.
    pub fn interior(dim: usize, cells: usize) -> Result<Self> {
        Self::new(dim, cells, |ix| ix.iter().all(|&i| i > 0 && i < cells))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn h(&self) -> f64 {
        1.0 / self.cells as f64
    }

    pub fn nodes_per_side(&self) -> usize {
        self.cells + 1
    }

    pub fn num_nodes(&self) -> usize {
        self.node_to_dof.len()
    }

    pub fn num_dofs(&self) -> usize {
        self.dof_to_node.len()
    }

    pub fn node_index(&self, multi: &[usize]) -> usize {
        let per_side = self.nodes_per_side();
        multi.iter().rev().fold(0, |acc, &i| acc * per_side + i)
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        let per_side = self.nodes_per_side();
        let mut rem = node;
        (0..self.dim)
            .map(|_| {
                let i = rem % per_side;
                rem /= per_side;
                i
            })
            .collect()
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        let h = self.h();
        self.multi_index(node).iter().map(|&i| i as f64 * h).collect()
    }

    pub fn dof_of(&self, node: usize) -> Option<usize> {
        self.node_to_dof[node]
    }

    pub fn node_of(&self, dof: usize) -> usize {
        self.dof_to_node[dof]
    }

    pub fn dof_coords(&self, dof: usize) -> Vec<f64> {
        self.coords(self.dof_to_node[dof])
    }

    /// Same free-node rule on a grid with half as many cells per side:
    /// a coarse node is free when its coincident fine node is.
    pub fn coarsen(&self) -> Result<NodeGrid> {
        if !self.cells.is_multiple_of(2) {
            return Err(Error::NonNestedGrids {
                fine: self.cells,
                coarse: self.cells / 2,
            });
        }
        let fine_side = self.nodes_per_side();
        NodeGrid::new(self.dim, self.cells / 2, |ix| {
            let node = ix.iter().rev().fold(0, |acc, &i| acc * fine_side + 2 * i);
            self.node_to_dof[node].is_some()
        })
    }
}
