//! The dual pair of discrete operators: `∂_h` approximates `b·∇` from nodes to
//! cell centres and `∂_{h,*}` approximates `∇·(b ·)` from cell centres back
//! to interior nodes. For cell data vanishing on the ghost ring the two are
//! exactly anti-adjoint, which is what the decomposition relies on.

use thiserror::Error;

use crate::grid::{CellField, CellVectorField, Grid, NodeField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("anisotropy direction vanishes at cell ({i}, {j})")]
    ZeroDirection { i: isize, j: isize },
    #[error("node weight {value} is not positive at ({i}, {j})")]
    NonPositiveWeight { i: isize, j: isize, value: f64 },
    #[error("field lives on a different grid")]
    GridMismatch,
}

/// Grid plus the sampled anisotropy direction.
#[derive(Debug, Clone)]
pub struct OperatorContext {
    grid: Grid,
    b: CellVectorField,
}

impl OperatorContext {
    pub fn new(b: CellVectorField) -> Result<Self, OperatorError> {
        let grid = *b.grid();
        for (i, j) in grid.cells() {
            let [bx, by] = b[(i, j)];
            if bx == 0.0 && by == 0.0 {
                return Err(OperatorError::ZeroDirection { i, j });
            }
        }
        Ok(Self { grid, b })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn b(&self) -> &CellVectorField {
        &self.b
    }

    /// `∂_h θ` on every cell of `Ī*`. Reads ghost nodes.
    pub fn dh(&self, theta: &NodeField) -> CellField {
        let g = &self.grid;
        let (rx, ry) = (0.5 / g.dx(), 0.5 / g.dy());
        CellField::from_fn(*g, |i, j| self.dh_at(theta, i, j, rx, ry))
    }

    /// `∂_h θ` on `I*` only; ghost cells are left at zero and ghost nodes are
    /// never read.
    pub fn dh_interior(&self, theta: &NodeField) -> CellField {
        let g = &self.grid;
        let (rx, ry) = (0.5 / g.dx(), 0.5 / g.dy());
        let mut out = CellField::zeros(*g);
        for (i, j) in g.interior_cells() {
            out[(i, j)] = self.dh_at(theta, i, j, rx, ry);
        }
        out
    }

    #[inline]
    fn dh_at(&self, t: &NodeField, i: isize, j: isize, rx: f64, ry: f64) -> f64 {
        let [bx, by] = self.b[(i, j)];
        let ddx = (t[(i + 1, j + 1)] - t[(i, j + 1)] + t[(i + 1, j)] - t[(i, j)]) * rx;
        let ddy = (t[(i + 1, j + 1)] - t[(i + 1, j)] + t[(i, j + 1)] - t[(i, j)]) * ry;
        bx * ddx + by * ddy
    }

    /// `∂_{h,*} χ` on the interior nodes `I`; ghost nodes of the result are 0.
    pub fn dh_star(&self, chi: &CellField) -> NodeField {
        let g = &self.grid;
        let (rx, ry) = (0.5 / g.dx(), 0.5 / g.dy());
        let mut out = NodeField::zeros(*g);
        for (i, j) in g.interior_nodes() {
            let fx = |a: isize, c: isize| self.b[(a, c)][0] * chi[(a, c)];
            let fy = |a: isize, c: isize| self.b[(a, c)][1] * chi[(a, c)];
            let sx = fx(i, j) + fx(i, j - 1) - fx(i - 1, j) - fx(i - 1, j - 1);
            let sy = fy(i, j) + fy(i - 1, j) - fy(i, j - 1) - fy(i - 1, j - 1);
            out[(i, j)] = sx * rx + sy * ry;
        }
        out
    }

    /// `−∂_h(w_n ∂_{h,*}(w_c χ))` on `I*`, with `χ` taken as zero on the
    /// ghost ring whatever it holds there.
    pub fn compose(&self, chi: &CellField, cell_w: &CellField, node_w: &NodeField) -> CellField {
        let g = &self.grid;
        let mut weighted = CellField::zeros(*g);
        for (i, j) in g.interior_cells() {
            weighted[(i, j)] = cell_w[(i, j)] * chi[(i, j)];
        }
        let mut div = self.dh_star(&weighted);
        for (i, j) in g.interior_nodes() {
            div[(i, j)] *= node_w[(i, j)];
        }
        self.dh_interior(&div).map(|v| -v)
    }

    /// `Σ_{Ī*} (∂_h θ) χ ΔxΔy + Σ_I θ (∂_{h,*} χ) ΔxΔy`; vanishes to rounding
    /// when `χ` is zero on the ghost ring.
    pub fn duality_defect(&self, theta: &NodeField, chi: &CellField) -> f64 {
        let g = &self.grid;
        let grad = self.dh(theta);
        let div = self.dh_star(chi);
        let cells: f64 = g.cells().map(|c| grad[c] * chi[c]).sum();
        let nodes: f64 = g.interior_nodes().map(|n| theta[n] * div[n]).sum();
        (cells + nodes) * g.dx() * g.dy()
    }
}

/// Fails if any node weight on `I` is not strictly positive.
pub fn check_node_weight(w: &NodeField) -> Result<(), OperatorError> {
    for (i, j) in w.grid().interior_nodes() {
        let value = w[(i, j)];
        if !(value > 0.0) {
            return Err(OperatorError::NonPositiveWeight { i, j, value });
        }
    }
    Ok(())
}
