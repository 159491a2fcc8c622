//! Uniform Cartesian mesh with one ghost layer, plus the node and cell field
//! containers every other module works with.
//!
//! Nodes are indexed `(i, j)` with `i ∈ {-1, …, N_x+1}` and `j ∈ {-1, …, N_y+1}`;
//! the interior set `I` is `{0, …, N_x} × {0, …, N_y}`. Cells are indexed by
//! their lower-left node: cell `(i, j)` is centred at `(x_{i+1/2}, y_{j+1/2})`
//! with `i ∈ {-1, …, N_x}`. The interior cell set `I*` is
//! `{0, …, N_x-1} × {0, …, N_y-1}` and the remaining cells form the ghost ring.
//!
//! With the default [`NodeOrigin::CellAligned`] placement the computational
//! domain `[x_{-1/2}, x_{N_x+1/2}] × [y_{-1/2}, y_{N_y+1/2}]` coincides with the
//! requested bounds, so a mesh of `k × k` control cells over `[1, 2]²` has
//! `N_x = N_y = k - 1` and `Δx = Δy = 1/k`.

use std::io::{self, Write};
use std::ops::{Index, IndexMut};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("degenerate extent [{min}, {max}] along {axis}")]
    Extent { axis: char, min: f64, max: f64 },
    #[error("need at least 2 interior intervals along {axis}, got {n}")]
    TooCoarse { axis: char, n: usize },
    #[error("non-finite sample {value} at ({x}, {y})")]
    NonFinite { x: f64, y: f64, value: f64 },
    #[error("field lives on a different grid")]
    GridMismatch,
}

/// Where node `0` sits relative to `x_min`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NodeOrigin {
    /// `x_i = x_min + (i + 1/2) Δx`: the outer cell faces `x_{-1/2}` and
    /// `x_{N_x+1/2}` are the domain bounds.
    #[default]
    CellAligned,
    /// `x_i = x_min + i Δx`: node `0` is on the lower bound and the domain is
    /// shifted half a step down.
    NodeAligned,
}

impl NodeOrigin {
    fn offset(self) -> f64 {
        match self {
            NodeOrigin::CellAligned => 0.5,
            NodeOrigin::NodeAligned => 0.0,
        }
    }
}

/// Uniform mesh. Cheap to copy; fields carry their own copy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    origin: NodeOrigin,
}

impl Grid {
    /// Builds the mesh over `[x.0, x.1] × [y.0, y.1]` with `nx + 1` by `ny + 1`
    /// interior nodes.
    pub fn new(x: (f64, f64), y: (f64, f64), nx: usize, ny: usize) -> Result<Self, GridError> {
        for (axis, (lo, hi)) in [('x', x), ('y', y)] {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(GridError::Extent { axis, min: lo, max: hi });
            }
        }
        for (axis, n) in [('x', nx), ('y', ny)] {
            if n < 2 {
                return Err(GridError::TooCoarse { axis, n });
            }
        }
        Ok(Self {
            x_min: x.0,
            x_max: x.1,
            y_min: y.0,
            y_max: y.1,
            nx,
            ny,
            dx: (x.1 - x.0) / (nx + 1) as f64,
            dy: (y.1 - y.0) / (ny + 1) as f64,
            origin: NodeOrigin::default(),
        })
    }

    /// Same mesh with a different node placement.
    pub fn with_origin(mut self, origin: NodeOrigin) -> Self {
        self.origin = origin;
        self
    }

    pub fn origin(&self) -> NodeOrigin {
        self.origin
    }

    /// Mesh made of `kx × ky` control cells, i.e. `N_x = kx - 1`.
    pub fn with_cells(x: (f64, f64), y: (f64, f64), kx: usize, ky: usize) -> Result<Self, GridError> {
        Self::new(x, y, kx.saturating_sub(1), ky.saturating_sub(1))
    }

    /// The `M_k` mesh over `[1, 2]²` used by the manufactured cases.
    pub fn square(k: usize) -> Result<Self, GridError> {
        Self::with_cells((1.0, 2.0), (1.0, 2.0), k, k)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    /// `h = max(Δx, Δy)`.
    pub fn h(&self) -> f64 {
        self.dx.max(self.dy)
    }

    pub fn x_bounds(&self) -> (f64, f64) {
        (self.x_min, self.x_max)
    }

    pub fn y_bounds(&self) -> (f64, f64) {
        (self.y_min, self.y_max)
    }

    /// `x_i`.
    pub fn node_x(&self, i: isize) -> f64 {
        self.x_min + (i as f64 + self.origin.offset()) * self.dx
    }

    /// `y_j`.
    pub fn node_y(&self, j: isize) -> f64 {
        self.y_min + (j as f64 + self.origin.offset()) * self.dy
    }

    /// `x_{i+1/2}`.
    pub fn cell_x(&self, i: isize) -> f64 {
        self.x_min + (i as f64 + 0.5 + self.origin.offset()) * self.dx
    }

    /// `y_{j+1/2}`.
    pub fn cell_y(&self, j: isize) -> f64 {
        self.y_min + (j as f64 + 0.5 + self.origin.offset()) * self.dy
    }

    /// Stored node lattice dimensions, ghosts included.
    pub fn node_dims(&self) -> (usize, usize) {
        (self.nx + 3, self.ny + 3)
    }

    /// Stored cell lattice dimensions, ghosts included.
    pub fn cell_dims(&self) -> (usize, usize) {
        (self.nx + 2, self.ny + 2)
    }

    /// Number of unknowns of a cell-centred system, `|I*| = N_x N_y`.
    pub fn interior_cell_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn interior_node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn is_interior_node(&self, i: isize, j: isize) -> bool {
        (0..=self.nx as isize).contains(&i) && (0..=self.ny as isize).contains(&j)
    }

    pub fn is_interior_cell(&self, i: isize, j: isize) -> bool {
        (0..self.nx as isize).contains(&i) && (0..self.ny as isize).contains(&j)
    }

    pub fn contains_node(&self, i: isize, j: isize) -> bool {
        (-1..=self.nx as isize + 1).contains(&i) && (-1..=self.ny as isize + 1).contains(&j)
    }

    pub fn contains_cell(&self, i: isize, j: isize) -> bool {
        (-1..=self.nx as isize).contains(&i) && (-1..=self.ny as isize).contains(&j)
    }

    /// `Ī`, row by row (i fastest).
    pub fn nodes(&self) -> impl Iterator<Item = (isize, isize)> {
        rect(-1, self.nx as isize + 1, -1, self.ny as isize + 1)
    }

    /// `I`.
    pub fn interior_nodes(&self) -> impl Iterator<Item = (isize, isize)> {
        rect(0, self.nx as isize, 0, self.ny as isize)
    }

    /// `Ī \ I`.
    pub fn ghost_nodes(&self) -> impl Iterator<Item = (isize, isize)> + '_ {
        self.nodes().filter(|&(i, j)| !self.is_interior_node(i, j))
    }

    /// `Ī*`.
    pub fn cells(&self) -> impl Iterator<Item = (isize, isize)> {
        rect(-1, self.nx as isize, -1, self.ny as isize)
    }

    /// `I*`, in the row-major unknown ordering of the cell systems.
    pub fn interior_cells(&self) -> impl Iterator<Item = (isize, isize)> {
        rect(0, self.nx as isize - 1, 0, self.ny as isize - 1)
    }

    /// `Ī* \ I*`.
    pub fn ghost_cells(&self) -> impl Iterator<Item = (isize, isize)> + '_ {
        self.cells().filter(|&(i, j)| !self.is_interior_cell(i, j))
    }

    /// Position of interior cell `(i, j)` in the unknown vector.
    pub fn unknown_index(&self, i: isize, j: isize) -> usize {
        debug_assert!(self.is_interior_cell(i, j));
        j as usize * self.nx + i as usize
    }

    #[inline]
    pub(crate) fn node_index(&self, i: isize, j: isize) -> usize {
        debug_assert!(self.contains_node(i, j), "node ({i}, {j}) outside lattice");
        (j + 1) as usize * (self.nx + 3) + (i + 1) as usize
    }

    #[inline]
    pub(crate) fn cell_index(&self, i: isize, j: isize) -> usize {
        debug_assert!(self.contains_cell(i, j), "cell ({i}, {j}) outside lattice");
        (j + 1) as usize * (self.nx + 2) + (i + 1) as usize
    }
}

fn rect(i0: isize, i1: isize, j0: isize, j1: isize) -> impl Iterator<Item = (isize, isize)> {
    (j0..=j1).flat_map(move |j| (i0..=i1).map(move |i| (i, j)))
}

fn check_finite(x: f64, y: f64, value: f64) -> Result<f64, GridError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(GridError::NonFinite { x, y, value })
    }
}

/// Scalar per node of `Ī`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    grid: Grid,
    values: Vec<f64>,
}

impl NodeField {
    pub fn zeros(grid: Grid) -> Self {
        let (a, b) = grid.node_dims();
        Self { grid, values: vec![0.0; a * b] }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        let (a, b) = grid.node_dims();
        Self { grid, values: vec![value; a * b] }
    }

    /// Builds a field from an index function over all of `Ī`.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(isize, isize) -> f64) -> Self {
        let values = grid.nodes().map(|(i, j)| f(i, j)).collect();
        Self { grid, values }
    }

    /// Evaluates `f` at every node coordinate, ghosts included.
    pub fn sample(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Result<Self, GridError> {
        let values = grid
            .nodes()
            .map(|(i, j)| {
                let (x, y) = (grid.node_x(i), grid.node_y(j));
                check_finite(x, y, f(x, y))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Values on `I` in row-major order.
    pub fn interior(&self) -> impl Iterator<Item = f64> + '_ {
        self.grid.interior_nodes().map(move |(i, j)| self[(i, j)])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// CSV with header `i,j,x,y,value` over all stored nodes.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "i,j,x,y,value")?;
        for (i, j) in self.grid.nodes() {
            writeln!(w, "{i},{j},{:.17e},{:.17e},{:.17e}", self.grid.node_x(i), self.grid.node_y(j), self[(i, j)])?;
        }
        Ok(())
    }
}

impl Index<(isize, isize)> for NodeField {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (isize, isize)) -> &f64 {
        &self.values[self.grid.node_index(i, j)]
    }
}

impl IndexMut<(isize, isize)> for NodeField {
    #[inline]
    fn index_mut(&mut self, (i, j): (isize, isize)) -> &mut f64 {
        let k = self.grid.node_index(i, j);
        &mut self.values[k]
    }
}

/// Scalar per cell centre of `Ī*`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    grid: Grid,
    values: Vec<f64>,
}

impl CellField {
    pub fn zeros(grid: Grid) -> Self {
        let (a, b) = grid.cell_dims();
        Self { grid, values: vec![0.0; a * b] }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        let (a, b) = grid.cell_dims();
        Self { grid, values: vec![value; a * b] }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(isize, isize) -> f64) -> Self {
        let values = grid.cells().map(|(i, j)| f(i, j)).collect();
        Self { grid, values }
    }

    /// Evaluates `f` at every cell centre, ghost ring included.
    pub fn sample(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Result<Self, GridError> {
        let values = grid
            .cells()
            .map(|(i, j)| {
                let (x, y) = (grid.cell_x(i), grid.cell_y(j));
                check_finite(x, y, f(x, y))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { grid, values })
    }

    /// Scatters an unknown vector over `I*`; the ghost ring is zero.
    pub fn from_interior(grid: Grid, unknowns: &[f64]) -> Self {
        assert_eq!(unknowns.len(), grid.interior_cell_count());
        let mut out = Self::zeros(grid);
        for ((i, j), &v) in grid.interior_cells().zip(unknowns) {
            out[(i, j)] = v;
        }
        out
    }

    /// Gathers the values on `I*` in unknown order.
    pub fn to_interior(&self) -> Vec<f64> {
        self.grid.interior_cells().map(|(i, j)| self[(i, j)]).collect()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Zeroes the ghost ring.
    pub fn clear_ghosts(&mut self) {
        let grid = self.grid;
        for (i, j) in grid.ghost_cells() {
            self[(i, j)] = 0.0;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// CSV with header `i,j,xc,yc,value` over all stored cells.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "i,j,xc,yc,value")?;
        for (i, j) in self.grid.cells() {
            writeln!(w, "{i},{j},{:.17e},{:.17e},{:.17e}", self.grid.cell_x(i), self.grid.cell_y(j), self[(i, j)])?;
        }
        Ok(())
    }
}

impl Index<(isize, isize)> for CellField {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (isize, isize)) -> &f64 {
        &self.values[self.grid.cell_index(i, j)]
    }
}

impl IndexMut<(isize, isize)> for CellField {
    #[inline]
    fn index_mut(&mut self, (i, j): (isize, isize)) -> &mut f64 {
        let k = self.grid.cell_index(i, j);
        &mut self.values[k]
    }
}

/// Two-vector per cell centre of `Ī*` (anisotropy direction, source terms).
#[derive(Debug, Clone, PartialEq)]
pub struct CellVectorField {
    grid: Grid,
    values: Vec<[f64; 2]>,
}

impl CellVectorField {
    pub fn from_fn(grid: Grid, mut f: impl FnMut(isize, isize) -> [f64; 2]) -> Self {
        let values = grid.cells().map(|(i, j)| f(i, j)).collect();
        Self { grid, values }
    }

    pub fn uniform(grid: Grid, v: [f64; 2]) -> Self {
        Self::from_fn(grid, |_, _| v)
    }

    pub fn sample(grid: Grid, f: impl Fn(f64, f64) -> [f64; 2]) -> Result<Self, GridError> {
        let values = grid
            .cells()
            .map(|(i, j)| {
                let (x, y) = (grid.cell_x(i), grid.cell_y(j));
                let v = f(x, y);
                check_finite(x, y, v[0])?;
                check_finite(x, y, v[1])?;
                Ok(v)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[[f64; 2]] {
        &self.values
    }

    /// Pointwise dot product with another vector field.
    pub fn dot(&self, other: &CellVectorField) -> CellField {
        assert_eq!(self.grid, other.grid);
        CellField {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a[0] * b[0] + a[1] * b[1]).collect(),
        }
    }
}

impl Index<(isize, isize)> for CellVectorField {
    type Output = [f64; 2];
    #[inline]
    fn index(&self, (i, j): (isize, isize)) -> &[f64; 2] {
        &self.values[self.grid.cell_index(i, j)]
    }
}
