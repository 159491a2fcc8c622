//! The asymptotic-preserving linear solver.
//!
//! The unknown `p` is split as `p = π + q` where `π` is (discretely) constant
//! along `b` and `q` is a weighted divergence `(1/G) ∂_{h,*}(G l)`. Three
//! cell-centred elliptic problems give `h`, `L` and `l`; none of them
//! degenerates as `ε → 0`, and `ε = 0` itself is allowed.

use std::time::Instant;

use thiserror::Error;

use crate::grid::{CellField, Grid, NodeField};
use crate::linsolve::{self, assemble_probed, CsrMatrix, LinearSolver, LinsolveError, SolverConfig};
use crate::operators::{check_node_weight, OperatorContext, OperatorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Assemble,
    H,
    BigL,
    SmallL,
    GhostFill,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Assemble => "assembly",
            Stage::H => "h-system",
            Stage::BigL => "L-system",
            Stage::SmallL => "l-system",
            Stage::GhostFill => "ghost fill",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("{stage} failed: {source}")]
    Solve { stage: Stage, source: LinsolveError },
}

fn at(stage: Stage) -> impl FnOnce(LinsolveError) -> ApError {
    move |source| ApError::Solve { stage, source }
}

/// Linear anisotropic problem
/// `−∇·(H (b⊗b)(∇p − S)/ε) + G p = f` with flux boundary conditions.
#[derive(Debug, Clone)]
pub struct LinearProblem {
    pub eps: f64,
    pub ctx: OperatorContext,
    /// `G` at nodes.
    pub g_node: NodeField,
    /// `G` at cell centres.
    pub g_cell: CellField,
    /// `H` at cell centres.
    pub h_cell: CellField,
    pub f: NodeField,
    /// `b·S` at cell centres, ghost ring included.
    pub bs: CellField,
}

impl LinearProblem {
    /// Checks signs and lattices; `G` and `H` must be positive wherever the
    /// scheme reads them.
    pub fn validate(&self) -> Result<(), ApError> {
        let grid = *self.ctx.grid();
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(ApError::Invalid(format!("eps = {}", self.eps)));
        }
        let same = self.g_node.grid() == &grid
            && self.g_cell.grid() == &grid
            && self.h_cell.grid() == &grid
            && self.f.grid() == &grid
            && self.bs.grid() == &grid;
        if !same {
            return Err(ApError::Operator(OperatorError::GridMismatch));
        }
        check_node_weight(&self.g_node)?;
        for (name, w) in [("G", &self.g_cell), ("H", &self.h_cell)] {
            if let Some((i, j)) = grid.interior_cells().find(|&c| !(w[c] > 0.0)) {
                return Err(ApError::Invalid(format!("{name} = {} at cell ({i}, {j})", w[(i, j)])));
            }
        }
        if !self.f.is_finite() || !self.bs.is_finite() {
            return Err(ApError::Invalid("non-finite data".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        self.ctx.grid()
    }
}

/// Relative residuals of the elliptic solves. `big_l` is `None` when `ε = 0`
/// and the L-solve is skipped.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageResiduals {
    pub h: f64,
    pub big_l: Option<f64>,
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionDecomposition {
    pub h: CellField,
    pub big_l: CellField,
    pub l: CellField,
    /// Mean part on `I`.
    pub pi: NodeField,
    /// Fluctuation on `I`.
    pub q: NodeField,
    /// `π + q` on `I`, ghost-filled.
    pub p: NodeField,
    pub residuals: StageResiduals,
    /// `‖∂_h π‖_{ℓ²(I*)} / ‖p‖_{ℓ²(I)}`.
    pub pi_gradient: f64,
    pub ghost: GhostFillReport,
    pub elapsed_ms: f64,
}

/// Weighted operator `χ ↦ −∂_h(w_n ∂_{h,*}(w_c χ))` as a sparse matrix.
pub fn assemble_compose(ctx: &OperatorContext, cell_w: &CellField, node_w: &NodeField) -> Result<CsrMatrix, ApError> {
    let grid = *ctx.grid();
    assemble_probed(&grid, |v| ctx.compose(&CellField::from_interior(grid, v), cell_w, node_w).to_interior())
        .map_err(at(Stage::Assemble))
}

/// Factorisations for one linear problem. The h- and l-systems share the
/// `G`-weighted operator.
pub struct ApSolver<'a> {
    problem: &'a LinearProblem,
    inv_g: NodeField,
    g_system: LinearSolver,
    l_system: Option<LinearSolver>,
    ghosts: GhostFiller,
}

impl<'a> ApSolver<'a> {
    pub fn new(problem: &'a LinearProblem, config: &SolverConfig) -> Result<Self, ApError> {
        let ghosts = GhostFiller::new(&problem.ctx).map_err(at(Stage::GhostFill))?;
        Self::with_ghost_filler(problem, config, ghosts)
    }

    /// Reuses a ghost filler built for the same grid and `b`.
    pub fn with_ghost_filler(
        problem: &'a LinearProblem,
        config: &SolverConfig,
        ghosts: GhostFiller,
    ) -> Result<Self, ApError> {
        problem.validate()?;
        let inv_g = problem.g_node.map(|g| 1.0 / g);
        let a_g = assemble_compose(&problem.ctx, &problem.g_cell, &inv_g)?;
        let g_system = LinearSolver::new(a_g, *config).map_err(at(Stage::H))?;
        let l_system = if problem.eps > 0.0 {
            let a_h = assemble_compose(&problem.ctx, &problem.h_cell, &inv_g)?.shift_diagonal(problem.eps);
            Some(LinearSolver::new(a_h, *config).map_err(at(Stage::BigL))?)
        } else {
            None
        };
        Ok(Self { problem, inv_g, g_system, l_system, ghosts })
    }

    pub fn ghost_filler(&self) -> &GhostFiller {
        &self.ghosts
    }

    pub fn into_ghost_filler(self) -> GhostFiller {
        self.ghosts
    }

    /// `∂_h(f/G)` on `I*`.
    fn grad_f_over_g(&self) -> CellField {
        let pr = self.problem;
        let mut fg = pr.f.clone();
        for n in pr.grid().interior_nodes() {
            fg[n] *= self.inv_g[n];
        }
        pr.ctx.dh_interior(&fg)
    }

    pub fn solve_h(&self) -> Result<(CellField, f64), ApError> {
        let grid = *self.problem.grid();
        let rhs = self.grad_f_over_g().to_interior();
        let rep = self.g_system.solve(&rhs).map_err(at(Stage::H))?;
        Ok((CellField::from_interior(grid, &rep.solution), rep.residual))
    }

    /// `π = (1/G)[f + ∂_{h,*}(G h)]` on `I`.
    pub fn reconstruct_pi(&self, h: &CellField) -> NodeField {
        let pr = self.problem;
        let div = weighted_divergence(&pr.ctx, &pr.g_cell, h);
        let mut pi = NodeField::zeros(*pr.grid());
        for n in pr.grid().interior_nodes() {
            pi[n] = self.inv_g[n] * (pr.f[n] + div[n]);
        }
        pi
    }

    /// `L`; identically zero without a solve when `ε = 0`.
    pub fn solve_big_l(&self) -> Result<(CellField, Option<f64>), ApError> {
        let pr = self.problem;
        let grid = *pr.grid();
        let Some(sys) = &self.l_system else {
            return Ok((CellField::zeros(grid), None));
        };
        let grad = self.grad_f_over_g();
        let rhs: Vec<f64> = grid.interior_cells().map(|c| -pr.eps * (grad[c] - pr.bs[c])).collect();
        let rep = sys.solve(&rhs).map_err(at(Stage::BigL))?;
        Ok((CellField::from_interior(grid, &rep.solution), Some(rep.residual)))
    }

    pub fn solve_l(&self, big_l: &CellField) -> Result<(CellField, f64), ApError> {
        let pr = self.problem;
        let grid = *pr.grid();
        let rhs: Vec<f64> = grid.interior_cells().map(|c| big_l[c] - pr.bs[c]).collect();
        let rep = self.g_system.solve(&rhs).map_err(at(Stage::SmallL))?;
        Ok((CellField::from_interior(grid, &rep.solution), rep.residual))
    }

    /// `q = (1/G) ∂_{h,*}(G l)` on `I`.
    pub fn reconstruct_q(&self, l: &CellField) -> NodeField {
        let pr = self.problem;
        let div = weighted_divergence(&pr.ctx, &pr.g_cell, l);
        let mut q = NodeField::zeros(*pr.grid());
        for n in pr.grid().interior_nodes() {
            q[n] = self.inv_g[n] * div[n];
        }
        q
    }

    pub fn solve(&self) -> Result<SolutionDecomposition, ApError> {
        let start = Instant::now();
        let pr = self.problem;
        let grid = *pr.grid();
        let (h, res_h) = self.solve_h()?;
        let pi = self.reconstruct_pi(&h);
        let (big_l, res_big_l) = self.solve_big_l()?;
        let (l, res_l) = self.solve_l(&big_l)?;
        let q = self.reconstruct_q(&l);

        let mut p = NodeField::zeros(grid);
        for n in grid.interior_nodes() {
            p[n] = pi[n] + q[n];
        }
        let ghost = self.ghosts.fill(&mut p, &pr.bs).map_err(at(Stage::GhostFill))?;

        let grad_pi = pr.ctx.dh_interior(&pi);
        let pi_gradient = l2_cells(&grad_pi) / l2_interior(&p).max(f64::MIN_POSITIVE);

        Ok(SolutionDecomposition {
            h,
            big_l,
            l,
            pi,
            q,
            p,
            residuals: StageResiduals { h: res_h, big_l: res_big_l, l: res_l },
            pi_gradient,
            ghost,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// Runs the full pipeline on one problem.
pub fn solve_linear_ap(problem: &LinearProblem, config: &SolverConfig) -> Result<SolutionDecomposition, ApError> {
    ApSolver::new(problem, config)?.solve()
}

/// `∂_{h,*}(w χ)` with `χ` restricted to `I*`.
fn weighted_divergence(ctx: &OperatorContext, w: &CellField, chi: &CellField) -> NodeField {
    let grid = *ctx.grid();
    let mut wc = CellField::zeros(grid);
    for c in grid.interior_cells() {
        wc[c] = w[c] * chi[c];
    }
    ctx.dh_star(&wc)
}

pub(crate) fn l2_interior(p: &NodeField) -> f64 {
    p.interior().map(|v| v * v).sum::<f64>().sqrt()
}

fn l2_cells(c: &CellField) -> f64 {
    c.grid().interior_cells().map(|k| c[k] * c[k]).sum::<f64>().sqrt()
}

/// Outcome of a ghost fill.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GhostFillReport {
    /// `‖∂_h p − b·S‖₂` over the ghost cells, relative to `max(‖b·S‖₂, ‖p‖_∞/h)`.
    pub defect: f64,
    /// The constraint Gram matrix was singular and had to be regularised.
    pub rank_deficient: bool,
    /// `defect` exceeded the filler's threshold.
    pub above_threshold: bool,
}

/// Ghost-node completion from the boundary-cell conditions
/// `(∂_h p)_c = (b·S)_c` on every ghost cell `c`.
///
/// There are four more ghost nodes than ghost cells, so among all ghost
/// vectors meeting the conditions the one closest (in ℓ²) to the linear
/// extrapolation `2p_0 − p_1` of the interior is returned. Affine data with
/// consistent `b·S` is reproduced exactly.
pub struct GhostFiller {
    ctx: OperatorContext,
    /// Rows: ghost cells; columns: ghost nodes.
    a: CsrMatrix,
    gram: LinearSolver,
    ghost_nodes: Vec<(isize, isize)>,
    ghost_cells: Vec<(isize, isize)>,
    rank_deficient: bool,
    threshold: f64,
}

impl GhostFiller {
    pub fn new(ctx: &OperatorContext) -> Result<Self, LinsolveError> {
        let grid = *ctx.grid();
        let ghost_nodes: Vec<_> = grid.ghost_nodes().collect();
        let ghost_cells: Vec<_> = grid.ghost_cells().collect();
        let (nx, _) = grid.node_dims();
        let mut col_of = vec![usize::MAX; grid.nodes().count()];
        let flat = |i: isize, j: isize| (j + 1) as usize * nx + (i + 1) as usize;
        for (k, &(i, j)) in ghost_nodes.iter().enumerate() {
            col_of[flat(i, j)] = k;
        }
        let (rx, ry) = (0.5 / grid.dx(), 0.5 / grid.dy());
        let mut t = Vec::new();
        for (r, &(i, j)) in ghost_cells.iter().enumerate() {
            let [bx, by] = ctx.b()[(i, j)];
            for (ni, nj, w) in stencil(i, j, bx * rx, by * ry) {
                let c = col_of[flat(ni, nj)];
                if c != usize::MAX {
                    t.push((r, c, w));
                }
            }
        }
        let a = CsrMatrix::from_triplets(ghost_cells.len(), ghost_nodes.len(), &t);
        let gram = gram_matrix(&a);
        let cfg = SolverConfig { tol: 1e-10, ..SolverConfig::default() };
        let scale = gram.frobenius_norm() / (gram.nrows() as f64).sqrt();
        let (gram, rank_deficient) = match LinearSolver::new(gram.clone(), cfg) {
            Ok(s) if probe_ok(&s) => (s, false),
            _ => (LinearSolver::new(gram.shift_diagonal(1e-10 * scale), cfg)?, true),
        };
        Ok(Self { ctx: ctx.clone(), a, gram, ghost_nodes, ghost_cells, rank_deficient, threshold: 1e-8 })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    /// Overwrites the ghost nodes of `p`; interior values are untouched.
    pub fn fill(&self, p: &mut NodeField, bs: &CellField) -> Result<GhostFillReport, LinsolveError> {
        let grid = *self.ctx.grid();
        for &(i, j) in &self.ghost_nodes {
            p[(i, j)] = extrapolate(&grid, p, i, j);
        }
        let g0: Vec<f64> = self.ghost_nodes.iter().map(|&n| p[n]).collect();
        let defect = self.constraint_defect(p, bs);
        let y = self.gram.solve(&defect)?.solution;
        let corr = self.a.matvec_transpose(&y);
        for (k, &n) in self.ghost_nodes.iter().enumerate() {
            p[n] = g0[k] - corr[k];
        }

        let after = self.constraint_defect(p, bs);
        let h = grid.h();
        let pmax = p.interior().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = linsolve::norm2(&self.ghost_cells.iter().map(|&c| bs[c]).collect::<Vec<_>>()).max(pmax / h);
        let defect = linsolve::norm2(&after) / scale.max(f64::MIN_POSITIVE);
        Ok(GhostFillReport { defect, rank_deficient: self.rank_deficient, above_threshold: defect > self.threshold })
    }

    /// `∂_h p − b·S` on the ghost cells.
    fn constraint_defect(&self, p: &NodeField, bs: &CellField) -> Vec<f64> {
        let grid = *self.ctx.grid();
        let (rx, ry) = (0.5 / grid.dx(), 0.5 / grid.dy());
        self.ghost_cells
            .iter()
            .map(|&(i, j)| {
                let [bx, by] = self.ctx.b()[(i, j)];
                let s: f64 = stencil(i, j, bx * rx, by * ry).map(|(a, c, w)| w * p[(a, c)]).sum();
                s - bs[(i, j)]
            })
            .collect()
    }
}

fn probe_ok(s: &LinearSolver) -> bool {
    let n = s.matrix().nrows();
    let rhs: Vec<f64> = (0..n).map(|k| 1.0 + (k % 5) as f64).collect();
    s.solve(&rhs).is_ok()
}

/// The four `(node, weight)` terms of `∂_h` at cell `(i, j)`, given
/// `wx = b_x/(2Δx)` and `wy = b_y/(2Δy)`.
fn stencil(i: isize, j: isize, wx: f64, wy: f64) -> impl Iterator<Item = (isize, isize, f64)> {
    [(i + 1, j + 1, wx + wy), (i, j + 1, -wx + wy), (i + 1, j, wx - wy), (i, j, -wx - wy)].into_iter()
}

/// Linear extrapolation from the nearest interior node along the outward
/// direction.
fn extrapolate(grid: &Grid, p: &NodeField, i: isize, j: isize) -> f64 {
    let ci = i.clamp(0, grid.nx() as isize);
    let cj = j.clamp(0, grid.ny() as isize);
    2.0 * p[(ci, cj)] - p[(2 * ci - i, 2 * cj - j)]
}

fn gram_matrix(a: &CsrMatrix) -> CsrMatrix {
    let at = a.transpose();
    let mut t = Vec::new();
    for r in 0..a.nrows() {
        let (cols, vals) = a.row(r);
        let mut acc: std::collections::BTreeMap<usize, f64> = Default::default();
        for (&c, &v) in cols.iter().zip(vals) {
            let (rows, tv) = at.row(c);
            for (&r2, &w) in rows.iter().zip(tv) {
                *acc.entry(r2).or_default() += v * w;
            }
        }
        t.extend(acc.into_iter().map(|(c, v)| (r, c, v)));
    }
    CsrMatrix::from_triplets(a.nrows(), a.nrows(), &t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CellVectorField;

    fn radial_b(grid: Grid) -> CellVectorField {
        CellVectorField::sample(grid, |x, y| {
            let r = x.hypot(y);
            [y / r, -x / r]
        })
        .unwrap()
    }

    fn constant_problem(grid: Grid, eps: f64, c: f64) -> LinearProblem {
        let g_node = NodeField::sample(grid, |x, y| 1.0 + (x.sin() * y.sin()).powi(2)).unwrap();
        let g_cell = CellField::sample(grid, |x, y| 1.0 + (x.sin() * y.sin()).powi(2)).unwrap();
        LinearProblem {
            eps,
            ctx: OperatorContext::new(radial_b(grid)).unwrap(),
            f: g_node.map(|g| g * c),
            g_node,
            g_cell: g_cell.clone(),
            h_cell: g_cell,
            bs: CellField::zeros(grid),
        }
    }

    #[test]
    fn constant_solution_for_every_eps() {
        let grid = Grid::square(12).unwrap();
        for eps in [1.0, 1e-3, 1e-9, 0.0] {
            let sol = solve_linear_ap(&constant_problem(grid, eps, 2.5), &SolverConfig::default()).unwrap();
            for n in grid.nodes() {
                assert!((sol.p[n] - 2.5).abs() < 1e-11, "eps {eps}: {}", sol.p[n]);
            }
            assert!(grid.interior_nodes().all(|n| sol.p[n] == sol.pi[n] + sol.q[n]));
            assert!(grid.ghost_cells().all(|c| sol.h[c] == 0.0 && sol.l[c] == 0.0 && sol.big_l[c] == 0.0));
            assert_eq!(sol.residuals.big_l.is_none(), eps == 0.0);
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let grid = Grid::square(8).unwrap();
        let sol = solve_linear_ap(&constant_problem(grid, 0.1, 0.0), &SolverConfig::default()).unwrap();
        assert!(sol.h.values().iter().all(|&v| v == 0.0));
        assert!(sol.p.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ghost_fill_reproduces_affine_extension() {
        let grid = Grid::square(10).unwrap();
        let ctx = OperatorContext::new(radial_b(grid)).unwrap();
        let exact = NodeField::sample(grid, |x, y| 0.7 + 1.3 * x - 0.4 * y).unwrap();
        let bs = ctx.dh(&exact);
        let mut p = exact.clone();
        for n in grid.ghost_nodes() {
            p[n] = 123.0;
        }
        let filler = GhostFiller::new(&ctx).unwrap();
        let rep = filler.fill(&mut p, &bs).unwrap();
        assert!(rep.defect <= 1e-12, "{rep:?}");
        for n in grid.nodes() {
            assert!((p[n] - exact[n]).abs() < 1e-12);
        }
    }

    #[test]
    fn ghost_fill_constant() {
        let grid = Grid::square(9).unwrap();
        let ctx = OperatorContext::new(CellVectorField::uniform(grid, [0.6, -0.8])).unwrap();
        let mut p = NodeField::constant(grid, 4.0);
        for n in grid.ghost_nodes() {
            p[n] = 0.0;
        }
        let rep = GhostFiller::new(&ctx).unwrap().fill(&mut p, &CellField::zeros(grid)).unwrap();
        assert_eq!(rep.defect, 0.0);
        assert!(grid.nodes().all(|n| (p[n] - 4.0).abs() < 1e-13));
    }

    #[test]
    fn ghost_fill_axis_aligned_directions() {
        for b in [[1.0, 0.0], [0.0, -1.0]] {
            let grid = Grid::square(7).unwrap();
            let ctx = OperatorContext::new(CellVectorField::uniform(grid, b)).unwrap();
            let exact = NodeField::sample(grid, |x, y| (x * y).sin()).unwrap();
            let bs = ctx.dh(&exact);
            let mut p = exact.clone();
            let rep = GhostFiller::new(&ctx).unwrap().fill(&mut p, &bs).unwrap();
            assert!(rep.defect < 1e-10, "{b:?} {rep:?}");
        }
    }
}
