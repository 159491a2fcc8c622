//! Direct discretisation of the singular problem, for comparison with the AP
//! scheme.
//!
//! Unknowns are `p` on all of `Ī`. Each interior node carries the row
//! `−∂_{h,*}(H(∂_h p − b·S)) + εGp = εf`, each ghost cell the flux row
//! `H(∂_h p − b·S)(b·ν) = 0`. Those leave four ghost-node combinations
//! undetermined; four closure rows set them to their extrapolated values.
//! As `ε → 0` the interior block loses every function constant along `b`
//! and the matrix becomes singular.

use std::io::{self, Write};

use thiserror::Error;

use crate::apcore::{ApError, LinearProblem};
use crate::grid::{Grid, NodeField};
use crate::linsolve::{estimate_condition, CsrMatrix, LinearSolver, LinsolveError, SolverConfig};

/// `|b·ν|` below this makes a flux row degenerate.
pub const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NaiveError {
    #[error(transparent)]
    Problem(#[from] ApError),
    #[error("grid needs at least 3 cells per direction for the extrapolation rows")]
    TooCoarse,
    #[error(transparent)]
    Solve(#[from] LinsolveError),
    #[error("epsilon list must be positive and strictly decreasing: {0:?}")]
    EpsList(Vec<f64>),
    #[error("building the problem for eps = {eps} failed: {message}")]
    Build { eps: f64, message: String },
}

/// Assembled square system. Row `k` belongs to the unknown `k`: interior
/// nodes own their equation, each ghost cell owns one non-corner ghost node
/// and the rows at the corner ghost nodes are the closure rows.
#[derive(Debug, Clone)]
pub struct NaiveSystem {
    grid: Grid,
    pub eps: f64,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Ghost cells whose flux row was replaced by an extrapolation.
    pub degenerate: Vec<(isize, isize)>,
}

impl NaiveSystem {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn unknowns(&self) -> usize {
        self.rhs.len()
    }

    pub fn index(&self, i: isize, j: isize) -> usize {
        node_unknown(&self.grid, i, j)
    }

    pub fn to_field(&self, x: &[f64]) -> NodeField {
        NodeField::from_fn(self.grid, |i, j| x[self.index(i, j)])
    }

    pub fn to_vector(&self, p: &NodeField) -> Vec<f64> {
        let mut v = vec![0.0; self.unknowns()];
        for (i, j) in self.grid.nodes() {
            v[self.index(i, j)] = p[(i, j)];
        }
        v
    }

    /// `A p − rhs`, indexed like the unknowns.
    pub fn residual(&self, p: &NodeField) -> Vec<f64> {
        let ap = self.matrix.matvec(&self.to_vector(p));
        ap.iter().zip(&self.rhs).map(|(a, b)| a - b).collect()
    }

    pub fn solve(&self, config: &SolverConfig) -> Result<(NodeField, f64), NaiveError> {
        let solver = LinearSolver::new(self.matrix.clone(), *config)?;
        let rep = solver.solve(&self.rhs)?;
        Ok((self.to_field(&rep.solution), rep.residual))
    }
}

fn node_unknown(g: &Grid, i: isize, j: isize) -> usize {
    (j + 1) as usize * (g.nx() + 3) + (i + 1) as usize
}

/// Outward normal of a ghost cell; corners get the normalised sum of the two
/// edge normals.
pub fn ghost_normal(g: &Grid, i: isize, j: isize) -> [f64; 2] {
    let nx = if i < 0 {
        -1.0
    } else if i >= g.nx() as isize {
        1.0
    } else {
        0.0
    };
    let ny = if j < 0 {
        -1.0
    } else if j >= g.ny() as isize {
        1.0
    } else {
        0.0
    };
    let s = f64::hypot(nx, ny);
    [nx / s, ny / s]
}

/// The non-corner ghost node whose row a ghost cell provides. Walking the
/// ring anticlockwise makes this a bijection.
fn owned_node(g: &Grid, i: isize, j: isize) -> (isize, isize) {
    let (nx, ny) = (g.nx() as isize, g.ny() as isize);
    if j == -1 && i < nx {
        (i + 1, -1)
    } else if i == nx && j < ny {
        (nx + 1, j + 1)
    } else if j == ny && i >= 0 {
        (i, ny + 1)
    } else {
        (-1, j)
    }
}

/// Direction pointing from a ghost node into the domain.
fn inward(g: &Grid, i: isize, j: isize) -> (isize, isize) {
    let di = if i < 0 {
        1
    } else if i > g.nx() as isize {
        -1
    } else {
        0
    };
    let dj = if j < 0 {
        1
    } else if j > g.ny() as isize {
        -1
    } else {
        0
    };
    (di, dj)
}

/// `p_g − 3p₁ + 3p₂ − p₃` along the inward direction: zero for quadratics.
fn extrapolation(g: &Grid, (i, j): (isize, isize)) -> [(usize, f64); 4] {
    let (di, dj) = inward(g, i, j);
    let at = |k: isize| node_unknown(g, i + k * di, j + k * dj);
    [(at(0), 1.0), (at(1), -3.0), (at(2), 3.0), (at(3), -1.0)]
}

/// Weights on ghost nodes.
type GhostCombination = Vec<((isize, isize), f64)>;

/// Ghost-node combinations the ghost-cell rows cannot see: the right
/// singular vectors of those rows restricted to ghost columns beyond their
/// rank. The centred `∂_h` leaves one such mode per corner; the closure
/// rows pin each to its extrapolated value.
fn flux_invisible(g: &Grid, rows: &[Vec<(usize, f64)>]) -> Result<Vec<GhostCombination>, NaiveError> {
    let ghosts: Vec<(isize, isize)> = g.ghost_nodes().collect();
    let mut local = std::collections::HashMap::with_capacity(ghosts.len());
    for (k, &(i, j)) in ghosts.iter().enumerate() {
        local.insert(node_unknown(g, i, j), k);
    }
    let (m, n) = (rows.len(), ghosts.len());
    let mut b = faer::Mat::<f64>::zeros(m, n);
    for (r, entries) in rows.iter().enumerate() {
        for &(c, v) in entries {
            if let Some(&k) = local.get(&c) {
                b[(r, k)] += v;
            }
        }
    }
    let svd = b.svd().map_err(|e| LinsolveError::Singular(format!("ghost-row SVD: {e:?}")))?;
    let v = svd.V();
    Ok((m..n).map(|col| ghosts.iter().enumerate().map(|(k, &node)| (node, v[(k, col)])).collect()).collect())
}

/// Coefficients of `∂_h` at a cell on its four corner nodes.
fn dh_stencil(problem: &LinearProblem, i: isize, j: isize) -> [((isize, isize), f64); 4] {
    let g = problem.grid();
    let (rx, ry) = (0.5 / g.dx(), 0.5 / g.dy());
    let [bx, by] = problem.ctx.b()[(i, j)];
    let (ax, ay) = (bx * rx, by * ry);
    [((i, j), -ax - ay), ((i + 1, j), ax - ay), ((i, j + 1), -ax + ay), ((i + 1, j + 1), ax + ay)]
}

pub fn assemble_naive(problem: &LinearProblem) -> Result<NaiveSystem, NaiveError> {
    problem.validate()?;
    let g = *problem.grid();
    if g.nx() < 3 || g.ny() < 3 {
        return Err(NaiveError::TooCoarse);
    }
    let n = g.node_dims().0 * g.node_dims().1;
    let eps = problem.eps;
    let h = &problem.h_cell;
    let bs = &problem.bs;
    let mut rhs = vec![0.0; n];
    // (row, value, column)
    let mut t: Vec<(usize, f64, usize)> = Vec::with_capacity(13 * n);

    // ∂_{h,*} = −∂_hᵀ, so the interior block is Σ_c D_{c,n} H_c D_{c,m}.
    for (i, j) in g.interior_nodes() {
        let row = node_unknown(&g, i, j);
        t.push((row, eps * problem.g_node[(i, j)], row));
        rhs[row] = eps * problem.f[(i, j)];
        for c in [(i - 1, j - 1), (i, j - 1), (i - 1, j), (i, j)] {
            let st = dh_stencil(problem, c.0, c.1);
            let d_n = st.iter().find(|(m, _)| *m == (i, j)).map(|s| s.1).unwrap_or(0.0);
            let w = d_n * h[c];
            for ((mi, mj), d_m) in st {
                t.push((row, w * d_m, node_unknown(&g, mi, mj)));
            }
            rhs[row] += w * bs[c];
        }
    }

    let mut degenerate = Vec::new();
    let mut ghost_rows: Vec<Vec<(usize, f64)>> = Vec::new();
    for (i, j) in g.ghost_cells() {
        let owned = owned_node(&g, i, j);
        let row = node_unknown(&g, owned.0, owned.1);
        let nu = ghost_normal(&g, i, j);
        let [bx, by] = problem.ctx.b()[(i, j)];
        let b_nu = bx * nu[0] + by * nu[1];
        let mut entries = Vec::with_capacity(4);
        if b_nu.abs() < DEGENERATE_TOL {
            degenerate.push((i, j));
            entries.extend(extrapolation(&g, owned));
        } else {
            let w = h[(i, j)] * b_nu;
            for ((mi, mj), d_m) in dh_stencil(problem, i, j) {
                entries.push((node_unknown(&g, mi, mj), w * d_m));
            }
            rhs[row] = w * bs[(i, j)];
        }
        t.extend(entries.iter().map(|&(c, v)| (row, v, c)));
        ghost_rows.push(entries);
    }

    let (ex, ey) = (g.nx() as isize + 1, g.ny() as isize + 1);
    let corners = [(-1, -1), (ex, -1), (-1, ey), (ex, ey)];
    for (k, dir) in flux_invisible(&g, &ghost_rows)?.into_iter().enumerate() {
        let row = node_unknown(&g, corners[k].0, corners[k].1);
        for (node, w) in dir {
            t.extend(extrapolation(&g, node).into_iter().map(|(c, v)| (row, w * v, c)));
        }
    }

    let triplets: Vec<(usize, usize, f64)> = t.into_iter().map(|(r, v, c)| (r, c, v)).collect();
    Ok(NaiveSystem { grid: g, eps, matrix: CsrMatrix::from_triplets(n, n, &triplets), rhs, degenerate })
}

/// Reported when the factorisation or the condition estimate breaks down:
/// the matrix is singular to working precision.
pub const CONDITION_CEILING: f64 = 1.0 / f64::EPSILON;

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRow {
    pub eps: f64,
    pub cond_estimate: f64,
    /// `cond_estimate` is only a lower bound (solver breakdown).
    pub lower_bound: bool,
    pub solve_residual: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConditioningReport {
    pub rows: Vec<ConditionRow>,
}

impl ConditioningReport {
    /// Estimates never decrease as `ε` decreases.
    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].cond_estimate >= w[0].cond_estimate)
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].cond_estimate > w[0].cond_estimate)
    }

    /// Condition estimate at the last `ε` over the one at the first.
    pub fn growth(&self) -> Option<f64> {
        Some(self.rows.last()?.cond_estimate / self.rows.first()?.cond_estimate)
    }

    /// `eps,cond_estimate,solve_residual,status`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "eps,cond_estimate,solve_residual,status")?;
        for r in &self.rows {
            let cond =
                if r.lower_bound { format!(">={:.6e}", r.cond_estimate) } else { format!("{:.6e}", r.cond_estimate) };
            let res = r.solve_residual.map_or(String::new(), |v| format!("{v:.6e}"));
            writeln!(w, "{:e},{},{},{}", r.eps, cond, res, r.status)?;
        }
        Ok(())
    }
}

/// Assembles and conditions the naive system for each `ε`. Breakdowns are
/// rows of the report, not errors.
pub fn conditioning_sweep<E: std::fmt::Display>(
    mut build: impl FnMut(f64) -> Result<LinearProblem, E>,
    eps_list: &[f64],
    config: &SolverConfig,
) -> Result<ConditioningReport, NaiveError> {
    let ok = !eps_list.is_empty()
        && eps_list.iter().all(|&e| e > 0.0 && e.is_finite())
        && eps_list.windows(2).all(|w| w[1] < w[0]);
    if !ok {
        return Err(NaiveError::EpsList(eps_list.to_vec()));
    }
    let mut report = ConditioningReport::default();
    for &eps in eps_list {
        let problem = build(eps).map_err(|e| NaiveError::Build { eps, message: e.to_string() })?;
        let system = assemble_naive(&problem)?;
        let broken = |status: String| ConditionRow {
            eps,
            cond_estimate: CONDITION_CEILING,
            lower_bound: true,
            solve_residual: None,
            status,
        };
        let solver = match LinearSolver::new(system.matrix.clone(), *config) {
            Ok(s) => s,
            Err(e) => {
                report.rows.push(broken(format!("factorisation failed: {e}")));
                continue;
            }
        };
        let (solve_residual, mut status) = match solver.solve(&system.rhs) {
            Ok(rep) => (Some(rep.residual), "ok".to_string()),
            Err(LinsolveError::NotConverged { best_residual, .. }) => {
                (Some(best_residual), "residual-above-tol".into())
            }
            Err(e) => (None, format!("solve failed: {e}")),
        };
        let row = match estimate_condition(&solver) {
            Ok(c) if c.is_finite() && c < CONDITION_CEILING => {
                ConditionRow { eps, cond_estimate: c, lower_bound: false, solve_residual, status }
            }
            other => {
                if let Err(e) = other {
                    status = format!("estimate failed: {e}");
                }
                ConditionRow { solve_residual, ..broken(status) }
            }
        };
        report.rows.push(row);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CellField, CellVectorField};
    use crate::operators::OperatorContext;

    fn uniform(grid: Grid, b: [f64; 2], eps: f64, p: impl Fn(f64, f64) -> (f64, [f64; 2])) -> LinearProblem {
        let ctx = OperatorContext::new(CellVectorField::uniform(grid, b)).unwrap();
        LinearProblem {
            eps,
            g_node: NodeField::constant(grid, 1.0),
            g_cell: CellField::constant(grid, 1.0),
            h_cell: CellField::constant(grid, 1.0),
            f: NodeField::sample(grid, |x, y| p(x, y).0).unwrap(),
            bs: CellField::sample(grid, |x, y| {
                let g = p(x, y).1;
                b[0] * g[0] + b[1] * g[1]
            })
            .unwrap(),
            ctx,
        }
    }

    #[test]
    fn ownership_is_a_bijection() {
        let g = Grid::new((0.0, 1.0), (0.0, 1.0), 5, 4).unwrap();
        let mut owned: Vec<_> = g.ghost_cells().map(|(i, j)| owned_node(&g, i, j)).collect();
        owned.sort();
        owned.dedup();
        assert_eq!(owned.len(), g.ghost_cells().count());
        let (ex, ey) = (g.nx() as isize + 1, g.ny() as isize + 1);
        for n in &owned {
            assert!(!g.is_interior_node(n.0, n.1));
            assert!(![(-1, -1), (ex, -1), (-1, ey), (ex, ey)].contains(n));
        }
        assert_eq!(owned.len() + 4, g.ghost_nodes().count());
    }

    #[test]
    fn square_with_one_row_per_unknown() {
        let g = Grid::square(6).unwrap();
        let s = assemble_naive(&uniform(g, [0.6, 0.8], 1.0, |_, _| (1.0, [0.0, 0.0]))).unwrap();
        assert_eq!(s.matrix.nrows(), s.matrix.ncols());
        assert_eq!(s.unknowns(), (g.nx() + 3) * (g.ny() + 3));
        for r in 0..s.unknowns() {
            assert!(!s.matrix.row(r).0.is_empty(), "row {r} empty");
        }
    }

    #[test]
    fn constant_is_exact() {
        let g = Grid::square(7).unwrap();
        for eps in [1.0, 1e-3] {
            let s = assemble_naive(&uniform(g, [0.6, -0.8], eps, |_, _| (2.5, [0.0, 0.0]))).unwrap();
            let r = s.residual(&NodeField::constant(g, 2.5));
            assert!(r.iter().all(|v| v.abs() < 1e-12), "{r:?}");
            let (p, _) = s.solve(&SolverConfig { tol: 1e-9, ..Default::default() }).expect("naive solve");
            let err = g.nodes().map(|n| (p[n] - 2.5).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12 / eps, "eps {eps}: {err:e}");
        }
    }

    #[test]
    fn axis_aligned_rows_are_degenerate() {
        // b = (1, 0): the bottom and top edges have b·ν = 0.
        let g = Grid::square(5).unwrap();
        let s = assemble_naive(&uniform(g, [1.0, 0.0], 1.0, |_, _| (1.0, [0.0, 0.0]))).unwrap();
        assert_eq!(s.degenerate.len(), 2 * g.nx());
        assert!(s.degenerate.iter().all(|&(i, j)| (j == -1 || j == g.ny() as isize) && (0..5).contains(&i)));
    }

    /// 1D-like check: b = (1, 0), G = H = 1, ε = 1 gives `−p″ + p` along
    /// each row of nodes, with the x-differences averaged over the two
    /// neighbouring rows.
    #[test]
    fn interior_rows_match_hand_stencil() {
        let g = Grid::new((0.0, 1.0), (0.0, 1.0), 4, 4).unwrap();
        let s = assemble_naive(&uniform(g, [1.0, 0.0], 1.0, |_, _| (0.0, [0.0, 0.0]))).unwrap();
        let dx = g.dx();
        let row = s.index(2, 2);
        let a = |i: isize, j: isize| s.matrix.get(row, s.index(i, j));
        // Summed over the column of nodes this is 8c, −4c, −4c: the
        // three-point second difference.
        let c = 1.0 / (4.0 * dx * dx);
        let expect = [
            ((2, 2), 1.0 + 4.0 * c),
            ((1, 2), -2.0 * c),
            ((3, 2), -2.0 * c),
            ((2, 1), 2.0 * c),
            ((2, 3), 2.0 * c),
            ((1, 1), -c),
            ((3, 3), -c),
            ((1, 3), -c),
            ((3, 1), -c),
        ];
        for ((i, j), v) in expect {
            assert!((a(i, j) - v).abs() < 1e-9 * c, "({i},{j}) {} vs {v}", a(i, j));
        }
        let total: f64 = s.matrix.row(row).1.iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn x_aligned_rows_act_as_1d_operator() {
        let g = Grid::new((0.0, 1.0), (0.0, 1.0), 9, 5).unwrap();
        let s = assemble_naive(&uniform(g, [1.0, 0.0], 1.0, |_, _| (0.0, [0.0, 0.0]))).unwrap();
        let n = g.nx() as isize + 3;
        let dx = g.dx();
        // Dense −p″ + p on the node line −1..=nx+1.
        let mut t = vec![vec![0.0; n as usize]; n as usize];
        for r in 1..n as usize - 1 {
            t[r][r - 1] = -1.0 / (dx * dx);
            t[r][r] = 2.0 / (dx * dx) + 1.0;
            t[r][r + 1] = -1.0 / (dx * dx);
        }
        let line: Vec<f64> = (0..n).map(|i| (1.7 * i as f64).sin() + 0.1 * (i * i) as f64).collect();
        let mut p = NodeField::zeros(g);
        for (i, j) in g.nodes() {
            p[(i, j)] = line[(i + 1) as usize];
        }
        let ap = s.matrix.matvec(&s.to_vector(&p));
        for (i, j) in g.interior_nodes() {
            let r = (i + 1) as usize;
            let want: f64 = (0..n as usize).map(|c| t[r][c] * line[c]).sum();
            let got = ap[s.index(i, j)];
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0 / (dx * dx)), "({i},{j}) {got} vs {want}");
        }
    }

    #[test]
    fn rejects_unsorted_eps() {
        let g = Grid::square(4).unwrap();
        let build = |e: f64| Ok::<_, String>(uniform(g, [0.6, 0.8], e, |_, _| (1.0, [0.0, 0.0])));
        assert!(conditioning_sweep(build, &[1e-3, 1.0], &SolverConfig::default()).is_err());
        assert!(conditioning_sweep(build, &[1.0, 0.0], &SolverConfig::default()).is_err());
    }

    fn diagonal_interior(sys: &NaiveSystem) -> CsrMatrix {
        let g = *sys.grid();
        let interior: Vec<usize> = g.interior_nodes().map(|(i, j)| sys.index(i, j)).collect();
        let mut is_int = vec![false; sys.unknowns()];
        for r in interior {
            is_int[r] = true;
        }
        let trip: Vec<_> = sys.matrix.triplets().into_iter().filter(|&(r, c, _)| !is_int[r] || r == c).collect();
        CsrMatrix::from_triplets(sys.unknowns(), sys.unknowns(), &trip)
    }

    #[test]
    fn heavy_reaction_conditions_like_its_diagonal() {
        let grid = Grid::square(50).unwrap();
        let b = [0.6, 0.8];
        let mut pr = uniform(grid, b, 1.0, |x, y| (x + y, [1.0, 1.0]));
        pr.g_node = NodeField::constant(grid, 1e6);
        let sys = assemble_naive(&pr).unwrap();
        let cfg = SolverConfig::default();
        let full = estimate_condition(&LinearSolver::new(sys.matrix.clone(), cfg).unwrap()).unwrap();
        let diag = estimate_condition(&LinearSolver::new(diagonal_interior(&sys), cfg).unwrap()).unwrap();
        assert!(full / diag < 10.0 && diag / full < 10.0, "{full:e} vs {diag:e}");
    }
}
