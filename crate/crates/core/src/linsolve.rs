//! Sparse matrices, stencil probing, and the linear solver contract.
//!
//! Every accepted solve has its relative residual `‖Ax − b‖₂ / ‖b‖₂`
//! recomputed from the stored matrix after the fact, independently of what
//! the backend believes.

use std::io::{self, Write};
use std::time::{Duration, Instant};

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Col;
use thiserror::Error;

use crate::grid::Grid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinsolveError {
    #[error("operator is not linear with a 3x3 stencil: probe mismatch {mismatch:.3e}")]
    ProbeMismatch { mismatch: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("tolerance {0} outside (0, 1e-4]")]
    Tolerance(f64),
    #[error("matrix is numerically singular ({0})")]
    Singular(String),
    #[error("no convergence after {iterations} iterations, best relative residual {best_residual:.3e}")]
    NotConverged { iterations: usize, best_residual: f64 },
    #[error("row {0} has no stored entries")]
    EmptyRow(usize),
    #[error("non-finite entry in row {0}")]
    NonFinite(usize),
}

/// Compressed sparse row matrix with sorted, duplicate-free columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Duplicates are summed; explicit zeros are kept as structure.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        Self { nrows: n, ncols: n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![1.0; n] }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(columns, values)` of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(0.0, |k| vals[k])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
            })
            .collect()
    }

    pub fn matvec_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.nrows);
        let mut out = vec![0.0; self.ncols];
        for (r, &yr) in y.iter().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += v * yr;
            }
        }
        out
    }

    /// `|A| |x|`, the scale against which rounding in `Ax` is judged.
    pub fn abs_matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &v)| (v * x[c]).abs()).sum()
            })
            .collect()
    }

    /// `A + s I`, inserting diagonal entries where absent.
    pub fn shift_diagonal(&self, s: f64) -> Self {
        assert_eq!(self.nrows, self.ncols);
        let mut t = self.triplets();
        t.extend((0..self.nrows).map(|k| (k, k, s)));
        Self::from_triplets(self.nrows, self.ncols, &t)
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            t.extend(cols.iter().zip(vals).map(|(&c, &v)| (r, c, v)));
        }
        t
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().into_iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            d[r][c] = v;
        }
        d
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Checks the structural contract: no empty rows, finite entries.
    pub fn validate(&self) -> Result<(), LinsolveError> {
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            if cols.is_empty() {
                return Err(LinsolveError::EmptyRow(r));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(LinsolveError::NonFinite(r));
            }
        }
        Ok(())
    }

    pub fn is_pattern_symmetric(&self) -> bool {
        let t = self.transpose();
        self.row_ptr == t.row_ptr && self.col_idx == t.col_idx
    }

    /// Coordinate text dump, one `row col value` line per stored entry.
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (r, c, v) in self.triplets() {
            writeln!(w, "{r} {c} {v:.17e}")?;
        }
        Ok(())
    }

    fn to_faer(&self) -> SparseColMat<usize, f64> {
        let t: Vec<_> = self.triplets().into_iter().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &t).expect("triplets are in range and deduplicated")
    }
}

/// Assembles the matrix of a linear operator on `I*` unknowns whose stencil
/// fits in the 3x3 cell neighbourhood. Nine applications suffice: unknowns
/// are coloured by `(i mod 3, j mod 3)` so that no two cells of one colour
/// share a neighbourhood.
pub fn assemble_probed(grid: &Grid, mut op: impl FnMut(&[f64]) -> Vec<f64>) -> Result<CsrMatrix, LinsolveError> {
    let n = grid.interior_cell_count();
    let (nx, ny) = (grid.nx() as isize, grid.ny() as isize);
    let colour = |i: isize, j: isize| (i.rem_euclid(3) + 3 * j.rem_euclid(3)) as usize;

    let zero = op(&vec![0.0; n]);
    check_len(n, zero.len())?;
    if let Some(m) = zero.iter().map(|v| v.abs()).reduce(f64::max) {
        if m != 0.0 {
            return Err(LinsolveError::ProbeMismatch { mismatch: m });
        }
    }

    let mut responses = Vec::with_capacity(9);
    for c in 0..9 {
        let probe: Vec<f64> = grid.interior_cells().map(|(i, j)| if colour(i, j) == c { 1.0 } else { 0.0 }).collect();
        let out = op(&probe);
        check_len(n, out.len())?;
        responses.push(out);
    }

    let mut triplets = Vec::with_capacity(9 * n);
    for (i, j) in grid.interior_cells() {
        let row = grid.unknown_index(i, j);
        for dj in -1..=1 {
            for di in -1..=1 {
                let (a, b) = (i + di, j + dj);
                if (0..nx).contains(&a) && (0..ny).contains(&b) {
                    let v = responses[colour(a, b)][row];
                    triplets.push((row, grid.unknown_index(a, b), v));
                }
            }
        }
    }
    let m = CsrMatrix::from_triplets(n, n, &triplets);

    // A wider stencil or a non-linear operator shows up as a mismatch here.
    let v: Vec<f64> = (0..n).map(|k| ((k as f64 + 1.0) * 0.618_033_988_749_895).fract() - 0.5).collect();
    let direct = op(&v);
    let via = m.matvec(&v);
    let scale = norm2(&m.abs_matvec(&v.iter().map(|x| x.abs()).collect::<Vec<_>>())).max(f64::MIN_POSITIVE);
    let mismatch = norm2(&sub(&direct, &via)) / scale;
    if !(mismatch <= 1e-13) {
        return Err(LinsolveError::ProbeMismatch { mismatch });
    }
    Ok(m)
}

fn check_len(expected: usize, got: usize) -> Result<(), LinsolveError> {
    if expected == got {
        Ok(())
    } else {
        Err(LinsolveError::Dimension { expected, got })
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `‖Ax − b‖₂ / max(‖b‖₂, tiny)`.
pub fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    norm2(&sub(&a.matvec(x), b)) / norm2(b).max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    #[default]
    Direct,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub tol: f64,
    /// Total Krylov iterations for the iterative path; refinement sweeps for
    /// the direct path are capped separately.
    pub max_iter: usize,
    pub restart: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { kind: SolverKind::Direct, tol: 1e-12, max_iter: 2000, restart: 60 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), LinsolveError> {
        if self.tol > 0.0 && self.tol <= 1e-4 {
            Ok(())
        } else {
            Err(LinsolveError::Tolerance(self.tol))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    /// Relative residual recomputed from the assembled matrix.
    pub residual: f64,
    /// Krylov iterations, or refinement sweeps for the direct path.
    pub iterations: usize,
    pub elapsed: Duration,
}

#[allow(clippy::large_enum_variant)]
enum Backend {
    Lu(faer::sparse::linalg::solvers::Lu<usize, f64>),
    Ilu(Ilu0),
}

/// A matrix prepared for repeated solves: factored once, reused for every
/// right-hand side.
pub struct LinearSolver {
    matrix: CsrMatrix,
    config: SolverConfig,
    backend: Backend,
}

const MAX_REFINEMENT: usize = 4;

impl LinearSolver {
    pub fn new(matrix: CsrMatrix, config: SolverConfig) -> Result<Self, LinsolveError> {
        config.validate()?;
        if matrix.nrows() != matrix.ncols() {
            return Err(LinsolveError::Dimension { expected: matrix.nrows(), got: matrix.ncols() });
        }
        matrix.validate()?;
        let backend = match config.kind {
            SolverKind::Direct => {
                let lu = matrix.to_faer().sp_lu().map_err(|e| LinsolveError::Singular(format!("{e:?}")))?;
                Backend::Lu(lu)
            }
            SolverKind::Iterative => Backend::Ilu(Ilu0::new(&matrix)?),
        };
        Ok(Self { matrix, config, backend })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<SolveReport, LinsolveError> {
        check_len(self.matrix.nrows(), rhs.len())?;
        let start = Instant::now();
        let n = rhs.len();
        if rhs.iter().all(|&v| v == 0.0) {
            return Ok(SolveReport { solution: vec![0.0; n], residual: 0.0, iterations: 0, elapsed: start.elapsed() });
        }
        let (solution, iterations) = match &self.backend {
            Backend::Lu(lu) => self.solve_direct(lu, rhs)?,
            Backend::Ilu(ilu) => gmres(&self.matrix, ilu, rhs, &self.config)?,
        };
        let residual = relative_residual(&self.matrix, &solution, rhs);
        if !residual.is_finite() || solution.iter().any(|v| !v.is_finite()) {
            return Err(LinsolveError::Singular("non-finite solution".into()));
        }
        if residual > self.config.tol {
            return Err(LinsolveError::NotConverged { iterations, best_residual: residual });
        }
        Ok(SolveReport { solution, residual, iterations, elapsed: start.elapsed() })
    }

    fn solve_direct(
        &self,
        lu: &faer::sparse::linalg::solvers::Lu<usize, f64>,
        rhs: &[f64],
    ) -> Result<(Vec<f64>, usize), LinsolveError> {
        let apply = |r: &[f64]| -> Vec<f64> {
            let col = Col::<f64>::from_fn(r.len(), |k| r[k]);
            let x = lu.solve(&col);
            (0..r.len()).map(|k| x[k]).collect()
        };
        let mut x = apply(rhs);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LinsolveError::Singular("non-finite solution".into()));
        }
        let mut best = relative_residual(&self.matrix, &x, rhs);
        let mut sweeps = 0;
        // Iterative refinement in working precision; stop as soon as it
        // stops paying off.
        while best > self.config.tol * 1e-2 && sweeps < MAX_REFINEMENT {
            let r = sub(rhs, &self.matrix.matvec(&x));
            let d = apply(&r);
            let cand: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
            let res = relative_residual(&self.matrix, &cand, rhs);
            sweeps += 1;
            if !(res < best) {
                break;
            }
            x = cand;
            best = res;
        }
        Ok((x, sweeps))
    }

    /// Solves `Aᵀ x = b`; direct path only.
    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>, LinsolveError> {
        check_len(self.matrix.nrows(), rhs.len())?;
        let x: Vec<f64> = match &self.backend {
            Backend::Lu(lu) => {
                let col = Col::<f64>::from_fn(rhs.len(), |k| rhs[k]);
                let x = lu.solve_transpose(&col);
                (0..rhs.len()).map(|k| x[k]).collect()
            }
            Backend::Ilu(ilu) => {
                let t = self.matrix.transpose();
                let ilu_t = Ilu0::new(&t)?;
                let _ = ilu;
                gmres(&t, &ilu_t, rhs, &self.config)?.0
            }
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LinsolveError::Singular("non-finite solution".into()));
        }
        Ok(x)
    }
}

/// Factors and solves in one go.
pub fn solve(matrix: &CsrMatrix, rhs: &[f64], config: &SolverConfig) -> Result<SolveReport, LinsolveError> {
    LinearSolver::new(matrix.clone(), *config)?.solve(rhs)
}

/// Incomplete LU with the sparsity pattern of `A`.
struct Ilu0 {
    lu: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    fn new(a: &CsrMatrix) -> Result<Self, LinsolveError> {
        let mut lu = a.clone();
        let n = lu.nrows;
        let mut diag = vec![usize::MAX; n];
        for (r, d) in diag.iter_mut().enumerate() {
            for k in lu.row_ptr[r]..lu.row_ptr[r + 1] {
                if lu.col_idx[k] == r {
                    *d = k;
                }
            }
            if *d == usize::MAX {
                return Err(LinsolveError::Singular(format!("no diagonal entry in row {r}")));
            }
        }
        let mut pos = vec![usize::MAX; n];
        for r in 0..n {
            let span = lu.row_ptr[r]..lu.row_ptr[r + 1];
            for k in span.clone() {
                pos[lu.col_idx[k]] = k;
            }
            for k in span.clone() {
                let c = lu.col_idx[k];
                if c >= r {
                    break;
                }
                let pivot = lu.values[diag[c]];
                if pivot == 0.0 {
                    return Err(LinsolveError::Singular(format!("zero pivot in row {c}")));
                }
                let m = lu.values[k] / pivot;
                lu.values[k] = m;
                for kk in diag[c] + 1..lu.row_ptr[c + 1] {
                    let p = pos[lu.col_idx[kk]];
                    if p != usize::MAX {
                        lu.values[p] -= m * lu.values[kk];
                    }
                }
            }
            for k in span {
                pos[lu.col_idx[k]] = usize::MAX;
            }
        }
        Ok(Self { lu, diag })
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let lu = &self.lu;
        let n = lu.nrows;
        let mut y = r.to_vec();
        for i in 0..n {
            for k in lu.row_ptr[i]..self.diag[i] {
                y[i] -= lu.values[k] * y[lu.col_idx[k]];
            }
        }
        for i in (0..n).rev() {
            for k in self.diag[i] + 1..lu.row_ptr[i + 1] {
                y[i] -= lu.values[k] * y[lu.col_idx[k]];
            }
            y[i] /= lu.values[self.diag[i]];
        }
        y
    }
}

/// Right-preconditioned restarted GMRES.
fn gmres(a: &CsrMatrix, m: &Ilu0, b: &[f64], cfg: &SolverConfig) -> Result<(Vec<f64>, usize), LinsolveError> {
    let n = b.len();
    let restart = cfg.restart.max(1);
    let bnorm = norm2(b).max(f64::MIN_POSITIVE);
    let mut x = vec![0.0; n];
    let mut best = (x.clone(), 1.0f64);
    let mut total = 0;

    while total < cfg.max_iter {
        let r = sub(b, &a.matvec(&x));
        let beta = norm2(&r);
        let rel = beta / bnorm;
        if rel < best.1 {
            best = (x.clone(), rel);
        }
        if rel <= cfg.tol * 0.5 {
            return Ok((x, total));
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|t| t / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(restart);
        let mut hm = vec![vec![0.0; restart]; restart + 1];
        let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..restart {
            if total >= cfg.max_iter {
                break;
            }
            total += 1;
            let zk = m.apply(&v[k]);
            let mut w = a.matvec(&zk);
            z.push(zk);
            for (i, vi) in v.iter().enumerate() {
                let h = dot(&w, vi);
                hm[i][k] = h;
                for (wj, vj) in w.iter_mut().zip(vi) {
                    *wj -= h * vj;
                }
            }
            let hn = norm2(&w);
            hm[k + 1][k] = hn;
            for i in 0..k {
                let t = cs[i] * hm[i][k] + sn[i] * hm[i + 1][k];
                hm[i + 1][k] = -sn[i] * hm[i][k] + cs[i] * hm[i + 1][k];
                hm[i][k] = t;
            }
            let d = hm[k][k].hypot(hm[k + 1][k]);
            if d == 0.0 {
                return Err(LinsolveError::Singular("GMRES breakdown".into()));
            }
            cs[k] = hm[k][k] / d;
            sn[k] = hm[k + 1][k] / d;
            hm[k][k] = d;
            hm[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            if g[k + 1].abs() / bnorm <= cfg.tol * 0.5 || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|t| t / hn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let s: f64 = (i + 1..k_used).map(|j| hm[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / hm[i][i];
        }
        for (zi, yi) in z.iter().zip(&y) {
            for (xj, zj) in x.iter_mut().zip(zi) {
                *xj += yi * zj;
            }
        }
        if x.iter().any(|t| !t.is_finite()) {
            return Err(LinsolveError::Singular("diverging iterates".into()));
        }
    }
    let rel = relative_residual(a, &x, b);
    if rel < best.1 {
        best = (x, rel);
    }
    if best.1 <= cfg.tol {
        Ok((best.0, total))
    } else {
        Err(LinsolveError::NotConverged { iterations: total, best_residual: best.1 })
    }
}

/// 2-norm condition number estimate from power iteration on `AᵀA` and on
/// `(AᵀA)⁻¹`. Needs the direct backend for the inverse iteration.
pub fn estimate_condition(solver: &LinearSolver) -> Result<f64, LinsolveError> {
    let a = solver.matrix();
    let n = a.nrows();
    let start: Vec<f64> = (0..n).map(|k| 1.0 + ((k as f64 + 1.0) * 0.754_877_666).fract()).collect();

    let smax = power_iteration(&start, |v| a.matvec_transpose(&a.matvec(v)))?.sqrt();
    let inv = power_iteration(&start, |v| {
        let w = solver.solve_transpose(v).unwrap_or_else(|_| vec![f64::NAN; n]);
        solve_raw(solver, &w).unwrap_or_else(|_| vec![f64::NAN; n])
    })?;
    let smin = 1.0 / inv.sqrt();
    Ok((smax / smin).max(1.0))
}

fn solve_raw(solver: &LinearSolver, rhs: &[f64]) -> Result<Vec<f64>, LinsolveError> {
    match &solver.backend {
        Backend::Lu(lu) => {
            let col = Col::<f64>::from_fn(rhs.len(), |k| rhs[k]);
            let x = lu.solve(&col);
            Ok((0..rhs.len()).map(|k| x[k]).collect())
        }
        Backend::Ilu(_) => solver.solve(rhs).map(|r| r.solution),
    }
}

fn power_iteration(start: &[f64], mut op: impl FnMut(&[f64]) -> Vec<f64>) -> Result<f64, LinsolveError> {
    let mut v: Vec<f64> = start.to_vec();
    let s = norm2(&v);
    v.iter_mut().for_each(|t| *t /= s);
    let mut lambda = 0.0;
    for _ in 0..200 {
        let w = op(&v);
        let nw = norm2(&w);
        if !nw.is_finite() {
            return Err(LinsolveError::Singular("overflow in power iteration".into()));
        }
        if nw == 0.0 {
            return Ok(0.0);
        }
        let done = (nw - lambda).abs() <= 1e-4 * nw;
        lambda = nw;
        v = w.into_iter().map(|t| t / nw).collect();
        if done {
            break;
        }
    }
    Ok(lambda)
}
