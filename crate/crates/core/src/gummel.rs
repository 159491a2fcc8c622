//! Gummel (Newton) iteration for the nonlinear reaction term.
//!
//! Each step linearises `g` around the current iterate `p_N` and solves the
//! linear AP problem for the correction `δ_N`:
//! `G_N = g′(p_N)`, `f_N = f − g(p_N)`, `b·S_N = b·S − ∂_h p_N`, then
//! `p_{N+1} = p_N + δ_N` on `I` and the ghost nodes are refilled.

use thiserror::Error;

use crate::apcore::{
    l2_interior, ApError, ApSolver, GhostFiller, LinearProblem, SolutionDecomposition, StageResiduals,
};
use crate::grid::{CellField, NodeField};
use crate::linsolve::{LinsolveError, SolverConfig};
use crate::operators::OperatorContext;

/// Reaction law `g` with its derivative.
#[derive(Debug, Clone, Copy)]
pub enum Reaction {
    /// `g(p) = c p`.
    Linear(f64),
    /// `g(p) = pⁿ`.
    Power(i32),
    Custom {
        g: fn(f64) -> f64,
        dg: fn(f64) -> f64,
    },
}

impl Reaction {
    pub fn g(&self, p: f64) -> f64 {
        match *self {
            Reaction::Linear(c) => c * p,
            Reaction::Power(n) => p.powi(n),
            Reaction::Custom { g, .. } => g(p),
        }
    }

    pub fn dg(&self, p: f64) -> f64 {
        match *self {
            Reaction::Linear(c) => c,
            Reaction::Power(n) => n as f64 * p.powi(n - 1),
            Reaction::Custom { dg, .. } => dg(p),
        }
    }
}

/// `−∇·(H (b⊗b)(∇p − S)/ε) + g(p) = f`.
#[derive(Debug, Clone)]
pub struct NonlinearProblem {
    pub eps: f64,
    pub ctx: OperatorContext,
    pub h_cell: CellField,
    pub f: NodeField,
    pub bs: CellField,
    pub reaction: Reaction,
}

/// Lower bound applied to `g′` before it is used as a weight.
pub const DERIVATIVE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Linearization {
    pub problem: LinearProblem,
    /// Samples where `g′` fell below [`DERIVATIVE_FLOOR`] and was raised to it.
    pub floored: usize,
}

/// Builds the linear problem for the correction around `p_n` (ghosts of
/// `p_n` must be filled).
pub fn linearize(problem: &NonlinearProblem, p_n: &NodeField) -> Linearization {
    let grid = *problem.ctx.grid();
    let r = problem.reaction;
    let mut floored = 0;
    let mut clamp = |v: f64| {
        if v < DERIVATIVE_FLOOR || v.is_nan() {
            floored += 1;
            DERIVATIVE_FLOOR
        } else {
            v
        }
    };
    let g_node = NodeField::from_fn(grid, |i, j| clamp(r.dg(p_n[(i, j)])));
    let g_cell = CellField::from_fn(grid, |i, j| {
        let avg = 0.25 * (p_n[(i, j)] + p_n[(i + 1, j)] + p_n[(i, j + 1)] + p_n[(i + 1, j + 1)]);
        clamp(r.dg(avg))
    });
    let f = NodeField::from_fn(grid, |i, j| problem.f[(i, j)] - r.g(p_n[(i, j)]));
    let grad = problem.ctx.dh(p_n);
    let bs = CellField::from_fn(grid, |i, j| problem.bs[(i, j)] - grad[(i, j)]);
    Linearization {
        problem: LinearProblem {
            eps: problem.eps,
            ctx: problem.ctx.clone(),
            g_node,
            g_cell,
            h_cell: problem.h_cell.clone(),
            f,
            bs,
        },
        floored,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GummelOptions {
    /// Stop once `‖δ_N‖/‖p_{N+1}‖ ≤ tol_rel` (ℓ² over `I`).
    pub tol_rel: f64,
    pub max_iter: usize,
    /// Replace the ghost values of `p₀` by a ghost fill before starting.
    /// Leave off when `p₀` was sampled from a function on all of `Ī`.
    pub fill_initial_ghosts: bool,
    /// Iterations to keep running once `tol_rel` is met, to watch the error
    /// settle.
    pub extra_iterations: usize,
    /// A step whose elliptic solves miss the solver tolerance is retried with
    /// this looser one and kept as an inexact correction.
    pub inexact_tol: f64,
}

impl Default for GummelOptions {
    fn default() -> Self {
        Self { tol_rel: 1e-12, max_iter: 30, fill_initial_ghosts: false, extra_iterations: 0, inexact_tol: 1e-8 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GummelError {
    #[error("invalid options: {0}")]
    Options(String),
    #[error("initial guess is not finite")]
    NonFiniteStart,
    #[error(transparent)]
    Setup(#[from] ApError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GummelStatus {
    Converged,
    /// `max_iter` reached without meeting the tolerance.
    MaxIterations,
    /// Corrections grew more than tenfold over three consecutive steps,
    /// became non-finite, or a linear solve broke down after `g′` had to be
    /// floored.
    Diverged,
    /// A linear solve failed at some iteration.
    SolverFailed(String),
}

impl GummelStatus {
    pub fn label(&self) -> &'static str {
        match self {
            GummelStatus::Converged => "converged",
            GummelStatus::MaxIterations => "max-iterations",
            GummelStatus::Diverged => "diverged",
            GummelStatus::SolverFailed(_) => "solver-failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// Index of the iterate produced, starting at 1.
    pub n: usize,
    pub correction_rel: f64,
    /// Relative ℓ² error of `p_n` against the exact solution, when supplied.
    pub error_rel_l2: Option<f64>,
    pub residuals: StageResiduals,
    pub floored: usize,
    pub ghost_defect: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GummelState {
    pub status: GummelStatus,
    pub history: Vec<IterationRecord>,
    /// Relative ℓ² error of `p₀`, when an exact solution was supplied.
    pub initial_error: Option<f64>,
    pub warnings: Vec<String>,
}

impl GummelState {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    /// First iteration whose correction met `tol`.
    pub fn first_below(&self, tol: f64) -> Option<usize> {
        self.history.iter().find(|r| r.correction_rel <= tol).map(|r| r.n)
    }

    /// Iteration history CSV: `N,correction_rel,error_rel_l2,residual_h,residual_L,residual_l`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "N,correction_rel,error_rel_l2,residual_h,residual_L,residual_l")?;
        for r in &self.history {
            let err = r.error_rel_l2.map_or(String::new(), |e| format!("{e:.6e}"));
            let big_l = r.residuals.big_l.map_or(String::new(), |e| format!("{e:.6e}"));
            writeln!(
                w,
                "{},{:.6e},{},{:.6e},{},{:.6e}",
                r.n, r.correction_rel, err, r.residuals.h, big_l, r.residuals.l
            )?;
        }
        Ok(())
    }
}

fn rel_l2(a: &NodeField, exact: &NodeField) -> f64 {
    let num: f64 = a.grid().interior_nodes().map(|n| (a[n] - exact[n]).powi(2)).sum();
    num.sqrt() / l2_interior(exact).max(f64::MIN_POSITIVE)
}

/// Only corrections above this size count towards divergence; growth among
/// round-off sized corrections is noise.
const DIVERGENCE_FLOOR: f64 = 1e-6;

fn diverging(history: &[IterationRecord]) -> bool {
    let c: Vec<f64> = history.iter().map(|r| r.correction_rel).collect();
    let k = c.len();
    if k == 0 || !c[k - 1].is_finite() {
        return k > 0;
    }
    if k < 4 || c[k - 1] < DIVERGENCE_FLOOR {
        return false;
    }
    let w = &c[k - 4..];
    w.windows(2).all(|p| p[1] > p[0]) && w[3] > 10.0 * w[0]
}

/// Runs the iteration from `p0`. Invalid input is an error; everything that
/// happens during the iteration (divergence, solver failure) is reported
/// through [`GummelState::status`] together with the history so far.
pub fn gummel_solve(
    problem: &NonlinearProblem,
    p0: &NodeField,
    options: &GummelOptions,
    solver: &SolverConfig,
    exact: Option<&NodeField>,
) -> Result<(NodeField, GummelState), GummelError> {
    if !(options.tol_rel > 0.0) || options.max_iter == 0 {
        return Err(GummelError::Options(format!("{options:?}")));
    }
    if !p0.is_finite() {
        return Err(GummelError::NonFiniteStart);
    }
    let grid = *problem.ctx.grid();
    let mut filler = GhostFiller::new(&problem.ctx)
        .map_err(|source| ApError::Solve { stage: crate::apcore::Stage::GhostFill, source })?;
    let mut p = p0.clone();
    let mut warnings = Vec::new();
    if options.fill_initial_ghosts {
        fill(&filler, &mut p, &problem.bs, &mut warnings)?;
    }

    let mut state = GummelState {
        status: GummelStatus::MaxIterations,
        history: Vec::new(),
        initial_error: exact.map(|e| rel_l2(&p, e)),
        warnings,
    };

    let mut converged_at = None;
    for n in 1..=options.max_iter {
        let lin = linearize(problem, &p);
        if lin.floored > 0 {
            state.warnings.push(format!("iteration {n}: g' floored at {} samples", lin.floored));
        }
        let (mut solved, mut f) = step(&lin.problem, solver, filler);
        if let (Err(ApError::Solve { source: LinsolveError::NotConverged { best_residual, .. }, .. }), Some(_)) =
            (&solved, &f)
        {
            if options.inexact_tol > solver.tol {
                state.warnings.push(format!("iteration {n}: inexact correction, residual {best_residual:.3e}"));
                let relaxed = SolverConfig { tol: options.inexact_tol, ..*solver };
                (solved, f) = step(&lin.problem, &relaxed, f.take().expect("checked above"));
            }
        }
        let sol = match solved {
            Ok(sol) => sol,
            Err(e) => {
                // With g′ floored the iterate has left the region where g is
                // increasing; the breakdown is the iteration's, not the solver's.
                if lin.floored > 0 {
                    state.warnings.push(format!("iteration {n}: {e}"));
                    state.status = GummelStatus::Diverged;
                } else {
                    state.status = GummelStatus::SolverFailed(format!("iteration {n}: {e}"));
                }
                return Ok((p, state));
            }
        };
        filler = f.expect("a built solver returns its ghost filler");

        let delta = &sol.p;
        for node in grid.interior_nodes() {
            p[node] += delta[node];
        }
        let ghost = match filler.fill(&mut p, &problem.bs) {
            Ok(r) => r,
            Err(e) => {
                state.status = GummelStatus::SolverFailed(format!("iteration {n}: ghost fill: {e}"));
                return Ok((p, state));
            }
        };
        if ghost.above_threshold {
            state.warnings.push(format!("iteration {n}: ghost constraint defect {:.3e}", ghost.defect));
        }

        let correction_rel = l2_interior(delta) / l2_interior(&p).max(f64::MIN_POSITIVE);
        state.history.push(IterationRecord {
            n,
            correction_rel,
            error_rel_l2: exact.map(|e| rel_l2(&p, e)),
            residuals: sol.residuals,
            floored: lin.floored,
            ghost_defect: ghost.defect,
        });

        if !p.is_finite() || diverging(&state.history) {
            state.status = GummelStatus::Diverged;
            return Ok((p, state));
        }
        if converged_at.is_none() && correction_rel <= options.tol_rel {
            converged_at = Some(n);
            state.status = GummelStatus::Converged;
        }
        if converged_at.is_some_and(|c| n >= c + options.extra_iterations) {
            return Ok((p, state));
        }
    }
    Ok((p, state))
}

/// One correction solve. The ghost filler is factored once per run and
/// threaded through the steps; it is lost only if the solver cannot be built.
fn step(
    problem: &LinearProblem,
    solver: &SolverConfig,
    filler: GhostFiller,
) -> (Result<SolutionDecomposition, ApError>, Option<GhostFiller>) {
    match ApSolver::with_ghost_filler(problem, solver, filler) {
        Ok(s) => {
            let out = s.solve();
            (out, Some(s.into_ghost_filler()))
        }
        Err(e) => (Err(e), None),
    }
}

fn fill(
    filler: &GhostFiller,
    p: &mut NodeField,
    bs: &CellField,
    warnings: &mut Vec<String>,
) -> Result<(), GummelError> {
    let rep = filler.fill(p, bs).map_err(|source| ApError::Solve { stage: crate::apcore::Stage::GhostFill, source })?;
    if rep.above_threshold {
        warnings.push(format!("initial ghost constraint defect {:.3e}", rep.defect));
    }
    Ok(())
}

/// Whether the error stopped improving once the corrections reached `tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauReport {
    /// First iteration with correction at or below `tol`.
    pub reached_at: Option<usize>,
    /// Error at that iteration.
    pub plateau_error: Option<f64>,
    /// Largest relative change of the error over the following iterations.
    pub max_change_after: f64,
    /// Relative gap between the plateau and `final_error`.
    pub final_gap: f64,
}

impl PlateauReport {
    pub fn is_flat(&self, rel: f64) -> bool {
        self.reached_at.is_some() && self.max_change_after < rel && self.final_gap < rel
    }
}

pub fn error_plateau_check(state: &GummelState, tol: f64, final_error: f64) -> PlateauReport {
    let Some(k) = state.history.iter().position(|r| r.correction_rel <= tol) else {
        return PlateauReport {
            reached_at: None,
            plateau_error: None,
            max_change_after: f64::INFINITY,
            final_gap: f64::INFINITY,
        };
    };
    let errs: Vec<f64> = state.history[k..].iter().filter_map(|r| r.error_rel_l2).collect();
    let Some(&base) = errs.first() else {
        return PlateauReport {
            reached_at: Some(state.history[k].n),
            plateau_error: None,
            max_change_after: 0.0,
            final_gap: 0.0,
        };
    };
    let max_change_after = errs.iter().map(|e| (e - base).abs() / base).fold(0.0, f64::max);
    PlateauReport {
        reached_at: Some(state.history[k].n),
        plateau_error: Some(base),
        max_change_after,
        final_gap: (final_error - base).abs() / base,
    }
}
