//! Error measures and the experiment drivers: mesh convergence, angle sweep,
//! Gummel histories, the `ε → 0` limit and the conditioning comparison.
//!
//! Every driver returns an [`ExperimentReport`]: one [`RunRecord`] per solve
//! plus named scalar metrics that acceptance checks are written against.
//! Failed solves are recorded with their status and never abort a study.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::io::{self, Write};
use std::time::Instant;

use thiserror::Error;

use crate::apcore::{solve_linear_ap, LinearProblem};
use crate::grid::{Grid, NodeField};
use crate::gummel::{error_plateau_check, gummel_solve, GummelOptions, GummelState, GummelStatus};
use crate::linsolve::SolverConfig;
use crate::naive::{conditioning_sweep, ConditioningReport, NaiveError};
use crate::problems::{case_by_name, CaseParams, CaseProblem, ManufacturedCase, ProblemError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Norm {
    L1,
    L2,
    Linf,
}

impl Norm {
    pub const ALL: [Norm; 3] = [Norm::L1, Norm::L2, Norm::Linf];

    pub fn label(self) -> &'static str {
        match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
            Norm::Linf => "linf",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StudyError {
    #[error("reference field has zero {0:?} norm")]
    ZeroNorm(Norm),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Naive(#[from] NaiveError),
}

/// Norm of a node field over `I`; ghosts never enter.
pub fn interior_norm(v: &NodeField, norm: Norm) -> f64 {
    let it = v.interior();
    match norm {
        Norm::L1 => it.map(f64::abs).sum(),
        Norm::L2 => it.map(|x| x * x).sum::<f64>().sqrt(),
        Norm::Linf => it.map(f64::abs).fold(0.0, f64::max),
    }
}

/// `‖exact − app‖ / ‖exact‖` over `I`.
pub fn rel_error(exact: &NodeField, app: &NodeField, norm: Norm) -> Result<f64, StudyError> {
    rel_distance(app, exact, exact, norm)
}

/// `‖a − b‖ / ‖reference‖` over `I`.
pub fn rel_distance(a: &NodeField, b: &NodeField, reference: &NodeField, norm: Norm) -> Result<f64, StudyError> {
    if a.grid() != b.grid() || a.grid() != reference.grid() {
        return Err(StudyError::GridMismatch);
    }
    let den = interior_norm(reference, norm);
    if den == 0.0 {
        return Err(StudyError::ZeroNorm(norm));
    }
    let diff = NodeField::from_fn(*a.grid(), |i, j| a[(i, j)] - b[(i, j)]);
    Ok(interior_norm(&diff, norm) / den)
}

/// Relative errors in `ℓ¹`, `ℓ²`, `ℓ∞`, in that order.
pub fn rel_errors(exact: &NodeField, app: &NodeField) -> Result<[f64; 3], StudyError> {
    Ok([rel_error(exact, app, Norm::L1)?, rel_error(exact, app, Norm::L2)?, rel_error(exact, app, Norm::Linf)?])
}

/// Least-squares slope of `log y` against `log x`. Points with a
/// non-positive or non-finite coordinate are skipped; `None` when fewer than
/// `min_points` remain.
pub fn loglog_slope(points: &[(f64, f64)], min_points: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < min_points.max(2) {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// `max/min − 1` over the finite positive entries.
pub fn variation(values: &[f64]) -> Option<f64> {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite() && *x > 0.0).collect();
    if v.is_empty() {
        return None;
    }
    let max = v.iter().copied().fold(f64::MIN, f64::max);
    let min = v.iter().copied().fold(f64::MAX, f64::min);
    Some(max / min - 1.0)
}

/// Label used in metric names, e.g. `1e-1`, `0e0`.
pub fn eps_key(eps: f64) -> String {
    format!("{eps:e}")
}

/// Everything a study needs; missing lists fall back to the defaults of
/// the individual drivers.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub case: String,
    /// `k` of the `k × k` cell meshes.
    pub meshes: Vec<usize>,
    pub eps: Vec<f64>,
    pub alphas: Vec<f64>,
    pub etas: Vec<f64>,
    pub mu: f64,
    pub gummel: GummelOptions,
    pub solver: SolverConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            case: "linear-variable".into(),
            meshes: vec![25, 50, 100, 200],
            eps: vec![1e-1, 1e-9, 0.0],
            alphas: default_alphas(),
            etas: vec![0.1],
            mu: 60.0,
            gummel: GummelOptions::default(),
            solver: SolverConfig::default(),
        }
    }
}

/// 19 angles uniform on `[0, π/2]`.
pub fn default_alphas() -> Vec<f64> {
    (0..19).map(|k| FRAC_PI_2 * k as f64 / 18.0).collect()
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), StudyError> {
        let bad = |m: &str| Err(StudyError::Config(m.into()));
        if self.meshes.is_empty() || self.eps.is_empty() || self.alphas.is_empty() || self.etas.is_empty() {
            return bad("mesh, eps, alpha and eta lists must be non-empty");
        }
        if self.meshes.iter().any(|&k| k < 2) {
            return bad("meshes need at least 2 cells per direction");
        }
        if self.eps.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return bad("eps values must be finite and non-negative");
        }
        if self.alphas.iter().any(|a| !(0.0..=FRAC_PI_2 + 1e-12).contains(a)) {
            return bad("alpha values must lie in [0, pi/2]");
        }
        self.solver.validate().map_err(|e| StudyError::Config(e.to_string()))
    }
}

/// One solve.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub case: String,
    /// Cells per direction.
    pub mesh: usize,
    pub h: f64,
    pub eps: f64,
    pub alpha: Option<f64>,
    pub eta: Option<f64>,
    /// Relative `ℓ¹`, `ℓ²`, `ℓ∞` errors against the exact solution.
    pub errors: Option<[f64; 3]>,
    /// Gummel iterations, for nonlinear cases.
    pub iterations: Option<usize>,
    /// Largest relative residual of the elliptic solves (last iteration).
    pub residual: Option<f64>,
    /// `‖∂_h π‖ / ‖p‖`, for linear cases.
    pub pi_gradient: Option<f64>,
    pub cond_estimate: Option<f64>,
    pub runtime_ms: f64,
    pub status: String,
}

impl RunRecord {
    pub fn error(&self, norm: Norm) -> Option<f64> {
        self.errors.map(|e| e[norm.index()])
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub experiment: String,
    pub runs: Vec<RunRecord>,
    /// Named scalars: slopes, spreads, table entries, flags (1 or 0).
    pub metrics: BTreeMap<String, f64>,
    /// Per-run Gummel histories, keyed like the metrics.
    pub histories: Vec<(String, GummelState)>,
    /// Extra tables with their own CSV schema, as `(file stem, csv text)`.
    pub tables: Vec<(String, String)>,
}

impl ExperimentReport {
    fn new(experiment: &str) -> Self {
        Self { experiment: experiment.into(), ..Default::default() }
    }

    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    fn set(&mut self, key: impl Into<String>, value: Option<f64>) {
        if let Some(v) = value {
            self.metrics.insert(key.into(), v);
        }
    }

    /// Long-format CSV, one line per run and norm:
    /// `case,mesh,nx,ny,h,eps,alpha,eta,norm,error,iterations,residual,pi_gradient,cond_estimate,runtime_ms,status`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "case,mesh,nx,ny,h,eps,alpha,eta,norm,error,iterations,residual,pi_gradient,cond_estimate,runtime_ms,status"
        )?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6e}"));
        for r in &self.runs {
            for norm in Norm::ALL {
                writeln!(
                    w,
                    "{},{},{},{},{:.6e},{:e},{},{},{},{},{},{},{},{},{:.3},{}",
                    r.case,
                    r.mesh,
                    r.mesh - 1,
                    r.mesh - 1,
                    r.h,
                    r.eps,
                    opt(r.alpha),
                    opt(r.eta),
                    norm.label(),
                    opt(r.error(norm)),
                    r.iterations.map_or(String::new(), |n| n.to_string()),
                    opt(r.residual),
                    opt(r.pi_gradient),
                    opt(r.cond_estimate),
                    r.runtime_ms,
                    r.status
                )?;
            }
        }
        Ok(())
    }

    /// `metric,value`, sorted by name.
    pub fn write_metrics_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "metric,value")?;
        for (k, v) in &self.metrics {
            writeln!(w, "{k},{v:.6e}")?;
        }
        Ok(())
    }
}

/// Result of running one manufactured case to completion.
pub struct CaseRun {
    pub record: RunRecord,
    pub solution: Option<NodeField>,
    pub gummel: Option<GummelState>,
}

fn max_residual(r: &crate::apcore::StageResiduals) -> f64 {
    r.h.max(r.l).max(r.big_l.unwrap_or(0.0))
}

/// Solves a case with the AP scheme (Gummel for nonlinear ones, started from
/// the case's initial guess) and measures it.
pub fn run_case(case: &ManufacturedCase, gummel: &GummelOptions, solver: &SolverConfig) -> CaseRun {
    let grid = *case.grid();
    let exact = case.exact();
    let start = Instant::now();
    let mut record = RunRecord {
        case: case.name.into(),
        mesh: grid.nx() + 1,
        h: grid.h(),
        eps: case.params.eps,
        alpha: case.params.alpha,
        eta: case.params.eta,
        errors: None,
        iterations: None,
        residual: None,
        pi_gradient: None,
        cond_estimate: None,
        runtime_ms: 0.0,
        status: String::new(),
    };
    let (solution, state) = match &case.problem {
        CaseProblem::Linear(p) => match solve_linear_ap(p, solver) {
            Ok(sol) => {
                record.residual = Some(max_residual(&sol.residuals));
                record.pi_gradient = Some(sol.pi_gradient);
                record.status = "ok".into();
                (Some(sol.p), None)
            }
            Err(e) => {
                record.status = format!("failed: {e}");
                (None, None)
            }
        },
        CaseProblem::Nonlinear(p) => {
            let p0 = case.initial_guess().unwrap_or_else(|| case.exact());
            match gummel_solve(p, &p0, gummel, solver, Some(&exact)) {
                Ok((sol, st)) => {
                    record.iterations = Some(st.iterations());
                    record.residual = st.history.last().map(|r| max_residual(&r.residuals));
                    record.status = st.status.label().into();
                    let keep = st.status == GummelStatus::Converged || st.status == GummelStatus::MaxIterations;
                    (keep.then_some(sol), Some(st))
                }
                Err(e) => {
                    record.status = format!("failed: {e}");
                    (None, None)
                }
            }
        }
    };
    record.errors = solution.as_ref().and_then(|s| rel_errors(&exact, s).ok());
    record.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    CaseRun { record, solution, gummel: state }
}

fn build(
    cfg: &StudyConfig,
    case: &str,
    grid: Grid,
    eps: f64,
    alpha: Option<f64>,
    eta: Option<f64>,
) -> Result<ManufacturedCase, StudyError> {
    let params = CaseParams { eps, alpha, eta, mu: Some(cfg.mu) };
    Ok(case_by_name(case, grid, params)?)
}

fn square(k: usize) -> Result<Grid, StudyError> {
    Grid::square(k).map_err(|e| StudyError::Config(e.to_string()))
}

/// Mesh refinement: errors per `(ε, mesh)`, log-log slopes per `(ε, norm)`
/// over all meshes, the spread across `ε` per mesh, and `‖∂_h π‖/‖p‖`.
///
/// Metrics: `slope.<norm>.eps=<ε>`, `eps_spread.<norm>.mesh=<k>`,
/// `finest_ratio.l2.eps=<ε>` (coarser over finer error on the finest pair),
/// `pi_gradient.max`, `failures`.
pub fn convergence_study(cfg: &StudyConfig) -> Result<ExperimentReport, StudyError> {
    cfg.validate()?;
    if cfg.meshes.len() < 3 {
        return Err(StudyError::Config("a convergence study needs at least 3 meshes".into()));
    }
    let mut meshes = cfg.meshes.clone();
    meshes.sort_unstable();
    let mut rep = ExperimentReport::new("convergence");
    let alpha = (cfg.case == "angle").then(|| cfg.alphas[0]);
    for &eps in &cfg.eps {
        for &k in &meshes {
            let case = build(cfg, &cfg.case, square(k)?, eps, alpha, Some(cfg.etas[0]))?;
            rep.runs.push(run_case(&case, &cfg.gummel, &cfg.solver).record);
        }
    }
    for &eps in &cfg.eps {
        let rows: Vec<RunRecord> = rep.runs.iter().filter(|r| r.eps == eps).cloned().collect();
        for norm in Norm::ALL {
            let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r.h, r.error(norm)?))).collect();
            rep.set(format!("slope.{}.eps={}", norm.label(), eps_key(eps)), loglog_slope(&pts, 3));
        }
        if let [.., a, b] = rows.as_slice() {
            let ratio = a.error(Norm::L2).zip(b.error(Norm::L2)).map(|(x, y)| x / y);
            rep.set(format!("finest_ratio.l2.eps={}", eps_key(eps)), ratio);
        }
    }
    for &k in &meshes {
        for norm in Norm::ALL {
            let vals: Vec<f64> = rep.runs.iter().filter(|r| r.mesh == k).filter_map(|r| r.error(norm)).collect();
            rep.set(format!("eps_spread.{}.mesh={k}", norm.label()), variation(&vals));
        }
    }
    let pig =
        rep.runs.iter().filter_map(|r| r.pi_gradient).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    rep.set("pi_gradient.max", pig);
    let failures = rep.runs.iter().filter(|r| r.errors.is_none()).count();
    rep.set("failures", Some(failures as f64));
    Ok(rep)
}

/// Uniform-`b` angle sweep on one mesh (the first configured one).
///
/// Metrics: `variation.<norm>.eps=<ε>` (`max/min − 1` over `α`),
/// `endpoint_ratio.<norm>.eps=<ε>` (errors at the first and last angle),
/// `eps_gap.<norm>` (largest pointwise relative gap between the sweeps of
/// different `ε`), `failures`.
pub fn angle_sweep(cfg: &StudyConfig) -> Result<ExperimentReport, StudyError> {
    cfg.validate()?;
    let k = cfg.meshes[0];
    let grid = square(k)?;
    let mut rep = ExperimentReport::new("angle");
    for &eps in &cfg.eps {
        for &alpha in &cfg.alphas {
            let case = build(cfg, "angle", grid, eps, Some(alpha), None)?;
            rep.runs.push(run_case(&case, &cfg.gummel, &cfg.solver).record);
        }
    }
    for norm in Norm::ALL {
        let mut gap: Option<f64> = None;
        for &eps in &cfg.eps {
            let vals: Vec<f64> = rep.runs.iter().filter(|r| r.eps == eps).filter_map(|r| r.error(norm)).collect();
            rep.set(format!("variation.{}.eps={}", norm.label(), eps_key(eps)), variation(&vals));
            if let (Some(a), Some(b)) = (vals.first(), vals.last()) {
                rep.set(format!("endpoint_ratio.{}.eps={}", norm.label(), eps_key(eps)), Some(a.max(*b) / a.min(*b)));
            }
            for &other in cfg.eps.iter().filter(|&&o| o != eps) {
                for &alpha in &cfg.alphas {
                    let at = |e: f64| {
                        rep.runs.iter().find(|r| r.eps == e && r.alpha == Some(alpha)).and_then(|r| r.error(norm))
                    };
                    if let (Some(a), Some(b)) = (at(eps), at(other)) {
                        let g = (a - b).abs() / a.min(b);
                        gap = Some(gap.map_or(g, |m| m.max(g)));
                    }
                }
            }
        }
        rep.set(format!("eps_gap.{}", norm.label()), gap);
    }
    let failures = rep.runs.iter().filter(|r| r.errors.is_none()).count();
    rep.set("failures", Some(failures as f64));
    Ok(rep)
}

fn run_key(k: usize, eps: f64, eta: f64) -> String {
    format!("mesh={k}.eps={}.eta={eta}", eps_key(eps))
}

/// Gummel histories per `(mesh, ε, η)` on a nonlinear case.
///
/// Metrics, per run key `mesh=<k>.eps=<ε>.eta=<η>`: `E1.`, `E2.`, `Einf.`
/// (errors of the final iterate), `iterations_to_tol.` (first iteration
/// whose correction met `tol_rel`), `plateau_change.` (largest relative
/// error change after that), `converged.` and `diverged.` (1 or 0).
pub fn gummel_study(cfg: &StudyConfig) -> Result<ExperimentReport, StudyError> {
    cfg.validate()?;
    let mut rep = ExperimentReport::new("gummel");
    for &k in &cfg.meshes {
        let grid = square(k)?;
        for &eta in &cfg.etas {
            for &eps in &cfg.eps {
                let case = build(cfg, &cfg.case, grid, eps, None, Some(eta))?;
                let run = run_case(&case, &cfg.gummel, &cfg.solver);
                let key = run_key(k, eps, eta);
                for (name, norm) in [("E1", Norm::L1), ("E2", Norm::L2), ("Einf", Norm::Linf)] {
                    rep.set(format!("{name}.{key}"), run.record.error(norm));
                }
                if let Some(st) = run.gummel {
                    let status = &st.status;
                    rep.set(format!("converged.{key}"), Some(f64::from(*status == GummelStatus::Converged)));
                    rep.set(format!("diverged.{key}"), Some(f64::from(*status == GummelStatus::Diverged)));
                    rep.set(format!("iterations_to_tol.{key}"), st.first_below(cfg.gummel.tol_rel).map(|n| n as f64));
                    if let Some(final_err) = st.history.last().and_then(|r| r.error_rel_l2) {
                        let plateau = error_plateau_check(&st, cfg.gummel.tol_rel, final_err);
                        if plateau.reached_at.is_some() {
                            rep.set(format!("plateau_change.{key}"), Some(plateau.max_change_after));
                        }
                    }
                    rep.histories.push((key, st));
                }
                rep.runs.push(run.record);
            }
        }
    }
    Ok(rep)
}

/// The `ε → 0` limit on the `ap-limit` family. `ε = 0` must be in the list.
///
/// Per mesh `k`: `e0.mesh=<k>`, `plateau.mesh=<k>` (`E_ε` at the smallest
/// positive `ε`), `plateau_dev.mesh=<k>` (`|plateau/e₀ − 1|`) and
/// `slope_app.mesh=<k>` (log-log slope of `E_{ε,app}` over the points with
/// `E_{ε,app} ≥ 10 e₀`, where `E_ε` has not yet reached its plateau). Across
/// the coarsest and finest mesh: `plateau_h2_factor` =
/// `(plateau_c/plateau_f)/(h_c/h_f)²`.
pub fn epsilon_limit_study(cfg: &StudyConfig) -> Result<ExperimentReport, StudyError> {
    cfg.validate()?;
    if !cfg.eps.contains(&0.0) {
        return Err(StudyError::Config("the epsilon-limit study needs eps = 0 in the list".into()));
    }
    let mut eps_list = cfg.eps.clone();
    eps_list.sort_by(|a, b| a.total_cmp(b));
    let mut rep = ExperimentReport::new("eps-limit");
    let mut table = String::from("mesh,h,eps,E_eps,E_eps_app,e0,iterations,status\n");
    let mut plateaus = Vec::new();
    let mut meshes = cfg.meshes.clone();
    meshes.sort_unstable();
    for &k in &meshes {
        let grid = square(k)?;
        let mut p0_app: Option<NodeField> = None;
        let mut points = Vec::new();
        let mut rows = Vec::new();
        for &eps in &eps_list {
            let case = build(cfg, "ap-limit", grid, eps, None, Some(cfg.etas[0]))?;
            let p0 = case.limit().expect("ap-limit exposes its limit");
            let run = run_case(&case, &cfg.gummel, &cfg.solver);
            if eps == 0.0 {
                p0_app = run.solution.clone();
            }
            let e_eps = run.solution.as_ref().and_then(|s| rel_distance(s, &p0, &p0, Norm::L2).ok());
            let e_app = match (&run.solution, &p0_app) {
                (Some(s), Some(z)) => rel_distance(s, z, &p0, Norm::L2).ok(),
                _ => None,
            };
            rows.push((eps, e_eps, e_app, run.record.iterations, run.record.status.clone()));
            if let (true, Some(e)) = (eps > 0.0, e_app) {
                points.push((eps, e, e_eps));
            }
            rep.runs.push(run.record);
        }
        let e0 = rows.iter().find(|r| r.0 == 0.0).and_then(|r| r.1);
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6e}"));
        for (eps, e_eps, e_app, it, status) in &rows {
            table.push_str(&format!(
                "{k},{:.6e},{:e},{},{},{},{},{}\n",
                grid.h(),
                eps,
                opt(*e_eps),
                opt(*e_app),
                opt(e0),
                it.map_or(String::new(), |n| n.to_string()),
                status
            ));
        }
        rep.set(format!("e0.mesh={k}"), e0);
        let plateau = points.first().and_then(|p| p.2);
        rep.set(format!("plateau.mesh={k}"), plateau);
        if let (Some(p), Some(z)) = (plateau, e0) {
            rep.set(format!("plateau_dev.mesh={k}"), Some((p / z - 1.0).abs()));
            plateaus.push((grid.h(), p));
        }
        if let Some(z) = e0 {
            let seg: Vec<(f64, f64)> = points.iter().filter(|p| p.1 >= 10.0 * z).map(|p| (p.0, p.1)).collect();
            rep.set(format!("slope_app.mesh={k}"), loglog_slope(&seg, 2));
            rep.set(format!("slope_points.mesh={k}"), Some(seg.len() as f64));
        }
    }
    if let (Some(c), Some(f)) = (plateaus.first(), plateaus.last()) {
        if plateaus.len() >= 2 {
            rep.set("plateau_h2_factor", Some((c.1 / f.1) / (c.0 / f.0).powi(2)));
        }
    }
    rep.tables.push(("eps_limit".into(), table));
    Ok(rep)
}

/// Naive-system conditioning against `ε` (positive entries of the list,
/// descending), plus AP solves at the same `ε` on the first mesh.
///
/// Metrics: `cond.eps=<ε>`, `cond_strictly_increasing`, `cond_growth` (last
/// over first), `ap_spread.<norm>` (variation of the AP errors over `ε`).
pub fn conditioning_study(cfg: &StudyConfig) -> Result<ExperimentReport, StudyError> {
    cfg.validate()?;
    let k = cfg.meshes[0];
    let grid = square(k)?;
    let mut eps: Vec<f64> = cfg.eps.iter().copied().filter(|e| *e > 0.0).collect();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    let name = cfg.case.clone();
    let naive_solver = SolverConfig { tol: 1e-4, ..cfg.solver };
    let builder = |e: f64| -> Result<LinearProblem, StudyError> {
        match build(cfg, &name, grid, e, Some(cfg.alphas[0]), None)?.problem {
            CaseProblem::Linear(p) => Ok(p),
            CaseProblem::Nonlinear(_) => Err(StudyError::Config(format!("{name} is nonlinear"))),
        }
    };
    let cond: ConditioningReport = conditioning_sweep(builder, &eps, &naive_solver)?;
    let mut rep = ExperimentReport::new("conditioning");
    for row in &cond.rows {
        let case = build(cfg, &name, grid, row.eps, Some(cfg.alphas[0]), None)?;
        let mut run = run_case(&case, &cfg.gummel, &cfg.solver).record;
        run.cond_estimate = Some(row.cond_estimate);
        rep.runs.push(run);
        rep.set(format!("cond.eps={}", eps_key(row.eps)), Some(row.cond_estimate));
    }
    rep.set("cond_strictly_increasing", Some(f64::from(cond.is_strictly_increasing())));
    rep.set("cond_growth", cond.growth());
    for norm in Norm::ALL {
        let vals: Vec<f64> = rep.runs.iter().filter_map(|r| r.error(norm)).collect();
        let v = if vals.len() == rep.runs.len() { variation(&vals) } else { None };
        rep.set(format!("ap_spread.{}", norm.label()), v);
    }
    let mut csv = Vec::new();
    cond.write_csv(&mut csv).expect("writing to memory");
    rep.tables.push(("naive_conditioning".into(), String::from_utf8(csv).expect("ascii")));
    Ok(rep)
}

/// Experiment names understood by [`run_experiment`].
pub const EXPERIMENTS: [&str; 5] = ["convergence", "angle", "gummel", "eps-limit", "conditioning"];

pub fn run_experiment(name: &str, cfg: &StudyConfig) -> Result<ExperimentReport, StudyError> {
    match name {
        "convergence" => convergence_study(cfg),
        "angle" => angle_sweep(cfg),
        "gummel" => gummel_study(cfg),
        "eps-limit" => epsilon_limit_study(cfg),
        "conditioning" => conditioning_study(cfg),
        other => Err(StudyError::Config(format!("unknown experiment {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_error_basics() {
        let g = Grid::square(6).unwrap();
        let two = NodeField::constant(g, 2.0);
        let one = NodeField::constant(g, 1.0);
        for norm in Norm::ALL {
            assert_eq!(rel_error(&two, &two, norm).unwrap(), 0.0);
            assert!((rel_error(&two, &one, norm).unwrap() - 0.5).abs() < 1e-15);
        }
        assert_eq!(rel_error(&NodeField::zeros(g), &one, Norm::L2), Err(StudyError::ZeroNorm(Norm::L2)));
        let other = NodeField::constant(Grid::square(7).unwrap(), 2.0);
        assert_eq!(rel_error(&two, &other, Norm::L1), Err(StudyError::GridMismatch));
    }

    #[test]
    fn ghosts_never_count() {
        let g = Grid::square(5).unwrap();
        let exact = NodeField::constant(g, 3.0);
        let mut app = NodeField::constant(g, 3.0);
        for n in g.ghost_nodes() {
            app[n] = 1e9;
        }
        assert_eq!(rel_errors(&exact, &app).unwrap(), [0.0; 3]);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025, 0.0125].iter().map(|&h| (h, 3.0 * h * h)).collect();
        assert!((loglog_slope(&pts, 3).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(loglog_slope(&pts[..2], 3), None);
        let with_bad = [(0.1, 1.0), (0.05, f64::NAN), (0.025, 0.0625)];
        assert!((loglog_slope(&with_bad, 2).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn variation_and_keys() {
        assert!((variation(&[1.0, 1.05, 1.02]).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(variation(&[]), None);
        assert_eq!(eps_key(0.1), "1e-1");
        assert_eq!(eps_key(0.0), "0e0");
        let a = default_alphas();
        assert_eq!(a.len(), 19);
        assert_eq!(a[0], 0.0);
        assert!((a[18] - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(StudyConfig::default().validate().is_ok());
        let bad = StudyConfig { eps: vec![], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = StudyConfig { alphas: vec![2.0], ..Default::default() };
        assert!(bad.validate().is_err());
        let two = StudyConfig { meshes: vec![8, 16], ..Default::default() };
        assert!(convergence_study(&two).is_err());
        let no_zero = StudyConfig { eps: vec![0.1], meshes: vec![8], ..Default::default() };
        assert!(epsilon_limit_study(&no_zero).is_err());
    }

    #[test]
    fn small_convergence_study_runs() {
        let cfg = StudyConfig { meshes: vec![8, 16, 32], eps: vec![0.1, 0.0], ..Default::default() };
        let rep = convergence_study(&cfg).unwrap();
        assert_eq!(rep.runs.len(), 6);
        assert_eq!(rep.metric("failures"), Some(0.0));
        let s = rep.metric("slope.l2.eps=0e0").unwrap();
        assert!(s > 1.5 && s < 2.5, "{s}");
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 6 * 3);
    }
}
