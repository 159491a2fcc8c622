//! Manufactured test problems on `[1, 2]²` with closed-form exact solutions.
//!
//! | name               | reaction      | direction `b`        | exact solution                     |
//! |--------------------|---------------|----------------------|------------------------------------|
//! | `linear-variable`  | `G p`         | `(y/r, −x/r)`        | `1/(1 + x² + y²)`                  |
//! | `angle`            | `G p`         | `(sin α, −cos α)`    | `sin(x cos α + y sin α) + q`       |
//! | `nonlinear-spline` | `p⁶`          | `(y/r, −x/r)`        | `1 + S(·)S(·)` spline bump         |
//! | `ap-limit`         | `p⁶`          | `(y/r, −x/r)`        | spline bump `+ ε ·` cosine bumps   |
//!
//! Forcing data always follow `f = g(p)` and `b·S = b·∇p`, so the diffusion
//! term vanishes identically at the exact solution.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::apcore::LinearProblem;
use crate::grid::{CellField, CellVectorField, Grid, GridError, NodeField};
use crate::gummel::{NonlinearProblem, Reaction};
use crate::operators::{OperatorContext, OperatorError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProblemError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("unknown case `{0}`")]
    UnknownCase(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Which outer branch of the cubic spline to use on `1 ≤ |z| ≤ 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplineVariant {
    /// `(2 − |z|)³ / 6`: the standard cubic B-spline, `C²` and compactly
    /// supported.
    #[default]
    BSpline,
    /// `(2 − |z|³) / 6` as printed in some references; jumps from `−1` to `0`
    /// at `|z| = 2`.
    Printed,
}

/// Cubic spline bump, zero for `|z| ≥ 2`.
pub fn spline(z: f64, variant: SplineVariant) -> f64 {
    let a = z.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + 0.5 * a * a * a
    } else if a < 2.0 {
        match variant {
            SplineVariant::BSpline => (2.0 - a).powi(3) / 6.0,
            SplineVariant::Printed => (2.0 - a * a * a) / 6.0,
        }
    } else {
        0.0
    }
}

/// `S′(z)`.
pub fn spline_deriv(z: f64, variant: SplineVariant) -> f64 {
    let a = z.abs();
    let s = z.signum();
    if a < 1.0 {
        s * (-2.0 * a + 1.5 * a * a)
    } else if a < 2.0 {
        match variant {
            SplineVariant::BSpline => -s * 0.5 * (2.0 - a).powi(2),
            SplineVariant::Printed => -s * 0.5 * a * a,
        }
    } else {
        0.0
    }
}

/// `b = (sin θ, −cos θ)` with `θ = arctan(y/x)`, i.e. `(y, −x)/r`.
pub fn circular_direction(x: f64, y: f64) -> [f64; 2] {
    let r = x.hypot(y);
    [y / r, -x / r]
}

/// `1 + sin²x sin²y` and its gradient.
pub fn sin_weight(x: f64, y: f64) -> (f64, [f64; 2]) {
    let (sx, cx, sy, cy) = (x.sin(), x.cos(), y.sin(), y.cos());
    (1.0 + sx * sx * sy * sy, [2.0 * sx * cx * sy * sy, 2.0 * sx * sx * sy * cy])
}

/// `1 + cos²x cos²y`.
pub fn cos_weight(x: f64, y: f64) -> f64 {
    1.0 + (x.cos() * y.cos()).powi(2)
}

/// Exact solution of `linear-variable` and its gradient.
pub fn rational_solution(x: f64, y: f64) -> (f64, [f64; 2]) {
    let d = 1.0 + x * x + y * y;
    (1.0 / d, [-2.0 * x / (d * d), -2.0 * y / (d * d)])
}

/// Centre and half-width scale of the spline bump.
pub const BUMP_CENTRE: (f64, f64) = (1.5, 1.5);
pub const BUMP_SCALE: (f64, f64) = (0.1, 0.1);

/// `1 + S((x − 3/2)/0.1) S((y − 3/2)/0.1)` and its gradient.
pub fn spline_solution(x: f64, y: f64, v: SplineVariant) -> (f64, [f64; 2]) {
    let zx = (x - BUMP_CENTRE.0) / BUMP_SCALE.0;
    let zy = (y - BUMP_CENTRE.1) / BUMP_SCALE.1;
    let (sx, sy) = (spline(zx, v), spline(zy, v));
    let (dx, dy) = (spline_deriv(zx, v) / BUMP_SCALE.0, spline_deriv(zy, v) / BUMP_SCALE.1);
    (1.0 + sx * sy, [dx * sy, sx * dy])
}

/// `max(0, cos(2π(x − 3/2)/0.1) cos(2π(y − 3/2)/0.1))` and its gradient
/// (taken as zero where the product is not positive).
pub fn cosine_bumps(x: f64, y: f64) -> (f64, [f64; 2]) {
    let kx = 2.0 * PI / BUMP_SCALE.0;
    let ky = 2.0 * PI / BUMP_SCALE.1;
    let (ax, ay) = (kx * (x - BUMP_CENTRE.0), ky * (y - BUMP_CENTRE.1));
    let v = ax.cos() * ay.cos();
    if v > 0.0 {
        (v, [-kx * ax.sin() * ay.cos(), -ky * ax.cos() * ay.sin()])
    } else {
        (0.0, [0.0, 0.0])
    }
}

/// Initial perturbation `η max(0, 1 − μ(x − 3/2)² − μ(y − 3/2)²)`.
pub fn perturbation(x: f64, y: f64, eta: f64, mu: f64) -> f64 {
    let (dx, dy) = (x - BUMP_CENTRE.0, y - BUMP_CENTRE.1);
    eta * (1.0 - mu * dx * dx - mu * dy * dy).max(0.0)
}

/// Closed forms for the uniform-direction case at angle `α`.
///
/// With `D = b·∇ = sin α ∂_x − cos α ∂_y`, the exact solution is
/// `p = π + q`, `π = sin(x cos α + y sin α)` (so `Dπ = 0`) and
/// `q = (1/G) D(G l) = D l + l DG/G`, where `l` vanishes on the boundary of
/// the computational domain.
#[derive(Debug, Clone, Copy)]
pub struct AngleCase {
    pub alpha: f64,
    x0: f64,
    y0: f64,
    kx: f64,
    ky: f64,
}

impl AngleCase {
    /// `l` uses the outer cell faces of `grid` as its zero lines.
    pub fn new(alpha: f64, grid: &Grid) -> Self {
        let (x0, x1) = (grid.cell_x(-1), grid.cell_x(grid.nx() as isize));
        let (y0, y1) = (grid.cell_y(-1), grid.cell_y(grid.ny() as isize));
        Self { alpha, x0, y0, kx: 2.0 * PI / (x1 - x0), ky: 2.0 * PI / (y1 - y0) }
    }

    pub fn direction(&self) -> [f64; 2] {
        [self.alpha.sin(), -self.alpha.cos()]
    }

    pub fn pi(&self, x: f64, y: f64) -> f64 {
        (x * self.alpha.cos() + y * self.alpha.sin()).sin()
    }

    pub fn l(&self, x: f64, y: f64) -> f64 {
        (self.kx * (x - self.x0)).sin() * (self.ky * (y - self.y0)).sin()
    }

    /// `(l, Dl, D²l)`.
    fn l_jet(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let (s, c) = (self.alpha.sin(), self.alpha.cos());
        let (ax, ay) = (self.kx * (x - self.x0), self.ky * (y - self.y0));
        let (sx, cx, sy, cy) = (ax.sin(), ax.cos(), ay.sin(), ay.cos());
        let l = sx * sy;
        let lx = self.kx * cx * sy;
        let ly = self.ky * sx * cy;
        let lxx = -self.kx * self.kx * l;
        let lyy = -self.ky * self.ky * l;
        let lxy = self.kx * self.ky * cx * cy;
        (l, s * lx - c * ly, s * s * lxx - 2.0 * s * c * lxy + c * c * lyy)
    }

    /// `(G, DG, D²G)` for `G = 1 + sin²x sin²y`.
    fn g_jet(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let (s, c) = (self.alpha.sin(), self.alpha.cos());
        let (sx, cx, sy, cy) = (x.sin(), x.cos(), y.sin(), y.cos());
        let g = 1.0 + sx * sx * sy * sy;
        let gx = 2.0 * sx * cx * sy * sy;
        let gy = 2.0 * sx * sx * sy * cy;
        let gxx = 2.0 * (2.0 * x).cos() * sy * sy;
        let gyy = 2.0 * sx * sx * (2.0 * y).cos();
        let gxy = (2.0 * x).sin() * (2.0 * y).sin();
        (g, s * gx - c * gy, s * s * gxx - 2.0 * s * c * gxy + c * c * gyy)
    }

    pub fn q(&self, x: f64, y: f64) -> f64 {
        let (l, dl, _) = self.l_jet(x, y);
        let (g, dg, _) = self.g_jet(x, y);
        dl + l * dg / g
    }

    /// `Dq = D(p)`.
    pub fn dq(&self, x: f64, y: f64) -> f64 {
        let (l, dl, d2l) = self.l_jet(x, y);
        let (g, dg, d2g) = self.g_jet(x, y);
        d2l + dl * dg / g + l * (d2g * g - dg * dg) / (g * g)
    }

    pub fn p(&self, x: f64, y: f64) -> f64 {
        self.pi(x, y) + self.q(x, y)
    }
}

type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone)]
pub enum CaseProblem {
    Linear(LinearProblem),
    Nonlinear(NonlinearProblem),
}

/// Parameters a case was built with.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CaseParams {
    pub eps: f64,
    pub alpha: Option<f64>,
    pub eta: Option<f64>,
    pub mu: Option<f64>,
}

/// A problem together with its exact solution.
#[derive(Clone)]
pub struct ManufacturedCase {
    pub name: &'static str,
    pub params: CaseParams,
    pub problem: CaseProblem,
    grid: Grid,
    exact: ScalarFn,
    pi_exact: Option<ScalarFn>,
    q_exact: Option<ScalarFn>,
    limit: Option<ScalarFn>,
    initial: Option<ScalarFn>,
}

impl std::fmt::Debug for ManufacturedCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManufacturedCase").field("name", &self.name).field("params", &self.params).finish()
    }
}

fn sample_nodes(grid: Grid, f: &ScalarFn) -> NodeField {
    NodeField::sample(grid, |x, y| f(x, y)).expect("manufactured data is finite on [1,2]²")
}

impl ManufacturedCase {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn exact_at(&self, x: f64, y: f64) -> f64 {
        (self.exact)(x, y)
    }

    /// Exact solution at every node, ghosts included.
    pub fn exact(&self) -> NodeField {
        sample_nodes(self.grid, &self.exact)
    }

    pub fn pi_exact(&self) -> Option<NodeField> {
        self.pi_exact.as_ref().map(|f| sample_nodes(self.grid, f))
    }

    pub fn q_exact(&self) -> Option<NodeField> {
        self.q_exact.as_ref().map(|f| sample_nodes(self.grid, f))
    }

    /// The `ε = 0` solution, for families indexed by `ε`.
    pub fn limit(&self) -> Option<NodeField> {
        self.limit.as_ref().map(|f| sample_nodes(self.grid, f))
    }

    /// Analytic starting guess for the nonlinear cases.
    pub fn initial_guess(&self) -> Option<NodeField> {
        self.initial.as_ref().map(|f| sample_nodes(self.grid, f))
    }

    pub fn initial_guess_at(&self, x: f64, y: f64) -> Option<f64> {
        self.initial.as_ref().map(|f| f(x, y))
    }
}

fn check_eps(eps: f64) -> Result<(), ProblemError> {
    if eps >= 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(ProblemError::Parameter(format!("eps = {eps}")))
    }
}

fn linear_problem(
    grid: Grid,
    eps: f64,
    dir: impl Fn(f64, f64) -> [f64; 2],
    exact: impl Fn(f64, f64) -> (f64, [f64; 2]),
) -> Result<LinearProblem, ProblemError> {
    let b = CellVectorField::sample(grid, &dir)?;
    let g_node = NodeField::sample(grid, |x, y| sin_weight(x, y).0)?;
    let g_cell = CellField::sample(grid, |x, y| sin_weight(x, y).0)?;
    let f = NodeField::sample(grid, |x, y| sin_weight(x, y).0 * exact(x, y).0)?;
    let bs = CellField::sample(grid, |x, y| {
        let (_, [px, py]) = exact(x, y);
        let [bx, by] = dir(x, y);
        bx * px + by * py
    })?;
    Ok(LinearProblem { eps, ctx: OperatorContext::new(b)?, g_node, h_cell: g_cell.clone(), g_cell, f, bs })
}

/// `linear-variable`: `G = H = 1 + sin²x sin²y`, circular `b`,
/// `p = 1/(1 + x² + y²)`.
pub fn linear_variable(grid: Grid, eps: f64) -> Result<ManufacturedCase, ProblemError> {
    check_eps(eps)?;
    let problem = linear_problem(grid, eps, circular_direction, rational_solution)?;
    Ok(ManufacturedCase {
        name: "linear-variable",
        params: CaseParams { eps, ..Default::default() },
        problem: CaseProblem::Linear(problem),
        grid,
        exact: Arc::new(|x, y| rational_solution(x, y).0),
        pi_exact: None,
        q_exact: None,
        limit: None,
        initial: None,
    })
}

/// `angle`: uniform `b = (sin α, −cos α)` and an exact solution built in the
/// aligned frame, `α ∈ [0, π/2]`.
pub fn angle(grid: Grid, eps: f64, alpha: f64) -> Result<ManufacturedCase, ProblemError> {
    check_eps(eps)?;
    if !(0.0..=PI / 2.0 + 1e-12).contains(&alpha) {
        return Err(ProblemError::Parameter(format!("alpha = {alpha} outside [0, π/2]")));
    }
    let case = AngleCase::new(alpha, &grid);
    let b = CellVectorField::uniform(grid, case.direction());
    let g_node = NodeField::sample(grid, |x, y| sin_weight(x, y).0)?;
    let g_cell = CellField::sample(grid, |x, y| sin_weight(x, y).0)?;
    let f = NodeField::sample(grid, |x, y| sin_weight(x, y).0 * case.p(x, y))?;
    let bs = CellField::sample(grid, |x, y| case.dq(x, y))?;
    let problem = LinearProblem { eps, ctx: OperatorContext::new(b)?, g_node, h_cell: g_cell.clone(), g_cell, f, bs };
    Ok(ManufacturedCase {
        name: "angle",
        params: CaseParams { eps, alpha: Some(alpha), ..Default::default() },
        problem: CaseProblem::Linear(problem),
        grid,
        exact: Arc::new(move |x, y| case.p(x, y)),
        pi_exact: Some(Arc::new(move |x, y| case.pi(x, y))),
        q_exact: Some(Arc::new(move |x, y| case.q(x, y))),
        limit: None,
        initial: None,
    })
}

fn power_six_problem(
    grid: Grid,
    eps: f64,
    exact: impl Fn(f64, f64) -> (f64, [f64; 2]),
) -> Result<NonlinearProblem, ProblemError> {
    let reaction = Reaction::Power(6);
    let b = CellVectorField::sample(grid, circular_direction)?;
    let f = NodeField::sample(grid, |x, y| reaction.g(exact(x, y).0))?;
    let bs = CellField::sample(grid, |x, y| {
        let [bx, by] = circular_direction(x, y);
        let (_, [px, py]) = exact(x, y);
        bx * px + by * py
    })?;
    Ok(NonlinearProblem {
        eps,
        ctx: OperatorContext::new(b)?,
        h_cell: CellField::sample(grid, cos_weight)?,
        f,
        bs,
        reaction,
    })
}

fn check_perturbation(eta: f64, mu: f64) -> Result<(), ProblemError> {
    if eta.is_finite() && mu.is_finite() && mu >= 0.0 {
        Ok(())
    } else {
        Err(ProblemError::Parameter(format!("eta = {eta}, mu = {mu}")))
    }
}

/// `nonlinear-spline`: `g(p) = p⁶`, `H = 1 + cos²x cos²y`, circular `b`,
/// spline-bump exact solution; the initial guess adds the perturbation
/// `η max(0, 1 − μ|x − x_mid|²)`.
pub fn nonlinear_spline(
    grid: Grid,
    eps: f64,
    eta: f64,
    mu: f64,
    variant: SplineVariant,
) -> Result<ManufacturedCase, ProblemError> {
    check_eps(eps)?;
    check_perturbation(eta, mu)?;
    let problem = power_six_problem(grid, eps, |x, y| spline_solution(x, y, variant))?;
    Ok(ManufacturedCase {
        name: "nonlinear-spline",
        params: CaseParams { eps, eta: Some(eta), mu: Some(mu), ..Default::default() },
        problem: CaseProblem::Nonlinear(problem),
        grid,
        exact: Arc::new(move |x, y| spline_solution(x, y, variant).0),
        pi_exact: None,
        q_exact: None,
        limit: None,
        initial: Some(Arc::new(move |x, y| spline_solution(x, y, variant).0 + perturbation(x, y, eta, mu))),
    })
}

/// `ap-limit`: as `nonlinear-spline` but with exact solution
/// `p_ε = p₀ + ε p̃` where `p̃` is the clipped cosine product; `p₀` is
/// available through [`ManufacturedCase::limit`].
pub fn ap_limit(grid: Grid, eps: f64, eta: f64, mu: f64) -> Result<ManufacturedCase, ProblemError> {
    check_eps(eps)?;
    check_perturbation(eta, mu)?;
    let v = SplineVariant::BSpline;
    let exact = move |x: f64, y: f64| {
        let (p0, g0) = spline_solution(x, y, v);
        let (p1, g1) = cosine_bumps(x, y);
        (p0 + eps * p1, [g0[0] + eps * g1[0], g0[1] + eps * g1[1]])
    };
    let problem = power_six_problem(grid, eps, exact)?;
    Ok(ManufacturedCase {
        name: "ap-limit",
        params: CaseParams { eps, eta: Some(eta), mu: Some(mu), ..Default::default() },
        problem: CaseProblem::Nonlinear(problem),
        grid,
        exact: Arc::new(move |x, y| exact(x, y).0),
        pi_exact: None,
        q_exact: None,
        limit: Some(Arc::new(move |x, y| spline_solution(x, y, v).0)),
        initial: Some(Arc::new(move |x, y| exact(x, y).0 + perturbation(x, y, eta, mu))),
    })
}

pub const CASE_NAMES: [&str; 4] = ["linear-variable", "angle", "nonlinear-spline", "ap-limit"];

/// Looks a case up by registry name. Unused parameters are ignored;
/// missing ones fall back to `α = 0`, `η = 0.1`, `μ = 60`.
pub fn case_by_name(name: &str, grid: Grid, params: CaseParams) -> Result<ManufacturedCase, ProblemError> {
    let eta = params.eta.unwrap_or(0.1);
    let mu = params.mu.unwrap_or(60.0);
    match name {
        "linear-variable" => linear_variable(grid, params.eps),
        "angle" => angle(grid, params.eps, params.alpha.unwrap_or(0.0)),
        "nonlinear-spline" => nonlinear_spline(grid, params.eps, eta, mu, SplineVariant::BSpline),
        "ap-limit" => ap_limit(grid, params.eps, eta, mu),
        other => Err(ProblemError::UnknownCase(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const STEP: f64 = 1e-5;

    fn fd(f: impl Fn(f64, f64) -> f64, x: f64, y: f64) -> [f64; 2] {
        [(f(x + STEP, y) - f(x - STEP, y)) / (2.0 * STEP), (f(x, y + STEP) - f(x, y - STEP)) / (2.0 * STEP)]
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn spline_values() {
        let v = SplineVariant::BSpline;
        assert_eq!(spline(0.0, v), 2.0 / 3.0);
        assert!((spline(1.0, v) - 1.0 / 6.0).abs() < 1e-15);
        assert!((spline(1.0 - 1e-15, v) - 1.0 / 6.0).abs() < 1e-14);
        assert_eq!(spline(2.0, v), 0.0);
        assert_eq!(spline(2.5, v), 0.0);
        assert_eq!(spline(-0.3, v), spline(0.3, v));
        // Branch agreement of S and S' at |z| = 1.
        let lo = 1.0 - 1e-12;
        assert!((spline(lo, v) - spline(1.0, v)).abs() < 1e-11);
        assert!((spline_deriv(lo, v) - spline_deriv(1.0, v)).abs() < 1e-11);
        assert!((spline_deriv(1.0, v) + 0.5).abs() < 1e-14);
    }

    #[test]
    fn printed_spline_jumps_at_two() {
        let v = SplineVariant::Printed;
        assert!((spline(1.0, v) - 1.0 / 6.0).abs() < 1e-15);
        assert!((spline(2.0 - 1e-12, v) + 1.0).abs() < 1e-10);
        assert_eq!(spline(2.0, v), 0.0);
    }

    #[test]
    fn spline_derivative_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for v in [SplineVariant::BSpline, SplineVariant::Printed] {
            for _ in 0..200 {
                let z: f64 = rng.random_range(-2.5..2.5);
                if [0.0f64, 1.0, 2.0].iter().any(|k| (z.abs() - k).abs() < 1e-3) {
                    continue;
                }
                let d = (spline(z + STEP, v) - spline(z - STEP, v)) / (2.0 * STEP);
                assert!(close(spline_deriv(z, v), d, 1e-6), "{v:?} z={z}");
            }
        }
    }

    #[test]
    fn gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grid = Grid::square(50).unwrap();
        let cases: Vec<AngleCase> =
            [0.0, 0.4, PI / 4.0, 1.3, PI / 2.0].iter().map(|&a| AngleCase::new(a, &grid)).collect();
        for _ in 0..100 {
            let (x, y) = (rng.random_range(1.0..2.0), rng.random_range(1.0..2.0));

            let (_, g) = rational_solution(x, y);
            let d = fd(|x, y| rational_solution(x, y).0, x, y);
            assert!(close(g[0], d[0], 1e-6) && close(g[1], d[1], 1e-6));

            let (_, g) = sin_weight(x, y);
            let d = fd(|x, y| sin_weight(x, y).0, x, y);
            assert!(close(g[0], d[0], 1e-6) && close(g[1], d[1], 1e-6));

            let (_, g) = spline_solution(x, y, SplineVariant::BSpline);
            let d = fd(|x, y| spline_solution(x, y, SplineVariant::BSpline).0, x, y);
            assert!(close(g[0], d[0], 1e-5) && close(g[1], d[1], 1e-5), "{x} {y} {g:?} {d:?}");

            let (v, g) = cosine_bumps(x, y);
            if v > 1e-3 {
                let d = fd(|x, y| cosine_bumps(x, y).0, x, y);
                assert!(close(g[0], d[0], 1e-5) && close(g[1], d[1], 1e-5));
            }

            for c in &cases {
                let [s, t] = c.direction();
                let dir = |f: &dyn Fn(f64, f64) -> f64| {
                    let d = fd(f, x, y);
                    s * d[0] + t * d[1]
                };
                assert!(dir(&|x, y| c.pi(x, y)).abs() < 1e-8);
                let q_fd = {
                    let gl = |x: f64, y: f64| sin_weight(x, y).0 * c.l(x, y);
                    dir(&gl) / sin_weight(x, y).0
                };
                assert!(close(c.q(x, y), q_fd, 1e-6), "q at alpha {}", c.alpha);
                assert!(close(c.dq(x, y), dir(&|x, y| c.q(x, y)), 1e-6), "dq at alpha {}", c.alpha);
            }
        }
    }

    #[test]
    fn linear_variable_data() {
        let (p, g) = rational_solution(1.0, 1.0);
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
        assert!((g[0] + 2.0 / 9.0).abs() < 1e-15 && (g[1] + 2.0 / 9.0).abs() < 1e-15);
        // b is tangent to circles and p is radial, so b·∇p vanishes.
        let [bx, by] = circular_direction(1.0, 1.0);
        assert!((bx - 0.5f64.sqrt()).abs() < 1e-15 && (by + 0.5f64.sqrt()).abs() < 1e-15);
        assert!((bx * g[0] + by * g[1]).abs() < 1e-16);

        let grid = Grid::square(20).unwrap();
        let case = linear_variable(grid, 0.1).unwrap();
        let CaseProblem::Linear(pr) = &case.problem else { panic!() };
        for c in grid.cells() {
            let [bx, by] = pr.ctx.b()[c];
            assert!((bx.hypot(by) - 1.0).abs() < 1e-14);
        }
        let exact = case.exact();
        for n in grid.nodes() {
            assert!((pr.f[n] - pr.g_node[n] * exact[n]).abs() < 1e-15);
        }
    }

    #[test]
    fn angle_case_data() {
        let grid = Grid::square(40).unwrap();
        let c0 = AngleCase::new(0.0, &grid);
        assert_eq!(c0.direction(), [0.0, -1.0]);
        assert!((c0.pi(1.3, 1.7) - 1.3f64.sin()).abs() < 1e-15);
        for c in [c0, AngleCase::new(0.9, &grid)] {
            for (i, j) in grid.ghost_cells() {
                assert!(c.l(grid.cell_x(i), grid.cell_y(j)).abs() < 1e-13);
            }
        }
        // Oracle: q(3/2, 3/2) at α = π/4, from D l + l DG/G with l = sin(2π·½)² = 0
        // and D l = (√2/2)(l_x − l_y) where l_x = 2π cos(π) sin(π) = 0. Both vanish.
        let c = AngleCase::new(PI / 4.0, &grid);
        assert!(c.q(1.5, 1.5).abs() < 1e-13);
        // Off-centre value checked against the finite-difference form of
        // (1/G)∇·(G b l).
        let (x, y) = (1.2, 1.65);
        let h = 1e-5;
        let [bx, by] = c.direction();
        let gl = |x: f64, y: f64| sin_weight(x, y).0 * c.l(x, y);
        let div = bx * (gl(x + h, y) - gl(x - h, y)) / (2.0 * h) + by * (gl(x, y + h) - gl(x, y - h)) / (2.0 * h);
        assert!((c.q(x, y) - div / sin_weight(x, y).0).abs() < 1e-7);
    }

    #[test]
    fn spline_cases() {
        let grid = Grid::square(20).unwrap();
        let case = nonlinear_spline(grid, 0.1, 0.1, 60.0, SplineVariant::BSpline).unwrap();
        assert!((case.exact_at(1.5, 1.5) - 13.0 / 9.0).abs() < 1e-15);
        assert_eq!(case.exact_at(1.25, 1.5), 1.0);
        assert_eq!(case.exact_at(1.5, 1.8), 1.0);
        assert!((case.initial_guess_at(1.5, 1.5).unwrap() - (13.0 / 9.0 + 0.1)).abs() < 1e-15);

        let d = ap_limit(grid, 0.0, 0.1, 60.0).unwrap();
        let (e, l) = (d.exact(), d.limit().unwrap());
        assert!(grid.nodes().all(|n| e[n] == l[n]));
        assert_eq!(cosine_bumps(1.5, 1.5).0, 1.0);
        let d = ap_limit(grid, 1e-2, 0.1, 60.0).unwrap();
        assert!((d.exact_at(1.5, 1.5) - (13.0 / 9.0 + 1e-2)).abs() < 1e-15);
    }

    #[test]
    fn registry() {
        let grid = Grid::square(10).unwrap();
        for name in CASE_NAMES {
            assert_eq!(case_by_name(name, grid, CaseParams::default()).unwrap().name, name);
        }
        assert!(matches!(case_by_name("nope", grid, CaseParams::default()), Err(ProblemError::UnknownCase(_))));
        assert!(angle(grid, 0.1, 2.0).is_err());
        assert!(linear_variable(grid, -1.0).is_err());
    }
}
