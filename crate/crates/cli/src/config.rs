use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use apdiff::gummel::GummelOptions;
use apdiff::linsolve::{SolverConfig, SolverKind};
use apdiff::study::{default_alphas, StudyConfig};
use serde::{Deserialize, Serialize};

use crate::checks::Check;

/// Experiment file. Every key is optional and falls back to the library
/// defaults.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: Option<String>,
    /// `k` of the `k × k` cell meshes.
    pub meshes: Option<Vec<usize>>,
    pub eps: Option<Vec<f64>>,
    /// Radians. `alpha_count` spreads that many angles uniformly on
    /// `[0, π/2]` instead.
    pub alphas: Option<Vec<f64>>,
    pub alpha_count: Option<usize>,
    pub etas: Option<Vec<f64>>,
    pub mu: Option<f64>,
    /// Used when `--out` is not given. Relative paths resolve against the
    /// config file.
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub gummel: GummelSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GummelSection {
    pub tol_rel: Option<f64>,
    pub max_iter: Option<usize>,
    pub extra_iterations: Option<usize>,
    pub inexact_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// `direct` or `iterative`.
    pub kind: Option<String>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub restart: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(out) = &cfg.output {
            if out.is_relative() {
                cfg.output = Some(path.parent().unwrap_or(Path::new(".")).join(out));
            }
        }
        Ok(cfg)
    }

    pub fn study(&self) -> Result<StudyConfig> {
        let d = StudyConfig::default();
        let alphas = match (&self.alphas, self.alpha_count) {
            (Some(_), Some(_)) => bail!("give either alphas or alpha_count, not both"),
            (Some(a), None) => a.clone(),
            (None, Some(0)) => bail!("alpha_count must be positive"),
            (None, Some(1)) => vec![0.0],
            (None, Some(n)) => (0..n).map(|k| std::f64::consts::FRAC_PI_2 * k as f64 / (n - 1) as f64).collect(),
            (None, None) => default_alphas(),
        };
        let g = GummelOptions::default();
        let gummel = GummelOptions {
            tol_rel: self.gummel.tol_rel.unwrap_or(g.tol_rel),
            max_iter: self.gummel.max_iter.unwrap_or(g.max_iter),
            extra_iterations: self.gummel.extra_iterations.unwrap_or(g.extra_iterations),
            inexact_tol: self.gummel.inexact_tol.unwrap_or(g.inexact_tol),
            ..g
        };
        let s = SolverConfig::default();
        let kind = match self.solver.kind.as_deref() {
            None => s.kind,
            Some("direct") => SolverKind::Direct,
            Some("iterative") => SolverKind::Iterative,
            Some(other) => bail!("unknown solver kind {other:?} (direct, iterative)"),
        };
        let solver = SolverConfig {
            kind,
            tol: self.solver.tol.unwrap_or(s.tol),
            max_iter: self.solver.max_iter.unwrap_or(s.max_iter),
            restart: self.solver.restart.unwrap_or(s.restart),
        };
        let cfg = StudyConfig {
            case: self.case.clone().unwrap_or(d.case),
            meshes: self.meshes.clone().unwrap_or(d.meshes),
            eps: self.eps.clone().unwrap_or(d.eps),
            alphas,
            etas: self.etas.clone().unwrap_or(d.etas),
            mu: self.mu.unwrap_or(d.mu),
            gummel,
            solver,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
