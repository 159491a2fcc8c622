use std::collections::BTreeMap;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

/// A threshold on report metrics. `metric` may contain `*` wildcards; every
/// metric it matches must pass, and a pattern matching nothing fails.
#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub metric: String,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub target: Option<f64>,
    /// Relative tolerance around `target`.
    pub rel_tol: Option<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Outcome {
    pub check: String,
    pub metric: String,
    pub value: Option<f64>,
    pub pass: bool,
}

impl Check {
    pub fn validate(&self) -> Result<()> {
        match (self.target, self.rel_tol) {
            (Some(_), None) | (None, Some(_)) => bail!("{}: target and rel_tol go together", self.metric),
            (Some(_), Some(t)) if t.is_nan() || t < 0.0 => bail!("{}: rel_tol must be non-negative", self.metric),
            _ => {}
        }
        if self.min.is_none() && self.max.is_none() && self.target.is_none() {
            bail!("{}: a check needs min, max or target", self.metric);
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if let Some(v) = self.min {
            parts.push(format!(">= {v:e}"));
        }
        if let Some(v) = self.max {
            parts.push(format!("<= {v:e}"));
        }
        if let (Some(t), Some(r)) = (self.target, self.rel_tol) {
            parts.push(format!("= {t:e} ± {:.1}%", 100.0 * r));
        }
        format!("{} {}", self.metric, parts.join(", "))
    }

    pub fn accepts(&self, v: f64) -> bool {
        v.is_finite()
            && self.min.is_none_or(|m| v >= m)
            && self.max.is_none_or(|m| v <= m)
            && match (self.target, self.rel_tol) {
                (Some(t), Some(r)) => (v - t).abs() <= r * t.abs(),
                _ => true,
            }
    }

    pub fn evaluate(&self, metrics: &BTreeMap<String, f64>) -> Vec<Outcome> {
        let hits: Vec<Outcome> = metrics
            .iter()
            .filter(|(k, _)| glob_match(&self.metric, k))
            .map(|(k, &v)| Outcome { check: self.describe(), metric: k.clone(), value: Some(v), pass: self.accepts(v) })
            .collect();
        if hits.is_empty() {
            vec![Outcome { check: self.describe(), metric: self.metric.clone(), value: None, pass: false }]
        } else {
            hits
        }
    }
}

/// `*` matches any run of characters; everything else is literal.
fn glob_match(pattern: &str, s: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == s;
    }
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !s.starts_with(first) || s.len() < first.len() + last.len() || !s.ends_with(last) {
        return false;
    }
    let mut rest = &s[first.len()..s.len() - last.len()];
    for mid in &parts[1..parts.len() - 1] {
        match rest.find(mid) {
            Some(i) => rest = &rest[i + mid.len()..],
            None => return false,
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(metric: &str) -> Check {
        Check { metric: metric.into(), min: Some(1.8), max: Some(2.2), target: None, rel_tol: None }
    }

    #[test]
    fn globbing() {
        assert!(glob_match("slope.l2.*", "slope.l2.eps=1e-1"));
        assert!(glob_match("*.l2.*", "slope.l2.eps=0e0"));
        assert!(glob_match("a*b*c", "abc"));
        assert!(!glob_match("a*b*c", "acb"));
        assert!(!glob_match("ab*ba", "aba"));
        assert!(glob_match("exact", "exact"));
        assert!(!glob_match("exact", "exact2"));
    }

    #[test]
    fn every_match_must_pass() {
        let m: BTreeMap<String, f64> =
            [("slope.l2.eps=1e-1".to_string(), 1.99), ("slope.l2.eps=0e0".to_string(), 1.7)].into();
        let out = check("slope.l2.*").evaluate(&m);
        assert_eq!(out.len(), 2);
        assert_eq!(out.iter().filter(|o| o.pass).count(), 1);
    }

    #[test]
    fn missing_metric_fails() {
        let out = check("nope").evaluate(&BTreeMap::new());
        assert_eq!(out.len(), 1);
        assert!(!out[0].pass && out[0].value.is_none());
    }

    #[test]
    fn target_with_tolerance() {
        let c = Check { metric: "e".into(), min: None, max: None, target: Some(1.0446e-4), rel_tol: Some(0.1) };
        c.validate().unwrap();
        assert!(c.accepts(1.048e-4));
        assert!(!c.accepts(1.2e-4));
        assert!(!c.accepts(f64::NAN));
        let half = Check { rel_tol: None, ..c };
        assert!(half.validate().is_err());
    }
}
