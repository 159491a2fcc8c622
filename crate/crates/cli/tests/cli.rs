use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn apdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apdiff")).args(args).output().expect("running apdiff")
}

fn run(dir: &Path, experiment: &str, config: &str) -> Output {
    let cfg = dir.join("cfg.toml");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    apdiff(&[experiment, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "-q"])
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = r#"
case = "linear-variable"
meshes = [8, 12, 16]
eps = [1e-1, 0.0]
"#;

#[test]
fn passing_checks_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}\n[[checks]]\nmetric = \"slope.l2.*\"\nmin = 1.5\nmax = 2.5\n");
    let o = run(dir.path(), "convergence", &cfg);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 2);

    let out = dir.path().join("out");
    let csv = fs::read_to_string(out.join("convergence.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("case,mesh,nx,ny,h,eps,alpha,eta,norm,error"));
    assert_eq!(lines.count(), 3 * 2 * 3);
    assert!(fs::read_to_string(out.join("metrics.csv")).unwrap().contains("slope.l2.eps=0e0,"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    assert_eq!(summary["runs"], 6);
    assert_eq!(summary["checks"].as_array().unwrap().len(), 2);
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let checks = r#"
[[checks]]
metric = "slope.l2.eps=0e0"
min = 3

[[checks]]
metric = "no.such.metric"
max = 1
"#;
    let cfg = format!("{SMALL}{checks}");
    let o = run(dir.path(), "convergence", &cfg);
    assert_eq!(o.status.code(), Some(1));
    let s = stdout(&o);
    assert!(s.contains("FAIL slope.l2.eps=0e0"), "{s}");
    assert!(s.contains("FAIL no.such.metric") && s.contains("missing"), "{s}");
    let summary = fs::read_to_string(dir.path().join("out/summary.json")).unwrap();
    assert!(summary.contains("\"passed\": false"));
}

#[test]
fn errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown key.
    assert_eq!(run(dir.path(), "convergence", "meshs = [8]").status.code(), Some(2));
    // Too few meshes for a slope.
    assert_eq!(run(dir.path(), "convergence", "meshes = [8, 16]").status.code(), Some(2));
    // Half a target check.
    assert_eq!(
        run(dir.path(), "convergence", &format!("{SMALL}\n[[checks]]\nmetric = \"x\"\ntarget = 1\n")).status.code(),
        Some(2)
    );
    // No output directory anywhere.
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, SMALL).unwrap();
    let o = apdiff(&["convergence", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("output directory"));
    // Unknown experiment is a usage error.
    assert_eq!(apdiff(&["sweep", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn output_key_resolves_against_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, format!("{SMALL}\noutput = \"results\"\n")).unwrap();
    let o = apdiff(&["convergence", "--config", cfg.to_str().unwrap(), "-q"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("results/convergence.csv").exists());
}

#[test]
fn gummel_writes_histories_and_flags_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
case = "nonlinear-spline"
meshes = [20]
eps = [1e-1]
etas = [0.1, 1000.0]

[[checks]]
metric = "converged.mesh=20.eps=1e-1.eta=0.1"
min = 1

[[checks]]
metric = "diverged.mesh=20.eps=1e-1.eta=1000"
min = 1
"#;
    let o = run(dir.path(), "gummel", cfg);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    let hist = fs::read_to_string(dir.path().join("out/history/mesh_20.eps_1e-1.eta_0.1.csv")).unwrap();
    assert!(hist.starts_with("N,correction_rel,error_rel_l2"));
    assert!(hist.lines().count() >= 3);
}

#[test]
fn conditioning_and_eps_limit_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "conditioning", "meshes = [12]\neps = [1.0, 1e-2, 1e-4]\n");
    assert_eq!(o.status.code(), Some(0));
    let t = fs::read_to_string(dir.path().join("out/naive_conditioning.csv")).unwrap();
    assert!(t.starts_with("eps,cond_estimate,solve_residual,status"));
    assert_eq!(t.lines().count(), 4);
    let runs = fs::read_to_string(dir.path().join("out/conditioning.csv")).unwrap();
    assert!(runs.starts_with("case,mesh,"));

    let o = run(dir.path(), "eps-limit", "case = \"ap-limit\"\nmeshes = [12]\neps = [1e-1, 1e-3, 1e-5, 0.0]\n");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t = fs::read_to_string(dir.path().join("out/eps_limit.csv")).unwrap();
    assert!(t.starts_with("mesh,h,eps,E_eps,E_eps_app,e0"));
    assert_eq!(t.lines().count(), 5);
}
