//! `apdiff <experiment> --config <file> --out <dir>`
//!
//! Runs one of the study drivers, writes its CSV files and a JSON summary, and
//! exits 0 only when every `[[checks]]` entry of the config passes (1 when a
//! check fails, 2 on errors).

mod checks;
mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use apdiff::study::{run_experiment, ExperimentReport, EXPERIMENTS};
use clap::builder::PossibleValuesParser;
use clap::Parser;
use serde::Serialize;

use checks::Outcome;
use config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "apdiff", version, about = "Run an anisotropic diffusion experiment and check its metrics")]
struct Args {
    #[arg(value_parser = PossibleValuesParser::new(EXPERIMENTS))]
    experiment: String,
    /// TOML experiment file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Only print the check lines.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: &'a str,
    config: &'a ExperimentConfig,
    runs: usize,
    failed_runs: usize,
    runtime_s: f64,
    metrics: &'a std::collections::BTreeMap<String, f64>,
    checks: &'a [Outcome],
    passed: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(args: &Args) -> Result<bool> {
    let cfg = ExperimentConfig::load(&args.config)?;
    for c in &cfg.checks {
        c.validate()?;
    }
    let study = cfg.study()?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .context("no output directory: pass --out or set `output` in the config")?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let start = Instant::now();
    let report = run_experiment(&args.experiment, &study)?;
    let runtime_s = start.elapsed().as_secs_f64();
    write_outputs(&report, &out)?;

    let outcomes: Vec<Outcome> = cfg.checks.iter().flat_map(|c| c.evaluate(&report.metrics)).collect();
    let passed = outcomes.iter().all(|o| o.pass);
    let failed_runs = report.runs.iter().filter(|r| !matches!(r.status.as_str(), "converged" | "ok")).count();
    let summary = Summary {
        experiment: &args.experiment,
        config: &cfg,
        runs: report.runs.len(),
        failed_runs,
        runtime_s,
        metrics: &report.metrics,
        checks: &outcomes,
        passed,
    };
    let path = out.join("summary.json");
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &summary)?;

    if !args.quiet {
        println!(
            "{}: {} runs ({} not converged) in {:.1} s",
            args.experiment,
            report.runs.len(),
            failed_runs,
            runtime_s
        );
        for (k, v) in &report.metrics {
            println!("  {k} = {v:.6e}");
        }
    }
    for o in &outcomes {
        let v = o.value.map_or("missing".to_string(), |v| format!("{v:.6e}"));
        println!("{} {} [{}] = {}", if o.pass { "PASS" } else { "FAIL" }, o.metric, o.check, v);
    }
    if !args.quiet {
        println!("wrote {}", out.display());
    }
    Ok(passed)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_outputs(report: &ExperimentReport, out: &Path) -> Result<()> {
    let mut w = create(&out.join(format!("{}.csv", report.experiment)))?;
    report.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&out.join("metrics.csv"))?;
    report.write_metrics_csv(&mut w)?;
    w.flush()?;
    for (stem, text) in &report.tables {
        fs::write(out.join(format!("{stem}.csv")), text)?;
    }
    if !report.histories.is_empty() {
        let dir = out.join("history");
        fs::create_dir_all(&dir)?;
        for (key, state) in &report.histories {
            let mut w = create(&dir.join(format!("{}.csv", file_stem(key))))?;
            state.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

/// Metric keys carry `=` and `.`; keep them readable but shell-safe.
fn file_stem(key: &str) -> String {
    key.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}
