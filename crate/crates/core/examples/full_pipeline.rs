//! The whole command-line pipeline on a simulated dump.

use std::path::Path;

fn cli(args: &[&str]) -> certibias::Result<()> {
    let mut argv = vec!["certibias"];
    argv.extend_from_slice(args);
    certibias::cli::run(argv).map_err(|e| certibias::Error::InvalidArgument(e.to_json()))
}

pub fn run_in(root: &Path) -> certibias::Result<()> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let (dump, ridge, out) = (p("dump"), p("ridge"), p("out"));
    cli(&["simulate", "--panel", "b", "--m", "120", "--k", "40", "--seed", "7", "--out", &dump])?;
    cli(&["ingest", "--dir", &dump])?;
    cli(&["stats", "--dir", &dump, "--out", &p("out/stats")])?;
    cli(&["debias", "fit", "--method", "ridge", "--dir", &dump, "--out", &ridge])?;
    cli(&["debias", "apply", "--corrector", &ridge, "--dir", &dump, "--out", &p("corrected")])?;
    cli(&["ingest", "--dir", &p("corrected")])?;
    cli(&["debias", "fit", "--method", "constant", "--dir", &dump, "--out", &p("out/constant")])?;
    cli(&["radius", "--dir", &dump, "--bias-file", &ridge, "--out", &p("out/radius")])?;
    cli(&["certify", "--dir", &dump, "--corrector", &ridge, "--out", &p("out/cert")])?;
    cli(&["metrics", "--dir", &dump, "--corrector", &ridge, "--out", &p("out/metrics/metrics_report.json")])?;
    cli(&["aggregate", "--reports", &p("out/metrics/*.json"), "--out", &p("out/table.csv")])?;
    cli(&["debias", "sweep", "--dir", &dump, "--alphas", "0,10,1000", "--out", &p("out/sweep")])?;
    cli(&["report", "--artifacts", &out, "--out", &p("report")])?;
    Ok(())
}

pub fn run_example() -> certibias::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| certibias::Error::InvalidArgument(e.to_string()))?;
    run_in(dir.path())
}

#[allow(dead_code)]
fn main() -> certibias::Result<()> {
    run_example()
}
