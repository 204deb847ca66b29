use std::path::Path;

use certibias::cli::run;

fn cli(args: &[&str]) -> Result<(), u8> {
    let mut argv = vec!["certibias"];
    argv.extend_from_slice(args);
    run(argv).map_err(|e| e.exit_code())
}

fn simulate(root: &Path) -> String {
    let dump = root.join("dump").to_string_lossy().into_owned();
    cli(&["simulate", "--panel", "c", "--m", "60", "--k", "20", "--out", &dump]).unwrap();
    dump
}

fn is_empty_or_missing(p: &Path) -> bool {
    !p.exists() || std::fs::read_dir(p).unwrap().next().is_none()
}

#[test]
fn bad_phi_is_a_usage_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let dump = simulate(dir.path());
    let out = dir.path().join("cert");
    let r = cli(&["certify", "--dir", &dump, "--phi", "1.5", "--out", out.to_str().unwrap()]);
    assert_eq!(r, Err(2));
    assert!(is_empty_or_missing(&out));
}

#[test]
fn missing_dump_is_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = dir.path().join("stats");
    assert_eq!(cli(&["stats", "--dir", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]), Err(3));
    assert!(is_empty_or_missing(&out));
}

#[test]
fn corrupt_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let dump = simulate(dir.path());
    std::fs::write(Path::new(&dump).join("manifest.json"), "{ not json").unwrap();
    let code = cli(&["ingest", "--dir", &dump]).unwrap_err();
    assert!(code == 1 || code == 11, "exit code {code}");
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(cli(&["frobnicate"]), Err(2));
}

#[test]
fn output_may_not_overwrite_the_dump() {
    let dir = tempfile::tempdir().unwrap();
    let dump = simulate(dir.path());
    let ridge = dir.path().join("ridge");
    cli(&["debias", "fit", "--method", "ridge", "--dir", &dump, "--out", ridge.to_str().unwrap()]).unwrap();
    let r = cli(&["debias", "apply", "--corrector", ridge.to_str().unwrap(), "--dir", &dump, "--out", &dump]);
    assert_eq!(r, Err(2));
}

#[test]
fn gram_sweep_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let dump = simulate(dir.path());
    let out = dir.path().join("sweep");
    cli(&["debias", "sweep", "--dir", &dump, "--alphas", "0,1,100", "--out", out.to_str().unwrap()]).unwrap();
    let csv = std::fs::read_to_string(out.join("alpha_sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}
