//! Write a synthetic dump, load it back, validate it and split it.

use certibias::dataset::{load_dataset, save_dataset, validate_dataset};
use certibias::split::{split_dataset, Proportions, Split};
use certibias::synth::{gen_scenario, NoiseSpec, Panel, ScenarioSpec};

pub fn run_example() -> certibias::Result<()> {
    let spec = ScenarioSpec::new(Panel::B, 40, 20, NoiseSpec::Uniform { c: 0.05 }, 7);
    let (d, _) = gen_scenario(&spec)?;
    let dir = tempfile::tempdir().map_err(|e| certibias::Error::InvalidArgument(e.to_string()))?;
    save_dataset(&d, dir.path())?;
    let loaded = load_dataset(dir.path())?;
    assert_eq!(loaded, d);

    let report = validate_dataset(&loaded);
    println!("valid: {} ({} warnings)", report.is_valid(), report.warnings.len());

    let split = split_dataset(&loaded, &Proportions::default(), 7)?;
    for s in [Split::Train, Split::Test, Split::Holdout] {
        println!("{s:>8}: {} examples, {} perturbations", split.examples(s).len(), split.perturbations(s).len());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> certibias::Result<()> {
    run_example()
}
