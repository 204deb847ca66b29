//! Grid search for a constant logit offset on a fixture with a constant
//! shift toward class 0.

use certibias::biasstats::shift_matrix;
use certibias::debias::constant::{search_constant_bias, SearchConfig};
use certibias::debias::Corrector;
use certibias::metrics::bacs;
use certibias::split::{split_dataset, Proportions};
use certibias::synth::{gen_scenario, NoiseSpec, Panel, ScenarioSpec};

pub fn run_example() -> certibias::Result<()> {
    let spec = ScenarioSpec::new(Panel::B, 120, 40, NoiseSpec::Uniform { c: 0.05 }, 5);
    let (d, _) = gen_scenario(&spec)?;
    let split = split_dataset(&d, &Proportions::default(), 1)?;
    let res = search_constant_bias(&d, &shift_matrix(&d), &split.train_examples, &split.train_perts, &SearchConfig::default())?;
    println!("found {} region {:?} b {:.4}", res.found, res.region, res.b);

    let corrected = Corrector::Constant { b: res.bias_vector() }.apply_dataset(&d)?;
    let before = bacs(&d, &split.test_examples, &split.test_perts)?;
    let after = bacs(&corrected, &split.test_examples, &split.test_perts)?;
    println!("test pert BAC {:.4} -> {:.4}", before.pert, after.pert);
    Ok(())
}

#[allow(dead_code)]
fn main() -> certibias::Result<()> {
    run_example()
}
