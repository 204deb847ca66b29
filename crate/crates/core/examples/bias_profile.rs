//! Output shifts of a panel-b fixture and the bounds derived from them.

use certibias::biasstats::{bias_profile, shift_matrix};
use certibias::split::{split_dataset, Proportions, Split};
use certibias::synth::{gen_scenario, NoiseSpec, Panel, ScenarioSpec};

pub fn run_example() -> certibias::Result<()> {
    let spec = ScenarioSpec::new(Panel::B, 60, 40, NoiseSpec::Uniform { c: 0.05 }, 3);
    let (d, truth) = gen_scenario(&spec)?;
    let split = split_dataset(&d, &Proportions::default(), 0)?;
    let s = shift_matrix(&d).select(split.examples(Split::Test), split.perturbations(Split::Test));
    let p = bias_profile(&s, 10)?;

    println!("exact C    {:?}", truth.c);
    println!("estimated C {:?}", p.c);
    println!("V          {:?}", p.v);
    println!("range      {:?}", p.range_c);
    println!("box        {:?} (eps_box {:.4}, cvb {:.3})", p.boxes, p.eps_box, p.cvb);
    Ok(())
}

#[allow(dead_code)]
fn main() -> certibias::Result<()> {
    run_example()
}
