//! Penalising corrections on clean inputs: sweep alpha and watch the clean
//! and perturbed BAC changes.

use certibias::pipeline::{alpha_sweep, PipelineConfig};
use certibias::synth::{gen_scenario, NoiseSpec, Panel, ScenarioSpec};

pub fn run_example() -> certibias::Result<()> {
    let spec = ScenarioSpec::new(Panel::C, 120, 40, NoiseSpec::Uniform { c: 0.05 }, 2);
    let (d, _) = gen_scenario(&spec)?;
    let cfg = PipelineConfig::default();
    let split = cfg.split(&d)?;
    println!("{:>8} {:>10} {:>10} {:>10}", "alpha", "gram norm", "d_clean", "d_pert");
    for r in alpha_sweep(&d, &split, &[0.0, 1.0, 10.0, 100.0, 1000.0], &cfg)? {
        println!("{:>8} {:>10.4} {:>10.2} {:>10.2}", r.alpha, r.gram_norm, r.delta_clean, r.delta_pert);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> certibias::Result<()> {
    run_example()
}
