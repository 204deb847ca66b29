//! Input-dependent debiasing with ridge regression on a panel-c fixture.

use certibias::pipeline::{evaluate_corrector, fit_corrector, Method, PipelineConfig};
use certibias::synth::{gen_scenario, NoiseSpec, Panel, ScenarioSpec};

pub fn run_example() -> certibias::Result<()> {
    let spec = ScenarioSpec::new(Panel::C, 120, 40, NoiseSpec::Uniform { c: 0.05 }, 2);
    let (d, _) = gen_scenario(&spec)?;
    let cfg = PipelineConfig::default();
    let split = cfg.split(&d)?;
    let (fitted, _) = fit_corrector(&d, &split, Method::Ridge, &cfg)?;
    let corrected = fitted.corrector.apply_dataset(&d)?;
    let r = evaluate_corrector(&d, &corrected, &split, &cfg)?;
    println!("clean BAC {:.4} -> {:.4}", r.bac_clean_before, r.bac_clean_after);
    println!("pert  BAC {:.4} -> {:.4}", r.bac_pert_before, r.bac_pert_after);
    println!("p_damage {:.2}, p_recover {:?}, p_eps_V {:?}", r.p_damage, r.p_recover, r.p_eps_v);
    Ok(())
}

#[allow(dead_code)]
fn main() -> certibias::Result<()> {
    run_example()
}
