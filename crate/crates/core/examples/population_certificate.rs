//! From certified hold-out examples to a guarantee for fresh examples.

use certibias::margincert::population_bound;
use certibias::pipeline::{certify, PipelineConfig};
use certibias::synth::gen_uniform_1d;

pub fn run_example() -> certibias::Result<()> {
    for s in [0, 21, 42, 63, 70] {
        println!("s = {s:>2} of 70: bound {:.4}", population_bound(s, 70, 0.1, 0.05)?);
    }
    let mut d = gen_uniform_1d(400, 100, 0.05, 0, 8)?;
    d.perturbation_split = certibias::dataset::PerturbationSplit::Resampled;
    let cfg = PipelineConfig::default();
    let cert = certify(&d, &cfg.split(&d)?, &cfg)?;
    println!(
        "test p_C {:?}, hold-out P_C {:?} over {} examples",
        cert.summary.p_c, cert.summary.population_c, cert.summary.holdout_examples
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> certibias::Result<()> {
    run_example()
}
