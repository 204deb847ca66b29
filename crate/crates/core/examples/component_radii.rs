//! Both component-wise radii for a linear module with exact constants, and
//! the confidence each radius buys back.

use certibias::compcert::{confidence_lipschitz, confidence_variance, radius_lipschitz, radius_variance};
use certibias::synth::{gen_linear_dataset, NoiseSpec};

pub fn run_example() -> certibias::Result<()> {
    let (c, n, m, phi) = (0.05, 16, 20, 0.05);
    let (_, _, truth) = gen_linear_dataset(n, 4, m, 1, &NoiseSpec::Uniform { c }, 1)?;
    let v = truth.v.clone().expect("uniform noise has a closed-form variance");
    for i in 0..4 {
        let eps_l = radius_lipschitz(truth.c[i], truth.gammas[i], c, n, m, phi)?;
        let eps_v = radius_variance(truth.c[i], v[i], m, phi)?;
        let back_l = confidence_lipschitz(eps_l, truth.c[i], truth.gammas[i], c, n, m)?;
        let back_v = confidence_variance(eps_v, truth.c[i], v[i], m)?;
        println!(
            "component {i}: eps_L {eps_l:.4} (conf {:.4}), eps_V {eps_v:.4} (conf {:.4})",
            back_l.bound, back_v.bound
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> certibias::Result<()> {
    run_example()
}
