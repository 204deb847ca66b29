//! Brute-force check that the radii hold on a linear module.

use certibias::compcert::{radius_lipschitz, radius_variance};
use certibias::synth::{gen_linear_dataset, monte_carlo_violation, NoiseSpec};

pub fn run_example() -> certibias::Result<()> {
    let noise = NoiseSpec::Uniform { c: 0.05 };
    let (d, module, truth) = gen_linear_dataset(16, 4, 20, 1, &noise, 3)?;
    let v = truth.v.clone().expect("closed-form variance");
    for phi in [0.01, 0.05, 0.2] {
        let eps_l: Vec<f64> = (0..4)
            .map(|i| radius_lipschitz(0.0, truth.gammas[i], 0.05, 16, 20, phi))
            .collect::<Result<_, _>>()?;
        let eps_v: Vec<f64> = (0..4).map(|i| radius_variance(0.0, v[i], 20, phi)).collect::<Result<_, _>>()?;
        let rl = monte_carlo_violation(&module, d.clean.view(), &eps_l, &noise, 2000, 1)?;
        let rv = monte_carlo_violation(&module, d.clean.view(), &eps_v, &noise, 2000, 2)?;
        println!("phi {phi}: worst rate eq-L {:.4}, eq-V {:.4}", rl.iter().cloned().fold(0.0, f64::max), rv.iter().cloned().fold(0.0, f64::max));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> certibias::Result<()> {
    run_example()
}
