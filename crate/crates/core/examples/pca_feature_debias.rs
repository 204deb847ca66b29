//! Intermediate-feature debiasing: perturbations push features along one
//! direction, and a one-component PCA corrector pulls them back.

use certibias::debias::pca::fit_pca_debias;
use certibias::rng::stream;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

fn mean_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).rows().into_iter().map(|r| r.dot(&r).sqrt()).sum::<f64>() / a.nrows() as f64
}

pub fn run_example() -> certibias::Result<()> {
    let (m, k, n) = (50, 8, 6);
    let dir = Array1::from_iter((0..n).map(|i| if i == 1 { 1.0 } else { 0.0 }));
    let mut r = stream(4, 0, 0);
    let clean = Array2::from_shape_fn((m, n), |_| r.random_range(-0.2..0.2));
    let mut pert = Array2::zeros((m * k, n));
    for (row, mut p) in pert.axis_iter_mut(Axis(0)).enumerate() {
        let magnitude = r.random_range(0.0..2.0);
        p.assign(&(&clean.row(row / k) + &(&dir * magnitude)));
        p.iter_mut().for_each(|v| *v += r.random_range(-0.005..0.005));
    }
    let corr = fit_pca_debias(clean.view(), pert.view(), 1, 1e-3)?;
    let corrected = corr.apply_rows(pert.view())?;
    let reference = clean.select(Axis(0), &(0..m * k).map(|i| i / k).collect::<Vec<_>>());
    println!("top direction {}", corr.h.column(0).mapv(|v| (v * 1e3).round() / 1e3));
    println!("distance before {:.4}", mean_distance(&pert, &reference));
    println!("distance after  {:.4}", mean_distance(&corrected, &reference));
    Ok(())
}

#[allow(dead_code)]
fn main() -> certibias::Result<()> {
    run_example()
}
