//! Feature-level debiasing along principal axes of the perturbed features.
//!
//! With `φ(x) = x − μ`, `μ` the mean perturbation and `H = [h_1 … h_n]`
//! the principal axes, the corrected feature is
//!
//! ```text
//! φ_deb(x) = H·(h_1ᵀφ + θ_1(Hᵀφ), …, h_kᵀφ + θ_k(Hᵀφ), h_{k+1}ᵀφ, …, h_nᵀφ)
//! ```
//!
//! where each `θ_i` is a ridge map from all `n` projections to a scalar.

use nalgebra::SymmetricEigen;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::ridge::{fit_ridge, from_dmatrix, to_dmatrix, RidgeCorrector};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaCorrector {
    pub mu: Vec<f64>,
    /// `n × n`, column `i` is the `i`-th axis.
    #[serde(skip)]
    pub h: Array2<f64>,
    /// Variance along each axis, descending.
    pub variances: Vec<f64>,
    pub k: usize,
    /// Maps projections to minus the corrections of the first `k` axes.
    pub theta: Option<RidgeCorrector>,
    pub lambda: f64,
}

/// Principal axes of the rows of `x`, ordered by decreasing variance.
/// Each axis has its largest-magnitude entry positive.
pub fn principal_axes(x: ArrayView2<f64>) -> (Array2<f64>, Vec<f64>) {
    let rows = x.nrows() as f64;
    let mean = x.mean_axis(Axis(0)).expect("non-empty input");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / (rows - 1.0).max(1.0);
    let eig = SymmetricEigen::new(to_dmatrix(cov.view()));
    let vectors = from_dmatrix(&eig.eigenvectors);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let n = x.ncols();
    let mut h = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        let mut col = vectors.column(src).to_owned();
        let pivot = col
            .iter()
            .cloned()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            col.mapv_inplace(|v| -v);
        }
        h.column_mut(dst).assign(&col);
    }
    let variances = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    (h, variances)
}

/// Fits the corrector from `m` clean rows and `m·K` perturbed rows
/// (example-major).
pub fn fit_pca_debias(clean: ArrayView2<f64>, perturbed: ArrayView2<f64>, k: usize, lambda: f64) -> Result<PcaCorrector> {
    let (m, n) = clean.dim();
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds feature dimension {n}")));
    }
    if perturbed.ncols() != n {
        return Err(Error::DimensionMismatch("clean and perturbed widths differ".into()));
    }
    if m == 0 || !perturbed.nrows().is_multiple_of(m) {
        return Err(Error::DimensionMismatch(format!(
            "{} perturbed rows are not a multiple of {m} clean rows",
            perturbed.nrows()
        )));
    }
    if perturbed.nrows() < 2 {
        return Err(Error::InsufficientData("PCA needs at least two training rows".into()));
    }
    let per = perturbed.nrows() / m;
    let paired_clean = clean
        .select(Axis(0), &(0..m * per).map(|r| r / per).collect::<Vec<_>>());
    let mu = (&perturbed - &paired_clean)
        .mean_axis(Axis(0))
        .expect("non-empty input");
    let phi = &perturbed - &mu;
    let (h, variances) = principal_axes(phi.view());
    let theta = if k == 0 {
        None
    } else {
        let proj = phi.dot(&h);
        let gap = (&phi - &paired_clean).dot(&h.slice(ndarray::s![.., ..k]));
        Some(fit_ridge(proj.view(), gap.view(), lambda)?)
    };
    Ok(PcaCorrector {
        mu: mu.to_vec(),
        h,
        variances,
        k,
        theta,
        lambda,
    })
}

impl PcaCorrector {
    pub fn n_features(&self) -> usize {
        self.mu.len()
    }

    fn check(&self, width: usize) -> Result<()> {
        if width != self.n_features() {
            return Err(Error::DimensionMismatch(format!(
                "feature width {width}, corrector expects {}",
                self.n_features()
            )));
        }
        Ok(())
    }

    /// `θ(Hᵀφ)` for a batch of centered rows, `rows × k`.
    fn corrections(&self, phi: ArrayView2<f64>) -> Result<Option<Array2<f64>>> {
        match &self.theta {
            Some(t) if !t.is_identity() => Ok(Some(-t.predict(phi.dot(&self.h).view())?)),
            _ => Ok(None),
        }
    }

    /// Corrected projections `Hᵀφ_deb(x)` for one feature vector.
    pub fn corrected_projection(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check(x.len())?;
        let phi = &x - &Array1::from(self.mu.clone());
        let mut proj = self.h.t().dot(&phi);
        if let Some(c) = self.corrections(phi.view().insert_axis(Axis(0)))? {
            for i in 0..self.k {
                proj[i] += c[[0, i]];
            }
        }
        Ok(proj)
    }

    /// Corrected feature rows.
    pub fn apply_rows(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(x.ncols())?;
        let mut phi = &x - &Array1::from(self.mu.clone());
        if let Some(c) = self.corrections(phi.view())? {
            // φ + Σ_i θ_i h_i, identical to reconstructing through H
            phi += &c.dot(&self.h.slice(ndarray::s![.., ..self.k]).t());
        }
        Ok(phi)
    }
}

pub fn apply_pca_debias(x: ArrayView1<f64>, corr: &PcaCorrector) -> Result<Array1<f64>> {
    Ok(corr.apply_rows(x.insert_axis(Axis(0)))?.row(0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Clean features live in the span of e2..en; perturbations shift along
    /// a fixed unit direction `v` (mostly e1) with random magnitude.
    fn directional(seed: u64, m: usize, k: usize, n: usize) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let mut rng = crate::rng::stream(seed, 0, 0);
        let mut v = Array1::zeros(n);
        v[0] = 1.0;
        let clean = Array2::from_shape_fn((m, n), |(_, j)| if j == 0 { 0.0 } else { rng.random_range(-0.1..0.1) });
        let mut pert = Array2::zeros((m * k, n));
        for j in 0..m {
            for t in 0..k {
                let mag = rng.random_range(0.5..2.5);
                let row = &clean.row(j) + &(&v * mag);
                pert.row_mut(j * k + t).assign(&row);
            }
        }
        (clean, pert, v)
    }

    fn is_orthonormal(h: &Array2<f64>) -> bool {
        let g = h.t().dot(h);
        g.indexed_iter().all(|((i, j), v)| (v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-8)
    }

    #[test]
    fn k_zero_is_pure_mean_shift() {
        let (clean, pert, _) = directional(1, 10, 5, 4);
        let c = fit_pca_debias(clean.view(), pert.view(), 0, 0.1).unwrap();
        assert!(is_orthonormal(&c.h));
        let x = pert.row(3);
        let out = apply_pca_debias(x, &c).unwrap();
        let expect = &x - &Array1::from(c.mu.clone());
        assert_eq!(out, expect);
    }

    #[test]
    fn full_basis_reconstructs() {
        let (clean, pert, _) = directional(2, 10, 5, 4);
        let c = fit_pca_debias(clean.view(), pert.view(), 4, 0.1).unwrap();
        let phi = &pert.row(7) - &Array1::from(c.mu.clone());
        let back = c.h.dot(&c.h.t().dot(&phi));
        for (a, b) in back.iter().zip(phi.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn first_axis_finds_shift_direction_and_k1_removes_it() {
        let (clean, pert, v) = directional(3, 40, 20, 6);
        let c = fit_pca_debias(clean.view(), pert.view(), 1, 0.1).unwrap();
        let cos = c.h.column(0).dot(&v).abs();
        assert!(cos > 0.99, "{cos}");

        let per = 20;
        let corrected = c.apply_rows(pert.view()).unwrap();
        let mut before = 0.0;
        let mut after = 0.0;
        let mut shift = Array1::<f64>::zeros(6);
        let mut resid = Array1::<f64>::zeros(6);
        for r in 0..pert.nrows() {
            let x = clean.row(r / per);
            let d0 = &pert.row(r) - &x;
            let d1 = &corrected.row(r) - &x;
            before += d0.dot(&d0).sqrt();
            after += d1.dot(&d1).sqrt();
            shift += &d0;
            resid += &d1;
        }
        let rows = pert.nrows() as f64;
        assert!(before / rows >= 1e-1);
        assert!(after / rows <= 1e-2, "{}", after / rows);
        let removed = 1.0 - resid.dot(&resid).sqrt() / shift.dot(&shift).sqrt();
        assert!(removed >= 0.95, "{removed}");
    }

    #[test]
    fn coordinates_beyond_k_are_untouched() {
        let (clean, pert, _) = directional(4, 12, 6, 5);
        let c = fit_pca_debias(clean.view(), pert.view(), 2, 0.1).unwrap();
        let x = pert.row(5);
        let phi = &x - &Array1::from(c.mu.clone());
        let raw = c.h.t().dot(&phi);
        let proj = c.corrected_projection(x).unwrap();
        for i in 2..5 {
            assert_eq!(proj[i].to_bits(), raw[i].to_bits());
        }
    }

    #[test]
    fn rejects_bad_k_and_tiny_input() {
        let (clean, pert, _) = directional(5, 4, 2, 3);
        assert!(fit_pca_debias(clean.view(), pert.view(), 4, 0.1).is_err());
        let one = clean.slice(ndarray::s![..1, ..]).to_owned();
        let one_p = pert.slice(ndarray::s![..1, ..]).to_owned();
        assert!(fit_pca_debias(one.view(), one_p.view(), 1, 0.1).is_err());
    }
}
