//! Input-dependent linear correction `b_i(x) = w_i·ψ(x) + β_i`.
//!
//! `W` solves the ridge normal equations in closed form and `β` is the
//! midrange of the residuals, which minimises the worst-case residual.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature map `ψ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    /// `ψ(x) = [x, 1]`
    #[default]
    Linear,
    /// `ψ(x) = [x, ‖x‖, 1]`
    WithNorm,
}

impl FeatureMap {
    pub fn dim(self, n: usize) -> usize {
        match self {
            FeatureMap::Linear => n + 1,
            FeatureMap::WithNorm => n + 2,
        }
    }

    pub fn psi(self, x: ArrayView1<f64>) -> Array1<f64> {
        let n = x.len();
        let mut out = Array1::zeros(self.dim(n));
        out.slice_mut(ndarray::s![..n]).assign(&x);
        if self == FeatureMap::WithNorm {
            out[n] = x.dot(&x).sqrt();
        }
        out[self.dim(n) - 1] = 1.0;
        out
    }

    /// Design matrix with one `ψ(x)` row per input row.
    pub fn design(self, x: ArrayView2<f64>) -> Array2<f64> {
        let (rows, n) = x.dim();
        let mut out = Array2::zeros((rows, self.dim(n)));
        for (mut o, r) in out.rows_mut().into_iter().zip(x.rows()) {
            o.assign(&self.psi(r));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeCorrector {
    /// `dim(ψ) × d` coefficients.
    #[serde(skip)]
    pub w: Array2<f64>,
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub feature_map: FeatureMap,
    /// Diagonal jitter that was needed for the factorization.
    pub jitter: f64,
}

impl RidgeCorrector {
    pub fn n_inputs(&self) -> usize {
        match self.feature_map {
            FeatureMap::Linear => self.w.nrows() - 1,
            FeatureMap::WithNorm => self.w.nrows() - 2,
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.w.ncols()
    }

    /// `b(x)` for every row of `features`.
    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.n_inputs() {
            return Err(Error::DimensionMismatch(format!(
                "features have {} columns, corrector expects {}",
                features.ncols(),
                self.n_inputs()
            )));
        }
        let mut out = self.feature_map.design(features).dot(&self.w);
        for mut row in out.rows_mut() {
            row.iter_mut().zip(&self.beta).for_each(|(o, b)| *o += b);
        }
        Ok(out)
    }

    pub fn is_identity(&self) -> bool {
        self.w.iter().all(|v| *v == 0.0) && self.beta.iter().all(|v| *v == 0.0)
    }
}

pub(crate) fn to_dmatrix(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Jitter schedule: none, then 1e-12 up to 1e-6 in factors of ten.
pub const JITTER_SCHEDULE: [f64; 8] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Solves `H·X = rhs` for symmetric `h`, escalating the diagonal jitter until
/// the Cholesky factorization succeeds.
pub fn solve_spd(h: ArrayView2<f64>, rhs: ArrayView2<f64>) -> Option<(Array2<f64>, f64)> {
    let base = to_dmatrix(h);
    let b = to_dmatrix(rhs);
    for jitter in JITTER_SCHEDULE {
        let mut m = base.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = m.cholesky() {
            return Some((from_dmatrix(&chol.solve(&b)), jitter));
        }
    }
    None
}

fn midrange_columns(r: ArrayView2<f64>) -> Vec<f64> {
    r.axis_iter(Axis(1))
        .map(|col| {
            let (lo, hi) = col
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
            (lo + hi) / 2.0
        })
        .collect()
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lambda must lie in (0, 1], got {lambda}")))
    }
}

fn check_rows(features: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<()> {
    if features.nrows() == 0 {
        return Err(Error::InsufficientData("ridge fit needs at least one row".into()));
    }
    if features.nrows() != targets.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows vs {} target rows",
            features.nrows(),
            targets.nrows()
        )));
    }
    Ok(())
}

fn finish(
    psi: &Array2<f64>,
    targets: ArrayView2<f64>,
    w: Array2<f64>,
    lambda: f64,
    alpha: f64,
    feature_map: FeatureMap,
    jitter: f64,
) -> RidgeCorrector {
    let residuals = &targets - &psi.dot(&w);
    RidgeCorrector {
        beta: midrange_columns(residuals.view()),
        w,
        lambda,
        alpha,
        feature_map,
        jitter,
    }
}

/// `W = (ΨᵀΨ + λI)⁻¹ΨᵀF` with `ψ(x) = [x, 1]`.
pub fn fit_ridge(features: ArrayView2<f64>, targets: ArrayView2<f64>, lambda: f64) -> Result<RidgeCorrector> {
    fit_ridge_with(features, targets, lambda, FeatureMap::Linear)
}

pub fn fit_ridge_with(
    features: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    lambda: f64,
    feature_map: FeatureMap,
) -> Result<RidgeCorrector> {
    check_lambda(lambda)?;
    check_rows(features, targets)?;
    let psi = feature_map.design(features);
    let mut h = psi.t().dot(&psi);
    h.diag_mut().iter_mut().for_each(|v| *v += lambda);
    let rhs = psi.t().dot(&targets);
    let (w, jitter) = solve_spd(h.view(), rhs.view()).ok_or(Error::Factorization {
        jitter: *JITTER_SCHEDULE.last().expect("non-empty schedule"),
    })?;
    Ok(finish(&psi, targets, w, lambda, 0.0, feature_map, jitter))
}

/// Gram-penalised fit: `H = ΨᵀΨ + αΨ_cᵀΨ_c + λI`, `W = H⁻¹ΨᵀF`.
///
/// `clean_features` holds each clean input once. Negative `alpha` is
/// allowed as long as `H` stays positive definite.
pub fn fit_ridge_gram(
    features: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    lambda: f64,
    alpha: f64,
    clean_features: ArrayView2<f64>,
    feature_map: FeatureMap,
) -> Result<RidgeCorrector> {
    check_lambda(lambda)?;
    check_rows(features, targets)?;
    if !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("alpha must be finite, got {alpha}")));
    }
    if clean_features.ncols() != features.ncols() {
        return Err(Error::DimensionMismatch(
            "clean and perturbed features differ in width".into(),
        ));
    }
    let psi = feature_map.design(features);
    let psi_c = feature_map.design(clean_features);
    let mut h = psi.t().dot(&psi) + psi_c.t().dot(&psi_c) * alpha;
    h.diag_mut().iter_mut().for_each(|v| *v += lambda);
    let rhs = psi.t().dot(&targets);
    let (w, jitter) = solve_spd(h.view(), rhs.view()).ok_or(Error::IndefiniteGram { alpha })?;
    Ok(finish(&psi, targets, w, lambda, alpha, feature_map, jitter))
}

/// `outputs − b(features)` row by row.
pub fn apply_ridge(outputs: ArrayView2<f64>, features: ArrayView2<f64>, corr: &RidgeCorrector) -> Result<Array2<f64>> {
    if outputs.dim() != (features.nrows(), corr.n_outputs()) {
        return Err(Error::DimensionMismatch(format!(
            "outputs {:?} do not match {} rows × {} components",
            outputs.dim(),
            features.nrows(),
            corr.n_outputs()
        )));
    }
    if corr.is_identity() {
        return Ok(outputs.to_owned());
    }
    Ok(&outputs - &corr.predict(features)?)
}

/// `‖Ψ_c W‖_F`, the quantity the Gram penalty controls.
pub fn gram_norm(corr: &RidgeCorrector, clean_features: ArrayView2<f64>) -> f64 {
    let v = corr.feature_map.design(clean_features).dot(&corr.w);
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_system(seed: u64, rows: usize, n: usize, d: usize) -> (Array2<f64>, Array2<f64>) {
        let mut rng = crate::rng::stream(seed, 0, 0);
        let x = Array2::from_shape_fn((rows, n), |_| rng.random_range(-1.0..1.0));
        let f = Array2::from_shape_fn((rows, d), |_| rng.random_range(-1.0..1.0));
        (x, f)
    }

    #[test]
    fn zero_targets_give_zero_corrector() {
        let (x, _) = random_system(1, 10, 3, 2);
        let f = Array2::zeros((10, 2));
        let c = fit_ridge(x.view(), f.view(), 0.1).unwrap();
        assert!(c.is_identity());
    }

    #[test]
    fn scalar_normal_equation() {
        // only the constant feature: (1 + 1)·W = 2
        let x = Array2::zeros((1, 0));
        let f = array![[2.0]];
        let c = fit_ridge(x.view(), f.view(), 1.0).unwrap();
        assert!((c.w[[0, 0]] - 1.0).abs() < 1e-15);
        assert!((c.beta[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_lambda() {
        let (x, f) = random_system(2, 5, 2, 1);
        assert!(fit_ridge(x.view(), f.view(), 0.0).is_err());
        assert!(fit_ridge(x.view(), f.view(), 1.5).is_err());
    }

    #[test]
    fn residual_of_normal_equations_is_tiny() {
        let (x, f) = random_system(3, 50, 16, 3);
        let c = fit_ridge(x.view(), f.view(), 0.1).unwrap();
        let psi = FeatureMap::Linear.design(x.view());
        let mut h = psi.t().dot(&psi);
        h.diag_mut().iter_mut().for_each(|v| *v += 0.1 + c.jitter);
        let rhs = psi.t().dot(&f);
        let res = &h.dot(&c.w) - &rhs;
        let n = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(n(&res) <= 1e-8 * n(&rhs));
    }

    #[test]
    fn beta_is_residual_midrange() {
        let (x, f) = random_system(4, 30, 4, 2);
        let c = fit_ridge(x.view(), f.view(), 0.5).unwrap();
        let r = &f - &FeatureMap::Linear.design(x.view()).dot(&c.w);
        for i in 0..2 {
            let col = r.column(i);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let worst = col.iter().map(|v| (v - c.beta[i]).abs()).fold(0.0, f64::max);
            assert_eq!(worst, (hi - lo) / 2.0);
        }
    }

    #[test]
    fn gram_with_zero_alpha_matches_plain() {
        let (x, f) = random_system(5, 40, 5, 2);
        let (xc, _) = random_system(6, 8, 5, 1);
        let a = fit_ridge(x.view(), f.view(), 0.1).unwrap();
        let b = fit_ridge_gram(x.view(), f.view(), 0.1, 0.0, xc.view(), FeatureMap::Linear).unwrap();
        for (u, v) in a.w.iter().zip(b.w.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_alpha_silences_clean_predictions() {
        let (x, f) = random_system(7, 60, 3, 1);
        let (xc, _) = random_system(8, 10, 3, 1);
        let free = fit_ridge_gram(x.view(), f.view(), 0.1, 0.0, xc.view(), FeatureMap::Linear).unwrap();
        let tied = fit_ridge_gram(x.view(), f.view(), 0.1, 1e6, xc.view(), FeatureMap::Linear).unwrap();
        assert!(gram_norm(&tied, xc.view()) < 1e-3 * gram_norm(&free, xc.view()));
    }

    #[test]
    fn strongly_negative_alpha_is_indefinite() {
        let (x, f) = random_system(9, 20, 2, 1);
        let (xc, _) = random_system(10, 20, 2, 1);
        let err = fit_ridge_gram(x.view(), f.view(), 0.1, -100.0, xc.view(), FeatureMap::Linear);
        assert!(matches!(err, Err(Error::IndefiniteGram { alpha }) if alpha == -100.0));
    }

    #[test]
    fn identity_corrector_leaves_outputs_bitwise() {
        let (x, f) = random_system(11, 6, 2, 2);
        let c = RidgeCorrector {
            w: Array2::zeros((3, 2)),
            beta: vec![0.0, 0.0],
            lambda: 0.1,
            alpha: 0.0,
            feature_map: FeatureMap::Linear,
            jitter: 0.0,
        };
        assert_eq!(apply_ridge(f.view(), x.view(), &c).unwrap(), f);
    }

    #[test]
    fn norm_feature_map_appends_norm() {
        let p = FeatureMap::WithNorm.psi(array![3.0, 4.0].view());
        assert_eq!(p.to_vec(), vec![3.0, 4.0, 5.0, 1.0]);
    }

    proptest! {
        #[test]
        fn gram_norm_non_increasing(seed in 0u64..500) {
            let (x, f) = random_system(seed, 30, 3, 2);
            let (xc, _) = random_system(seed + 1000, 10, 3, 1);
            let mut last = f64::INFINITY;
            for alpha in [0.0, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0] {
                let c = fit_ridge_gram(x.view(), f.view(), 0.1, alpha, xc.view(), FeatureMap::Linear).unwrap();
                let g = gram_norm(&c, xc.view());
                prop_assert!(g <= last * (1.0 + 1e-9) + 1e-12);
                last = g;
            }
        }
    }
}
