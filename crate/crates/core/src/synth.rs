//! Synthetic modules, perturbation laws, scenario fixtures and brute-force
//! oracles.
//!
//! Panel fixtures are binary linear classifiers with `w_0 = −e_0`,
//! `w_1 = e_0`, so the geometric margin of an example is `±x_0`. Class
//! clusters are Gaussian along `e_0`; the remaining coordinates are Gaussian
//! nuisance features, except coordinate 2 which is zero on clean inputs and
//! carries a positive mean shift under perturbation. The expected shift along
//! `e_0` selects the panel.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF};

use crate::csvio;
use crate::dataset::{Dataset, DumpKind, PerturbationSplit};
use crate::error::{Error, Result};
use crate::margincert::{CertRecord, MarginStats};
use crate::rng::{key, stream};
use crate::util::argmax;

/// Anything mapping an input vector to output components.
pub trait OutputModule: Sync {
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn outputs(&self, x: ArrayView1<f64>) -> Array1<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModule {
    pub w: Array2<f64>,
    pub b: Vec<f64>,
    /// Row norms, the exact Lipschitz constants of each component.
    pub gammas: Vec<f64>,
}

impl OutputModule for LinearModule {
    fn n_inputs(&self) -> usize {
        self.w.ncols()
    }

    fn n_outputs(&self) -> usize {
        self.w.nrows()
    }

    fn outputs(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.w.dot(&x) + Array1::from(self.b.clone())
    }
}

/// Random rows rescaled to the requested norms. A single norm applies to
/// every row.
pub fn gen_linear_module(n: usize, d: usize, seed: u64, norms: &[f64]) -> Result<LinearModule> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("module dimensions must be positive".into()));
    }
    let norms: Vec<f64> = match norms.len() {
        1 => vec![norms[0]; d],
        l if l == d => norms.to_vec(),
        l => return Err(Error::DimensionMismatch(format!("{l} norms for {d} rows"))),
    };
    if norms.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument("row norms must be finite and non-negative".into()));
    }
    let mut w = Array2::zeros((d, n));
    for (i, mut row) in w.axis_iter_mut(Axis(0)).enumerate() {
        let mut r = stream(seed, 0, i as u64);
        let v: Vec<f64> = loop {
            let v: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
            if crate::util::norm(&v) > 1e-8 {
                break v;
            }
        };
        let len = crate::util::norm(&v);
        for (dst, src) in row.iter_mut().zip(&v) {
            *dst = src / len * norms[i];
        }
    }
    let gammas = w.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    Ok(LinearModule { w, b: vec![0.0; d], gammas })
}

/// Perturbation law on `R^n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// iid coordinates on `[−c, c]`.
    Uniform { c: f64 },
    /// iid normal coordinates conditioned on `[−c, c]`.
    TruncatedGaussian { sigma: f64, c: f64 },
    /// Uniform draws mixed by `I + strength·(11ᵀ − I)`, then clipped to the box.
    Correlated { c: f64, strength: f64 },
}

impl NoiseSpec {
    pub fn bound(&self) -> f64 {
        match *self {
            NoiseSpec::Uniform { c } | NoiseSpec::TruncatedGaussian { c, .. } | NoiseSpec::Correlated { c, .. } => c,
        }
    }

    /// Per-coordinate variance when it has a closed form.
    pub fn coordinate_variance(&self) -> Option<f64> {
        match *self {
            NoiseSpec::Uniform { c } => Some(c * c / 3.0),
            NoiseSpec::TruncatedGaussian { sigma, c } => {
                if c == 0.0 {
                    return Some(0.0);
                }
                let n = statrs::distribution::Normal::new(0.0, 1.0).expect("unit normal");
                let a = c / sigma;
                let z = 2.0 * n.cdf(a) - 1.0;
                Some(sigma * sigma * (1.0 - 2.0 * a * n.pdf(a) / z))
            }
            NoiseSpec::Correlated { strength: 0.0, .. } => Some(self.bound().powi(2) / 3.0),
            NoiseSpec::Correlated { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseSpec::Uniform { c } => c >= 0.0 && c.is_finite(),
            NoiseSpec::TruncatedGaussian { sigma, c } => sigma > 0.0 && c >= 0.0 && c.is_finite() && sigma.is_finite(),
            NoiseSpec::Correlated { c, strength } => c >= 0.0 && c.is_finite() && strength.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid noise spec {self}")))
        }
    }

    /// One draw; returns the number of clipped coordinates.
    fn draw(&self, r: &mut ChaCha8Rng, out: &mut [f64]) -> usize {
        match *self {
            NoiseSpec::Uniform { c } => {
                for v in out.iter_mut() {
                    *v = if c == 0.0 { 0.0 } else { r.random_range(-c..=c) };
                }
                0
            }
            NoiseSpec::TruncatedGaussian { sigma, c } => {
                let normal = Normal::new(0.0, sigma).expect("positive sigma");
                for v in out.iter_mut() {
                    *v = if c == 0.0 {
                        0.0
                    } else {
                        loop {
                            let z: f64 = normal.sample(r);
                            if z.abs() <= c {
                                break z;
                            }
                        }
                    };
                }
                0
            }
            NoiseSpec::Correlated { c, strength } => {
                let z: Vec<f64> = (0..out.len())
                    .map(|_| if c == 0.0 { 0.0 } else { r.random_range(-c..=c) })
                    .collect();
                let total: f64 = z.iter().sum();
                let mut clipped = 0;
                for (v, zi) in out.iter_mut().zip(&z) {
                    let mixed = (1.0 - strength) * zi + strength * total;
                    if mixed.abs() > c {
                        clipped += 1;
                    }
                    *v = mixed.clamp(-c, c);
                }
                clipped
            }
        }
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseSpec::Uniform { c } => write!(f, "uniform:{c}"),
            NoiseSpec::TruncatedGaussian { sigma, c } => write!(f, "tgauss:{sigma}:{c}"),
            NoiseSpec::Correlated { c, strength } => write!(f, "correlated:{c}:{strength}"),
        }
    }
}

impl FromStr for NoiseSpec {
    type Err = Error;

    /// `uniform:c`, `tgauss:sigma:c` or `correlated:c:strength`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| {
            t.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad number {t:?} in noise spec {s:?}")))
        };
        let spec = match parts.as_slice() {
            ["uniform", c] => NoiseSpec::Uniform { c: num(c)? },
            ["tgauss", sigma, c] => NoiseSpec::TruncatedGaussian { sigma: num(sigma)?, c: num(c)? },
            ["correlated", c, strength] => NoiseSpec::Correlated { c: num(c)?, strength: num(strength)? },
            _ => return Err(Error::InvalidArgument(format!("unknown noise spec {s:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perturbations {
    pub deltas: Array2<f64>,
    pub clip_rate: f64,
}

/// `count` draws in `R^n`, draw `i` from stream `(seed, i, 0)`.
pub fn sample_perturbations(noise: &NoiseSpec, n: usize, count: usize, seed: u64) -> Result<Perturbations> {
    noise.validate()?;
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    let mut deltas = Array2::zeros((count, n));
    let clipped: usize = deltas
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(i, mut row)| {
            let mut r = stream(seed, i as u64, 0);
            noise.draw(&mut r, row.as_slice_mut().expect("row-major"))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok(Perturbations {
        deltas,
        clip_rate: clipped as f64 / (count * n).max(1) as f64,
    })
}

/// Rate, per component, of trials in which some example's shift exceeds its
/// radius. Example `j` in trial `t` draws from stream `(seed, j, t)`.
pub fn monte_carlo_violation(
    module: &dyn OutputModule,
    clean: ArrayView2<f64>,
    epsilon: &[f64],
    noise: &NoiseSpec,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    noise.validate()?;
    let (d, n) = (module.n_outputs(), module.n_inputs());
    if epsilon.len() != d {
        return Err(Error::DimensionMismatch(format!("{} radii for {d} components", epsilon.len())));
    }
    if clean.ncols() != n {
        return Err(Error::DimensionMismatch(format!("inputs have {} columns, module takes {n}", clean.ncols())));
    }
    if trials < 1000 {
        return Err(Error::InvalidArgument("Monte Carlo needs at least 1000 trials".into()));
    }
    let base: Vec<Array1<f64>> = clean.rows().into_iter().map(|x| module.outputs(x)).collect();
    let hits: Vec<Vec<bool>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut hit = vec![false; d];
            let mut delta = vec![0.0; n];
            for (j, x) in clean.rows().into_iter().enumerate() {
                let mut r = stream(seed, j as u64, t as u64);
                noise.draw(&mut r, &mut delta);
                let xt = &x + &ArrayView1::from(&delta[..]);
                let o = module.outputs(xt.view());
                for i in 0..d {
                    if (o[i] - base[j][i]).abs() > epsilon[i] {
                        hit[i] = true;
                    }
                }
            }
            hit
        })
        .collect();
    Ok((0..d)
        .map(|i| hits.iter().filter(|h| h[i]).count() as f64 / trials as f64)
        .collect())
}

/// Misclassification rate of each record's example over its evaluation
/// perturbations, by direct enumeration of predictions.
pub fn brute_force_cert_check(records: &[CertRecord], d: &Dataset, stats: &[MarginStats]) -> Result<Vec<f64>> {
    if records.len() != stats.len() {
        return Err(Error::DimensionMismatch(format!("{} records for {} statistics", records.len(), stats.len())));
    }
    records
        .iter()
        .zip(stats)
        .map(|(r, s)| {
            if r.example != s.example {
                return Err(Error::InvalidArgument(format!("record {} paired with statistics {}", r.example, s.example)));
            }
            if s.evaluation_perts.is_empty() {
                return Err(Error::InsufficientData("no evaluation perturbations".into()));
            }
            let rows = d.perturbed.index_axis(Axis(0), r.example).select(Axis(0), &s.evaluation_perts);
            let out = d.outputs_of(rows.view());
            let wrong = out.rows().into_iter().filter(|o| argmax(&o.to_vec()) != r.label).count();
            Ok(wrong as f64 / s.evaluation_perts.len() as f64)
        })
        .collect()
}

/// Qualitative outcome of perturbation-induced bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Panel {
    /// Contracting shift; both classes collapse onto the boundary.
    A,
    /// Constant shift toward class 0.
    B,
    /// Input-dependent shift toward class 0.
    C,
    /// Shift away from the boundary for both classes.
    D,
}

impl FromStr for Panel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(Panel::A),
            "b" => Ok(Panel::B),
            "c" => Ok(Panel::C),
            "d" => Ok(Panel::D),
            _ => Err(Error::InvalidArgument(format!("unknown panel {s:?}"))),
        }
    }
}

impl fmt::Display for Panel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Panel::A => "a",
            Panel::B => "b",
            Panel::C => "c",
            Panel::D => "d",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub panel: Panel,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub k: usize,
    pub noise: NoiseSpec,
    /// Length unit of the construction; defaults to the noise bound.
    pub scale: Option<f64>,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(panel: Panel, m: usize, k: usize, noise: NoiseSpec, seed: u64) -> Self {
        ScenarioSpec { panel, n: 16, d: 2, m, k, noise, scale: None, seed }
    }

    fn unit(&self) -> f64 {
        self.scale.unwrap_or_else(|| self.noise.bound())
    }
}

const MARKER: usize = 2;

/// `(mean, sd)` of the class cluster along `e_0`, in scale units.
fn cluster(panel: Panel, y: usize) -> (f64, f64) {
    match (panel, y) {
        (Panel::A, 0) => (-4.0, 1.0),
        (Panel::A, _) => (4.0, 1.0),
        (Panel::B | Panel::C, 0) => (-6.0, 1.0),
        (Panel::B | Panel::C, _) => (3.0, 1.0),
        (Panel::D, 0) => (-2.0, 1.5),
        (Panel::D, _) => (2.0, 1.5),
    }
}

/// Expected perturbation of a clean input with label `y` at scale `s`.
pub fn expected_shift(panel: Panel, x: ArrayView1<f64>, y: usize, s: f64) -> Array1<f64> {
    let mut mu = Array1::zeros(x.len());
    mu[0] = match panel {
        Panel::A => -0.9 * x[0],
        Panel::B => -2.0 * s,
        Panel::C => -(2.0 * s + 0.3 * x[1]),
        Panel::D => {
            if y == 1 {
                1.5 * s
            } else {
                -1.5 * s
            }
        }
    };
    mu[MARKER] = 2.0 * s;
    mu
}

/// Exact constants of a generated fixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub panel: Option<Panel>,
    pub noise: NoiseSpec,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    #[serde(rename = "V")]
    pub v: Option<Vec<f64>>,
    pub gammas: Vec<f64>,
    pub noise_c: f64,
    pub clip_rate: f64,
    pub seed: u64,
}

impl GroundTruth {
    pub fn save(&self, dir: &Path) -> Result<()> {
        csvio::write_string(&dir.join("ground_truth.json"), &(serde_json::to_string_pretty(self)? + "\n"))
    }
}

fn perturb_all(clean: &Array2<f64>, k: usize, noise: &NoiseSpec, seed: u64, mean: impl Fn(usize) -> Array1<f64> + Sync) -> (Array3<f64>, f64) {
    let (m, n) = clean.dim();
    let mut pert = Array3::zeros((m, k, n));
    let clipped: usize = pert
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(e, mut rows)| {
            let mu = mean(e);
            let mut delta = vec![0.0; n];
            let mut clipped = 0;
            for (kk, mut row) in rows.axis_iter_mut(Axis(0)).enumerate() {
                let mut r = stream(key(seed, 1, e as u64), kk as u64, 0);
                clipped += noise.draw(&mut r, &mut delta);
                for i in 0..n {
                    row[i] = clean[[e, i]] + mu[i] + delta[i];
                }
            }
            clipped
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    (pert, clipped as f64 / (m * k * n).max(1) as f64)
}

fn binary_head() -> impl Fn(usize) -> (Array2<f64>, Vec<f64>) {
    |n| {
        let mut w = Array2::zeros((2, n));
        w[[0, 0]] = -1.0;
        w[[1, 0]] = 1.0;
        (w, vec![0.0, 0.0])
    }
}

/// Panel fixture with labels, linear head and exact constants.
pub fn gen_scenario(spec: &ScenarioSpec) -> Result<(Dataset, GroundTruth)> {
    spec.noise.validate()?;
    if spec.m < 4 {
        return Err(Error::InvalidArgument(format!("scenario needs m ≥ 4, got {}", spec.m)));
    }
    if spec.k < 1 {
        return Err(Error::InvalidArgument("scenario needs k ≥ 1".into()));
    }
    if spec.d != 2 {
        return Err(Error::InvalidArgument(format!("panel fixtures are binary (d = 2), got d = {}", spec.d)));
    }
    if spec.n < 3 {
        return Err(Error::InvalidArgument(format!("panel fixtures need n ≥ 3, got {}", spec.n)));
    }
    let s = spec.unit();
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument("scenario scale must be positive".into()));
    }
    let (m, n) = (spec.m, spec.n);
    let labels: Vec<usize> = (0..m).map(|e| e % 2).collect();
    let mut clean = Array2::zeros((m, n));
    for (e, mut row) in clean.axis_iter_mut(Axis(0)).enumerate() {
        let mut r = stream(key(spec.seed, 0, 0), e as u64, 0);
        let (mean, sd) = cluster(spec.panel, labels[e]);
        row[0] = s * (mean + sd * r.sample::<f64, _>(StandardNormal));
        for i in 1..n {
            row[i] = if i == MARKER { 0.0 } else { 2.0 * s * r.sample::<f64, _>(StandardNormal) };
        }
    }
    let (pert, clip_rate) = perturb_all(&clean, spec.k, &spec.noise, spec.seed, |e| {
        expected_shift(spec.panel, clean.row(e), labels[e], s)
    });
    let (w, b) = binary_head()(n);
    let c_max = (0..m)
        .map(|e| expected_shift(spec.panel, clean.row(e), labels[e], s)[0].abs())
        .fold(0.0, f64::max);
    let v = spec.noise.coordinate_variance().map(|var| vec![var; 2]);
    let d = Dataset {
        task_id: format!("synth_panel_{}", spec.panel),
        kind: DumpKind::Features,
        n_outputs: 2,
        clean,
        perturbed: pert,
        labels: Some(labels),
        weights: Some(w),
        biases: Some(b),
        perturbation_split: PerturbationSplit::Resampled,
    };
    let truth = GroundTruth {
        panel: Some(spec.panel),
        noise: spec.noise,
        c: vec![c_max; 2],
        v,
        gammas: vec![1.0, 1.0],
        noise_c: spec.noise.bound(),
        clip_rate,
        seed: spec.seed,
    };
    Ok((d, truth))
}

/// Centered-noise fixture around a random linear module: inputs `N(0, I)`,
/// `k` perturbations per example, labels from the clean argmax.
pub fn gen_linear_dataset(n: usize, d: usize, m: usize, k: usize, noise: &NoiseSpec, seed: u64) -> Result<(Dataset, LinearModule, GroundTruth)> {
    noise.validate()?;
    if m == 0 || k == 0 {
        return Err(Error::InvalidArgument("m and k must be positive".into()));
    }
    let module = gen_linear_module(n, d, seed, &[1.0])?;
    let mut clean = Array2::zeros((m, n));
    for (e, mut row) in clean.axis_iter_mut(Axis(0)).enumerate() {
        let mut r = stream(key(seed, 0, 1), e as u64, 0);
        row.iter_mut().for_each(|v| *v = r.sample(StandardNormal));
    }
    let (pert, clip_rate) = perturb_all(&clean, k, noise, seed, |_| Array1::zeros(n));
    let labels = crate::dataset::predict(module.w.dot(&clean.t()).t());
    let v = noise
        .coordinate_variance()
        .map(|var| module.gammas.iter().map(|g| g * g * var).collect());
    let truth = GroundTruth {
        panel: None,
        noise: *noise,
        c: vec![0.0; d],
        v,
        gammas: module.gammas.clone(),
        noise_c: noise.bound(),
        clip_rate,
        seed,
    };
    let ds = Dataset {
        task_id: "synth_linear".into(),
        kind: DumpKind::Features,
        n_outputs: d,
        clean,
        perturbed: pert,
        labels: Some(labels),
        weights: Some(module.w.clone()),
        biases: Some(module.b.clone()),
        perturbation_split: PerturbationSplit::Resampled,
    };
    Ok((ds, module, truth))
}

/// One-dimensional binary fixture under uniform noise on `[−c, c]`.
///
/// Regular examples sit at `±(2c + 4c·Exp(1))`; the trailing `near_boundary`
/// examples have label 1 and lie at `0.1c`, so each flips with probability
/// 0.45 under perturbation.
pub fn gen_uniform_1d(m: usize, k: usize, c: f64, near_boundary: usize, seed: u64) -> Result<Dataset> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument("noise bound must be positive".into()));
    }
    if near_boundary > m {
        return Err(Error::InvalidArgument("more boundary examples than examples".into()));
    }
    let labels: Vec<usize> = (0..m).map(|e| if e >= m - near_boundary { 1 } else { e % 2 }).collect();
    let clean = Array2::from_shape_fn((m, 1), |(e, _)| {
        if e >= m - near_boundary {
            return 0.1 * c;
        }
        let mut r = stream(key(seed, 0, 2), e as u64, 0);
        let u: f64 = r.random::<f64>();
        let dist = 2.0 * c - 4.0 * c * (1.0 - u).ln();
        if labels[e] == 1 { dist } else { -dist }
    });
    let noise = NoiseSpec::Uniform { c };
    let (pert, _) = perturb_all(&clean, k, &noise, seed, |_| Array1::zeros(1));
    Ok(Dataset {
        task_id: "synth_uniform_1d".into(),
        kind: DumpKind::Features,
        n_outputs: 2,
        clean,
        perturbed: pert,
        labels: Some(labels),
        weights: Some(ndarray::array![[-1.0], [1.0]]),
        biases: Some(vec![0.0, 0.0]),
        perturbation_split: PerturbationSplit::Resampled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biasstats::shift_matrix;
    use crate::compcert::{lipschitz_of_linear, radius_lipschitz, radius_variance};
    use crate::dataset::validate_dataset;

    #[test]
    fn module_norms() {
        let m = gen_linear_module(8, 3, 1, &[1.0]).unwrap();
        for r in m.w.rows() {
            assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-12);
        }
        let m = gen_linear_module(8, 2, 1, &[0.5, 2.0]).unwrap();
        let g: Vec<f64> = m.w.rows().into_iter().map(|r| lipschitz_of_linear(&r.to_vec())).collect();
        assert!((g[0] - 0.5).abs() < 1e-12 && (g[1] - 2.0).abs() < 1e-12);
        assert_eq!(m, gen_linear_module(8, 2, 1, &[0.5, 2.0]).unwrap());
    }

    #[test]
    fn zero_bound_gives_zero_deltas() {
        for spec in ["uniform:0", "tgauss:1:0", "correlated:0:0.5"] {
            let p = sample_perturbations(&spec.parse().unwrap(), 4, 50, 3).unwrap();
            assert!(p.deltas.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn uniform_mean_is_centered() {
        let c = 0.05;
        let count = 1_000_000;
        let p = sample_perturbations(&NoiseSpec::Uniform { c }, 2, count, 11).unwrap();
        let tol = 3.0 * c / (3.0 * count as f64).sqrt();
        for col in p.deltas.columns() {
            assert!(col.mean().unwrap().abs() <= tol);
            assert!(col.iter().all(|v| v.abs() <= c));
        }
    }

    fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut best) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            let x = a[i].min(b[j]);
            while i < a.len() && a[i] <= x {
                i += 1;
            }
            while j < b.len() && b[j] <= x {
                j += 1;
            }
            best = best.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        best
    }

    #[test]
    fn identity_mixing_matches_uniform() {
        let n = 10_000;
        let u = sample_perturbations(&NoiseSpec::Uniform { c: 1.0 }, 3, n, 1).unwrap();
        let m = sample_perturbations(&NoiseSpec::Correlated { c: 1.0, strength: 0.0 }, 3, n, 2).unwrap();
        assert_eq!(m.clip_rate, 0.0);
        // 1% critical value for two samples of size n
        let crit = 1.63 * (2.0 / n as f64).sqrt();
        for col in 0..3 {
            let ks = ks_statistic(u.deltas.column(col).to_vec(), m.deltas.column(col).to_vec());
            assert!(ks < crit, "{ks} ≥ {crit}");
        }
        let strong = sample_perturbations(&NoiseSpec::Correlated { c: 1.0, strength: 0.5 }, 8, 2000, 2).unwrap();
        assert!(strong.clip_rate > 0.0);
        assert!(strong.deltas.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn truncated_gaussian_variance() {
        let spec = NoiseSpec::TruncatedGaussian { sigma: 1.0, c: 1.5 };
        let p = sample_perturbations(&spec, 1, 200_000, 4).unwrap();
        let col = p.deltas.column(0);
        let var = col.mapv(|v| v * v).mean().unwrap();
        assert!((var - spec.coordinate_variance().unwrap()).abs() < 0.01);
    }

    #[test]
    fn noise_spec_parsing() {
        assert_eq!("uniform:0.05".parse::<NoiseSpec>().unwrap(), NoiseSpec::Uniform { c: 0.05 });
        assert_eq!(
            "tgauss:0.02:0.05".parse::<NoiseSpec>().unwrap(),
            NoiseSpec::TruncatedGaussian { sigma: 0.02, c: 0.05 }
        );
        let s = NoiseSpec::Correlated { c: 0.1, strength: 0.3 };
        assert_eq!(s.to_string().parse::<NoiseSpec>().unwrap(), s);
        assert!("gauss:1".parse::<NoiseSpec>().is_err());
        assert!("uniform:-1".parse::<NoiseSpec>().is_err());
    }

    #[test]
    fn linear_shift_matches_module() {
        let (d, module, _) = gen_linear_dataset(6, 3, 5, 4, &NoiseSpec::Uniform { c: 0.1 }, 9).unwrap();
        let s = shift_matrix(&d);
        for e in 0..5 {
            for k in 0..4 {
                let dx = &d.perturbed.slice(ndarray::s![e, k, ..]) - &d.clean.row(e);
                let f = module.w.dot(&dx);
                for i in 0..3 {
                    assert!((s.values[[e, k, i]] - f[i]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn fixtures_validate_and_repeat() {
        for panel in [Panel::A, Panel::B, Panel::C, Panel::D] {
            let spec = ScenarioSpec::new(panel, 12, 6, NoiseSpec::Uniform { c: 0.05 }, 7);
            let (a, ta) = gen_scenario(&spec).unwrap();
            let (b, tb) = gen_scenario(&spec).unwrap();
            assert!(validate_dataset(&a).is_valid());
            assert_eq!(a, b);
            assert_eq!(ta, tb);
        }
        let bad = ScenarioSpec::new(Panel::B, 3, 6, NoiseSpec::Uniform { c: 0.05 }, 7);
        assert!(gen_scenario(&bad).is_err());
    }

    #[test]
    fn panel_shift_means_match_construction() {
        let spec = ScenarioSpec::new(Panel::B, 20, 400, NoiseSpec::Uniform { c: 0.05 }, 3);
        let (d, truth) = gen_scenario(&spec).unwrap();
        let means = shift_matrix(&d).per_example_means();
        // output 1 is x_0, so its mean shift is −2s; output 0 mirrors it
        let se = 4.0 * 0.05 / (3.0f64 * 400.0).sqrt();
        for e in 0..20 {
            assert!((means[[e, 1]] + 0.1).abs() <= se, "{} {se}", means[[e, 1]]);
            assert!((means[[e, 0]] - 0.1).abs() <= se);
        }
        assert!((truth.c[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn infinite_radius_never_violated() {
        let (d, module, _) = gen_linear_dataset(4, 2, 3, 1, &NoiseSpec::Uniform { c: 0.1 }, 1).unwrap();
        let noise = NoiseSpec::Uniform { c: 0.1 };
        let r = monte_carlo_violation(&module, d.clean.view(), &[f64::INFINITY; 2], &noise, 1000, 0).unwrap();
        assert_eq!(r, vec![0.0, 0.0]);
        let r = monte_carlo_violation(&module, d.clean.view(), &[0.0; 2], &noise, 1000, 0).unwrap();
        assert!(r.iter().all(|v| *v > 0.99));
    }

    #[test]
    fn radii_are_sound_on_linear_fixture() {
        let noise = NoiseSpec::Uniform { c: 0.05 };
        let (d, module, truth) = gen_linear_dataset(16, 4, 20, 1, &noise, 5).unwrap();
        let v = truth.v.clone().unwrap();
        for phi in [0.05] {
            let eps_l: Vec<f64> = (0..4)
                .map(|i| radius_lipschitz(0.0, truth.gammas[i], 0.05, 16, 20, phi).unwrap())
                .collect();
            let eps_v: Vec<f64> = (0..4).map(|i| radius_variance(0.0, v[i], 20, phi).unwrap()).collect();
            for eps in [eps_l, eps_v] {
                let rates = monte_carlo_violation(&module, d.clean.view(), &eps, &noise, 5000, 1).unwrap();
                assert!(rates.iter().all(|r| *r <= phi), "{rates:?}");
            }
        }
    }
}
