//! Correctors that remove the systematic part of perturbation-induced shifts.
//!
//! Three variants share one serialized form (`corrector.json` plus CSV
//! side files):
//!
//! - [`constant`]: a fixed offset per output component
//! - [`ridge`]: `b(x) = Wᵀψ(x) + β`, optionally with a Gram penalty
//! - [`pca`]: feature-level correction along principal axes

pub mod constant;
pub mod pca;
pub mod ridge;

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use constant::{apply_bias, search_constant_bias, BiasSearchResult, GridRow, SearchConfig};
pub use pca::{apply_pca_debias, fit_pca_debias, PcaCorrector};
pub use ridge::{apply_ridge, fit_ridge, fit_ridge_gram, fit_ridge_with, gram_norm, FeatureMap, RidgeCorrector};

use crate::biasstats::ShiftTensor;
use crate::csvio;
use crate::dataset::{Dataset, DumpKind};
use crate::error::{Error, Result};
use crate::split::SplitAssignment;
use crate::util::flatten3;

#[derive(Clone, Debug, PartialEq)]
pub enum Corrector {
    Constant { b: Vec<f64> },
    Ridge(RidgeCorrector),
    Pca(PcaCorrector),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub task_id: String,
    pub split: String,
    pub seed: u64,
    pub n_examples: usize,
    pub n_perturbations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FittedCorrector {
    pub corrector: Corrector,
    pub fitted_on: FitInfo,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorrectorFile {
    variant: String,
    dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    fitted_on: FitInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_map: Option<FeatureMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    jitter: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variances: Option<Vec<f64>>,
}

pub const CORRECTOR_FILE: &str = "corrector.json";

impl FittedCorrector {
    pub fn variant(&self) -> &'static str {
        match &self.corrector {
            Corrector::Constant { .. } => "constant",
            Corrector::Ridge(r) if r.alpha != 0.0 => "gram",
            Corrector::Ridge(_) => "ridge",
            Corrector::Pca(_) => "pca",
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut file = CorrectorFile {
            variant: self.variant().into(),
            dims: vec![],
            lambda: None,
            alpha: None,
            fitted_on: self.fitted_on.clone(),
            b: None,
            beta: None,
            feature_map: None,
            jitter: None,
            k: None,
            variances: None,
        };
        match &self.corrector {
            Corrector::Constant { b } => {
                file.dims = vec![b.len()];
                file.b = Some(b.clone());
            }
            Corrector::Ridge(r) => {
                file.dims = vec![r.w.nrows(), r.w.ncols()];
                file.lambda = Some(r.lambda);
                file.alpha = Some(r.alpha);
                file.beta = Some(r.beta.clone());
                file.feature_map = Some(r.feature_map);
                file.jitter = Some(r.jitter);
                csvio::write_matrix(&dir.join("corrector_W.csv"), r.w.view())?;
            }
            Corrector::Pca(p) => {
                file.dims = vec![p.n_features(), p.k];
                file.lambda = Some(p.lambda);
                file.k = Some(p.k);
                file.variances = Some(p.variances.clone());
                csvio::write_matrix(&dir.join("corrector_H.csv"), p.h.view())?;
                csvio::write_floats(&dir.join("corrector_mu.csv"), &p.mu)?;
                if let Some(t) = &p.theta {
                    file.beta = Some(t.beta.clone());
                    file.feature_map = Some(t.feature_map);
                    file.jitter = Some(t.jitter);
                    csvio::write_matrix(&dir.join("corrector_W.csv"), t.w.view())?;
                }
            }
        }
        let json = serde_json::to_string_pretty(&file)? + "\n";
        csvio::write_string(&dir.join(CORRECTOR_FILE), &json)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CORRECTOR_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let f: CorrectorFile = serde_json::from_str(&text)?;
        let missing = |what: &str| Error::MissingArtifact(format!("{what} in {}", path.display()));
        let corrector = match f.variant.as_str() {
            "constant" => Corrector::Constant { b: f.b.ok_or_else(|| missing("b"))? },
            "ridge" | "gram" => {
                let w = csvio::read_matrix(&dir.join("corrector_W.csv"), None)?;
                Corrector::Ridge(RidgeCorrector {
                    w,
                    beta: f.beta.ok_or_else(|| missing("beta"))?,
                    lambda: f.lambda.ok_or_else(|| missing("lambda"))?,
                    alpha: f.alpha.unwrap_or(0.0),
                    feature_map: f.feature_map.unwrap_or_default(),
                    jitter: f.jitter.unwrap_or(0.0),
                })
            }
            "pca" => {
                let h = csvio::read_matrix(&dir.join("corrector_H.csv"), None)?;
                let mu = csvio::read_matrix(&dir.join("corrector_mu.csv"), Some(1))?
                    .column(0)
                    .to_vec();
                let k = f.k.ok_or_else(|| missing("k"))?;
                let lambda = f.lambda.ok_or_else(|| missing("lambda"))?;
                let theta = match f.beta {
                    Some(beta) => Some(RidgeCorrector {
                        w: csvio::read_matrix(&dir.join("corrector_W.csv"), None)?,
                        beta,
                        lambda,
                        alpha: 0.0,
                        feature_map: f.feature_map.unwrap_or_default(),
                        jitter: f.jitter.unwrap_or(0.0),
                    }),
                    None => None,
                };
                Corrector::Pca(PcaCorrector {
                    mu,
                    h,
                    variances: f.variances.unwrap_or_default(),
                    k,
                    theta,
                    lambda,
                })
            }
            other => {
                return Err(Error::InvalidArgument(format!("unknown corrector variant {other:?}")))
            }
        };
        Ok(FittedCorrector {
            corrector,
            fitted_on: f.fitted_on,
        })
    }
}

fn flat_perturbed(d: &Dataset, examples: &[usize], perts: &[usize]) -> Array2<f64> {
    let sel = d.perturbed.select(Axis(0), examples).select(Axis(1), perts);
    flatten3(&sel)
}

fn flat_shifts(s: &ShiftTensor) -> Array2<f64> {
    flatten3(&s.values)
}

/// Ridge or Gram-penalised ridge fitted on the training split: inputs are
/// the stored perturbed vectors, targets the output shifts.
pub fn fit_ridge_on(
    d: &Dataset,
    split: &SplitAssignment,
    lambda: f64,
    alpha: f64,
    feature_map: FeatureMap,
) -> Result<FittedCorrector> {
    let ex = &split.train_examples;
    let perts = &split.train_perts;
    let s = crate::biasstats::shift_matrix(d).select(ex, perts);
    let x = flat_perturbed(d, ex, perts);
    let f = flat_shifts(&s);
    let r = if alpha == 0.0 {
        fit_ridge_with(x.view(), f.view(), lambda, feature_map)?
    } else {
        let xc = d.clean.select(Axis(0), ex);
        fit_ridge_gram(x.view(), f.view(), lambda, alpha, xc.view(), feature_map)?
    };
    Ok(FittedCorrector {
        corrector: Corrector::Ridge(r),
        fitted_on: fit_info(d, split),
    })
}

/// PCA corrector fitted on the training split's stored vectors.
pub fn fit_pca_on(d: &Dataset, split: &SplitAssignment, k: usize, lambda: f64) -> Result<FittedCorrector> {
    let ex = &split.train_examples;
    let clean = d.clean.select(Axis(0), ex);
    let pert = flat_perturbed(d, ex, &split.train_perts);
    Ok(FittedCorrector {
        corrector: Corrector::Pca(fit_pca_debias(clean.view(), pert.view(), k, lambda)?),
        fitted_on: fit_info(d, split),
    })
}

pub fn fit_info(d: &Dataset, split: &SplitAssignment) -> FitInfo {
    FitInfo {
        task_id: d.task_id.clone(),
        split: "train".into(),
        seed: split.seed,
        n_examples: split.train_examples.len(),
        n_perturbations: split.train_perts.len(),
    }
}

fn map_rows3(t: &Array3<f64>, f: impl Fn(ArrayView2<f64>) -> Result<Array2<f64>>) -> Result<Array3<f64>> {
    let (m, k, _) = t.dim();
    let flat = flatten3(t);
    let out = f(flat.view())?;
    let w = out.ncols();
    out.into_shape_with_order((m, k, w))
        .map_err(|e| Error::DimensionMismatch(e.to_string()))
}

impl Corrector {
    pub fn is_identity(&self) -> bool {
        match self {
            Corrector::Constant { b } => b.iter().all(|v| *v == 0.0),
            Corrector::Ridge(r) => r.is_identity(),
            Corrector::Pca(p) => {
                p.mu.iter().all(|v| *v == 0.0) && p.theta.as_ref().is_none_or(|t| t.is_identity())
            }
        }
    }

    /// The corrected module written as a dump: clean and perturbed inputs
    /// both pass through `M*`.
    ///
    /// A linear ridge on a features dump with a linear head is merged into
    /// the head. Other ridge corrections on a linear head produce a logits
    /// dump of corrected outputs.
    pub fn apply_dataset(&self, d: &Dataset) -> Result<Dataset> {
        let mut out = d.clone();
        match self {
            Corrector::Constant { b } => {
                if b.len() != d.n_components() {
                    return Err(Error::DimensionMismatch(format!(
                        "bias has {} entries, module has {} components",
                        b.len(),
                        d.n_components()
                    )));
                }
                if d.has_linear_head() {
                    let mut biases = d.biases.clone().unwrap_or_else(|| vec![0.0; d.n_outputs]);
                    biases.iter_mut().zip(b).for_each(|(x, bi)| *x -= bi);
                    out.biases = Some(biases);
                } else {
                    out.clean = apply_bias(d.clean.view(), b)?;
                    out.perturbed = map_rows3(&d.perturbed, |v| apply_bias(v, b))?;
                }
            }
            Corrector::Ridge(r) => {
                if r.n_inputs() != d.width() || r.n_outputs() != d.n_components() {
                    return Err(Error::DimensionMismatch(format!(
                        "corrector maps {} inputs to {} outputs; dump has width {} and {} components",
                        r.n_inputs(),
                        r.n_outputs(),
                        d.width(),
                        d.n_components()
                    )));
                }
                if d.has_linear_head() && r.feature_map == FeatureMap::Linear {
                    let n = r.n_inputs();
                    let w = d.weights.as_ref().expect("linear head") - &r.w.slice(ndarray::s![..n, ..]).t();
                    let mut biases = d.biases.clone().unwrap_or_else(|| vec![0.0; d.n_outputs]);
                    for (i, x) in biases.iter_mut().enumerate() {
                        *x -= r.w[[n, i]] + r.beta[i];
                    }
                    out.weights = Some(w);
                    out.biases = Some(biases);
                } else {
                    let clean_out = d.clean_outputs();
                    out.clean = apply_ridge(clean_out.view(), d.clean.view(), r)?;
                    let pert_out = d.perturbed_outputs();
                    let (m, k, c) = pert_out.dim();
                    let flat_out = flatten3(&pert_out);
                    let flat_in = d.perturbed_flat();
                    out.perturbed = apply_ridge(flat_out.view(), flat_in.view(), r)?
                        .into_shape_with_order((m, k, c))
                        .expect("owned tensor is contiguous");
                    if d.has_linear_head() {
                        out.kind = DumpKind::Logits;
                        out.weights = None;
                        out.biases = None;
                    }
                }
            }
            Corrector::Pca(p) => {
                out.clean = p.apply_rows(d.clean.view())?;
                out.perturbed = map_rows3(&d.perturbed, |v| p.apply_rows(v))?;
            }
        }
        Ok(out)
    }
}

/// `f*(x, δx) = M*(x + δx) − M(x)`: corrected perturbed outputs against the
/// original clean outputs.
pub fn corrected_shifts(d: &Dataset, corrected: &Dataset) -> Result<ShiftTensor> {
    ShiftTensor::from_outputs(d.clean_outputs().view(), corrected.perturbed_outputs().view())
}
