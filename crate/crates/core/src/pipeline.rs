//! End-to-end stages shared by the command line, the examples and the tests.

use serde::{Deserialize, Serialize};

use crate::biasstats::{bias_profile, shift_matrix, ShiftTensor};
use crate::compcert::{lipschitz_from_dataset, radius_report, RadiusReport};
use crate::dataset::Dataset;
use crate::debias::constant::{search_constant_bias, BiasSearchResult, SearchConfig};
use crate::debias::ridge::{gram_norm, FeatureMap};
use crate::debias::{corrected_shifts, fit_info, fit_pca_on, fit_ridge_on, Corrector, FittedCorrector};
use crate::error::{Error, Result};
use crate::margincert::{
    certify_all, margin_shift_stats, summarize, BridgeParams, CertRecord, CertSummary, MarginStats, Methods,
    StatsConfig,
};
use crate::metrics::{evaluate, MetricsReport};
use crate::split::{split_dataset, Proportions, Split, SplitAssignment};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Constant,
    Ridge,
    Gram,
    Pca,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Method::Constant),
            "ridge" => Ok(Method::Ridge),
            "gram" => Ok(Method::Gram),
            "pca" => Ok(Method::Pca),
            _ => Err(Error::InvalidArgument(format!("unknown debiasing method {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub proportions: Proportions,
    pub seed: u64,
    pub phi: f64,
    pub psi: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub feature_map: FeatureMap,
    pub pca_k: usize,
    pub search: SearchConfig,
    pub stats: StatsConfig,
    pub methods: Methods,
    pub bridge: BridgeParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            proportions: Proportions::default(),
            seed: 0,
            phi: 0.1,
            psi: 0.05,
            lambda: 0.1,
            alpha: 0.0,
            feature_map: FeatureMap::Linear,
            pca_k: 1,
            search: SearchConfig::default(),
            stats: StatsConfig::default(),
            methods: Methods::default(),
            bridge: BridgeParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn split(&self, d: &Dataset) -> Result<SplitAssignment> {
        split_dataset(d, &self.proportions, self.seed)
    }
}

/// Fits a corrector on the training split. The constant method also
/// returns its grid search; a search that finds no region yields a zero bias.
pub fn fit_corrector(d: &Dataset, split: &SplitAssignment, method: Method, cfg: &PipelineConfig) -> Result<(FittedCorrector, Option<BiasSearchResult>)> {
    match method {
        Method::Constant => {
            let s = shift_matrix(d);
            let mut search = cfg.search.clone();
            if search.lipschitz.is_none() {
                search.lipschitz = lipschitz_from_dataset(d, &split.train_examples);
            }
            let res = search_constant_bias(d, &s, &split.train_examples, &split.train_perts, &search)?;
            let fitted = FittedCorrector {
                corrector: Corrector::Constant { b: res.bias_vector() },
                fitted_on: fit_info(d, split),
            };
            Ok((fitted, Some(res)))
        }
        Method::Ridge => Ok((fit_ridge_on(d, split, cfg.lambda, 0.0, cfg.feature_map)?, None)),
        Method::Gram => Ok((fit_ridge_on(d, split, cfg.lambda, cfg.alpha, cfg.feature_map)?, None)),
        Method::Pca => Ok((fit_pca_on(d, split, cfg.pca_k, cfg.lambda)?, None)),
    }
}

/// Radii from a shift tensor restricted to one split.
pub fn radii_for(d: &Dataset, s: &ShiftTensor, examples: &[usize], perts: &[usize], phi: f64, bins: usize) -> Result<RadiusReport> {
    let sel = s.select(examples, perts);
    let profile = bias_profile(&sel, bins)?;
    let lip = lipschitz_from_dataset(d, examples);
    radius_report(&profile.c, &profile.v, examples.len(), phi, lip.as_ref())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusComparison {
    pub before: RadiusReport,
    pub after: RadiusReport,
    pub p_eps_l: Option<f64>,
    pub p_eps_v: f64,
}

/// Radii on the test split before correction and of `f*` after.
pub fn compare_radii(d: &Dataset, corrected: &Dataset, split: &SplitAssignment, phi: f64, bins: usize) -> Result<RadiusComparison> {
    let ex = &split.test_examples;
    let perts = &split.test_perts;
    let before = radii_for(d, &shift_matrix(d), ex, perts, phi, bins)?;
    let after = radii_for(d, &corrected_shifts(d, corrected)?, ex, perts, phi, bins)?;
    let p_eps_v = crate::metrics::radius_contraction(&before.epsilon_v(), &after.epsilon_v())?;
    let p_eps_l = match (before.epsilon_l(), after.epsilon_l()) {
        (Some(b), Some(a)) => Some(crate::metrics::radius_contraction(&b, &a)?),
        _ => None,
    };
    Ok(RadiusComparison { before, after, p_eps_l, p_eps_v })
}

/// Metrics of the corrected dump on the test split.
pub fn evaluate_corrector(d: &Dataset, corrected: &Dataset, split: &SplitAssignment, cfg: &PipelineConfig) -> Result<MetricsReport> {
    let radii = compare_radii(d, corrected, split, cfg.search.phi, cfg.stats.bins)?;
    let (bl, al) = (radii.before.epsilon_l(), radii.after.epsilon_l());
    let ev = (radii.before.epsilon_v(), radii.after.epsilon_v());
    let l = match (&bl, &al) {
        (Some(b), Some(a)) => Some((b.as_slice(), a.as_slice())),
        _ => None,
    };
    let mut r = evaluate(
        d,
        corrected,
        &split.test_examples,
        &split.test_perts,
        Some((&ev.0, &ev.1)),
        l,
    )?;
    r.split = Split::Test.to_string();
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub stats: Vec<MarginStats>,
    pub records: Vec<CertRecord>,
    pub holdout_records: Vec<CertRecord>,
    pub summary: CertSummary,
}

/// Certificates on the test split with population bounds from the hold-out.
pub fn certify(d: &Dataset, split: &SplitAssignment, cfg: &PipelineConfig) -> Result<Certification> {
    let stats = margin_shift_stats(d, &split.test_examples, &split.test_perts, &cfg.stats)?;
    let records = certify_all(&stats, cfg.phi, &cfg.bridge)?;
    let hold_stats = margin_shift_stats(d, &split.holdout_examples, &split.holdout_perts, &cfg.stats)?;
    let holdout_records = certify_all(&hold_stats, cfg.phi, &cfg.bridge)?;
    let summary = summarize(&records, Some(&holdout_records), cfg.phi, cfg.psi, &cfg.methods)?;
    Ok(Certification { stats, records, holdout_records, summary })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub gram_norm: f64,
    pub delta_clean: f64,
    pub delta_pert: f64,
    pub p_c: Option<f64>,
    pub p_h: Option<f64>,
}

/// Gram-penalised ridge over `alphas`; `delta_*` are test-split BAC changes
/// in percentage points and `gram_norm` is `‖Ψ_c W‖_F` on the training
/// clean inputs.
pub fn alpha_sweep(d: &Dataset, split: &SplitAssignment, alphas: &[f64], cfg: &PipelineConfig) -> Result<Vec<AlphaRow>> {
    let xc = d.clean.select(ndarray::Axis(0), &split.train_examples);
    alphas
        .iter()
        .map(|&alpha| {
            let fitted = fit_ridge_on(d, split, cfg.lambda, alpha, cfg.feature_map)?;
            let Corrector::Ridge(r) = &fitted.corrector else {
                unreachable!("ridge fit returns a ridge corrector")
            };
            let corrected = fitted.corrector.apply_dataset(d)?;
            let m = evaluate(d, &corrected, &split.test_examples, &split.test_perts, None, None)?;
            let cert = certify(&corrected, split, cfg)?;
            Ok(AlphaRow {
                alpha,
                gram_norm: gram_norm(r, xc.view()),
                delta_clean: m.delta_clean,
                delta_pert: m.delta_pert,
                p_c: cert.summary.p_c,
                p_h: cert.summary.p_h,
            })
        })
        .collect()
}
