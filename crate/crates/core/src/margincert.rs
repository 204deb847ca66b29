//! Per-example margin certificates and their population-level extension.
//!
//! For example `(x, y)` and competitor `j`, the geometric margin is
//! `ρ_j = (⟨w_y − w_j, x⟩ + b_y − b_j)/‖w_y − w_j‖` and a perturbation moves
//! it by `Z_j = ⟨u_{y,j}, δx⟩` with `u_{y,j}` the unit normal. The example is
//! certified under a method when `ρ_j ≥ −μ_j + ξ_j` for every competitor,
//! where `μ_j`, `ν_j`, `c_j` are the uniform moments of the empirical box of
//! `Z_j` and `ξ_j` is the method's threshold at level `κ_j`.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biasstats::{box_from_halves, density_ratio};
use crate::compcert::bridge_budget;
use crate::csvio::fmt_float;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::util::argmax;

/// How margins are measured.
#[derive(Clone, Debug, PartialEq)]
pub enum MarginModel {
    /// Linear head `o = Wx + b` on stored features.
    Linear { w: Array2<f64>, b: Vec<f64> },
    /// Stored vectors are the outputs; normalizers are 1.
    Logits,
}

impl MarginModel {
    pub fn for_dataset(d: &Dataset) -> MarginModel {
        match (&d.weights, d.has_linear_head()) {
            (Some(w), true) => MarginModel::Linear {
                w: w.clone(),
                b: d.biases.clone().unwrap_or_else(|| vec![0.0; w.nrows()]),
            },
            _ => MarginModel::Logits,
        }
    }

    fn n_classes(&self, width: usize) -> usize {
        match self {
            MarginModel::Linear { w, .. } => w.nrows(),
            MarginModel::Logits => width,
        }
    }

    fn normal(&self, y: usize, j: usize) -> Result<Option<(Array1<f64>, f64)>> {
        match self {
            MarginModel::Linear { w, .. } => {
                let diff = &w.row(y) - &w.row(j);
                let norm = diff.dot(&diff).sqrt();
                if norm == 0.0 {
                    return Err(Error::ZeroNormalizer { label: y, competitor: j });
                }
                Ok(Some((diff, norm)))
            }
            MarginModel::Logits => Ok(None),
        }
    }
}

/// `(j, ρ_j)` for every competitor `j ≠ y`.
pub fn pairwise_margins(model: &MarginModel, x: ArrayView1<f64>, y: usize) -> Result<Vec<(usize, f64)>> {
    let q = model.n_classes(x.len());
    if y >= q {
        return Err(Error::InvalidArgument(format!("label {y} out of range for {q} classes")));
    }
    (0..q)
        .filter(|&j| j != y)
        .map(|j| {
            let rho = match (model, model.normal(y, j)?) {
                (MarginModel::Linear { b, .. }, Some((diff, norm))) => (diff.dot(&x) + b[y] - b[j]) / norm,
                _ => x[y] - x[j],
            };
            Ok((j, rho))
        })
        .collect()
}

/// Smallest pairwise margin.
pub fn margin(model: &MarginModel, x: ArrayView1<f64>, y: usize) -> Result<f64> {
    Ok(pairwise_margins(model, x, y)?
        .into_iter()
        .map(|(_, r)| r)
        .fold(f64::INFINITY, f64::min))
}

/// Projected margin shift `⟨u_{y,j}, δx⟩` for a linear head.
pub fn margin_shift_1d(w: &Array2<f64>, y: usize, j: usize, dx: ArrayView1<f64>) -> Result<f64> {
    let diff = &w.row(y) - &w.row(j);
    let norm = diff.dot(&diff).sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroNormalizer { label: y, competitor: j });
    }
    Ok(diff.dot(&dx) / norm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompetitorStats {
    pub competitor: usize,
    pub rho: f64,
    pub lower: f64,
    pub upper: f64,
    pub mu: f64,
    pub nu: f64,
    pub c: f64,
    pub eps_box: f64,
    pub cvb: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginStats {
    pub example: usize,
    pub label: usize,
    pub rho: f64,
    pub competitors: Vec<CompetitorStats>,
    pub calibration_perts: Vec<usize>,
    pub evaluation_perts: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsConfig {
    pub calibration_fraction: f64,
    pub bins: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            calibration_fraction: 0.5,
            bins: 10,
        }
    }
}

/// Margin statistics for each selected example from its own perturbations.
///
/// The leading `calibration_fraction` of `perts` fixes the box and its
/// uniform moments and the histogram ratio; the rest estimate `ε_B` and are
/// kept for verification.
pub fn margin_shift_stats(d: &Dataset, examples: &[usize], perts: &[usize], cfg: &StatsConfig) -> Result<Vec<MarginStats>> {
    let labels = d.require_labels()?;
    if perts.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "margin statistics need at least 4 perturbations per example, got {}",
            perts.len()
        )));
    }
    if !(cfg.calibration_fraction > 0.0 && cfg.calibration_fraction < 1.0) {
        return Err(Error::InvalidArgument("calibration fraction must lie in (0, 1)".into()));
    }
    let n_cal = ((perts.len() as f64 * cfg.calibration_fraction).floor() as usize).clamp(1, perts.len() - 1);
    let model = MarginModel::for_dataset(d);
    let (clean_out, pert_out) = match model {
        MarginModel::Linear { .. } => (None, None),
        MarginModel::Logits => (Some(d.clean_outputs()), Some(d.perturbed_outputs())),
    };
    examples
        .par_iter()
        .map(|&e| {
            let y = labels[e];
            let x = d.clean.row(e);
            let base_row = clean_out.as_ref().map(|c| c.row(e));
            let margins = pairwise_margins(&model, base_row.unwrap_or(x), y)?;
            let mut competitors = Vec::with_capacity(margins.len());
            for (j, rho) in margins {
                let z: Vec<f64> = perts
                    .iter()
                    .map(|&k| match &model {
                        MarginModel::Linear { w, .. } => {
                            let dx = &d.perturbed.slice(ndarray::s![e, k, ..]) - &x;
                            margin_shift_1d(w, y, j, dx.view())
                        }
                        MarginModel::Logits => {
                            let o = pert_out.as_ref().expect("logits outputs");
                            let c = base_row.expect("logits outputs");
                            Ok((o[[e, k, y]] - o[[e, k, j]]) - (c[y] - c[j]))
                        }
                    })
                    .collect::<Result<_>>()?;
                let col = Array2::from_shape_vec((z.len(), 1), z.clone()).expect("column shape");
                let bx = box_from_halves(col.slice(ndarray::s![..n_cal, ..]), col.slice(ndarray::s![n_cal.., ..]))?;
                let (l, u) = (bx.lower[0], bx.upper[0]);
                let cvb = if bx.degenerate[0] { 1.0 } else { density_ratio(&z[..n_cal], l, u, cfg.bins)? };
                competitors.push(CompetitorStats {
                    competitor: j,
                    rho,
                    lower: l,
                    upper: u,
                    mu: (l + u) / 2.0,
                    nu: (u - l) * (u - l) / 12.0,
                    c: (u - l) / 2.0,
                    eps_box: bx.eps_box,
                    cvb,
                });
            }
            Ok(MarginStats {
                example: e,
                label: y,
                rho: competitors.iter().map(|c| c.rho).fold(f64::INFINITY, f64::min),
                competitors,
                calibration_perts: perts[..n_cal].to_vec(),
                evaluation_perts: perts[n_cal..].to_vec(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub kappa: f64,
    pub xi_h: f64,
    pub bernstein_gamma: f64,
    pub xi_b: f64,
    pub xi_c: f64,
    pub xi_cheb: f64,
}

/// Thresholds at level `κ` for half-width `c` and variance `ν`.
pub fn thresholds(c: f64, kappa: f64, nu: f64) -> Thresholds {
    let k = kappa.max(0.0);
    let gamma = 2.0 / 3.0 * c * k;
    Thresholds {
        kappa,
        xi_h: c * (2.0 * k).sqrt(),
        bernstein_gamma: gamma,
        xi_b: gamma + (gamma * gamma + 2.0 * k * nu).sqrt(),
        xi_c: (nu * k.exp_m1()).sqrt(),
        xi_cheb: (nu * k.exp()).sqrt(),
    }
}

/// Overrides for the bridge inputs; `None` uses the per-competitor estimates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BridgeParams {
    pub eps_box: Option<f64>,
    pub cvb: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Methods {
    pub hoeffding: bool,
    pub bernstein: bool,
    pub cantelli: bool,
}

impl Default for Methods {
    fn default() -> Self {
        Methods { hoeffding: true, bernstein: true, cantelli: true }
    }
}

impl std::str::FromStr for Methods {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut m = Methods { hoeffding: false, bernstein: false, cantelli: false };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "hoeffding" => m.hoeffding = true,
                "bernstein" => m.bernstein = true,
                "cantelli" => m.cantelli = true,
                other => return Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
            }
        }
        if !(m.hoeffding || m.bernstein || m.cantelli) {
            return Err(Error::InvalidArgument("no certification method selected".into()));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertRecord {
    pub example: usize,
    pub label: usize,
    pub certified_h: bool,
    pub certified_b: bool,
    pub certified_c: bool,
    /// Two-sided Chebyshev alternative to the Cantelli threshold.
    pub certified_cheb: bool,
    /// Certified with the smaller of the Hoeffding and Bernstein thresholds.
    pub certified_hb: bool,
    pub vacuous: bool,
    pub budget_exceeded: bool,
    pub phi_budget: f64,
    /// Competitor with the smallest `ρ_j + μ_j`.
    pub binding: usize,
    pub rho: f64,
    pub mu: f64,
    pub nu: f64,
    pub c: f64,
    pub eps_box: f64,
    pub cvb: f64,
    pub kappa: f64,
    pub xi_h: f64,
    pub bernstein_gamma: f64,
    pub xi_b: f64,
    pub xi_c: f64,
    pub xi_cheb: f64,
}

fn clears(c: &CompetitorStats, xi: f64) -> bool {
    if c.c == 0.0 {
        c.rho > -c.mu
    } else {
        c.rho >= -c.mu + xi
    }
}

/// Certificate for one example. Fails when a competitor's share of the
/// budget does not exceed its out-of-box mass.
pub fn certify_example(stats: &MarginStats, phi: f64, bridge: &BridgeParams) -> Result<CertRecord> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(Error::InvalidArgument(format!("phi must lie in (0, 1), got {phi}")));
    }
    if stats.competitors.is_empty() {
        return Err(Error::InvalidArgument("example has no competitors".into()));
    }
    let phi_j = phi / stats.competitors.len() as f64;
    let mut all = [true; 5];
    let mut vacuous = false;
    let mut binding: Option<(f64, &CompetitorStats, Thresholds, f64, f64)> = None;
    for c in &stats.competitors {
        let eps_box = bridge.eps_box.unwrap_or(c.eps_box);
        let cvb = bridge.cvb.unwrap_or(c.cvb);
        let budget = bridge_budget(phi_j, eps_box, cvb)?;
        vacuous |= budget.vacuous;
        let t = thresholds(c.c, budget.kappa, c.nu);
        let flags = [t.xi_h, t.xi_b, t.xi_c, t.xi_cheb, t.xi_h.min(t.xi_b)].map(|xi| clears(c, xi));
        for (a, f) in all.iter_mut().zip(flags) {
            *a &= f;
        }
        let key = c.rho + c.mu;
        if binding.as_ref().is_none_or(|b| key < b.0) {
            binding = Some((key, c, t, eps_box, cvb));
        }
    }
    let (_, c, t, eps_box, cvb) = binding.expect("at least one competitor");
    Ok(CertRecord {
        example: stats.example,
        label: stats.label,
        certified_h: all[0],
        certified_b: all[1],
        certified_c: all[2],
        certified_cheb: all[3],
        certified_hb: all[4],
        vacuous,
        budget_exceeded: false,
        phi_budget: phi_j,
        binding: c.competitor,
        rho: c.rho,
        mu: c.mu,
        nu: c.nu,
        c: c.c,
        eps_box,
        cvb,
        kappa: t.kappa,
        xi_h: t.xi_h,
        bernstein_gamma: t.bernstein_gamma,
        xi_b: t.xi_b,
        xi_c: t.xi_c,
        xi_cheb: t.xi_cheb,
    })
}

/// Certifies every example; an exceeded budget yields an uncertified record
/// flagged `budget_exceeded`.
pub fn certify_all(stats: &[MarginStats], phi: f64, bridge: &BridgeParams) -> Result<Vec<CertRecord>> {
    stats
        .iter()
        .map(|s| match certify_example(s, phi, bridge) {
            Err(Error::BudgetExceeded { .. }) => {
                let c = s
                    .competitors
                    .iter()
                    .min_by(|a, b| (a.rho + a.mu).total_cmp(&(b.rho + b.mu)))
                    .expect("at least one competitor");
                Ok(CertRecord {
                    example: s.example,
                    label: s.label,
                    certified_h: false,
                    certified_b: false,
                    certified_c: false,
                    certified_cheb: false,
                    certified_hb: false,
                    vacuous: false,
                    budget_exceeded: true,
                    phi_budget: phi / s.competitors.len() as f64,
                    binding: c.competitor,
                    rho: c.rho,
                    mu: c.mu,
                    nu: c.nu,
                    c: c.c,
                    eps_box: bridge.eps_box.unwrap_or(c.eps_box),
                    cvb: bridge.cvb.unwrap_or(c.cvb),
                    kappa: f64::NAN,
                    xi_h: f64::NAN,
                    bernstein_gamma: f64::NAN,
                    xi_b: f64::NAN,
                    xi_c: f64::NAN,
                    xi_cheb: f64::NAN,
                })
            }
            other => other,
        })
        .collect()
}

/// `(1 − φ)·max(0, s/m − sqrt(ln(2/ψ)/(2m)))`.
pub fn population_bound(s: usize, m: usize, phi: f64, psi: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::InsufficientData("population bound needs a non-empty hold-out".into()));
    }
    if s > m {
        return Err(Error::InvalidArgument(format!("certified count {s} exceeds {m}")));
    }
    for (name, v) in [("phi", phi), ("psi", psi)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::InvalidArgument(format!("{name} must lie in (0, 1), got {v}")));
        }
    }
    let m = m as f64;
    let rate = s as f64 / m - ((2.0 / psi).ln() / (2.0 * m)).sqrt();
    Ok((1.0 - phi) * rate.max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertSummary {
    pub phi: f64,
    pub psi: f64,
    pub n_examples: usize,
    pub n_vacuous: usize,
    pub n_budget_exceeded: usize,
    pub p_c: Option<f64>,
    pub p_h: Option<f64>,
    pub p_b: Option<f64>,
    pub p_hb: Option<f64>,
    pub p_cheb: Option<f64>,
    pub population_c: Option<f64>,
    pub population_h: Option<f64>,
    pub holdout_examples: usize,
}

fn rate(records: &[CertRecord], pick: fn(&CertRecord) -> bool) -> Option<f64> {
    let counted: Vec<&CertRecord> = records.iter().filter(|r| !r.vacuous).collect();
    if counted.is_empty() {
        return None;
    }
    Some(counted.iter().filter(|r| pick(r)).count() as f64 / counted.len() as f64)
}

fn certified_count(records: &[CertRecord], pick: fn(&CertRecord) -> bool) -> usize {
    records.iter().filter(|r| !r.vacuous && pick(r)).count()
}

/// Certified fractions on `records` (vacuous ones excluded) and population
/// bounds from `holdout`.
pub fn summarize(records: &[CertRecord], holdout: Option<&[CertRecord]>, phi: f64, psi: f64, methods: &Methods) -> Result<CertSummary> {
    let pop = |pick: fn(&CertRecord) -> bool| -> Result<Option<f64>> {
        match holdout {
            Some(h) if !h.is_empty() => Ok(Some(population_bound(certified_count(h, pick), h.len(), phi, psi)?)),
            _ => Ok(None),
        }
    };
    let gate = |on: bool, v: Option<f64>| if on { v } else { None };
    Ok(CertSummary {
        phi,
        psi,
        n_examples: records.len(),
        n_vacuous: records.iter().filter(|r| r.vacuous).count(),
        n_budget_exceeded: records.iter().filter(|r| r.budget_exceeded).count(),
        p_c: gate(methods.cantelli, rate(records, |r| r.certified_c)),
        p_h: gate(methods.hoeffding, rate(records, |r| r.certified_h)),
        p_b: gate(methods.bernstein, rate(records, |r| r.certified_b)),
        p_hb: gate(methods.hoeffding && methods.bernstein, rate(records, |r| r.certified_hb)),
        p_cheb: gate(methods.cantelli, rate(records, |r| r.certified_cheb)),
        population_c: if methods.cantelli { pop(|r| r.certified_c)? } else { None },
        population_h: if methods.hoeffding { pop(|r| r.certified_h)? } else { None },
        holdout_examples: holdout.map_or(0, |h| h.len()),
    })
}

/// Fraction of each example's evaluation perturbations that are misclassified.
pub fn failure_rates(d: &Dataset, stats: &[MarginStats]) -> Result<Vec<f64>> {
    let out = d.perturbed_outputs();
    stats
        .iter()
        .map(|s| {
            if s.evaluation_perts.is_empty() {
                return Err(Error::InsufficientData("no evaluation perturbations".into()));
            }
            let wrong = s
                .evaluation_perts
                .iter()
                .filter(|&&k| {
                    let row = out.index_axis(Axis(0), s.example).index_axis(Axis(0), k).to_vec();
                    argmax(&row) != s.label
                })
                .count();
            Ok(wrong as f64 / s.evaluation_perts.len() as f64)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub failure_rates: Vec<f64>,
    pub n_certified: usize,
    pub max_certified_failure: Option<f64>,
    pub certified_bac: Option<f64>,
    pub uncertified_bac: Option<f64>,
}

/// Brute-force check of Cantelli certificates on the evaluation perturbations.
pub fn verify_certificates(d: &Dataset, stats: &[MarginStats], records: &[CertRecord]) -> Result<Verification> {
    let rates = failure_rates(d, stats)?;
    let q = d.n_outputs.max(d.n_components());
    let out = d.perturbed_outputs();
    let group_bac = |certified: bool| -> Result<Option<f64>> {
        let mut preds = Vec::new();
        let mut truth = Vec::new();
        for (s, r) in stats.iter().zip(records) {
            if r.certified_c != certified || r.vacuous {
                continue;
            }
            for &k in &s.evaluation_perts {
                let row = out.index_axis(Axis(0), s.example).index_axis(Axis(0), k).to_vec();
                preds.push(argmax(&row));
                truth.push(s.label);
            }
        }
        if preds.is_empty() {
            return Ok(None);
        }
        Ok(Some(crate::metrics::balanced_accuracy(&preds, &truth, q)?))
    };
    let certified: Vec<f64> = rates
        .iter()
        .zip(records)
        .filter(|(_, r)| r.certified_c && !r.vacuous)
        .map(|(f, _)| *f)
        .collect();
    Ok(Verification {
        n_certified: certified.len(),
        max_certified_failure: certified.iter().cloned().reduce(f64::max),
        certified_bac: group_bac(true)?,
        uncertified_bac: group_bac(false)?,
        failure_rates: rates,
    })
}

pub fn records_csv(records: &[CertRecord]) -> String {
    let mut s = String::from(
        "example,label,certified_h,certified_b,certified_c,certified_cheb,certified_hb,vacuous,budget_exceeded,\
         phi_budget,binding,rho,mu,nu,c,eps_box,cvb,kappa,xi_h,bernstein_gamma,xi_b,xi_c,xi_cheb\n",
    );
    for r in records {
        let f = [
            r.phi_budget, r.rho, r.mu, r.nu, r.c, r.eps_box, r.cvb, r.kappa, r.xi_h, r.bernstein_gamma, r.xi_b,
            r.xi_c, r.xi_cheb,
        ]
        .map(fmt_float);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.example,
            r.label,
            r.certified_h,
            r.certified_b,
            r.certified_c,
            r.certified_cheb,
            r.certified_hb,
            r.vacuous,
            r.budget_exceeded,
            f[0],
            r.binding,
            f[1..].join(",")
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn stats_with(rho: f64, mu: f64, c: f64, nu: f64) -> MarginStats {
        MarginStats {
            example: 0,
            label: 0,
            rho,
            competitors: vec![CompetitorStats {
                competitor: 1,
                rho,
                lower: mu - c,
                upper: mu + c,
                mu,
                nu,
                c,
                eps_box: 0.0,
                cvb: 1.0,
            }],
            calibration_perts: vec![],
            evaluation_perts: vec![],
        }
    }

    #[test]
    fn margin_examples() {
        let model = MarginModel::Linear { w: array![[1.0, 0.0], [-1.0, 0.0]], b: vec![0.0, 0.0] };
        let m = pairwise_margins(&model, array![0.5, 3.0].view(), 0).unwrap();
        assert!((m[0].1 - 0.5).abs() < 1e-15);
        assert_eq!(margin(&model, array![0.0, 7.0].view(), 0).unwrap(), 0.0);

        let scaled = MarginModel::Linear { w: array![[3.0, 0.0], [-3.0, 0.0]], b: vec![0.0, 0.0] };
        assert!((margin(&scaled, array![0.5, 3.0].view(), 0).unwrap() - 0.5).abs() < 1e-15);

        let same = MarginModel::Linear { w: array![[1.0, 1.0], [1.0, 1.0]], b: vec![0.0, 0.0] };
        assert!(matches!(
            margin(&same, array![0.0, 0.0].view(), 0),
            Err(Error::ZeroNormalizer { .. })
        ));
        assert_eq!(margin(&MarginModel::Logits, array![2.0, 0.5, 1.0].view(), 0).unwrap(), 1.0);
    }

    #[test]
    fn threshold_values() {
        let t = thresholds(1.0, 10f64.ln(), 1.0 / 12.0);
        assert!((t.xi_h - 2.1460).abs() < 1e-4);
        assert!((t.bernstein_gamma - 1.5351).abs() < 1e-4);
        assert!((t.xi_b - 3.1905).abs() < 1e-4);
        assert!((t.xi_c - 0.8660).abs() < 1e-4);
        assert!(t.xi_c < t.xi_h && t.xi_h < t.xi_b);
        assert_eq!(t.xi_h.min(t.xi_b), t.xi_h);
    }

    #[test]
    fn wide_margin_certifies_boundary_does_not() {
        // c = 1, κ = ln 10 via cvb = 1, ε_B = 0, φ = 0.1
        let r = certify_example(&stats_with(10.0, 0.0, 1.0, 1.0 / 12.0), 0.1, &BridgeParams::default()).unwrap();
        assert!(r.certified_h && r.certified_b && r.certified_c);
        assert!((r.kappa - 10f64.ln()).abs() < 1e-12);
        let r = certify_example(&stats_with(0.0, 0.0, 1.0, 1.0 / 12.0), 0.1, &BridgeParams::default()).unwrap();
        assert!(!(r.certified_h || r.certified_b || r.certified_c));
    }

    #[test]
    fn degenerate_box_uses_sign() {
        let r = certify_example(&stats_with(0.1, 0.0, 0.0, 0.0), 0.1, &BridgeParams::default()).unwrap();
        assert!(r.certified_c && r.certified_h);
        let r = certify_example(&stats_with(-0.1, 0.0, 0.0, 0.0), 0.1, &BridgeParams::default()).unwrap();
        assert!(!r.certified_c);
    }

    #[test]
    fn exceeded_budget() {
        let mut s = stats_with(5.0, 0.0, 1.0, 0.1);
        s.competitors[0].eps_box = 0.2;
        assert!(matches!(certify_example(&s, 0.1, &BridgeParams::default()), Err(Error::BudgetExceeded { .. })));
        let recs = certify_all(&[s], 0.1, &BridgeParams::default()).unwrap();
        assert!(recs[0].budget_exceeded && !recs[0].certified_c);
    }

    #[test]
    fn budget_splits_evenly() {
        let mut s = stats_with(5.0, 0.0, 1.0, 0.1);
        let mut c2 = s.competitors[0].clone();
        c2.competitor = 2;
        s.competitors.push(c2);
        let r = certify_example(&s, 0.1, &BridgeParams::default()).unwrap();
        assert!((r.phi_budget * 2.0 - 0.1).abs() < 1e-17);
    }

    #[test]
    fn population_bound_values() {
        assert_eq!(population_bound(0, 70, 0.1, 0.05).unwrap(), 0.0);
        let b = population_bound(42, 70, 0.1, 0.05).unwrap();
        let oracle = 0.9 * (0.6 - (40f64.ln() / 140.0).sqrt());
        assert!((b - oracle).abs() < 1e-15);
        assert!((b - 0.3939).abs() < 1e-4);
        let mut last = 0.0;
        for m in [10, 100, 1000, 100_000] {
            let v = population_bound(m, m, 0.1, 0.05).unwrap();
            assert!(v >= last && v < 0.9);
            last = v;
        }
        assert!(last > 0.89);
        assert!(population_bound(0, 0, 0.1, 0.05).is_err());
    }

    #[test]
    fn calibration_moments_from_box() {
        // clean example with identity-like logits; perturbations move margin by Z
        let z_cal = [-1.0, 3.0];
        let z_eval = [0.0, 1.0];
        let zs: Vec<f64> = z_cal.iter().chain(&z_eval).cloned().collect();
        let clean = array![[0.0, 0.0]];
        let mut pert = ndarray::Array3::zeros((1, 4, 2));
        for (k, z) in zs.iter().enumerate() {
            pert[[0, k, 0]] = *z;
        }
        let d = Dataset {
            task_id: "t".into(),
            kind: crate::dataset::DumpKind::Logits,
            n_outputs: 2,
            clean,
            perturbed: pert,
            labels: Some(vec![0]),
            weights: None,
            biases: None,
            perturbation_split: crate::dataset::PerturbationSplit::Resampled,
        };
        let st = margin_shift_stats(&d, &[0], &[0, 1, 2, 3], &StatsConfig::default()).unwrap();
        let c = &st[0].competitors[0];
        assert_eq!((c.lower, c.upper, c.c, c.mu), (-1.0, 3.0, 2.0, 1.0));
        assert!((c.nu - 16.0 / 12.0).abs() < 1e-15);
        assert!(margin_shift_stats(&d, &[0], &[0, 1, 2], &StatsConfig::default()).is_err());
    }

    #[test]
    fn one_dimensional_path_matches_full_space() {
        let mut r = crate::rng::stream(2, 0, 0);
        for _ in 0..200 {
            let n = r.random_range(2..12);
            let w = Array2::from_shape_fn((3, n), |_| r.random_range(-2.0..2.0));
            let b = vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
            let model = MarginModel::Linear { w: w.clone(), b };
            let x = Array1::from_shape_fn(n, |_| r.random_range(-3.0..3.0));
            let dx = Array1::from_shape_fn(n, |_| r.random_range(-0.5..0.5));
            let xt = &x + &dx;
            let before = pairwise_margins(&model, x.view(), 1).unwrap();
            let after = pairwise_margins(&model, xt.view(), 1).unwrap();
            for ((j, a), (_, b2)) in before.iter().zip(&after) {
                let z = margin_shift_1d(&w, 1, *j, dx.view()).unwrap();
                assert!((b2 - a - z).abs() <= 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn certification_monotone_in_rho(
            rho in -3.0f64..3.0, bump in 0.0f64..3.0, mu in -1.0f64..1.0,
            c in 0.01f64..2.0, eps in 0.0f64..0.05, cvb in 1.0f64..4.0,
        ) {
            let nu = c * c / 3.0;
            let bridge = BridgeParams { eps_box: Some(eps), cvb: Some(cvb) };
            let lo = certify_example(&stats_with(rho, mu, c, nu), 0.1, &bridge).unwrap();
            let hi = certify_example(&stats_with(rho + bump, mu, c, nu), 0.1, &bridge).unwrap();
            prop_assert!(!lo.certified_c || hi.certified_c);
            prop_assert!(!lo.certified_h || hi.certified_h);
            prop_assert!(!lo.certified_b || hi.certified_b);
        }

        #[test]
        fn certified_margin_scales_out(rho in -2.0f64..5.0, t in 0.1f64..10.0) {
            let a = certify_example(&stats_with(rho, 0.2, 0.5, 0.25 / 3.0), 0.1, &BridgeParams::default()).unwrap();
            let b = certify_example(&stats_with(rho * t, 0.2 * t, 0.5 * t, 0.25 / 3.0 * t * t), 0.1, &BridgeParams::default()).unwrap();
            prop_assert_eq!(a.certified_c, b.certified_c);
            prop_assert_eq!(a.certified_h, b.certified_h);
        }
    }
}
