//! Component-wise robustness radii, their confidence bounds, and the
//! uniform-reference bridge.
//!
//! For component `i` with bias bound `C_i`, the bounded-differences radius is
//!
//! ```text
//! ε_L = C_i + c·γ_i·sqrt(2·n·ln(2m/φ))
//! ```
//!
//! and the Chebyshev radius is `ε_V = C_i + sqrt(V_i·m/φ)`. Each holds
//! simultaneously for all `m` examples with probability at least `1 − φ`.

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::biasstats::ShiftTensor;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::util::norm;

fn check_phi(phi: f64) -> Result<()> {
    if phi > 0.0 && phi < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("phi must lie in (0, 1), got {phi}")))
    }
}

pub fn radius_lipschitz(c_i: f64, gamma: f64, c: f64, n: usize, m: usize, phi: f64) -> Result<f64> {
    check_phi(phi)?;
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("n and m must be positive".into()));
    }
    if c < 0.0 || gamma < 0.0 || c_i < 0.0 {
        return Err(Error::InvalidArgument("C, c and gamma must be non-negative".into()));
    }
    let log_term = (2.0 * m as f64 / phi).ln();
    Ok(c_i + c * gamma * (2.0 * n as f64 * log_term).sqrt())
}

pub fn radius_variance(c_i: f64, v: f64, m: usize, phi: f64) -> Result<f64> {
    check_phi(phi)?;
    if m == 0 {
        return Err(Error::InvalidArgument("m must be positive".into()));
    }
    if v < 0.0 || c_i < 0.0 {
        return Err(Error::InvalidArgument("C and V must be non-negative".into()));
    }
    Ok(c_i + (v * m as f64 / phi).sqrt())
}

/// Probability lower bound clamped to `[0, 1]`, with the raw value kept.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    pub bound: f64,
    pub raw: f64,
    pub vacuous: bool,
}

impl Confidence {
    fn from_raw(raw: f64) -> Self {
        Confidence {
            bound: raw.clamp(0.0, 1.0),
            raw,
            vacuous: raw <= 0.0,
        }
    }
}

pub fn confidence_lipschitz(epsilon: f64, c_i: f64, gamma: f64, c: f64, n: usize, m: usize) -> Result<Confidence> {
    if epsilon < c_i {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} is below the bias bound {c_i}"
        )));
    }
    let scale = c * gamma;
    if scale == 0.0 {
        // no noise reaches the output: the shift never leaves its mean
        return Ok(Confidence::from_raw(1.0));
    }
    let slack = epsilon - c_i;
    let tail = (-(slack * slack) / (2.0 * n as f64 * scale * scale)).exp();
    Ok(Confidence::from_raw(1.0 - 2.0 * m as f64 * tail))
}

pub fn confidence_variance(epsilon: f64, c_i: f64, v: f64, m: usize) -> Result<Confidence> {
    if epsilon <= c_i {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} must exceed the bias bound {c_i}"
        )));
    }
    let slack = epsilon - c_i;
    Ok(Confidence::from_raw(1.0 - m as f64 * v / (slack * slack)))
}

/// `C*_i = max_j |mean_k s(j, k, i) − b_i|`.
pub fn corrected_bound(s: &ShiftTensor, b: &[f64], indices: &[usize]) -> Result<Vec<f64>> {
    if b.len() != s.n_components() {
        return Err(Error::DimensionMismatch(format!(
            "bias has {} entries, shifts have {} components",
            b.len(),
            s.n_components()
        )));
    }
    if b.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("bias must be finite".into()));
    }
    let neg: Vec<f64> = b.iter().map(|x| -x).collect();
    crate::biasstats::bias_bound(&s.offset(&neg), indices)
}

/// Midrange of the per-example means for each component: the bias that
/// minimises [`corrected_bound`].
pub fn midrange_bias(s: &ShiftTensor, indices: &[usize]) -> Vec<f64> {
    let means = s.per_example_means().select(Axis(0), indices);
    means
        .columns()
        .into_iter()
        .map(|col| {
            let (lo, hi) = col
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
            (lo + hi) / 2.0
        })
        .collect()
}

pub fn lipschitz_of_linear(w: &[f64]) -> f64 {
    norm(w)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeBudget {
    pub phi: f64,
    pub eps_box: f64,
    pub cvb: f64,
    pub uniform_budget: f64,
    pub kappa: f64,
    pub vacuous: bool,
}

/// Converts a failure budget under the true law into one under the uniform
/// law on the box.
pub fn bridge_budget(phi: f64, eps_box: f64, cvb: f64) -> Result<BridgeBudget> {
    if !(cvb >= 1.0) {
        return Err(Error::InvalidArgument(format!("cvb must be at least 1, got {cvb}")));
    }
    if phi <= eps_box {
        return Err(Error::BudgetExceeded { phi, eps_box });
    }
    let uniform_budget = ((phi - eps_box) / cvb).min(1.0);
    let kappa = -uniform_budget.ln();
    Ok(BridgeBudget {
        phi,
        eps_box,
        cvb,
        uniform_budget,
        kappa,
        vacuous: kappa <= 0.0,
    })
}

/// Inputs of the bounded-differences radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzParams {
    /// Per-coordinate perturbation half-width `c`.
    pub noise_c: f64,
    /// Input dimension `n`.
    pub input_dim: usize,
    /// Per-component Lipschitz constants.
    pub gammas: Vec<f64>,
}

/// Lipschitz inputs for a features dump with a linear head: `γ_i = ‖w_i‖`
/// and `c` is the largest observed coordinate perturbation.
pub fn lipschitz_from_dataset(d: &Dataset, examples: &[usize]) -> Option<LipschitzParams> {
    if !d.has_linear_head() {
        return None;
    }
    let w = d.weights.as_ref()?;
    let mut noise_c = 0.0f64;
    for &j in examples {
        let clean = d.clean.row(j);
        for pert in d.perturbed.index_axis(Axis(0), j).rows() {
            for (a, b) in pert.iter().zip(clean.iter()) {
                noise_c = noise_c.max((a - b).abs());
            }
        }
    }
    Some(LipschitzParams {
        noise_c,
        input_dim: d.width(),
        gammas: w.rows().into_iter().map(|r| norm(&r.to_vec())).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentRadius {
    pub component: usize,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "V")]
    pub v: f64,
    pub gamma: Option<f64>,
    pub epsilon_l: Option<f64>,
    pub epsilon_v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusReport {
    pub phi: f64,
    pub m: usize,
    pub noise_c: Option<f64>,
    pub input_dim: Option<usize>,
    pub components: Vec<ComponentRadius>,
}

impl RadiusReport {
    pub fn epsilon_v(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.epsilon_v).collect()
    }

    pub fn epsilon_l(&self) -> Option<Vec<f64>> {
        self.components.iter().map(|c| c.epsilon_l).collect()
    }

    pub fn mean_epsilon_v(&self) -> f64 {
        crate::util::mean(&self.epsilon_v())
    }

    pub fn mean_epsilon_l(&self) -> Option<f64> {
        self.epsilon_l().map(|v| crate::util::mean(&v))
    }
}

/// Both radii for every component given bounds `c`, `v` over `m` examples.
pub fn radius_report(c: &[f64], v: &[f64], m: usize, phi: f64, lip: Option<&LipschitzParams>) -> Result<RadiusReport> {
    if c.len() != v.len() {
        return Err(Error::DimensionMismatch("C and V lengths differ".into()));
    }
    if let Some(l) = lip {
        if l.gammas.len() != c.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} gammas for {} components",
                l.gammas.len(),
                c.len()
            )));
        }
    }
    let components = (0..c.len())
        .map(|i| {
            let epsilon_l = match lip {
                Some(l) => Some(radius_lipschitz(c[i], l.gammas[i], l.noise_c, l.input_dim, m, phi)?),
                None => None,
            };
            Ok(ComponentRadius {
                component: i,
                c: c[i],
                v: v[i],
                gamma: lip.map(|l| l.gammas[i]),
                epsilon_l,
                epsilon_v: radius_variance(c[i], v[i], m, phi)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RadiusReport {
        phi,
        m,
        noise_c: lip.map(|l| l.noise_c),
        input_dim: lip.map(|l| l.input_dim),
        components,
    })
}
