//! Input-independent bias: `M*_i(x) = M_i(x) − b_i`.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biasstats::{variance_bound, ShiftTensor};
use crate::compcert::{corrected_bound, radius_lipschitz, radius_variance, LipschitzParams};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::balanced_accuracy;
use crate::util::{mean, quantile};

/// `output[j, i] = input[j, i] − b_i`.
pub fn apply_bias(outputs: ArrayView2<f64>, b: &[f64]) -> Result<Array2<f64>> {
    if outputs.ncols() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "outputs have {} components, bias has {}",
            outputs.ncols(),
            b.len()
        )));
    }
    let mut out = outputs.to_owned();
    if b.iter().all(|v| *v == 0.0) {
        return Ok(out);
    }
    for mut row in out.rows_mut() {
        row.iter_mut().zip(b).for_each(|(o, bi)| *o -= bi);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub grid_points: usize,
    pub percentile: f64,
    pub phi: f64,
    pub lipschitz: Option<LipschitzParams>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            grid_points: 201,
            percentile: 0.9,
            phi: 0.05,
            lipschitz: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub b: f64,
    pub pert_bac: f64,
    pub epsilon_l: Option<f64>,
    pub epsilon_v: f64,
    pub admissible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasSearchResult {
    pub found: bool,
    /// Offset subtracted from the positive-class output.
    pub b: f64,
    pub region: Option<[f64; 2]>,
    pub percentile: f64,
    pub c_max: f64,
    pub grid: Vec<GridRow>,
}

impl BiasSearchResult {
    /// Full bias vector for a binary module.
    pub fn bias_vector(&self) -> Vec<f64> {
        vec![0.0, if self.found { self.b } else { 0.0 }]
    }
}

/// Sweeps an offset on the positive-class output over `[−C_max, C_max]`.
///
/// A grid point is admissible when its perturbed BAC and both (negated)
/// radii lie at or above their `percentile` quantile over the grid. The
/// widest contiguous admissible run wins (ties: smaller |midpoint|), and the
/// grid point nearest its midpoint is returned.
pub fn search_constant_bias(
    d: &Dataset,
    s: &ShiftTensor,
    examples: &[usize],
    perts: &[usize],
    cfg: &SearchConfig,
) -> Result<BiasSearchResult> {
    if d.n_components() != 2 || d.n_outputs != 2 {
        return Err(Error::InvalidArgument(
            "constant-bias search needs a binary task".into(),
        ));
    }
    let labels = d.require_labels()?;
    if cfg.grid_points < 3 {
        return Err(Error::InvalidArgument("grid needs at least three points".into()));
    }
    if !(cfg.percentile > 0.0 && cfg.percentile < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "percentile must lie in (0, 1), got {}",
            cfg.percentile
        )));
    }
    let train = s.select(examples, perts);
    let rows: Vec<usize> = (0..train.n_examples()).collect();
    let c0 = crate::biasstats::bias_bound(&train, &rows)?;
    let v = variance_bound(&train, &rows)?;
    let c_max = c0.iter().cloned().fold(0.0, f64::max);
    let m = examples.len();

    let pert = d.perturbed_outputs().select(Axis(0), examples).select(Axis(1), perts);
    let mut margins = Vec::with_capacity(m * perts.len());
    let mut truth = Vec::with_capacity(m * perts.len());
    for (row, &j) in pert.outer_iter().zip(examples) {
        for o in row.outer_iter() {
            margins.push(o[1] - o[0]);
            truth.push(labels[j]);
        }
    }

    let step = 2.0 * c_max / (cfg.grid_points - 1) as f64;
    let grid: Vec<f64> = (0..cfg.grid_points)
        .map(|g| if c_max == 0.0 { 0.0 } else { -c_max + g as f64 * step })
        .collect();
    let evaluated: Vec<(f64, Option<f64>, f64)> = grid
        .par_iter()
        .map(|&b| -> Result<(f64, Option<f64>, f64)> {
            let preds: Vec<usize> = margins.iter().map(|mg| usize::from(mg - b > 0.0)).collect();
            let bac = balanced_accuracy(&preds, &truth, 2)?;
            let cs = corrected_bound(&train, &[0.0, b], &rows)?;
            let ev = (0..2)
                .map(|i| radius_variance(cs[i], v[i], m, cfg.phi))
                .collect::<Result<Vec<_>>>()?;
            let el = match &cfg.lipschitz {
                Some(l) => Some(mean(
                    &(0..2)
                        .map(|i| radius_lipschitz(cs[i], l.gammas[i], l.noise_c, l.input_dim, m, cfg.phi))
                        .collect::<Result<Vec<_>>>()?,
                )),
                None => None,
            };
            Ok((bac, el, mean(&ev)))
        })
        .collect::<Result<Vec<_>>>()?;

    let bacs: Vec<f64> = evaluated.iter().map(|e| e.0).collect();
    let neg_v: Vec<f64> = evaluated.iter().map(|e| -e.2).collect();
    let neg_l: Option<Vec<f64>> = evaluated.iter().map(|e| e.1.map(|x| -x)).collect();
    let q_bac = quantile(&bacs, cfg.percentile);
    let q_v = quantile(&neg_v, cfg.percentile);
    let q_l = neg_l.as_ref().map(|l| quantile(l, cfg.percentile));
    let admissible: Vec<bool> = (0..grid.len())
        .map(|g| {
            bacs[g] >= q_bac
                && neg_v[g] >= q_v
                && match (&neg_l, q_l) {
                    (Some(l), Some(q)) => l[g] >= q,
                    _ => true,
                }
        })
        .collect();

    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for g in 0..=grid.len() {
        let on = g < grid.len() && admissible[g];
        match (on, start) {
            (true, None) => start = Some(g),
            (false, Some(s0)) => {
                runs.push((s0, g - 1));
                start = None;
            }
            _ => {}
        }
    }
    let best = runs.iter().copied().min_by(|a, b| {
        let (wa, wb) = (a.1 - a.0, b.1 - b.0);
        let ma = ((grid[a.0] + grid[a.1]) / 2.0).abs();
        let mb = ((grid[b.0] + grid[b.1]) / 2.0).abs();
        wb.cmp(&wa).then(ma.total_cmp(&mb))
    });

    let rows_out = grid
        .iter()
        .zip(&evaluated)
        .zip(&admissible)
        .map(|((&b, e), &a)| GridRow {
            b,
            pert_bac: e.0,
            epsilon_l: e.1,
            epsilon_v: e.2,
            admissible: a,
        })
        .collect();

    let (found, b, region) = match best {
        Some((lo, hi)) => {
            let mid = (grid[lo] + grid[hi]) / 2.0;
            let pick = (lo..=hi)
                .min_by(|&x, &y| {
                    (grid[x] - mid)
                        .abs()
                        .total_cmp(&(grid[y] - mid).abs())
                        .then(grid[x].abs().total_cmp(&grid[y].abs()))
                })
                .expect("non-empty run");
            (true, grid[pick], Some([grid[lo], grid[hi]]))
        }
        None => (false, 0.0, None),
    };
    Ok(BiasSearchResult {
        found,
        b,
        region,
        percentile: cfg.percentile,
        c_max,
        grid: rows_out,
    })
}
