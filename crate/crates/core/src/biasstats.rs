//! Output shifts and the bias, variance and range bounds derived from them.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::util::sample_variance;

/// `values[(j, k, i)] = M_i(x_j + δx_k) − M_i(x_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftTensor {
    pub values: Array3<f64>,
    /// Dataset example index of each row of `values`.
    pub example_ids: Vec<usize>,
}

impl ShiftTensor {
    pub fn from_outputs(clean: ArrayView2<f64>, perturbed: ArrayView3<f64>) -> Result<Self> {
        let (m, k, d) = perturbed.dim();
        if clean.dim() != (m, d) {
            return Err(Error::DimensionMismatch(format!(
                "clean outputs {:?} vs perturbed outputs {:?}",
                clean.dim(),
                perturbed.dim()
            )));
        }
        let mut values = perturbed.to_owned();
        for (mut ex, c) in values.outer_iter_mut().zip(clean.rows()) {
            for mut row in ex.outer_iter_mut() {
                row -= &c;
            }
        }
        let _ = k;
        Ok(ShiftTensor {
            values,
            example_ids: (0..m).collect(),
        })
    }

    pub fn n_examples(&self) -> usize {
        self.values.len_of(Axis(0))
    }

    pub fn n_perturbations(&self) -> usize {
        self.values.len_of(Axis(1))
    }

    pub fn n_components(&self) -> usize {
        self.values.len_of(Axis(2))
    }

    /// Sub-tensor over row positions `examples` and perturbation indices `perts`.
    pub fn select(&self, examples: &[usize], perts: &[usize]) -> ShiftTensor {
        let values = self
            .values
            .select(Axis(0), examples)
            .select(Axis(1), perts);
        ShiftTensor {
            values,
            example_ids: examples.iter().map(|&j| self.example_ids[j]).collect(),
        }
    }

    /// `m × d` means over perturbations.
    pub fn per_example_means(&self) -> Array2<f64> {
        self.values
            .mean_axis(Axis(1))
            .unwrap_or_else(|| Array2::zeros((self.n_examples(), self.n_components())))
    }

    /// Adds `offset[i]` to every entry of component `i`.
    pub fn offset(&self, offset: &[f64]) -> ShiftTensor {
        let mut values = self.values.clone();
        for mut lane in values.lanes_mut(Axis(2)) {
            lane.iter_mut().zip(offset).for_each(|(v, o)| *v += o);
        }
        ShiftTensor {
            values,
            example_ids: self.example_ids.clone(),
        }
    }
}

/// Shifts of the module outputs for every example and perturbation.
pub fn shift_matrix(d: &Dataset) -> ShiftTensor {
    let clean = d.clean_outputs();
    let pert = d.perturbed_outputs();
    ShiftTensor::from_outputs(clean.view(), pert.view()).expect("dataset outputs are consistent")
}

fn check_indices(s: &ShiftTensor, indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::InsufficientData("empty example subset".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&j| j >= s.n_examples()) {
        return Err(Error::InvalidArgument(format!(
            "example index {bad} out of range for {} examples",
            s.n_examples()
        )));
    }
    Ok(())
}

fn max_over<F>(s: &ShiftTensor, indices: &[usize], per_example: F) -> Vec<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let d = s.n_components();
    let rows: Vec<Vec<f64>> = indices
        .par_iter()
        .map(|&j| (0..d).map(|i| per_example(j, i)).collect())
        .collect();
    let mut out = vec![0.0f64; d];
    for row in rows {
        for (o, v) in out.iter_mut().zip(row) {
            *o = o.max(v);
        }
    }
    out
}

fn mean_lane(s: &ShiftTensor, j: usize, i: usize) -> f64 {
    let lane = s.values.slice(s![j, .., i]);
    lane.sum() / lane.len() as f64
}

/// `C_i = max_j |mean_k s(j, k, i)|` over the selected rows.
pub fn bias_bound(s: &ShiftTensor, indices: &[usize]) -> Result<Vec<f64>> {
    check_indices(s, indices)?;
    Ok(max_over(s, indices, |j, i| mean_lane(s, j, i).abs()))
}

/// `V_i = max_j` of the unbiased sample variance over perturbations.
pub fn variance_bound(s: &ShiftTensor, indices: &[usize]) -> Result<Vec<f64>> {
    check_indices(s, indices)?;
    if s.n_perturbations() < 2 {
        return Err(Error::InsufficientData(
            "variance needs at least two perturbations per example".into(),
        ));
    }
    Ok(max_over(s, indices, |j, i| {
        sample_variance(&s.values.slice(s![j, .., i]).to_vec())
    }))
}

/// `max |s(j, k, i)|` over the selected rows.
pub fn range_bound(s: &ShiftTensor, indices: &[usize]) -> Result<Vec<f64>> {
    check_indices(s, indices)?;
    Ok(max_over(s, indices, |j, i| {
        s.values
            .slice(s![j, .., i])
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub degenerate: Vec<bool>,
    pub eps_box: f64,
    pub n_calibration: usize,
    pub n_evaluation: usize,
}

impl PerturbationBox {
    pub fn contains(&self, row: &[f64]) -> bool {
        row.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }
}

/// Box from explicit calibration rows, with out-of-box mass from evaluation rows.
pub fn box_from_halves(calibration: ArrayView2<f64>, evaluation: ArrayView2<f64>) -> Result<PerturbationBox> {
    if calibration.nrows() == 0 || evaluation.nrows() == 0 {
        return Err(Error::InsufficientData(
            "box estimation needs calibration and evaluation samples".into(),
        ));
    }
    let q = calibration.ncols();
    let mut lower = vec![f64::INFINITY; q];
    let mut upper = vec![f64::NEG_INFINITY; q];
    for row in calibration.rows() {
        for (i, v) in row.iter().enumerate() {
            lower[i] = lower[i].min(*v);
            upper[i] = upper[i].max(*v);
        }
    }
    let degenerate = lower.iter().zip(&upper).map(|(l, u)| l == u).collect();
    let mut bx = PerturbationBox {
        lower,
        upper,
        degenerate,
        eps_box: 0.0,
        n_calibration: calibration.nrows(),
        n_evaluation: evaluation.nrows(),
    };
    let outside = evaluation
        .rows()
        .into_iter()
        .filter(|r| !bx.contains(&r.to_vec()))
        .count();
    bx.eps_box = (outside + 1) as f64 / (evaluation.nrows() + 1) as f64;
    Ok(bx)
}

/// Splits `projections` (rows are samples) into a leading calibration part and
/// a trailing evaluation part and estimates the box and `ε_B`.
pub fn perturbation_box(projections: ArrayView2<f64>, calibration_fraction: f64) -> Result<PerturbationBox> {
    let n = projections.nrows();
    if n < 2 {
        return Err(Error::InsufficientData("box estimation needs at least two samples".into()));
    }
    if !(calibration_fraction > 0.0 && calibration_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "calibration fraction must lie in (0, 1), got {calibration_fraction}"
        )));
    }
    let n_cal = ((n as f64 * calibration_fraction).floor() as usize).clamp(1, n - 1);
    box_from_halves(
        projections.slice(s![..n_cal, ..]),
        projections.slice(s![n_cal.., ..]),
    )
}

/// Histogram estimate of the density-ratio constant on `[lo, hi]`.
pub fn density_ratio(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::InvalidArgument("density ratio needs at least two bins".into()));
    }
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!("degenerate interval [{lo}, {hi}]")));
    }
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    let mut inside = 0usize;
    for &v in values {
        if v < lo || v > hi {
            continue;
        }
        let b = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[b] += 1;
        inside += 1;
    }
    if inside == 0 {
        return Err(Error::InsufficientData("all samples fall outside the box".into()));
    }
    let peak = *counts.iter().max().expect("bins >= 2") as f64;
    Ok((peak / inside as f64 * bins as f64).max(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasProfile {
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    #[serde(rename = "V")]
    pub v: Vec<f64>,
    pub range_c: Vec<f64>,
    #[serde(skip)]
    pub per_example_mean: Array2<f64>,
    pub example_ids: Vec<usize>,
    pub boxes: Vec<[f64; 2]>,
    pub degenerate: Vec<bool>,
    pub eps_box: f64,
    pub cvb: f64,
    pub bins: usize,
    pub n_examples: usize,
    pub n_perturbations: usize,
}

/// Bounds over all rows of `s` plus a pooled box over the shift vectors.
///
/// Perturbations with index below `K/2` calibrate the box; the rest
/// estimate `ε_B`. `cvb` multiplies the per-dimension histogram ratios of
/// the non-degenerate dimensions.
pub fn bias_profile(s: &ShiftTensor, bins: usize) -> Result<BiasProfile> {
    let (m, k, d) = s.values.dim();
    let all: Vec<usize> = (0..m).collect();
    let c = bias_bound(s, &all)?;
    let v = variance_bound(s, &all)?;
    let range_c = range_bound(s, &all)?;
    let half = k / 2;
    let cal = crate::util::flatten3(&s.values.slice(s![.., ..half, ..]));
    let eval = crate::util::flatten3(&s.values.slice(s![.., half.., ..]));
    let bx = box_from_halves(cal.view(), eval.view())?;
    let mut cvb = 1.0;
    for i in 0..d {
        if bx.degenerate[i] {
            continue;
        }
        let col: Vec<f64> = cal.column(i).to_vec();
        cvb *= density_ratio(&col, bx.lower[i], bx.upper[i], bins)?;
    }
    Ok(BiasProfile {
        c,
        v,
        range_c,
        per_example_mean: s.per_example_means(),
        example_ids: s.example_ids.clone(),
        boxes: bx.lower.iter().zip(&bx.upper).map(|(l, u)| [*l, *u]).collect(),
        degenerate: bx.degenerate,
        eps_box: bx.eps_box,
        cvb,
        bins,
        n_examples: m,
        n_perturbations: k,
    })
}
