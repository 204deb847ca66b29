//! Evaluation metrics for debiasing: balanced accuracy, the δ and p
//! families, radius contraction, BCa intervals and task aggregation.

pub mod aggregate;
pub mod bootstrap;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

pub use aggregate::{aggregate, metric_map_from_json, table_csv, AggregateRow, MetricMap};
pub use bootstrap::{bootstrap_bca, BootstrapConfig, Interval};

use crate::dataset::{predict, Dataset};
use crate::error::{Error, Result};

/// Mean per-class recall over classes that occur in `labels`.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize], q: usize) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::InsufficientData("balanced accuracy of an empty set".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut hit = vec![0usize; q];
    let mut total = vec![0usize; q];
    for (&p, &y) in preds.iter().zip(labels) {
        if y >= q {
            return Err(Error::InvalidArgument(format!("label {y} out of range for {q} classes")));
        }
        total[y] += 1;
        if p == y {
            hit[y] += 1;
        }
    }
    let present: Vec<f64> = (0..q)
        .filter(|&c| total[c] > 0)
        .map(|c| hit[c] as f64 / total[c] as f64)
        .collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacTable {
    pub clean_before: f64,
    pub clean_after: f64,
    pub pert_before: f64,
    pub pert_after: f64,
    /// BAC over pooled clean and perturbed predictions.
    pub combined_before: f64,
    pub combined_after: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub delta_drop: f64,
    pub delta_clean: f64,
    pub delta_pert: f64,
}

/// Percentage-point differences.
pub fn delta_metrics(t: &BacTable) -> Deltas {
    Deltas {
        delta_drop: 100.0 * (t.pert_before - t.clean_before),
        delta_clean: 100.0 * (t.clean_after - t.clean_before),
        delta_pert: 100.0 * (t.pert_after - t.pert_before),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DamageRecover {
    pub p_damage: f64,
    pub p_recover: Option<f64>,
    pub p_clean: f64,
    pub p_combined: f64,
    /// `p_combined` computed from the 50/50 average of clean and perturbed BAC.
    pub p_combined_average: f64,
}

pub fn damage_recover(t: &BacTable) -> Result<DamageRecover> {
    if t.clean_before == 0.0 {
        return Err(Error::InvalidArgument("clean BAC before correction is zero".into()));
    }
    let damage = t.clean_before - t.pert_before;
    let avg_before = (t.clean_before + t.pert_before) / 2.0;
    let avg_after = (t.clean_after + t.pert_after) / 2.0;
    Ok(DamageRecover {
        p_damage: 100.0 * damage / t.clean_before,
        p_recover: if damage.abs() < 1e-9 {
            None
        } else {
            Some(100.0 * (t.pert_after - t.pert_before) / damage)
        },
        p_clean: 100.0 * (t.clean_after - t.clean_before) / t.clean_before,
        p_combined: 100.0 * (t.combined_after - t.combined_before) / t.combined_before,
        p_combined_average: 100.0 * (avg_after - avg_before) / avg_before,
    })
}

/// Mean percentage decrease from `before` to `after`.
pub fn radius_contraction(before: &[f64], after: &[f64]) -> Result<f64> {
    if before.len() != after.len() || before.is_empty() {
        return Err(Error::DimensionMismatch("radius vectors differ in length".into()));
    }
    if before.contains(&0.0) {
        return Err(Error::InvalidArgument("zero radius before correction".into()));
    }
    let terms: Vec<f64> = before
        .iter()
        .zip(after)
        .map(|(b, a)| 100.0 * (b - a) / b)
        .collect();
    Ok(crate::util::mean(&terms))
}

/// Predictions for the selected examples: clean, and perturbed pooled
/// example-major.
pub fn predictions(d: &Dataset, examples: &[usize], perts: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let clean = d.clean_outputs().select(Axis(0), examples);
    let pert = d.perturbed_outputs().select(Axis(0), examples).select(Axis(1), perts);
    let flat = crate::util::flatten3(&pert);
    (predict(clean.view()), predict(flat.view()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bacs {
    pub clean: f64,
    pub pert: f64,
    pub combined: f64,
}

pub fn bacs(d: &Dataset, examples: &[usize], perts: &[usize]) -> Result<Bacs> {
    let labels = d.require_labels()?;
    let q = d.n_outputs.max(d.n_components());
    let (pc, pp) = predictions(d, examples, perts);
    let yc: Vec<usize> = examples.iter().map(|&j| labels[j]).collect();
    let yp: Vec<usize> = examples
        .iter()
        .flat_map(|&j| std::iter::repeat_n(labels[j], perts.len()))
        .collect();
    let mut all_p = pc.clone();
    all_p.extend_from_slice(&pp);
    let mut all_y = yc.clone();
    all_y.extend_from_slice(&yp);
    Ok(Bacs {
        clean: balanced_accuracy(&pc, &yc, q)?,
        pert: balanced_accuracy(&pp, &yp, q)?,
        combined: balanced_accuracy(&all_p, &all_y, q)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task_id: String,
    pub split: String,
    pub n_examples: usize,
    pub n_perturbations: usize,
    pub corrector: Option<String>,
    pub bac_clean_before: f64,
    pub bac_clean_after: f64,
    pub bac_pert_before: f64,
    pub bac_pert_after: f64,
    pub bac_combined_before: f64,
    pub bac_combined_after: f64,
    pub delta_drop: f64,
    pub delta_clean: f64,
    pub delta_pert: f64,
    pub p_damage: f64,
    pub p_recover: Option<f64>,
    pub p_clean: f64,
    pub p_combined: f64,
    pub p_combined_average: f64,
    pub combined_pooling: String,
    pub p_eps_l: Option<f64>,
    pub p_eps_v: Option<f64>,
}

impl MetricsReport {
    pub fn table(&self) -> BacTable {
        BacTable {
            clean_before: self.bac_clean_before,
            clean_after: self.bac_clean_after,
            pert_before: self.bac_pert_before,
            pert_after: self.bac_pert_after,
            combined_before: self.bac_combined_before,
            combined_after: self.bac_combined_after,
        }
    }

    pub fn metric_map(&self) -> MetricMap {
        metric_map_from_json(&serde_json::to_value(self).expect("report serializes"))
    }
}

/// Metrics of `after` (corrected) against `before` on the given examples.
pub fn evaluate(
    before: &Dataset,
    after: &Dataset,
    examples: &[usize],
    perts: &[usize],
    radii: Option<(&[f64], &[f64])>,
    radii_l: Option<(&[f64], &[f64])>,
) -> Result<MetricsReport> {
    let b = bacs(before, examples, perts)?;
    let a = bacs(after, examples, perts)?;
    let table = BacTable {
        clean_before: b.clean,
        clean_after: a.clean,
        pert_before: b.pert,
        pert_after: a.pert,
        combined_before: b.combined,
        combined_after: a.combined,
    };
    let d = delta_metrics(&table);
    let p = damage_recover(&table)?;
    Ok(MetricsReport {
        task_id: before.task_id.clone(),
        split: String::new(),
        n_examples: examples.len(),
        n_perturbations: perts.len(),
        corrector: None,
        bac_clean_before: b.clean,
        bac_clean_after: a.clean,
        bac_pert_before: b.pert,
        bac_pert_after: a.pert,
        bac_combined_before: b.combined,
        bac_combined_after: a.combined,
        delta_drop: d.delta_drop,
        delta_clean: d.delta_clean,
        delta_pert: d.delta_pert,
        p_damage: p.p_damage,
        p_recover: p.p_recover,
        p_clean: p.p_clean,
        p_combined: p.p_combined,
        p_combined_average: p.p_combined_average,
        combined_pooling: "pooled".into(),
        p_eps_l: radii_l.map(|(x, y)| radius_contraction(x, y)).transpose()?,
        p_eps_v: radii.map(|(x, y)| radius_contraction(x, y)).transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    #[test]
    fn bac_definition() {
        assert_eq!(balanced_accuracy(&[0, 1, 1], &[0, 1, 1], 2).unwrap(), 1.0);
        // recalls 0.8 and 0.6
        let y = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let p = [0, 0, 0, 0, 1, 1, 1, 1, 0, 0];
        assert!((balanced_accuracy(&p, &y, 2).unwrap() - 0.7).abs() < 1e-15);
        assert!(balanced_accuracy(&[], &[], 2).is_err());
    }

    #[test]
    fn bac_matches_tally_oracle() {
        let mut r = crate::rng::stream(5, 0, 0);
        for _ in 0..50 {
            let n = r.random_range(5..60);
            let y: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
            let p: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
            let mut recalls = Vec::new();
            for c in 0..3 {
                let idx: Vec<usize> = (0..n).filter(|&i| y[i] == c).collect();
                if idx.is_empty() {
                    continue;
                }
                let hits = idx.iter().filter(|&&i| p[i] == c).count();
                recalls.push(hits as f64 / idx.len() as f64);
            }
            let oracle = recalls.iter().sum::<f64>() / recalls.len() as f64;
            assert_eq!(balanced_accuracy(&p, &y, 3).unwrap(), oracle);
        }
    }

    fn table(cb: f64, pb: f64, ca: f64, pa: f64) -> BacTable {
        BacTable {
            clean_before: cb,
            clean_after: ca,
            pert_before: pb,
            pert_after: pa,
            combined_before: (cb + pb) / 2.0,
            combined_after: (ca + pa) / 2.0,
        }
    }

    #[test]
    fn deltas_follow_sign_conventions() {
        let z = delta_metrics(&table(0.8, 0.8, 0.8, 0.8));
        assert_eq!((z.delta_drop, z.delta_clean, z.delta_pert), (0.0, 0.0, 0.0));
        let d = delta_metrics(&table(0.804, 0.595, 0.804, 0.595 + 0.169));
        assert!((d.delta_drop + 20.9).abs() < 1e-9);
        assert!((d.delta_pert - 16.9).abs() < 1e-9);
    }

    #[test]
    fn damage_and_recovery() {
        let r = damage_recover(&table(0.9, 0.7, 0.9, 0.85)).unwrap();
        assert!((r.p_damage - 22.2222).abs() < 1e-4);
        assert!((r.p_recover.unwrap() - 75.0).abs() < 1e-9);
        let neg = damage_recover(&table(0.7, 0.8, 0.7, 0.8)).unwrap();
        assert!(neg.p_damage < 0.0);
        let none = damage_recover(&table(0.7, 0.7, 0.7, 0.75)).unwrap();
        assert_eq!(none.p_recover, None);
        assert!(damage_recover(&table(0.0, 0.1, 0.2, 0.2)).is_err());
    }

    #[test]
    fn contraction_cases() {
        assert_eq!(radius_contraction(&[2.0, 3.0], &[2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(radius_contraction(&[2.0], &[1.0]).unwrap(), 50.0);
        assert!(radius_contraction(&[2.0], &[2.5]).unwrap() < 0.0);
        assert!(radius_contraction(&[0.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn bac_is_permutation_invariant(
            pairs in prop::collection::vec((0usize..3, 0usize..3), 1..80),
            seed in 0u64..1000,
        ) {
            let (p, y): (Vec<usize>, Vec<usize>) = pairs.iter().cloned().unzip();
            let base = balanced_accuracy(&p, &y, 3).unwrap();
            let mut idx: Vec<usize> = (0..p.len()).collect();
            idx.shuffle(&mut crate::rng::stream(seed, 0, 0));
            let p2: Vec<usize> = idx.iter().map(|&i| p[i]).collect();
            let y2: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            prop_assert_eq!(balanced_accuracy(&p2, &y2, 3).unwrap(), base);
        }

        #[test]
        fn damage_is_negated_drop(cb in 0.05f64..1.0, pb in 0.0f64..1.0) {
            let t = table(cb, pb, cb, pb);
            let d = delta_metrics(&t);
            let r = damage_recover(&t).unwrap();
            prop_assert!((r.p_damage - (-d.delta_drop / cb)).abs() < 1e-9);
        }
    }
}
