//! Train / test / hold-out assignment.
//!
//! Split sizes are floored for test and hold-out; the remainder goes to
//! train. Under [`PerturbationSplit::Partitioned`] the perturbation indices
//! are partitioned with the same rule so no perturbation index is shared
//! between splits.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PerturbationSplit};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportions {
    pub train: f64,
    pub test: f64,
    pub holdout: f64,
}

impl Default for Proportions {
    fn default() -> Self {
        Proportions { train: 0.5, test: 0.35, holdout: 0.15 }
    }
}

impl Proportions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.test, self.holdout];
        if parts.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "split proportions must be positive, got {parts:?}"
            )));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split proportions must sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// `(train, test, holdout)` sizes for `n` items.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let test = (n as f64 * self.test).floor() as usize;
        let holdout = (n as f64 * self.holdout).floor() as usize;
        (n - test - holdout, test, holdout)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Holdout,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "holdout" | "hold-out" => Ok(Split::Holdout),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Holdout => "holdout",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_examples: Vec<usize>,
    pub test_examples: Vec<usize>,
    pub holdout_examples: Vec<usize>,
    pub train_perts: Vec<usize>,
    pub test_perts: Vec<usize>,
    pub holdout_perts: Vec<usize>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn examples(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train_examples,
            Split::Test => &self.test_examples,
            Split::Holdout => &self.holdout_examples,
        }
    }

    pub fn perturbations(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train_perts,
            Split::Test => &self.test_perts,
            Split::Holdout => &self.holdout_perts,
        }
    }
}

fn partition(n: usize, proportions: &Proportions, seed: u64, stream: u64, what: &str) -> Result<[Vec<usize>; 3]> {
    let (train, test, holdout) = proportions.sizes(n);
    if train == 0 || test == 0 || holdout == 0 {
        return Err(Error::InsufficientData(format!(
            "{n} {what} cannot give every split at least one (sizes {train}/{test}/{holdout})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, stream, 0));
    let mut parts = [
        order[..train].to_vec(),
        order[train..train + test].to_vec(),
        order[train + test..].to_vec(),
    ];
    parts.iter_mut().for_each(|p| p.sort_unstable());
    Ok(parts)
}

/// Deterministic partition of examples (and, when partitioned, perturbations).
pub fn split_dataset(d: &Dataset, proportions: &Proportions, seed: u64) -> Result<SplitAssignment> {
    split_indices(d.n_examples(), d.n_perturbations(), d.perturbation_split, proportions, seed)
}

pub fn split_indices(
    m: usize,
    k: usize,
    mode: PerturbationSplit,
    proportions: &Proportions,
    seed: u64,
) -> Result<SplitAssignment> {
    proportions.validate()?;
    let [train_examples, test_examples, holdout_examples] =
        partition(m, proportions, seed, 0, "examples")?;
    let [train_perts, test_perts, holdout_perts] = match mode {
        PerturbationSplit::Partitioned => partition(k, proportions, seed, 1, "perturbations")?,
        PerturbationSplit::Resampled => {
            let all: Vec<usize> = (0..k).collect();
            [all.clone(), all.clone(), all]
        }
    };
    Ok(SplitAssignment {
        train_examples,
        test_examples,
        holdout_examples,
        train_perts,
        test_perts,
        holdout_perts,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_protocol_sizes() {
        let s = split_indices(200, 200, PerturbationSplit::Partitioned, &Proportions::default(), 7)
            .unwrap();
        assert_eq!(
            (s.train_examples.len(), s.test_examples.len(), s.holdout_examples.len()),
            (100, 70, 30)
        );
        assert_eq!(
            (s.train_perts.len(), s.test_perts.len(), s.holdout_perts.len()),
            (100, 70, 30)
        );
        for p in &s.test_perts {
            assert!(!s.train_perts.contains(p));
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let p = Proportions::default();
        let a = split_indices(50, 20, PerturbationSplit::Partitioned, &p, 3).unwrap();
        let b = split_indices(50, 20, PerturbationSplit::Partitioned, &p, 3).unwrap();
        let c = split_indices(50, 20, PerturbationSplit::Partitioned, &p, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn every_example_lands_in_exactly_one_split() {
        for seed in 0..100 {
            let s = split_indices(20, 10, PerturbationSplit::Resampled, &Proportions::default(), seed)
                .unwrap();
            let mut seen = [0usize; 20];
            for split in [Split::Train, Split::Test, Split::Holdout] {
                for &j in s.examples(split) {
                    seen[j] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1), "seed {seed}");
            assert_eq!(s.test_perts.len(), 10);
        }
    }

    #[test]
    fn rejects_bad_proportions_and_tiny_sets() {
        let bad = Proportions { train: 0.5, test: 0.5, holdout: 0.1 };
        assert!(split_indices(10, 10, PerturbationSplit::Resampled, &bad, 0).is_err());
        let neg = Proportions { train: 1.1, test: -0.2, holdout: 0.1 };
        assert!(split_indices(10, 10, PerturbationSplit::Resampled, &neg, 0).is_err());
        assert!(matches!(
            split_indices(4, 10, PerturbationSplit::Resampled, &Proportions::default(), 0),
            Err(Error::InsufficientData(_))
        ));
    }
}
