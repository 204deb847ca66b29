//! Bias-corrected and accelerated (BCa) bootstrap interval for the mean.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng;
use crate::util::mean;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 10_000,
            level: 0.95,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Bootstrap means, one counter-based stream per resample, sorted.
fn resampled_means(values: &[f64], resamples: usize, seed: u64) -> Vec<f64> {
    let n = values.len();
    let mut stats: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(seed, b as u64, 0);
            let mut acc = 0.0;
            for _ in 0..n {
                acc += values[r.random_range(0..n)];
            }
            acc / n as f64
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    stats
}

/// Jackknife acceleration of the mean.
fn acceleration(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let total: f64 = values.iter().sum();
    let loo: Vec<f64> = values.iter().map(|v| (total - v) / (n - 1.0)).collect();
    let bar = mean(&loo);
    let (mut s2, mut s3) = (0.0, 0.0);
    for t in &loo {
        let d = bar - t;
        s2 += d * d;
        s3 += d * d * d;
    }
    if s2 == 0.0 {
        0.0
    } else {
        s3 / (6.0 * s2.powf(1.5))
    }
}

/// Inverted-CDF order statistic at probability `p`.
fn order_stat(sorted: &[f64], p: f64) -> f64 {
    let b = sorted.len();
    let idx = ((p * b as f64).ceil() as usize).clamp(1, b) - 1;
    sorted[idx]
}

pub fn bootstrap_bca(values: &[f64], cfg: &BootstrapConfig) -> Result<Interval> {
    if values.len() < 2 {
        return Err(Error::InsufficientData("bootstrap needs at least two values".into()));
    }
    if cfg.resamples < 100 {
        return Err(Error::InvalidArgument("bootstrap needs at least 100 resamples".into()));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must lie in (0, 1), got {}", cfg.level)));
    }
    let point = mean(values);
    if values.iter().all(|v| *v == values[0]) {
        return Ok(Interval { point, lower: point, upper: point, level: cfg.level });
    }
    let stats = resampled_means(values, cfg.resamples, cfg.seed);
    let b = stats.len() as f64;
    let below = stats.partition_point(|s| *s < point) as f64;
    let normal = std_normal();
    let z0 = normal.inverse_cdf((below / b).clamp(0.5 / b, 1.0 - 0.5 / b));
    let a = acceleration(values);
    let adjust = |z: f64| {
        let num = z0 + z;
        let den = 1.0 - a * num;
        if den <= 0.0 {
            if num < 0.0 { 0.0 } else { 1.0 }
        } else {
            normal.cdf(z0 + num / den)
        }
    };
    let tail = (1.0 - cfg.level) / 2.0;
    let lo = adjust(normal.inverse_cdf(tail));
    let hi = adjust(normal.inverse_cdf(1.0 - tail));
    Ok(Interval {
        point,
        lower: order_stat(&stats, lo),
        upper: order_stat(&stats, hi),
        level: cfg.level,
    })
}
