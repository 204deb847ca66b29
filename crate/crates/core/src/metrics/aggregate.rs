//! Task-level aggregation of metric reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_bca, BootstrapConfig};
use crate::csvio::fmt_float;
use crate::error::{Error, Result};
use crate::util::{mean, sample_variance};

/// Metric name to value; `None` marks an undefined entry.
pub type MetricMap = BTreeMap<String, Option<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: String,
    pub count: usize,
    pub excluded: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
}

/// Mean, sample standard deviation and optional BCa interval per metric.
pub fn aggregate(reports: &[MetricMap], ci: Option<&BootstrapConfig>) -> Result<Vec<AggregateRow>> {
    if reports.is_empty() {
        return Err(Error::InsufficientData("aggregate needs at least one report".into()));
    }
    let mut columns: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for r in reports {
        for (k, v) in r {
            let e = columns.entry(k.as_str()).or_default();
            match v {
                Some(x) if x.is_finite() => e.0.push(*x),
                _ => e.1 += 1,
            }
        }
    }
    columns
        .into_iter()
        .map(|(metric, (vals, excluded))| {
            let (m, s) = if vals.is_empty() {
                (None, None)
            } else {
                (Some(mean(&vals)), Some(sample_variance(&vals).sqrt()))
            };
            let interval = match ci {
                Some(cfg) if vals.len() >= 2 => Some(bootstrap_bca(&vals, cfg)?),
                _ => None,
            };
            Ok(AggregateRow {
                metric: metric.to_string(),
                count: vals.len(),
                excluded,
                mean: m,
                std: s,
                ci_lower: interval.map(|i| i.lower),
                ci_upper: interval.map(|i| i.upper),
            })
        })
        .collect()
}

pub fn table_csv(rows: &[AggregateRow]) -> String {
    let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
    let mut s = String::from("metric,count,excluded,mean,std,ci_lower,ci_upper\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.metric,
            r.count,
            r.excluded,
            opt(r.mean),
            opt(r.std),
            opt(r.ci_lower),
            opt(r.ci_upper)
        );
    }
    s
}

/// Numeric and null top-level fields of a JSON report.
pub fn metric_map_from_json(v: &serde_json::Value) -> MetricMap {
    let mut out = MetricMap::new();
    if let Some(obj) = v.as_object() {
        for (k, x) in obj {
            match x {
                serde_json::Value::Number(n) => {
                    out.insert(k.clone(), n.as_f64());
                }
                serde_json::Value::Null => {
                    out.insert(k.clone(), None);
                }
                _ => {}
            }
        }
    }
    out
}
