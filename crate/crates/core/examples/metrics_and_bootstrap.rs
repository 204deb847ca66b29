//! Aggregating per-task damage values with BCa intervals.

use certibias::metrics::aggregate::{aggregate, table_csv, MetricMap};
use certibias::metrics::bootstrap::BootstrapConfig;
use certibias::metrics::{damage_recover, delta_metrics, BacTable};

pub fn run_example() -> certibias::Result<()> {
    let t = BacTable {
        clean_before: 0.80,
        clean_after: 0.78,
        pert_before: 0.60,
        pert_after: 0.74,
        combined_before: 0.61,
        combined_after: 0.74,
    };
    println!("{:?}", delta_metrics(&t));
    println!("{:?}", damage_recover(&t)?);

    let damage = [26.0, 24.0, 62.2, 3.2, 6.1, 36.1];
    let reports: Vec<MetricMap> = damage
        .iter()
        .map(|v| MetricMap::from([("p_damage".to_string(), Some(*v))]))
        .collect();
    let rows = aggregate(&reports, Some(&BootstrapConfig { resamples: 2000, ..BootstrapConfig::default() }))?;
    print!("{}", table_csv(&rows));
    Ok(())
}

#[allow(dead_code)]
fn main() -> certibias::Result<()> {
    run_example()
}
