#[path = "../examples/ingest_and_split.rs"]
mod ingest_and_split;

#[path = "../examples/bias_profile.rs"]
mod bias_profile;

#[path = "../examples/component_radii.rs"]
mod component_radii;

#[path = "../examples/constant_bias_search.rs"]
mod constant_bias_search;

#[path = "../examples/ridge_debias.rs"]
mod ridge_debias;

#[path = "../examples/gram_penalty_sweep.rs"]
mod gram_penalty_sweep;

#[path = "../examples/pca_feature_debias.rs"]
mod pca_feature_debias;

#[path = "../examples/margin_certificates.rs"]
mod margin_certificates;

#[path = "../examples/population_certificate.rs"]
mod population_certificate;

#[path = "../examples/metrics_and_bootstrap.rs"]
mod metrics_and_bootstrap;

#[path = "../examples/monte_carlo_soundness.rs"]
mod monte_carlo_soundness;

#[path = "../examples/full_pipeline.rs"]
mod full_pipeline;


#[test]
fn ingest_and_split_runs() {
    ingest_and_split::run_example().unwrap();
}

#[test]
fn bias_profile_runs() {
    bias_profile::run_example().unwrap();
}

#[test]
fn component_radii_runs() {
    component_radii::run_example().unwrap();
}

#[test]
fn constant_bias_search_runs() {
    constant_bias_search::run_example().unwrap();
}

#[test]
fn ridge_debias_runs() {
    ridge_debias::run_example().unwrap();
}

#[test]
fn gram_penalty_sweep_runs() {
    gram_penalty_sweep::run_example().unwrap();
}

#[test]
fn pca_feature_debias_runs() {
    pca_feature_debias::run_example().unwrap();
}

#[test]
fn margin_certificates_runs() {
    margin_certificates::run_example().unwrap();
}

#[test]
fn population_certificate_runs() {
    population_certificate::run_example().unwrap();
}

#[test]
fn metrics_and_bootstrap_runs() {
    metrics_and_bootstrap::run_example().unwrap();
}

#[test]
fn monte_carlo_soundness_runs() {
    monte_carlo_soundness::run_example().unwrap();
}

#[test]
fn full_pipeline_runs() {
    full_pipeline::run_example().unwrap();
}
