use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use certibias::biasstats::{bias_bound, shift_matrix, variance_bound};
use certibias::compcert::{midrange_bias, radius_lipschitz, radius_variance};
use certibias::dataset::{Dataset, DumpKind, PerturbationSplit};
use certibias::debias::ridge::{fit_ridge, FeatureMap};
use certibias::debias::{corrected_shifts, Corrector};
use certibias::margincert::{
    certify_all, margin_shift_1d, margin_shift_stats, pairwise_margins, population_bound, BridgeParams, MarginModel,
    StatsConfig,
};
use certibias::metrics::aggregate::{aggregate, MetricMap};
use certibias::metrics::radius_contraction;
use certibias::pipeline::{alpha_sweep, certify, evaluate_corrector, fit_corrector, Method, PipelineConfig};
use certibias::rng::stream;
use certibias::synth::{
    brute_force_cert_check, gen_linear_dataset, gen_scenario, gen_uniform_1d, monte_carlo_violation, NoiseSpec,
    Panel, ScenarioSpec,
};
use ndarray::{Array1, Array2, Array3};
use rand::seq::index::sample;
use rand::Rng;

#[path = "../examples/full_pipeline.rs"]
#[allow(dead_code)]
mod full_pipeline;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within(elapsed: Duration, limit_s: f64, msg: String) -> Outcome {
    let msg = format!("{msg}, {:.2} s", elapsed.as_secs_f64());
    ensure(elapsed.as_secs_f64() < limit_s, msg)
}

fn aggregation_fidelity() -> Outcome {
    let start = Instant::now();
    let mean_of = |values: &[f64]| -> f64 {
        let reports: Vec<MetricMap> = values
            .iter()
            .map(|v| MetricMap::from([("p_damage".to_string(), Some(*v))]))
            .collect();
        aggregate(&reports, None).unwrap()[0].mean.unwrap()
    };
    let llama = mean_of(&[26.0, 24.0, 62.2, 3.2, 6.1, 36.1]);
    let qwen = mean_of(&[6.6, 15.8, 36.6, 6.4, 24.0]);
    let msg = format!("llama {llama:.3} vs 26.2, qwen {qwen:.3} vs 17.9");
    ensure((llama - 26.2).abs() <= 0.15 && (qwen - 17.9).abs() <= 0.15, msg.clone())?;
    within(start.elapsed(), 1.0, msg)
}

fn component_soundness() -> Outcome {
    let start = Instant::now();
    let c = 0.05;
    let noise = NoiseSpec::Uniform { c };
    let (n, m) = (16, 20);
    let (d, module, truth) = gen_linear_dataset(n, 4, m, 1, &noise, 2024).unwrap();
    let v = truth.v.clone().unwrap();
    let mut worst: Vec<String> = Vec::new();
    let mut ok = true;
    for (t, phi) in [0.01, 0.05, 0.2].into_iter().enumerate() {
        let eps_l: Vec<f64> = (0..4).map(|i| radius_lipschitz(truth.c[i], truth.gammas[i], c, n, m, phi).unwrap()).collect();
        let eps_v: Vec<f64> = (0..4).map(|i| radius_variance(truth.c[i], v[i], m, phi).unwrap()).collect();
        let rl = monte_carlo_violation(&module, d.clean.view(), &eps_l, &noise, 50_000, 10 + t as u64).unwrap();
        let rv = monte_carlo_violation(&module, d.clean.view(), &eps_v, &noise, 50_000, 20 + t as u64).unwrap();
        let (wl, wv) = (rl.iter().cloned().fold(0.0, f64::max), rv.iter().cloned().fold(0.0, f64::max));
        ok &= wl <= phi && wv <= phi;
        worst.push(format!("phi {phi}: L {wl:.5} V {wv:.5}"));
    }
    let msg = worst.join("; ");
    ensure(ok, msg.clone())?;
    within(start.elapsed(), 30.0, msg)
}

fn linear_radius_reduction() -> Outcome {
    let (m, k) = (9, 8);
    let clean = Array2::zeros((m, 1));
    let perturbed = Array3::from_shape_fn((m, k, 1), |(j, t, _)| {
        let mean = 0.2 + 0.1 * j as f64;
        let wiggle = 0.05 * (1.0 + (t / 2) as f64 / k as f64);
        if t % 2 == 0 { mean + wiggle } else { mean - wiggle }
    });
    let d = Dataset {
        task_id: "midrange".into(),
        kind: DumpKind::Logits,
        n_outputs: 1,
        clean,
        perturbed,
        labels: None,
        weights: None,
        biases: None,
        perturbation_split: PerturbationSplit::Partitioned,
    };
    let all: Vec<usize> = (0..m).collect();
    let s = shift_matrix(&d);
    let b = midrange_bias(&s, &all);
    let corrected = Corrector::Constant { b: b.clone() }.apply_dataset(&d).unwrap();
    let sc = corrected_shifts(&d, &corrected).unwrap();
    let (c0, c1) = (bias_bound(&s, &all).unwrap()[0], bias_bound(&sc, &all).unwrap()[0]);
    let (v0, v1) = (variance_bound(&s, &all).unwrap()[0], variance_bound(&sc, &all).unwrap()[0]);
    let (phi, gamma, noise_c) = (0.05, 1.0, 0.05);
    let l0 = radius_lipschitz(c0, gamma, noise_c, 1, m, phi).unwrap();
    let l1 = radius_lipschitz(c1, gamma, noise_c, 1, m, phi).unwrap();
    let e0 = radius_variance(c0, v0, m, phi).unwrap();
    let e1 = radius_variance(c1, v1, m, phi).unwrap();
    let p_l = radius_contraction(&[l0], &[l1]).unwrap();
    let p_v = radius_contraction(&[e0], &[e1]).unwrap();
    let (pred_l, pred_v) = (100.0 * 0.6 / l0, 100.0 * 0.6 / e0);
    let msg = format!(
        "b {:.12}, C {c0:.12} -> {c1:.12}, p_epsL {p_l:.10} vs {pred_l:.10}, p_epsV {p_v:.10} vs {pred_v:.10}",
        b[0]
    );
    ensure(
        (c0 - 1.0).abs() < 1e-12
            && (c1 - 0.4).abs() < 1e-12
            && (l0 - l1 - 0.6).abs() < 1e-10
            && (e0 - e1 - 0.6).abs() < 1e-10
            && (p_l - pred_l).abs() < 1e-10
            && (p_v - pred_v).abs() < 1e-10,
        msg,
    )
}

/// Conjugate gradient on `(ΨᵀΨ + λI)w = Ψᵀf`, one column at a time, using
/// only products with `Ψ`.
fn cg_ridge(psi: &Array2<f64>, f: &Array2<f64>, lambda: f64) -> Array2<f64> {
    let apply = |v: &Array1<f64>| psi.t().dot(&psi.dot(v)) + v * lambda;
    let mut out = Array2::zeros((psi.ncols(), f.ncols()));
    for (col, mut dst) in f.columns().into_iter().zip(out.columns_mut()) {
        let rhs = psi.t().dot(&col);
        let mut x = Array1::zeros(psi.ncols());
        let mut r = rhs.clone();
        let mut p = r.clone();
        let mut rr = r.dot(&r);
        for _ in 0..10 * psi.ncols() {
            if rr.sqrt() <= 1e-15 * rhs.dot(&rhs).sqrt() {
                break;
            }
            let ap = apply(&p);
            let a = rr / p.dot(&ap);
            x = x + &p * a;
            r = r - &ap * a;
            let next = r.dot(&r);
            p = &r + &p * (next / rr);
            rr = next;
        }
        dst.assign(&x);
    }
    out
}

fn ridge_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut beta_exact = true;
    for sys in 0..20u64 {
        let n = if sys % 2 == 0 { 4 } else { 16 };
        let mut r = stream(99, sys, 0);
        let x = Array2::from_shape_fn((50, n), |_| r.random_range(-1.0..1.0));
        let f = Array2::from_shape_fn((50, 3), |_| r.random_range(-2.0..2.0));
        let fit = fit_ridge(x.view(), f.view(), 0.1).unwrap();
        let psi = FeatureMap::Linear.design(x.view());
        let oracle = cg_ridge(&psi, &f, 0.1);
        let rel = (&fit.w - &oracle).mapv(f64::abs).sum() / oracle.mapv(f64::abs).sum();
        worst = worst.max(rel);
        let residuals = &f - &psi.dot(&fit.w);
        for (i, col) in residuals.columns().into_iter().enumerate() {
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            beta_exact &= fit.beta[i] == (lo + hi) / 2.0;
        }
    }
    ensure(worst < 1e-6 && beta_exact, format!("worst relative gap {worst:.2e}, beta midrange exact: {beta_exact}"))
}

/// Misclassification probability of `x` with label `y` under `U[-c, c]`
/// noise on the one-dimensional fixture.
fn uniform_1d_failure(x: f64, y: usize, c: f64) -> f64 {
    let signed = if y == 1 { x } else { -x };
    ((c - signed) / (2.0 * c)).clamp(0.0, 1.0)
}

fn certificate_soundness() -> Outcome {
    let start = Instant::now();
    let (m, k, c, phi) = (200, 400, 0.05, 0.1);
    let d = gen_uniform_1d(m, k, c, 5, 31).unwrap();
    let examples: Vec<usize> = (0..m).collect();
    let perts: Vec<usize> = (0..k).collect();
    let stats = margin_shift_stats(&d, &examples, &perts, &StatsConfig::default()).unwrap();
    let records = certify_all(&stats, phi, &BridgeParams::default()).unwrap();
    let brute = brute_force_cert_check(&records, &d, &stats).unwrap();
    let labels = d.labels.clone().unwrap();
    let mut n_cert = 0;
    let mut worst_brute = 0.0f64;
    let mut worst_exact = 0.0f64;
    let mut sound = true;
    let mut boundary_fail = 0.0f64;
    let mut cvb_ok = true;
    for (rec, (s, rate)) in records.iter().zip(stats.iter().zip(&brute)) {
        cvb_ok &= rec.cvb >= 1.0;
        let exact = uniform_1d_failure(d.clean[[rec.example, 0]], labels[rec.example], c);
        if rec.certified_c {
            n_cert += 1;
            let se = (phi * (1.0 - phi) / s.evaluation_perts.len() as f64).sqrt();
            sound &= *rate <= phi + 3.0 * se && exact <= phi;
            worst_brute = worst_brute.max(*rate);
            worst_exact = worst_exact.max(exact);
        } else {
            boundary_fail = boundary_fail.max(*rate);
        }
    }
    let msg = format!(
        "{n_cert}/{m} certified, worst certified failure {worst_brute:.4} (exact {worst_exact:.4}), worst uncertified {boundary_fail:.4}, cvb >= 1: {cvb_ok}"
    );
    ensure(sound && boundary_fail > phi && n_cert > 0 && cvb_ok, msg.clone())?;
    within(start.elapsed(), 20.0, msg)
}

fn panel_certification() -> Outcome {
    let cfg = PipelineConfig::default();
    let mut lines = Vec::new();
    let mut ok = true;
    for panel in [Panel::A, Panel::B, Panel::C, Panel::D] {
        let spec = ScenarioSpec::new(panel, 400, 100, NoiseSpec::Uniform { c: 0.05 }, 7);
        let (d, _) = gen_scenario(&spec).unwrap();
        let split = cfg.split(&d).unwrap();
        let (fitted, _) = fit_corrector(&d, &split, Method::Ridge, &cfg).unwrap();
        let corrected = fitted.corrector.apply_dataset(&d).unwrap();
        match panel {
            Panel::B | Panel::C => {
                let before = certify(&d, &split, &cfg).unwrap().summary;
                let after = certify(&corrected, &split, &cfg).unwrap().summary;
                let (p0, p1) = (before.p_c.unwrap(), after.p_c.unwrap());
                let (q0, q1) = (before.population_c.unwrap(), after.population_c.unwrap());
                ok &= p1 > p0 && q1 > q0;
                lines.push(format!("{panel}: p_C {p0:.3}->{p1:.3} P_C {q0:.3}->{q1:.3}"));
            }
            Panel::A | Panel::D => {
                let r = evaluate_corrector(&d, &corrected, &split, &cfg).unwrap();
                ok &= r.delta_pert.abs() < 2.0;
                lines.push(format!("{panel}: pert BAC change {:+.2} pts", r.delta_pert));
            }
        }
    }
    ensure(ok, lines.join("; "))
}

fn population_calibration() -> Outcome {
    let (m, k, c, phi, psi) = (2000, 200, 0.05, 0.1, 0.05);
    let d = gen_uniform_1d(m, k, c, 600, 17).unwrap();
    let labels = d.labels.clone().unwrap();
    let truth = (0..m)
        .map(|e| 1.0 - uniform_1d_failure(d.clean[[e, 0]], labels[e], c))
        .sum::<f64>()
        / m as f64;
    let examples: Vec<usize> = (0..m).collect();
    let perts: Vec<usize> = (0..k).collect();
    let stats = margin_shift_stats(&d, &examples, &perts, &StatsConfig::default()).unwrap();
    let certified: Vec<bool> = certify_all(&stats, phi, &BridgeParams::default())
        .unwrap()
        .iter()
        .map(|r| r.certified_c)
        .collect();
    let (draws, size) = (200, 200);
    let mut violations = 0;
    let mut largest = 0.0f64;
    for t in 0..draws {
        let mut r = stream(5, t, 0);
        let s = sample(&mut r, m, size).into_iter().filter(|&i| certified[i]).count();
        let bound = population_bound(s, size, phi, psi).unwrap();
        largest = largest.max(bound);
        violations += usize::from(bound > truth);
    }
    let allowed = psi * draws as f64 + 3.0 * (draws as f64 * psi * (1.0 - psi)).sqrt();
    ensure(
        violations as f64 <= allowed,
        format!("{violations} violations of {draws} (allowed {allowed:.1}), truth {truth:.4}, largest bound {largest:.4}"),
    )
}

fn gram_tradeoff() -> Outcome {
    let cfg = PipelineConfig::default();
    let spec = ScenarioSpec::new(Panel::C, 400, 100, NoiseSpec::Uniform { c: 0.05 }, 7);
    let (d, _) = gen_scenario(&spec).unwrap();
    let split = cfg.split(&d).unwrap();
    let rows = alpha_sweep(&d, &split, &[0.0, 0.1, 1.0, 10.0, 100.0, 1000.0, 10000.0], &cfg).unwrap();
    let monotone = rows.windows(2).all(|w| w[1].gram_norm <= w[0].gram_norm);
    let green = rows.iter().filter(|r| r.delta_clean >= 0.0 && r.delta_pert > 0.0).count();
    let norms: Vec<String> = rows.iter().map(|r| format!("{:.3}", r.gram_norm)).collect();
    ensure(
        monotone && green > 0,
        format!("norms [{}], {green} of {} alphas with delta_clean >= 0 and delta_pert > 0", norms.join(", "), rows.len()),
    )
}

fn projection_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for inst in 0..1000u64 {
        let mut r = stream(123, inst, 0);
        let q = r.random_range(2..6usize);
        let p = r.random_range(1..9usize);
        let w = Array2::from_shape_fn((q, p), |_| r.random_range(-2.0..2.0));
        let b: Vec<f64> = (0..q).map(|_| r.random_range(-1.0..1.0)).collect();
        let x = Array1::from_shape_fn(p, |_| r.random_range(-3.0..3.0));
        let dx = Array1::from_shape_fn(p, |_| r.random_range(-0.5..0.5));
        let y = r.random_range(0..q);
        let model = MarginModel::Linear { w: w.clone(), b };
        let before = pairwise_margins(&model, x.view(), y).unwrap();
        let after = pairwise_margins(&model, (&x + &dx).view(), y).unwrap();
        for ((j, r0), (_, r1)) in before.into_iter().zip(after) {
            let projected = margin_shift_1d(&w, y, j, dx.view()).unwrap();
            worst = worst.max(((r1 - r0) - projected).abs());
        }
    }
    ensure(worst <= 1e-12, format!("worst gap {worst:.2e} over 1000 instances"))
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("run");
    full_pipeline::run_in(&root.join("x")).map_err(|e| e.to_string())?;
    let first = snapshot(&root);
    std::fs::remove_dir_all(&root).unwrap();
    full_pipeline::run_in(&root.join("x")).map_err(|e| e.to_string())?;
    let second = snapshot(&root);
    let differing: Vec<String> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    ensure(
        differing.is_empty() && !first.is_empty(),
        format!("{} files compared, differing: {:?}", first.len(), differing),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("aggregation fidelity", aggregation_fidelity),
        ("component certificate soundness", component_soundness),
        ("midrange correction shrinks radii linearly", linear_radius_reduction),
        ("ridge matches iterative oracle", ridge_oracle),
        ("per-example certificate soundness", certificate_soundness),
        ("debiasing improves certification", panel_certification),
        ("population bound calibration", population_calibration),
        ("gram penalty trade-off", gram_tradeoff),
        ("projected margin shift equivalence", projection_equivalence),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
