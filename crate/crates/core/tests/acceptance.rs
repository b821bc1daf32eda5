//! One line per acceptance criterion; every tolerance is pinned below.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};

use common::*;
use exrob_core::criteria::*;
use exrob_core::explainers::*;
use exrob_core::harness::{run_pipeline, run_to_dir, MethodEntry, RunConfig, EXIT_NOT_ROBUST};
use exrob_core::metrics::{attribution_distance, js_divergence, ExplanationMetric, MetricSpec, TransformTable};
use exrob_core::model::{Activation, Architecture, InputOutputPair, Model, ProbeSet};
use exrob_core::scenarios::{run_scenario, ScenarioFixture, ScenarioId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const METRIC_TOL: f64 = 1e-12;
const JS_TOL: f64 = 1e-12;
const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const SHAPLEY_TOL: f64 = 1e-8;
const LINEAR_TOL: f64 = 1e-9;
const LIME_TOL: f64 = 0.05;
const SHIFT_TOL: f64 = 1e-10;
const WILSON_TOL: f64 = 1e-12;

const LINEAR_POOL: &str = include_str!("../../../configs/linear-pool.json");

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn vector(r: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| r.gen_range(-scale..scale)).collect()
}

fn metric_axioms() -> Outcome {
    let mut r = rng(1);
    let kinds = [ExplanationMetric::EuclideanNormalized, ExplanationMetric::Cosine, ExplanationMetric::Rank];
    for _ in 0..1000 {
        let d = r.gen_range(2..9);
        let (a, b, c) = (vector(&mut r, d, 3.0), vector(&mut r, d, 3.0), vector(&mut r, d, 3.0));
        for kind in kinds {
            let ab = attribution_distance(&a, &b, kind).unwrap();
            let ba = attribution_distance(&b, &a, kind).unwrap();
            let aa = attribution_distance(&a, &a, kind).unwrap();
            ensure!(ab >= 0.0, "{kind:?} negative");
            ensure!((ab - ba).abs() <= METRIC_TOL, "{kind:?} asymmetric by {}", (ab - ba).abs());
            ensure!(aa.abs() <= METRIC_TOL, "{kind:?} d(a,a) = {aa}");
            if kind == ExplanationMetric::EuclideanNormalized {
                let bc = attribution_distance(&b, &c, kind).unwrap();
                let ac = attribution_distance(&a, &c, kind).unwrap();
                ensure!(ac <= ab + bc + METRIC_TOL, "triangle {ac} > {ab} + {bc}");
            }
        }
    }
    Ok("1000 triples, 3 metric kinds".into())
}

fn distribution(r: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| r.gen_range(0.0..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn js_bounds() -> Outcome {
    let mut r = rng(2);
    let ln2 = std::f64::consts::LN_2;
    for _ in 0..1000 {
        let k = r.gen_range(2..7);
        let (p, q) = (distribution(&mut r, k), distribution(&mut r, k));
        let v = js_divergence(&p, &q).unwrap();
        ensure!((0.0..=ln2).contains(&v), "JS = {v}");
        ensure!(js_divergence(&p, &p).unwrap().abs() <= JS_TOL, "JS(p,p) != 0");
        let split = r.gen_range(1..k);
        let mut a = vec![0.0; k];
        let mut b = vec![0.0; k];
        a[..split].copy_from_slice(&distribution(&mut r, split));
        b[split..].copy_from_slice(&distribution(&mut r, k - split));
        let disjoint = js_divergence(&a, &b).unwrap();
        ensure!((disjoint - ln2).abs() <= JS_TOL, "disjoint JS = {disjoint}");
    }
    Ok("1000 pairs in [0, ln 2], disjoint supports at ln 2".into())
}

fn gradient_oracle() -> Outcome {
    let mut r = rng(3);
    let archs = [
        Architecture::LinearSoftmax,
        Architecture::mlp(&[6], Activation::Tanh),
        Architecture::mlp(&[5, 4], Activation::Relu),
    ];
    let mut worst: f64 = 0.0;
    for t in 0..50 {
        let arch = archs[t % archs.len()].clone();
        let d = r.gen_range(2..6);
        let classes = r.gen_range(2..4);
        let m = Model::initialized("fd", arch, d, classes, r.gen()).unwrap();
        let x = vector(&mut r, d, 2.0);
        let c = r.gen_range(0..classes);
        let g = m.gradient(&x, c).unwrap();
        for i in 0..d {
            let (mut hi, mut lo) = (x.clone(), x.clone());
            hi[i] += FD_STEP;
            lo[i] -= FD_STEP;
            let fd = (m.logit(&hi, c).unwrap() - m.logit(&lo, c).unwrap()) / (2.0 * FD_STEP);
            worst = worst.max((fd - g[i]).abs());
        }
    }
    ensure!(worst <= FD_TOL, "worst deviation {worst}");
    Ok(format!("50 triples, worst deviation {worst:.2e}"))
}

/// Shapley values by direct enumeration of the `2^d` coalitions.
fn shapley_oracle(m: &Model, x: &[f64], baseline: &[f64], class: usize) -> Vec<f64> {
    let d = x.len();
    let fact = |n: usize| (1..=n).fold(1.0, |a, k| a * k as f64);
    let value = |s: &[bool]| {
        let z: Vec<f64> = (0..d).map(|i| if s[i] { x[i] } else { baseline[i] }).collect();
        m.logit(&z, class).unwrap()
    };
    let mut phi = vec![0.0; d];
    for mask in 0u64..(1 << d) {
        let s: Vec<bool> = (0..d).map(|i| mask >> i & 1 == 1).collect();
        let size = s.iter().filter(|b| **b).count();
        let v = value(&s);
        for i in (0..d).filter(|&i| !s[i]) {
            let mut with = s.clone();
            with[i] = true;
            phi[i] += fact(size) * fact(d - size - 1) / fact(d) * (value(&with) - v);
        }
    }
    phi
}

fn shapley_equivalence() -> Outcome {
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    let mut fixtures = 0;
    for d in 2..=10 {
        for arch in [Architecture::LinearSoftmax, Architecture::mlp(&[6], Activation::Tanh), Architecture::mlp(&[5], Activation::Relu)] {
            let m = Model::initialized("shap", arch, d, 3, r.gen()).unwrap();
            let x = vector(&mut r, d, 2.0);
            let baseline = vector(&mut r, d, 0.5);
            let pair = InputOutputPair::new(&m, 0, x.clone()).unwrap();
            let cfg = ExplainerConfig {
                shap_mode: ShapMode::Exact,
                ..ExplainerConfig::default().with_baseline(baseline.clone())
            };
            let k = explain(MethodId::KernelShap, &m, &pair, &cfg).unwrap();
            let oracle = shapley_oracle(&m, &x, &baseline, pair.predicted_class());
            for (a, b) in k.attribution.iter().zip(&oracle) {
                worst = worst.max((a - b).abs());
            }
            fixtures += 1;
        }
    }
    ensure!(worst <= SHAPLEY_TOL, "worst deviation {worst}");
    Ok(format!("{fixtures} fixtures with d in 2..=10, worst deviation {worst:.2e}"))
}

fn linear_coincidences() -> Outcome {
    let data = planted_data();
    let model = planted_model();
    let zero = zero_baseline(4);
    let mut worst: f64 = 0.0;
    let mut lime_worst: f64 = 0.0;
    for (i, x) in data.features.iter().take(40).enumerate() {
        let pair = InputOutputPair::new(&model, i, x.clone()).unwrap();
        let c = pair.predicted_class();
        let row = model.layers[0].row(c);
        let target: Vec<f64> = row.iter().zip(x).map(|(w, v)| w * v).collect();
        let truth = data.ground_truth_for(i).unwrap();
        for m in [MethodId::Occlusion, MethodId::ExactShapley] {
            let e = explain(m, &model, &pair, &zero).unwrap();
            for (a, t) in e.attribution.iter().zip(&target) {
                worst = worst.max((a - t).abs());
            }
        }
        // The planted model's class-c row is (c + 1)·w.
        for (t, g) in target.iter().zip(&truth) {
            worst = worst.max((t - (c + 1) as f64 * g).abs());
        }
        let lime = explain(MethodId::Lime, &model, &pair, &ExplainerConfig::default().with_seed(i as u64)).unwrap();
        for (a, w) in lime.attribution.iter().zip(row) {
            lime_worst = lime_worst.max((a - w).abs());
        }
    }
    ensure!(worst <= LINEAR_TOL, "occlusion/Shapley/ground truth deviation {worst}");
    ensure!(lime_worst <= LIME_TOL, "LIME deviation {lime_worst}");
    Ok(format!("exact deviation {worst:.2e}, LIME deviation {lime_worst:.3}"))
}

fn kindermans() -> Outcome {
    let r = run_scenario(&ScenarioFixture::builtin(ScenarioId::KindermansShift).unwrap()).unwrap();
    for arm in ["linear", "mlp"] {
        let ixg = r.observation(arm, CriterionId::Emr1, &[MethodId::InputXGradient]).and_then(|o| o.pass);
        let g = r.observation(arm, CriterionId::Emr1, &[MethodId::Gradient]).and_then(|o| o.pass);
        ensure!(ixg == Some(false), "{arm}: input×gradient EMR-1 {ixg:?}");
        ensure!(g == Some(true), "{arm}: gradient EMR-1 {g:?}");
    }
    // Identity checked directly on explanations.
    let mut rr = rng(6);
    let mut worst: f64 = 0.0;
    let models = [planted_model(), Model::initialized("m", Architecture::mlp(&[8], Activation::Relu), 4, 2, 21).unwrap()];
    for f in &models {
        let s = vec![2.0; 4];
        let g = f.shift_compensated(&s).unwrap();
        for k in 0..50 {
            let x = vector(&mut rr, 4, 2.0);
            let xs: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a + b).collect();
            let ef = explain(MethodId::InputXGradient, f, &InputOutputPair::new(f, k, x.clone()).unwrap(), &ExplainerConfig::default()).unwrap();
            let eg = explain(MethodId::InputXGradient, &g, &InputOutputPair::new(&g, k, xs).unwrap(), &ExplainerConfig::default()).unwrap();
            let grad = f.gradient(&x, ef.class).unwrap();
            for i in 0..4 {
                worst = worst.max((eg.attribution[i] - ef.attribution[i] - s[i] * grad[i]).abs());
            }
        }
    }
    ensure!(worst <= SHIFT_TOL, "shift identity deviation {worst}");
    Ok(format!("both arms as expected, identity deviation {worst:.2e}"))
}

fn adebayo() -> Outcome {
    let fx = ScenarioFixture::builtin(ScenarioId::AdebayoRandomization).unwrap();
    let r = run_scenario(&fx).unwrap();
    let pass = |m| r.observation("mlp", CriterionId::Emr2Global, &[m]).and_then(|o| o.pass);
    ensure!(pass(MethodId::BrokenConstant) == Some(false), "broken-constant {:?}", pass(MethodId::BrokenConstant));
    ensure!(pass(MethodId::Gradient) == Some(true), "gradient {:?}", pass(MethodId::Gradient));
    ensure!(pass(MethodId::Occlusion) == Some(true), "occlusion {:?}", pass(MethodId::Occlusion));
    let d = r.measurements["mlp/min_randomized_divergence"];
    let eps = fx.tolerances.global_emr2_input.resolve(&[], 0.0).unwrap();
    ensure!(d > eps, "D = {d} not above {eps}");
    ensure!(r.regressions_ok(), "frozen regressions drifted");
    Ok(format!("min D = {d:.4} > {eps}"))
}

fn rudin() -> Outcome {
    let r = run_scenario(&ScenarioFixture::builtin(ScenarioId::RudinDistinctPredictions).unwrap()).unwrap();
    let pass = |m| r.observation("linear", CriterionId::Emr2, &[m]).and_then(|o| o.pass);
    ensure!(pass(MethodId::Gradient) == Some(false), "gradient {:?}", pass(MethodId::Gradient));
    ensure!(pass(MethodId::BrokenConstant) == Some(false), "broken-constant {:?}", pass(MethodId::BrokenConstant));
    ensure!(pass(MethodId::ExactShapley) == Some(true), "exact-Shapley {:?}", pass(MethodId::ExactShapley));
    Ok(format!("{} class-flip pairs", r.measurements["linear/class_flip_pairs"]))
}

fn negative_control() -> Outcome {
    let model = planted_model();
    let sample = planted_sample(&model);
    let tol = ToleranceConfig::default();
    let metric = MetricSpec::default();
    let cfg = zero_baseline(4);
    let bc = sample.explain(MethodId::BrokenConstant, &cfg).unwrap();
    let shap = sample.explain(MethodId::ExactShapley, &cfg).unwrap();
    let bm = MethodId::BrokenConstant;
    ensure!(!check_emr2(bm, &sample, &bc, &tol, &metric).unwrap().pass, "EMR-2 passed");
    ensure!(!check_emr2_relaxed(bm, &sample, &bc, &tol, &metric).unwrap().pass, "EMR-2' passed");
    let er1 = check_er1_local((bm, &bc), (MethodId::ExactShapley, &shap), &sample, &tol, &metric, &TransformTable::default()).unwrap();
    ensure!(!er1.pass, "ER-1 passed");
    let randomized: Vec<Model> = [101, 102].iter().map(|&s| model.randomize_weights(s)).collect();
    let models: Vec<&Model> = std::iter::once(&model).chain(&randomized).collect();
    let probe = ProbeSet::gaussian(4, 64, 1.0, 9).unwrap();
    let ge: Vec<Explanation> = models.iter().map(|f| explain_global(bm, f, &probe, &cfg).unwrap()).collect();
    let set = check_emr_global(bm, &models, &ge, &probe, &tol, &metric).unwrap();
    let g = set.get(CriterionId::Emr2Global).map(|v| v.pass);
    ensure!(g == Some(false), "global EMR-2 {g:?}");
    Ok("EMR-2, EMR-2', global EMR-2 and ER-1 all fail".into())
}

fn gating() -> Outcome {
    for extra in [MethodId::BrokenConstant, MethodId::Gradient] {
        let mut cfg = RunConfig::from_json(LINEAR_POOL).unwrap();
        cfg.methods.push(MethodEntry { method: extra, config: Default::default() });
        let report = run_pipeline(&cfg).unwrap().report;
        ensure!(report.summary.emr_not_robust == [extra], "{extra}: {:?}", report.summary.emr_not_robust);
        ensure!(!report.summary.robust, "{extra}: reported robust");
        ensure!(report.exit_code() == EXIT_NOT_ROBUST && EXIT_NOT_ROBUST == 2, "{extra}: exit {}", report.exit_code());
    }
    Ok("robust pool plus one failing method gives exit 2".into())
}

fn determinism() -> Outcome {
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (dir, threads) in dirs.iter().zip([2, 2, 1]) {
        let mut cfg = RunConfig::from_json(LINEAR_POOL).unwrap();
        for m in [MethodId::Lime, MethodId::KernelShap] {
            cfg.methods.push(MethodEntry { method: m, config: ExplainerConfig { shap_mode: ShapMode::Sampled, ..Default::default() } });
        }
        cfg.threads = Some(threads);
        run_to_dir(&cfg, dir.path()).unwrap();
    }
    for name in ["report.json", "distances.csv"] {
        let first = std::fs::read(dirs[0].path().join(name)).unwrap();
        for d in &dirs[1..] {
            ensure!(first == std::fs::read(d.path().join(name)).unwrap(), "{name} differs");
        }
    }
    Ok("report.json and distances.csv identical over 3 runs, 1 and 2 threads".into())
}

fn estimator() -> Outcome {
    let mut r = rng(12);
    for _ in 0..500 {
        let n = r.gen_range(1..300);
        let flags: Vec<(bool, bool)> = (0..n).map(|_| (r.gen_bool(0.7), r.gen_bool(0.3))).collect();
        let q = flags.iter().filter(|f| f.0).count();
        let e = flags.iter().filter(|f| f.0 && f.1).count();
        let Ok(p) = estimate_conditional_probability(&flags) else {
            ensure!(q == 0, "estimator failed with {q} qualifiers");
            continue;
        };
        ensure!(p.estimate == e as f64 / q as f64, "estimate {} vs {e}/{q}", p.estimate);
        let (nf, ph, z) = (q as f64, e as f64 / q as f64, Z_95);
        let centre = (ph + z * z / (2.0 * nf)) / (1.0 + z * z / nf);
        let half = z / (1.0 + z * z / nf) * (ph * (1.0 - ph) / nf + z * z / (4.0 * nf * nf)).sqrt();
        ensure!((p.lower - (centre - half)).abs() <= WILSON_TOL, "lower {} vs {}", p.lower, centre - half);
        ensure!((p.upper - (centre + half)).abs() <= WILSON_TOL, "upper {} vs {}", p.upper, centre + half);
    }
    Ok("500 flag lists".into())
}

fn groundtruth() -> Outcome {
    let r = run_scenario(&ScenarioFixture::builtin(ScenarioId::GroundtruthCorrelation).unwrap()).unwrap();
    let reports = r.correlation.as_ref().ok_or("no correlation reports")?;
    let mut stats = Vec::new();
    for rep in reports.iter().filter(|rep| rep.scores.len() > 1) {
        let n = rep.scores.len() as f64;
        let bc = rep.scores.iter().find(|s| s.method == MethodId::BrokenConstant).ok_or("no broken-constant")?;
        ensure!(bc.correctness_rank == n, "{}: correctness rank {}", rep.arm, bc.correctness_rank);
        ensure!(bc.fulfilment_rank == n, "{}: fulfilment rank {}", rep.arm, bc.fulfilment_rank);
        let others = rep.scores.iter().filter(|s| s.method != MethodId::BrokenConstant);
        for s in others {
            ensure!(s.error < bc.error && s.fulfilment > bc.fulfilment, "{}: {} ties or beats broken-constant", rep.arm, s.method);
        }
        let rho = rep.spearman.ok_or("spearman undefined")?;
        stats.push(format!("{} spearman {rho:.3}", rep.arm));
    }
    ensure!(stats.len() >= 2, "only {} arms ranked", stats.len());
    Ok(stats.join(", "))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 13] = [
        ("metric axioms", metric_axioms),
        ("JS divergence bounds", js_bounds),
        ("gradient finite-difference oracle", gradient_oracle),
        ("Shapley enumeration oracle", shapley_equivalence),
        ("linear analytic coincidences", linear_coincidences),
        ("Kindermans shift", kindermans),
        ("Adebayo randomization", adebayo),
        ("Rudin class-flip pairs", rudin),
        ("negative-control completeness", negative_control),
        ("pipeline gating", gating),
        ("determinism", determinism),
        ("conditional-probability estimator", estimator),
        ("ground-truth correlation", groundtruth),
    ];
    // Written straight to stderr so the lines survive output capture.
    let mut err = std::io::stderr().lock();
    let mut failed = Vec::new();
    for (k, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => writeln!(err, "criterion {:>2} PASS {name}: {detail}", k + 1).unwrap(),
            Err(why) => {
                writeln!(err, "criterion {:>2} FAIL {name}: {why}", k + 1).unwrap();
                failed.push(k + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
