use std::path::Path;

use exrob_core::criteria::CriterionId;
use exrob_core::explainers::MethodId;
use proptest::prelude::*;
use exrob_core::harness::*;

const LINEAR_POOL: &str = include_str!("../../../configs/linear-pool.json");
const BROKEN: &str = include_str!("../../../configs/broken-constant.json");

fn config(text: &str) -> RunConfig {
    RunConfig::from_json(text).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn frozen_linear_pool_is_robust() {
    let out = run_pipeline(&config(LINEAR_POOL)).unwrap();
    let s = &out.report.summary;
    assert!(s.robust, "{:?}", s.reasons);
    assert_eq!(s.emr_robust, [MethodId::Occlusion, MethodId::ExactShapley]);
    assert_eq!(s.er_robust, Some(true));
    assert_eq!(out.report.exit_code(), EXIT_ROBUST);
    assert_eq!(out.report.er.len(), 2);
    assert!(out.report.er.iter().all(|c| !c.informational));
    assert_eq!(out.report.recompute_summary(), *s);
}

#[test]
fn one_failing_method_blocks_the_verdict() {
    let mut cfg = config(LINEAR_POOL);
    cfg.methods.push(MethodEntry {
        method: MethodId::BrokenConstant,
        config: Default::default(),
    });
    let out = run_pipeline(&cfg).unwrap();
    let s = &out.report.summary;
    assert!(!s.robust);
    assert_eq!(s.emr_not_robust, [MethodId::BrokenConstant]);
    assert_eq!(s.er_robust, Some(true));
    assert_eq!(out.report.exit_code(), EXIT_NOT_ROBUST);
    let informational = out.report.er.iter().filter(|c| c.informational).count();
    assert_eq!(informational, 4);

    cfg.er_over_failed_methods = false;
    let out = run_pipeline(&cfg).unwrap();
    assert_eq!(out.report.er.len(), 2);
    assert!(!out.report.summary.robust);
}

#[test]
fn broken_constant_alone_is_not_robust() {
    let out = run_pipeline(&config(BROKEN)).unwrap();
    assert!(!out.report.summary.robust);
    assert_eq!(out.report.summary.er_robust, None);
    assert!(out.report.er.is_empty());
}

#[test]
fn runs_are_bit_identical_across_thread_counts() {
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (dir, threads) in dirs.iter().zip([1, 1, 4]) {
        let mut cfg = config(LINEAR_POOL);
        cfg.methods.push(MethodEntry {
            method: MethodId::KernelShap,
            config: Default::default(),
        });
        cfg.threads = Some(threads);
        run_to_dir(&cfg, dir.path()).unwrap();
    }
    for name in ["report.json", "distances.csv", "summary.md", "dataset.csv"] {
        let first = read(dirs[0].path(), name);
        for d in &dirs[1..] {
            assert!(first == read(d.path(), name), "{name} differs");
        }
    }
}

#[test]
fn echoed_config_reproduces_the_verdicts() {
    let mut cfg: RunConfig = serde_json::from_str(LINEAR_POOL).unwrap();
    cfg.tolerances = Default::default();
    let first = run_pipeline(&cfg).unwrap().report;
    assert!(first.config.tolerance_overrides.contains_key("occlusion"));
    assert!(first.config.tolerance_overrides.contains_key(&er_key(MethodId::Occlusion, MethodId::ExactShapley)));
    let echoed = RunConfig::from_json(&first.config.to_json().unwrap()).unwrap();
    let second = run_pipeline(&echoed).unwrap().report;
    assert_eq!(first.emr, second.emr);
    assert_eq!(first.er, second.er);
    assert_eq!(first.summary, second.summary);
}

#[test]
fn output_directory_contents() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_to_dir(&config(LINEAR_POOL), dir.path()).unwrap();
    for name in ["report.json", "distances.csv", "summary.md", "timings.json", "dataset.csv", "dataset.json", "models/planted.json"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let loaded = load_report(dir.path()).unwrap();
    assert_eq!(loaded.summary, out.report.summary);
    assert_eq!(loaded.schema, REPORT_SCHEMA);
    let csv = String::from_utf8(read(dir.path(), "distances.csv")).unwrap();
    assert!(csv.starts_with("criterion,method_a,method_b,pair_i,pair_j,d_input,d_output,d_expl\n"));
    let rows: usize = out
        .report
        .emr
        .iter()
        .flat_map(|b| &b.verdicts)
        .chain(out.report.er.iter().flat_map(|c| &c.verdicts))
        .map(|v| v.records.len())
        .sum();
    assert_eq!(csv.lines().count(), rows + 1);
    let md = render_markdown(&loaded);
    assert!(md.contains("**Verdict: robust**"));
    let timings: Timings = serde_json::from_slice(&read(dir.path(), "timings.json")).unwrap();
    assert!(timings.stages.contains_key("emr"));
}

#[test]
fn config_errors_carry_the_path() {
    let bad = LINEAR_POOL.replace("\"base\": 60", "\"base\": \"sixty\"");
    let err = RunConfig::from_json(&bad).unwrap_err().to_string();
    assert!(err.contains("pairs.base"), "{err}");
    let unknown = LINEAR_POOL.replacen("\"master_seed\"", "\"mastr_seed\": 1, \"master_seed\"", 1);
    assert!(RunConfig::from_json(&unknown).is_err());
    let mut cfg = config(LINEAR_POOL);
    cfg.tolerance_overrides.insert("nope".into(), serde_json::json!({}));
    assert!(cfg.validate().is_err());
}

#[test]
fn packaged_scenarios_run_inside_the_pipeline() {
    let mut cfg = config(BROKEN);
    cfg.scenarios = vec![exrob_core::scenarios::ScenarioId::RudinDistinctPredictions];
    let out = run_pipeline(&cfg).unwrap();
    assert_eq!(out.report.scenarios.len(), 1);
    assert!(out.report.scenarios[0].agreement);
}

#[test]
fn gradient_alone_is_similar_but_not_distinct() {
    let mut cfg = config(LINEAR_POOL);
    cfg.methods = vec![MethodEntry {
        method: MethodId::Gradient,
        config: Default::default(),
    }];
    let out = run_pipeline(&cfg).unwrap();
    let block = &out.report.emr[0];
    let pass = |id| block.verdicts.iter().find(|v| v.criterion == id).map(|v| v.pass);
    assert_eq!(pass(CriterionId::Emr1), Some(true));
    assert_eq!(pass(CriterionId::Emr2), Some(false));
    assert!(!out.report.summary.robust);
    assert!(out.report.er.is_empty());
}

#[test]
fn no_scenarios_means_no_scenario_section() {
    let out = run_pipeline(&config(LINEAR_POOL)).unwrap();
    let json = serde_json::to_value(&out.report).unwrap();
    assert!(json.get("scenarios").is_none());
    assert!(!render_markdown(&out.report).contains("## Scenarios"));
    assert_eq!(out.report.exit_code(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn exit_code_follows_the_gating_rule(mask in 1u8..128) {
        let mut cfg = config(LINEAR_POOL);
        cfg.methods = MethodId::ALL
            .iter()
            .enumerate()
            .filter(|(k, _)| mask >> k & 1 == 1)
            .map(|(_, &method)| MethodEntry { method, config: Default::default() })
            .collect();
        let r = run_pipeline(&cfg).unwrap().report;
        prop_assert_eq!(r.emr.len(), cfg.methods.len());
        prop_assert_eq!(&r.recompute_summary(), &r.summary);
        let all_emr = r.emr.iter().all(|b| b.robust);
        let all_er = r.er.iter().all(|c| c.robust);
        prop_assert_eq!(r.summary.robust, all_emr && all_er && r.emr.len() >= 2);
        prop_assert_eq!(r.exit_code(), if r.summary.robust { EXIT_ROBUST } else { EXIT_NOT_ROBUST });
        for c in &r.er {
            let a = r.emr.iter().find(|b| b.method == c.a).unwrap().robust;
            let b = r.emr.iter().find(|b| b.method == c.b).unwrap().robust;
            prop_assert_eq!(c.informational, !(a && b));
        }
    }
}
