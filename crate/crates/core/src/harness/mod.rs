//! The full analysis: establish EMR for every method in the pool, then
//! compare the methods that passed under ER, and report.

mod config;
mod report;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::criteria::{
    check_emr1, check_emr2, check_emr2_relaxed, check_emr_global, check_er1_local,
    check_er2_local, check_er2_relaxed_local, check_er_global, CheckSet, CriterionId,
    CriterionVerdict, PairSample, PairSamplePlan, Skipped, ToleranceConfig,
};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::explainers::{explain_global, ExplainerConfig, Explanation, MethodId};
use crate::model::{Model, Origin, ProbeSet};
use crate::scenarios::{run_scenario, ScenarioFixture, ScenarioResult};
use crate::seeds::derive_seed;

pub use config::{
    er_key, GlobalConfig, MethodEntry, ModelEntry, PairsConfig, RunConfig, CONFIG_SCHEMA,
    OUTPUT_DIR_ENV,
};
pub use report::{render_markdown, write_distances, write_verdicts};

pub const REPORT_SCHEMA: &str = "report/1";

/// Exit status of a run: robust, not robust, or execution error.
pub const EXIT_ROBUST: i32 = 0;
pub const EXIT_NOT_ROBUST: i32 = 2;
pub const EXIT_ERROR: i32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl Default for ToolInfo {
    fn default() -> Self {
        ToolInfo {
            name: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub id: String,
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub id: String,
    pub architecture: String,
    pub origin: Origin,
    pub accuracy: f64,
}

/// Every EMR verdict of one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmrBlock {
    pub method: MethodId,
    /// All required criteria evaluated and passed.
    pub robust: bool,
    pub verdicts: Vec<CriterionVerdict>,
    pub unevaluated: Vec<Skipped>,
}

/// ER verdicts of method `a` against `b` (after `φ` on `b`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErCell {
    pub a: MethodId,
    pub b: MethodId,
    /// At least one of the two methods failed EMR; the cell does not count
    /// towards the summary.
    pub informational: bool,
    pub robust: bool,
    pub verdicts: Vec<CriterionVerdict>,
    pub unevaluated: Vec<Skipped>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub emr_robust: Vec<MethodId>,
    pub emr_not_robust: Vec<MethodId>,
    /// ER over the EMR-robust methods; `None` with fewer than two of them.
    pub er_robust: Option<bool>,
    pub robust: bool,
    pub reasons: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub tool: ToolInfo,
    /// The configuration as run, with every resolved threshold pinned into
    /// `tolerance_overrides` as an absolute value.
    pub config: RunConfig,
    pub dataset: DatasetSummary,
    pub models: Vec<ModelSummary>,
    pub emr: Vec<EmrBlock>,
    pub er: Vec<ErCell>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scenarios: Vec<ScenarioResult>,
    pub summary: Summary,
}

impl RunReport {
    /// Summary derived from the EMR blocks and ER cells alone.
    pub fn recompute_summary(&self) -> Summary {
        summarize(&self.emr, &self.er)
    }

    pub fn exit_code(&self) -> i32 {
        if self.summary.robust {
            EXIT_ROBUST
        } else {
            EXIT_NOT_ROBUST
        }
    }
}

/// Wall-clock seconds per stage, kept out of the report so reports are
/// reproducible byte for byte.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: BTreeMap<String, f64>,
}

pub struct RunOutcome {
    pub report: RunReport,
    pub timings: Timings,
}

fn summarize(emr: &[EmrBlock], er: &[ErCell]) -> Summary {
    let emr_robust: Vec<MethodId> = emr.iter().filter(|b| b.robust).map(|b| b.method).collect();
    let emr_not_robust: Vec<MethodId> = emr.iter().filter(|b| !b.robust).map(|b| b.method).collect();
    let mut reasons = Vec::new();
    for b in emr.iter().filter(|b| !b.robust) {
        let failed: Vec<String> = b
            .verdicts
            .iter()
            .filter(|v| !v.pass)
            .map(|v| v.criterion.to_string())
            .chain(b.unevaluated.iter().map(|s| format!("{} unevaluated", s.criterion)))
            .collect();
        reasons.push(format!("{} not EMR-robust: {}", b.method, failed.join(", ")));
    }
    let er_robust = if emr_robust.len() < 2 {
        reasons.push(format!(
            "ER needs at least two EMR-robust methods, have {}",
            emr_robust.len()
        ));
        None
    } else {
        let cells: Vec<&ErCell> = er
            .iter()
            .filter(|c| emr_robust.contains(&c.a) && emr_robust.contains(&c.b))
            .collect();
        for c in cells.iter().filter(|c| !c.robust) {
            reasons.push(format!("ER fails for {} against {}", c.a, c.b));
        }
        Some(!cells.is_empty() && cells.iter().all(|c| c.robust))
    };
    let robust = emr_not_robust.is_empty() && er_robust == Some(true);
    Summary {
        emr_robust,
        emr_not_robust,
        er_robust,
        robust,
        reasons,
    }
}

/// Collects verdicts; insufficient samples become unevaluated entries.
#[derive(Default)]
struct Block {
    verdicts: Vec<CriterionVerdict>,
    unevaluated: Vec<Skipped>,
}

impl Block {
    fn push(&mut self, id: CriterionId, methods: &[MethodId], r: Result<CriterionVerdict>) -> Result<()> {
        match r {
            Ok(v) => self.verdicts.push(v),
            Err(e @ Error::InsufficientSample { .. }) => self.unevaluated.push(Skipped {
                criterion: id,
                methods: methods.to_vec(),
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
        Ok(())
    }

    fn extend(&mut self, set: CheckSet) {
        self.verdicts.extend(set.verdicts);
        self.unevaluated.extend(set.skipped);
    }

    fn robust(&self) -> bool {
        self.unevaluated.is_empty() && self.verdicts.iter().all(|v| v.pass)
    }

    fn pin_into(&self, tol: &mut ToleranceConfig) -> Result<()> {
        for v in &self.verdicts {
            for (k, &value) in &v.thresholds {
                tol.pin(k, value)?;
            }
        }
        Ok(())
    }
}

struct Stage1 {
    data: Dataset,
    models: Vec<Model>,
    configs: Vec<ExplainerConfig>,
}

fn build(config: &RunConfig) -> Result<Stage1> {
    let seed = config.master_seed;
    let data = config.dataset.generate(derive_seed(seed, "dataset"))?;
    let mut models = Vec::new();
    for entry in &config.models {
        let spec = match &entry.spec {
            crate::model::ModelSpec::Trained { seed: s, .. } => {
                entry.spec.with_seed(derive_seed(seed, &format!("model/{}/{s}", entry.name)))
            }
            other => other.clone(),
        };
        let mut m = spec.build(&data)?;
        m.id = entry.name.clone();
        models.push(m);
    }
    let copies: Vec<Model> = config
        .models
        .iter()
        .zip(&models)
        .flat_map(|(e, m)| e.randomized.iter().map(move |&s| m.randomize_weights(s)))
        .collect();
    models.extend(copies);
    let mean = data.mean();
    let configs = config
        .methods
        .iter()
        .map(|m| {
            let mut c = m.config.clone();
            c.seed = derive_seed(seed, &format!("explain/{}", m.method));
            if c.baseline.is_none() && m.method.needs_baseline() {
                c.baseline = Some(mean.clone());
            }
            c
        })
        .collect();
    Ok(Stage1 {
        data,
        models,
        configs,
    })
}

pub fn run_pipeline(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| run_stages(config)),
        None => run_stages(config),
    }
}

fn run_stages(config: &RunConfig) -> Result<RunOutcome> {
    let mut timings = Timings::default();
    let mut clock = Instant::now();
    let mut lap = |timings: &mut Timings, name: &str| {
        timings.stages.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    // Stage 1: data, models, pair sample, probe.
    let s1 = build(config)?;
    let primary = &s1.models[0];
    let base: Vec<Vec<f64>> = s1.data.features.iter().take(config.pairs.base).cloned().collect();
    let plan = PairSamplePlan {
        similar: config.pairs.similar,
        noise: config.pairs.noise,
        distinct: config.pairs.distinct,
        min_output: config.pairs.min_output,
        class_flip: config.pairs.class_flip,
        seed: derive_seed(config.master_seed, "pairs"),
    };
    let sample = PairSample::from_plan(primary, &base, &plan)?;
    let model_refs: Vec<&Model> = s1.models.iter().collect();
    let global = config.global.enabled && model_refs.len() >= 2;
    let probe = if global {
        Some(ProbeSet::gaussian(
            primary.input_dim,
            config.global.probe_size,
            config.global.probe_scale,
            derive_seed(config.master_seed, "probe"),
        )?)
    } else {
        None
    };
    let methods: Vec<MethodId> = config.methods.iter().map(|m| m.method).collect();
    let local: Vec<Vec<Explanation>> = methods
        .iter()
        .zip(&s1.configs)
        .map(|(&m, c)| sample.explain(m, c))
        .collect::<Result<_>>()?;
    let globals: Option<Vec<Vec<Explanation>>> = match &probe {
        Some(p) => Some(
            methods
                .iter()
                .zip(&s1.configs)
                .map(|(&m, c)| model_refs.iter().map(|f| explain_global(m, f, p, c)).collect())
                .collect::<Result<_>>()?,
        ),
        None => None,
    };
    lap(&mut timings, "build");

    // Stage 2: EMR per method.
    // Execution settings stay out of the echo so reports do not depend on them.
    let mut echo = config.clone();
    echo.threads = None;
    echo.output_dir = None;
    let mut emr = Vec::new();
    for (k, &m) in methods.iter().enumerate() {
        let tol = config.tolerances_for(m.as_str())?;
        let metric = &config.metric;
        let e = &local[k];
        let mut block = Block::default();
        block.push(CriterionId::Emr1, &[m], check_emr1(m, &sample, e, &tol, metric))?;
        block.push(CriterionId::Emr2, &[m], check_emr2(m, &sample, e, &tol, metric))?;
        block.push(
            CriterionId::Emr2Relaxed,
            &[m],
            check_emr2_relaxed(m, &sample, e, &tol, metric),
        )?;
        if let (Some(p), Some(g)) = (&probe, &globals) {
            block.extend(check_emr_global(m, &model_refs, &g[k], p, &tol, metric)?);
        }
        let mut pinned = tol.clone();
        block.pin_into(&mut pinned)?;
        echo.tolerance_overrides
            .insert(m.to_string(), serde_json::to_value(&pinned)?);
        emr.push(EmrBlock {
            method: m,
            robust: block.robust(),
            verdicts: block.verdicts,
            unevaluated: block.unevaluated,
        });
    }
    lap(&mut timings, "emr");

    // Stage 3: ER over ordered method pairs.
    let mut er = Vec::new();
    for (ia, &a) in methods.iter().enumerate() {
        for (ib, &b) in methods.iter().enumerate() {
            if ia == ib {
                continue;
            }
            let informational = !(emr[ia].robust && emr[ib].robust);
            if informational && !config.er_over_failed_methods {
                continue;
            }
            let key = er_key(a, b);
            let tol = config.tolerances_for(&key)?;
            let (ea, eb) = ((a, local[ia].as_slice()), (b, local[ib].as_slice()));
            let (metric, tt) = (&config.metric, &config.transforms);
            let pair = [a, b];
            let mut block = Block::default();
            block.push(CriterionId::Er1Local, &pair, check_er1_local(ea, eb, &sample, &tol, metric, tt))?;
            block.push(CriterionId::Er2Local, &pair, check_er2_local(ea, eb, &sample, &tol, metric, tt))?;
            block.push(
                CriterionId::Er2RelaxedLocal,
                &pair,
                check_er2_relaxed_local(ea, eb, &sample, &tol, metric, tt),
            )?;
            if let (Some(p), Some(g)) = (&probe, &globals) {
                block.extend(check_er_global(
                    (a, &g[ia]),
                    (b, &g[ib]),
                    &model_refs,
                    p,
                    &tol,
                    metric,
                    tt,
                )?);
            }
            let mut pinned = tol.clone();
            block.pin_into(&mut pinned)?;
            echo.tolerance_overrides.insert(key, serde_json::to_value(&pinned)?);
            er.push(ErCell {
                a,
                b,
                informational,
                robust: block.robust(),
                verdicts: block.verdicts,
                unevaluated: block.unevaluated,
            });
        }
    }
    lap(&mut timings, "er");

    // Stage 4: packaged scenarios.
    let scenarios = config
        .scenarios
        .iter()
        .map(|&id| run_scenario(&ScenarioFixture::builtin(id)?))
        .collect::<Result<Vec<_>>>()?;
    lap(&mut timings, "scenarios");

    let summary = summarize(&emr, &er);
    let report = RunReport {
        schema: REPORT_SCHEMA.to_string(),
        tool: ToolInfo::default(),
        config: echo,
        dataset: DatasetSummary {
            id: s1.data.id(),
            n: s1.data.len(),
            dim: s1.data.dim,
            classes: s1.data.classes,
        },
        models: s1
            .models
            .iter()
            .map(|m| ModelSummary {
                id: m.id.clone(),
                architecture: m.architecture.label(),
                origin: m.provenance.origin,
                accuracy: m.accuracy(&s1.data),
            })
            .collect(),
        emr,
        er,
        scenarios,
        summary,
    };
    Ok(RunOutcome { report, timings })
}

/// Runs the pipeline and writes `report.json`, `distances.csv`,
/// `summary.md`, `timings.json`, the dataset and every model into `dir`.
pub fn run_to_dir(config: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    let mut outcome = run_pipeline(config)?;
    let start = Instant::now();
    std::fs::create_dir_all(dir.join("models"))?;
    let s1 = build(config)?;
    s1.data.write(dir, "dataset")?;
    for m in &s1.models {
        std::fs::write(dir.join("models").join(format!("{}.json", m.id)), m.to_json()?)?;
    }
    let mut json = serde_json::to_string_pretty(&outcome.report)?;
    json.push('\n');
    std::fs::write(dir.join("report.json"), json)?;
    write_distances(&outcome.report, &mut std::fs::File::create(dir.join("distances.csv"))?)?;
    std::fs::write(dir.join("summary.md"), render_markdown(&outcome.report))?;
    outcome
        .timings
        .stages
        .insert("write".into(), start.elapsed().as_secs_f64());
    let mut t = serde_json::to_string_pretty(&outcome.timings)?;
    t.push('\n');
    std::fs::write(dir.join("timings.json"), t)?;
    Ok(outcome)
}

/// Loads `report.json` from a run directory.
pub fn load_report(dir: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(dir.join("report.json"))?;
    let report: RunReport = serde_json::from_str(&text)?;
    if report.schema != REPORT_SCHEMA {
        return Err(Error::Config(format!(
            "report schema `{}`, expected `{REPORT_SCHEMA}`",
            report.schema
        )));
    }
    Ok(report)
}
