use serde::Deserialize;

use super::{with_zero_baseline, ArmSpec, Recorder, ScenarioFixture, ScenarioResult};
use crate::criteria::{check_emr2, CriterionId, PairSample, PairSamplePlan};
use crate::error::{Error, Result};
use crate::explainers::MethodId;
use crate::metrics::MetricSpec;
use crate::seeds::derive_seed;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    arm: ArmSpec,
    base: usize,
    plan: PairSamplePlan,
    /// Fewer accepted class-flip pairs than this is an error.
    min_pairs: usize,
    methods: Vec<MethodId>,
}

/// EMR-2 over pairs with opposite confident predictions.
pub fn run_rudin_distinct_predictions(fixture: &ScenarioFixture) -> Result<ScenarioResult> {
    let p: Params = fixture.params()?;
    let (data, model) = p.arm.build(derive_seed(fixture.seed, "data"))?;
    let base: Vec<Vec<f64>> = data.features.iter().take(p.base).cloned().collect();
    let plan = PairSamplePlan {
        seed: derive_seed(fixture.seed, "pairs"),
        ..p.plan.clone()
    };
    let sample = PairSample::from_plan(&model, &base, &plan)?;
    let flips = sample.pairs.len() - plan.similar;
    if flips < p.min_pairs {
        return Err(Error::InsufficientSample {
            criterion: CriterionId::Emr2.to_string(),
            required: p.min_pairs,
            actual: flips,
        });
    }
    // Control: the same cases paired with themselves, so nothing is distinct.
    let control = PairSample::new(
        sample.cases.clone(),
        (0..base.len()).map(|i| (i, i)).collect(),
    )?
    .with_reference(sample.reference.clone())?;

    let tol = p.arm.tolerances(&fixture.tolerances);
    let metric = MetricSpec::default();
    let mut rec = Recorder::new(fixture);
    let arm = p.arm.name.clone();
    rec.measure(format!("{arm}/class_flip_pairs"), flips as f64);
    let min_js = sample
        .pair_distances(&metric)?
        .iter()
        .skip(plan.similar)
        .map(|d| d.output)
        .fold(f64::INFINITY, f64::min);
    rec.measure(format!("{arm}/min_flip_output_distance"), min_js);

    for &method in &p.methods {
        let config = with_zero_baseline(&fixture.explainer, model.input_dim, derive_seed(fixture.seed, method.as_str()));
        let expls = sample.explain(method, &config)?;
        if let Some(v) = rec.verdict(&arm, CriterionId::Emr2, &[method], check_emr2(method, &sample, &expls, tol, &metric))? {
            let min_d = v
                .records
                .iter()
                .filter(|r| r.qualifies)
                .map(|r| r.d_expl)
                .fold(f64::INFINITY, f64::min);
            rec.measure(format!("{arm}/{method}/min_distinct_distance"), min_d);
        }
        rec.verdict("control", CriterionId::Emr2, &[method], check_emr2(method, &control, &expls, tol, &metric))?;
    }
    Ok(rec.finish(None, None))
}
