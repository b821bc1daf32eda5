use serde::{Deserialize, Serialize};

use super::{with_zero_baseline, ArmSpec, Recorder, ScenarioFixture, ScenarioResult};
use crate::criteria::{
    check_er1_local, check_er2_local, check_er2_relaxed_local, CriterionId, PairSample,
    PairSamplePlan,
};
use crate::error::{Error, Result};
use crate::explainers::MethodId;
use crate::metrics::{MetricSpec, TransformTable};
use crate::seeds::derive_seed;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    arms: Vec<ArmSpec>,
    base: usize,
    plan: PairSamplePlan,
    methods: Vec<MethodId>,
}

/// One ordered method pair of the agreement matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementCell {
    pub arm: String,
    pub a: MethodId,
    pub b: MethodId,
    pub er1_pass: bool,
    pub er1_violation_fraction: f64,
    pub er1_mean_distance: f64,
    pub er1_max_distance: f64,
    pub er2_pass: Option<bool>,
    pub er2r_pass: Option<bool>,
}

pub fn run_method_disagreement(fixture: &ScenarioFixture) -> Result<ScenarioResult> {
    let p: Params = fixture.params()?;
    if p.methods.len() < 2 {
        return Err(Error::param("methods", "needs at least 2 local methods"));
    }
    let metric = MetricSpec::default();
    let transforms = TransformTable::default();
    let mut rec = Recorder::new(fixture);
    let mut matrix = Vec::new();
    for arm in &p.arms {
        let (data, model) = arm.build(derive_seed(fixture.seed, &format!("{}/data", arm.name)))?;
        let base: Vec<Vec<f64>> = data.features.iter().take(p.base).cloned().collect();
        let plan = PairSamplePlan {
            seed: derive_seed(fixture.seed, &format!("{}/pairs", arm.name)),
            ..p.plan.clone()
        };
        let sample = PairSample::from_plan(&model, &base, &plan)?;
        let tol = arm.tolerances(&fixture.tolerances);
        let expls = p
            .methods
            .iter()
            .map(|&m| {
                let config = with_zero_baseline(
                    &fixture.explainer,
                    model.input_dim,
                    derive_seed(fixture.seed, &format!("{}/{m}", arm.name)),
                );
                sample.explain(m, &config)
            })
            .collect::<Result<Vec<_>>>()?;
        for (ia, &a) in p.methods.iter().enumerate() {
            for (ib, &b) in p.methods.iter().enumerate() {
                let ea = (a, expls[ia].as_slice());
                let eb = (b, expls[ib].as_slice());
                let pair = [a, b];
                let er1 = check_er1_local(ea, eb, &sample, tol, &metric, &transforms)?;
                let summary = er1.distances.clone();
                let cell_er1 = (er1.pass, er1.violation_fraction());
                rec.verdict(&arm.name, CriterionId::Er1Local, &pair, Ok(er1))?;
                let er2 = rec
                    .verdict(&arm.name, CriterionId::Er2Local, &pair, check_er2_local(ea, eb, &sample, tol, &metric, &transforms))?
                    .map(|v| v.pass);
                let er2r = rec
                    .verdict(
                        &arm.name,
                        CriterionId::Er2RelaxedLocal,
                        &pair,
                        check_er2_relaxed_local(ea, eb, &sample, tol, &metric, &transforms),
                    )?
                    .map(|v| v.pass);
                let (mean, max) = summary.map(|s| (s.mean, s.max)).unwrap_or((f64::NAN, f64::NAN));
                rec.measure(format!("{}/{a}/{b}/er1_violation_fraction", arm.name), cell_er1.1);
                rec.measure(format!("{}/{a}/{b}/er1_max_distance", arm.name), max);
                matrix.push(AgreementCell {
                    arm: arm.name.clone(),
                    a,
                    b,
                    er1_pass: cell_er1.0,
                    er1_violation_fraction: cell_er1.1,
                    er1_mean_distance: mean,
                    er1_max_distance: max,
                    er2_pass: er2,
                    er2r_pass: er2r,
                });
            }
        }
    }
    Ok(rec.finish(Some(matrix), None))
}
