use serde::Deserialize;

use super::{with_zero_baseline, ArmSpec, Recorder, ScenarioFixture, ScenarioResult};
use crate::criteria::{check_emr_global_over, CriterionId};
use crate::error::{Error, Result};
use crate::explainers::{explain_global, MethodId};
use crate::metrics::{model_divergence, MetricSpec};
use crate::model::{Model, ProbeSet};
use crate::seeds::derive_seed;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    arm: ArmSpec,
    /// Seeds of the weight-randomized copies.
    randomized: Vec<u64>,
    probe_size: usize,
    probe_scale: f64,
    methods: Vec<MethodId>,
}

/// Trained model against weight-randomized copies of itself, plus an
/// identical clone as the control pair.
pub fn run_adebayo_randomization(fixture: &ScenarioFixture) -> Result<ScenarioResult> {
    let p: Params = fixture.params()?;
    if p.randomized.is_empty() {
        return Err(Error::param("randomized", "needs at least one randomized copy"));
    }
    let (_, trained) = p.arm.build(derive_seed(fixture.seed, "data"))?;
    let clone = Model {
        id: format!("{}~clone", trained.id),
        ..trained.clone()
    };
    let randomized: Vec<Model> = p.randomized.iter().map(|&s| trained.randomize_weights(s)).collect();
    let mut models: Vec<&Model> = vec![&trained, &clone];
    models.extend(randomized.iter());
    let probe = ProbeSet::gaussian(
        trained.input_dim,
        p.probe_size,
        p.probe_scale,
        derive_seed(fixture.seed, "probe"),
    )?;
    let pairs: Vec<(usize, usize)> = (1..models.len()).map(|j| (0, j)).collect();
    let tol = p.arm.tolerances(&fixture.tolerances);
    let metric = MetricSpec::default();
    let mut rec = Recorder::new(fixture);
    let arm = p.arm.name.as_str();

    rec.measure(format!("{arm}/clone_divergence"), model_divergence(&trained, &clone, &probe)?);
    let min_div = randomized
        .iter()
        .map(|r| model_divergence(&trained, r, &probe))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    rec.measure(format!("{arm}/min_randomized_divergence"), min_div);

    for &method in &p.methods {
        let config = with_zero_baseline(&fixture.explainer, trained.input_dim, derive_seed(fixture.seed, method.as_str()));
        let expls = models
            .iter()
            .map(|m| explain_global(method, m, &probe, &config))
            .collect::<Result<Vec<_>>>()?;
        let set = check_emr_global_over(method, &models, &expls, &pairs, &probe, tol, &metric)?;
        for v in set.verdicts {
            let id = v.criterion;
            if id == CriterionId::Emr2Global {
                let clone_qualifies = v.records.first().is_some_and(|r| r.qualifies);
                rec.measure(format!("{arm}/{method}/clone_qualifies"), f64::from(u8::from(clone_qualifies)));
                let min_d = v
                    .records
                    .iter()
                    .skip(1)
                    .map(|r| r.d_expl)
                    .fold(f64::INFINITY, f64::min);
                rec.measure(format!("{arm}/{method}/min_randomized_distance"), min_d);
            }
            rec.verdict(arm, id, &[method], Ok(v))?;
        }
        for s in set.skipped {
            rec.verdict(
                arm,
                s.criterion,
                &[method],
                Err(Error::InsufficientSample {
                    criterion: s.criterion.to_string(),
                    required: 1,
                    actual: 0,
                }),
            )?;
        }
    }
    Ok(rec.finish(None, None))
}
