use serde::Deserialize;

use super::{with_zero_baseline, ArmSpec, Recorder, ScenarioFixture, ScenarioResult};
use crate::criteria::{check_emr1, Case, CriterionId, PairSample};
use crate::error::{Error, Result};
use crate::explainers::{explain_gradient, MethodId};
use crate::metrics::{InputMetric, MetricSpec};
use crate::model::{InputOutputPair, Model};
use crate::seeds::derive_seed;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    arms: Vec<ArmSpec>,
    /// Every coordinate of the shift vector.
    shift: f64,
    /// Number of inputs explained before and after the shift.
    cases: usize,
    methods: Vec<MethodId>,
    /// Arm that also runs with a zero shift as the degenerate control.
    control: String,
}

/// Pairs `(f, x)` with `(g, x + s)` where `g` is `f` with its first-layer
/// bias compensating the shift, so both produce identical outputs.
fn shifted_sample<'m>(f: &'m Model, g: &'m Model, xs: &[Vec<f64>], s: &[f64]) -> Result<PairSample<'m>> {
    let n = xs.len();
    let mut cases = Vec::with_capacity(2 * n);
    for (k, x) in xs.iter().enumerate() {
        cases.push(Case {
            model: f,
            pair: InputOutputPair::new(f, k, x.clone())?,
        });
    }
    for (k, x) in xs.iter().enumerate() {
        let shifted: Vec<f64> = x.iter().zip(s).map(|(a, b)| a + b).collect();
        cases.push(Case {
            model: g,
            pair: InputOutputPair::new(g, n + k, shifted)?,
        });
    }
    PairSample::new(cases, (0..n).map(|k| (k, n + k)).collect())
}

pub fn run_kindermans_shift(fixture: &ScenarioFixture) -> Result<ScenarioResult> {
    let p: Params = fixture.params()?;
    if p.cases == 0 {
        return Err(Error::param("cases", "must be >= 1"));
    }
    let metric = MetricSpec::default().with_input(InputMetric::EuclideanModuloTranslation);
    let mut rec = Recorder::new(fixture);
    let mut runs: Vec<(String, &ArmSpec, f64)> = p
        .arms
        .iter()
        .map(|a| (a.name.clone(), a, p.shift))
        .collect();
    let control = p
        .arms
        .iter()
        .find(|a| a.name == p.control)
        .ok_or_else(|| Error::Config(format!("control arm `{}` not defined", p.control)))?;
    runs.push(("control".to_string(), control, 0.0));

    for (name, arm, shift) in runs {
        let (data, f) = arm.build(derive_seed(fixture.seed, &format!("{}/data", arm.name)))?;
        let d = f.input_dim;
        let s = vec![shift; d];
        let g = f.shift_compensated(&s)?;
        let xs: Vec<Vec<f64>> = data.features.iter().take(p.cases).cloned().collect();
        let sample = shifted_sample(&f, &g, &xs, &s)?;
        let tol = arm.tolerances(&fixture.tolerances);
        let config = with_zero_baseline(&fixture.explainer, d, derive_seed(fixture.seed, &name));

        let d_pair = sample.pair_distances(&metric)?;
        let max = |v: &mut dyn Iterator<Item = f64>| v.fold(0.0f64, f64::max);
        rec.measure(format!("{name}/max_output_distance"), max(&mut d_pair.iter().map(|p| p.output)));
        rec.measure(format!("{name}/max_input_distance"), max(&mut d_pair.iter().map(|p| p.input)));

        // Chain-rule identities on the raw attributions.
        let n = xs.len();
        let mut grad_dev = 0.0f64;
        let mut ixg_dev = 0.0f64;
        for k in 0..n {
            let before = &sample.cases[k].pair;
            let after = &sample.cases[n + k].pair;
            let gf = explain_gradient(&f, before)?.attribution;
            let gg = explain_gradient(&g, after)?.attribution;
            for i in 0..d {
                grad_dev = grad_dev.max((gg[i] - gf[i]).abs());
                let ixg_f = before.x[i] * gf[i];
                let ixg_g = after.x[i] * gg[i];
                ixg_dev = ixg_dev.max((ixg_g - ixg_f - s[i] * gf[i]).abs());
            }
        }
        rec.measure(format!("{name}/max_gradient_deviation"), grad_dev);
        rec.measure(format!("{name}/max_shift_identity_deviation"), ixg_dev);

        for &method in &p.methods {
            let expls = sample.explain(method, &config)?;
            let v = rec.verdict(&name, CriterionId::Emr1, &[method], check_emr1(method, &sample, &expls, tol, &metric))?;
            if let Some(v) = v {
                let (lo, hi) = v
                    .records
                    .iter()
                    .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r.d_expl), hi.max(r.d_expl)));
                rec.measure(format!("{name}/{method}/min_explanation_distance"), lo);
                rec.measure(format!("{name}/{method}/max_explanation_distance"), hi);
            }
        }
    }
    Ok(rec.finish(None, None))
}
