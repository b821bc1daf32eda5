use serde::{Deserialize, Serialize};

use super::{with_zero_baseline, ArmSpec, Recorder, ScenarioFixture, ScenarioResult};
use crate::criteria::{
    check_emr1, check_emr2, check_emr2_relaxed, check_er1_local, CriterionId, PairSample,
    PairSamplePlan,
};
use crate::error::{Error, Result};
use crate::explainers::{Explanation, MethodId};
use crate::metrics::{attribution_distance, ExplanationMetric, MetricSpec, TransformTable};
use crate::seeds::derive_seed;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    arms: Vec<ArmSpec>,
    base: usize,
    plan: PairSamplePlan,
    methods: Vec<MethodId>,
    /// Arm re-run with only this method as the degenerate control.
    control: String,
    control_method: MethodId,
    /// Distance used for correctness against the planted attribution.
    #[serde(default)]
    correctness_metric: ExplanationMetric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: MethodId,
    /// Mean distance to the planted attribution under the correctness metric.
    pub error: f64,
    /// Mean fulfilment over the evaluated EMR verdicts and ER-1 against
    /// every other pool method.
    pub fulfilment: f64,
    /// 1 = most correct.
    pub correctness_rank: f64,
    /// 1 = most fulfilling.
    pub fulfilment_rank: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub arm: String,
    pub scores: Vec<MethodScore>,
    /// Spearman correlation of fulfilment with correctness (negated error);
    /// `None` when undefined.
    pub spearman: Option<f64>,
}

/// Ranks with ties averaged; rank 1 for the largest value.
fn ranks_desc(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks_desc(a), ranks_desc(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Strictly worst: `worst` beats every other entry under `worse`.
fn strictly_worst(scores: &[MethodScore], m: MethodId, worse: impl Fn(&MethodScore, &MethodScore) -> bool) -> bool {
    let Some(target) = scores.iter().find(|s| s.method == m) else {
        return false;
    };
    scores.iter().filter(|s| s.method != m).all(|s| worse(target, s))
}

fn score_arm(
    rec: &mut Recorder<'_>,
    arm_name: &str,
    arm: &ArmSpec,
    fixture: &ScenarioFixture,
    p: &Params,
    methods: &[MethodId],
) -> Result<CorrelationReport> {
    let (data, model) = arm.build(derive_seed(fixture.seed, &format!("{}/data", arm.name)))?;
    let truth = data.ground_truth.as_ref().ok_or(Error::MissingGroundTruth)?;
    let base: Vec<Vec<f64>> = data.features.iter().take(p.base).cloned().collect();
    let plan = PairSamplePlan {
        seed: derive_seed(fixture.seed, &format!("{}/pairs", arm.name)),
        ..p.plan.clone()
    };
    let sample = PairSample::from_plan(&model, &base, &plan)?;
    let tol = arm.tolerances(&fixture.tolerances);
    let metric = MetricSpec::default();
    let transforms = TransformTable::default();
    let expls: Vec<Vec<Explanation>> = methods
        .iter()
        .map(|&m| {
            let config = with_zero_baseline(
                &fixture.explainer,
                model.input_dim,
                derive_seed(fixture.seed, &format!("{}/{m}", arm.name)),
            );
            sample.explain(m, &config)
        })
        .collect::<Result<_>>()?;

    let mut errors = Vec::new();
    let mut fulfil = Vec::new();
    for (ia, &m) in methods.iter().enumerate() {
        let mut err = 0.0;
        for (k, x) in base.iter().enumerate() {
            err += attribution_distance(&expls[ia][k].attribution, &truth.attribution(x), p.correctness_metric)?;
        }
        errors.push(err / base.len() as f64);

        let mut scores = Vec::new();
        let e = expls[ia].as_slice();
        for (id, r) in [
            (CriterionId::Emr1, check_emr1(m, &sample, e, tol, &metric)),
            (CriterionId::Emr2, check_emr2(m, &sample, e, tol, &metric)),
            (CriterionId::Emr2Relaxed, check_emr2_relaxed(m, &sample, e, tol, &metric)),
        ] {
            if let Some(v) = rec.verdict(arm_name, id, &[m], r)? {
                scores.push(v.fulfilment());
            }
        }
        for (ib, &other) in methods.iter().enumerate() {
            if ib == ia {
                continue;
            }
            let r = check_er1_local((m, e), (other, &expls[ib]), &sample, tol, &metric, &transforms);
            if let Some(v) = rec.verdict(arm_name, CriterionId::Er1Local, &[m, other], r)? {
                scores.push(v.fulfilment());
            }
        }
        fulfil.push(if scores.is_empty() {
            0.0
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        });
    }
    let neg_err: Vec<f64> = errors.iter().map(|e| -e).collect();
    let (cr, fr) = (ranks_desc(&neg_err), ranks_desc(&fulfil));
    let scores: Vec<MethodScore> = methods
        .iter()
        .enumerate()
        .map(|(i, &method)| MethodScore {
            method,
            error: errors[i],
            fulfilment: fulfil[i],
            correctness_rank: cr[i],
            fulfilment_rank: fr[i],
        })
        .collect();
    let rho = spearman(&fulfil, &neg_err);
    Ok(CorrelationReport {
        arm: arm_name.to_string(),
        scores,
        spearman: rho,
    })
}

pub fn run_groundtruth_correlation(fixture: &ScenarioFixture) -> Result<ScenarioResult> {
    let p: Params = fixture.params()?;
    let mut rec = Recorder::new(fixture);
    let mut reports = Vec::new();
    for arm in &p.arms {
        let report = score_arm(&mut rec, &arm.name, arm, fixture, &p, &p.methods)?;
        let name = &arm.name;
        for s in &report.scores {
            rec.measure(format!("{name}/{}/error", s.method), s.error);
            rec.measure(format!("{name}/{}/fulfilment", s.method), s.fulfilment);
        }
        let bc = MethodId::BrokenConstant;
        let last_c = strictly_worst(&report.scores, bc, |t, s| t.error > s.error);
        let last_f = strictly_worst(&report.scores, bc, |t, s| t.fulfilment < s.fulfilment);
        rec.measure(format!("{name}/broken_constant_last_correctness"), f64::from(u8::from(last_c)));
        rec.measure(format!("{name}/broken_constant_last_fulfilment"), f64::from(u8::from(last_f)));
        if let Some(r) = report.spearman {
            rec.measure(format!("{name}/spearman"), r);
        }
        reports.push(report);
    }
    let control = p
        .arms
        .iter()
        .find(|a| a.name == p.control)
        .ok_or_else(|| Error::Config(format!("control arm `{}` not defined", p.control)))?;
    let report = score_arm(&mut rec, "control", control, fixture, &p, &[p.control_method])?;
    rec.measure("control/spearman_defined", f64::from(u8::from(report.spearman.is_some())));
    reports.push(report);
    Ok(rec.finish(None, Some(reports)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks_desc(&[3.0, 1.0, 3.0, 2.0]), vec![1.5, 4.0, 1.5, 3.0]);
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0], &[1.0]), None);
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
    }
}
