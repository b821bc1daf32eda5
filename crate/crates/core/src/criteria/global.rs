use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::local::finish;
use super::tolerance::{Threshold, ToleranceConfig};
use super::verdict::{CriterionId, CriterionVerdict, PassRule, Record};
use crate::error::{Error, Result};
use crate::explainers::{Explanation, MethodId, Target};
use crate::metrics::{
    apply_transform, explanation_distance, model_divergence, MetricSpec, TransformTable,
};
use crate::model::{Model, ProbeSet};

/// A sub-condition that could not be evaluated, with the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub criterion: CriterionId,
    pub methods: Vec<MethodId>,
    pub reason: String,
}

/// Sub-verdicts of a global check.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckSet {
    pub verdicts: Vec<CriterionVerdict>,
    pub skipped: Vec<Skipped>,
}

impl CheckSet {
    pub fn get(&self, id: CriterionId) -> Option<&CriterionVerdict> {
        self.verdicts.iter().find(|v| v.criterion == id)
    }

    fn push(&mut self, id: CriterionId, methods: &[MethodId], r: Result<CriterionVerdict>) -> Result<()> {
        match r {
            Ok(v) => self.verdicts.push(v),
            Err(e @ Error::InsufficientSample { .. }) => self.skipped.push(Skipped {
                criterion: id,
                methods: methods.to_vec(),
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
        Ok(())
    }
}

fn check_global_targets(models: &[&Model], expls: &[Explanation], method: MethodId) -> Result<()> {
    if models.len() != expls.len() {
        return Err(Error::LengthMismatch {
            left: models.len(),
            right: expls.len(),
        });
    }
    for (m, e) in models.iter().zip(expls) {
        if e.method != method {
            return Err(Error::TransformMismatch {
                expected: method.to_string(),
                actual: e.method.to_string(),
            });
        }
        match &e.target {
            Target::Global { model } if *model == m.id => {}
            Target::Global { model } => {
                return Err(Error::IncompatibleGoals(format!(
                    "{method} explanation is for model `{model}`, expected `{}`",
                    m.id
                )))
            }
            Target::Local { .. } => {
                return Err(Error::IncompatibleGoals(format!(
                    "{method} gives a local explanation; global criteria need model-level explanations"
                )))
            }
        }
        if e.dim() != m.input_dim {
            return Err(Error::InputShape {
                expected: m.input_dim,
                actual: e.dim(),
            });
        }
    }
    Ok(())
}

fn check_probe(models: &[&Model], probe: &ProbeSet) -> Result<()> {
    if probe.is_empty() {
        return Err(Error::EmptyProbe);
    }
    if let Some(m) = models.iter().find(|m| m.input_dim != probe.dim()) {
        return Err(Error::InputShape {
            expected: m.input_dim,
            actual: probe.dim(),
        });
    }
    Ok(())
}

/// Model divergence for every index pair, computed once.
fn divergences(models: &[&Model], pairs: &[(usize, usize)], probe: &ProbeSet) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|&(i, j)| model_divergence(models[i], models[j], probe))
        .collect()
}

struct GlobalCondition<'a> {
    criterion: CriterionId,
    premise: (&'a str, Threshold, bool),
    conclusion: (&'a str, Threshold),
    rule: PassRule,
    min: usize,
    note: &'a str,
}

/// Premise flag `true` means "D below", `false` means "D above".
#[allow(clippy::too_many_arguments)]
fn evaluate(
    c: GlobalCondition<'_>,
    methods: Vec<MethodId>,
    models: &[&Model],
    pairs: &[(usize, usize)],
    div: &[f64],
    dist: &[f64],
    tol: &ToleranceConfig,
) -> Result<CriterionVerdict> {
    let eps = c.premise.1.resolve(div, tol.quantile_floor)?;
    let delta = c.conclusion.1.resolve(dist, tol.quantile_floor)?;
    let records = pairs
        .iter()
        .zip(div.iter().zip(dist))
        .map(|(&(i, j), (&dv, &de))| {
            let qualifies = if c.premise.2 { dv < eps } else { dv > eps };
            let (flagged, margin) = match c.rule {
                PassRule::Relaxed { .. } => (de < delta, delta - de),
                PassRule::Strict { .. } if c.premise.2 => (de >= delta, de - delta),
                PassRule::Strict { .. } => (de <= delta, delta - de),
            };
            Record {
                a: models[i].id.clone(),
                b: models[j].id.clone(),
                d_input: None,
                d_output: Some(dv),
                d_expl: de,
                qualifies,
                flagged,
                margin,
            }
        })
        .collect();
    let thresholds = BTreeMap::from([
        (c.premise.0.to_string(), eps),
        (c.conclusion.0.to_string(), delta),
    ]);
    finish(c.criterion, methods, c.rule, thresholds, records, c.min, tol, c.note)
}

/// Global EMR-1, EMR-2 and EMR-2' over unordered pairs of distinct model
/// slots. Pairs are classified by the model divergence `D`.
pub fn check_emr_global(
    method: MethodId,
    models: &[&Model],
    expls: &[Explanation],
    probe: &ProbeSet,
    tol: &ToleranceConfig,
    metric: &MetricSpec,
) -> Result<CheckSet> {
    if models.len() < 2 {
        return Err(Error::InsufficientModels {
            criterion: "EMR-global".into(),
            required: 2,
            actual: models.len(),
        });
    }
    let n = models.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    check_emr_global_over(method, models, expls, &pairs, probe, tol, metric)
}

/// As [`check_emr_global`], restricted to the listed model index pairs.
pub fn check_emr_global_over(
    method: MethodId,
    models: &[&Model],
    expls: &[Explanation],
    pairs: &[(usize, usize)],
    probe: &ProbeSet,
    tol: &ToleranceConfig,
    metric: &MetricSpec,
) -> Result<CheckSet> {
    check_probe(models, probe)?;
    check_global_targets(models, expls, method)?;
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= models.len() || j >= models.len()) {
        return Err(Error::param("model pairs", format!("({i}, {j}) out of range")));
    }
    let pairs = pairs.to_vec();
    let div = divergences(models, &pairs, probe)?;
    let dist = pairs
        .par_iter()
        .map(|&(i, j)| explanation_distance(&expls[i], &expls[j], metric))
        .collect::<Result<Vec<_>>>()?;
    let conditions = [
        GlobalCondition {
            criterion: CriterionId::Emr1Global,
            premise: ("global_emr1_input", tol.global_emr1_input, true),
            conclusion: ("global_emr1_output", tol.global_emr1_output),
            rule: PassRule::Strict { slack: tol.slack },
            min: 1,
            note: "similar models must be explained similarly",
        },
        GlobalCondition {
            criterion: CriterionId::Emr2Global,
            premise: ("global_emr2_input", tol.global_emr2_input, false),
            conclusion: ("global_emr2_output", tol.global_emr2_output),
            rule: PassRule::Strict { slack: tol.slack },
            min: 1,
            note: "model randomization check: diverging models must be explained differently",
        },
        GlobalCondition {
            criterion: CriterionId::Emr2RelaxedGlobal,
            premise: ("global_emr2_input", tol.global_emr2_input, false),
            conclusion: ("global_emr2r_delta", tol.global_emr2r_delta),
            rule: PassRule::Relaxed {
                lambda: tol.global_emr2r_lambda,
            },
            min: tol.min_relaxed_sample_global,
            note: "estimated probability that diverging models get matching explanations",
        },
    ];
    let mut out = CheckSet::default();
    for c in conditions {
        let id = c.criterion;
        let r = evaluate(c, vec![method], models, &pairs, &div, &dist, tol);
        out.push(id, &[method], r)?;
    }
    Ok(out)
}

/// Global ER-1 per model, and global ER-2 / ER-2' over ordered pairs of
/// distinct model slots.
#[allow(clippy::too_many_arguments)]
pub fn check_er_global(
    a: (MethodId, &[Explanation]),
    b: (MethodId, &[Explanation]),
    models: &[&Model],
    probe: &ProbeSet,
    tol: &ToleranceConfig,
    metric: &MetricSpec,
    transforms: &TransformTable,
) -> Result<CheckSet> {
    if models.is_empty() {
        return Err(Error::InsufficientModels {
            criterion: CriterionId::Er1Global.to_string(),
            required: 1,
            actual: 0,
        });
    }
    check_probe(models, probe)?;
    check_global_targets(models, a.1, a.0)?;
    check_global_targets(models, b.1, b.0)?;
    let t = transforms.get(b.0);
    let phi_b = b.1.iter().map(|e| apply_transform(e, &t)).collect::<Result<Vec<_>>>()?;
    let methods = vec![a.0, b.0];
    let n = models.len();
    let all: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let cross = all
        .par_iter()
        .map(|&(i, j)| explanation_distance(&a.1[i], &phi_b[j], metric))
        .collect::<Result<Vec<_>>>()?;

    let mut out = CheckSet::default();
    let eps = tol.er1_global.resolve(&cross, tol.quantile_floor)?;
    let records = (0..n)
        .map(|i| {
            let d = cross[i * n + i];
            Record {
                a: models[i].id.clone(),
                b: models[i].id.clone(),
                d_input: None,
                d_output: None,
                d_expl: d,
                qualifies: true,
                flagged: d >= eps,
                margin: d - eps,
            }
        })
        .collect();
    let r = finish(
        CriterionId::Er1Global,
        methods.clone(),
        PassRule::Strict { slack: tol.slack },
        BTreeMap::from([("er1_global".to_string(), eps)]),
        records,
        1,
        tol,
        "agreement of two methods on the same model",
    );
    out.push(CriterionId::Er1Global, &methods, r)?;

    if n < 2 {
        for id in [CriterionId::Er2Global, CriterionId::Er2RelaxedGlobal] {
            out.skipped.push(Skipped {
                criterion: id,
                methods: methods.clone(),
                reason: format!("needs at least 2 models, got {n}"),
            });
        }
        return Ok(out);
    }
    let off: Vec<usize> = (0..all.len()).filter(|&k| all[k].0 != all[k].1).collect();
    let pairs: Vec<(usize, usize)> = off.iter().map(|&k| all[k]).collect();
    let dist: Vec<f64> = off.iter().map(|&k| cross[k]).collect();
    let div = divergences(models, &pairs, probe)?;
    let conditions = [
        GlobalCondition {
            criterion: CriterionId::Er2Global,
            premise: ("er2_gamma_global", tol.er2_gamma_global, false),
            conclusion: ("er2_epsilon_global", tol.er2_epsilon_global),
            rule: PassRule::Strict { slack: tol.slack },
            min: 1,
            note: "discriminant validity across models",
        },
        GlobalCondition {
            criterion: CriterionId::Er2RelaxedGlobal,
            premise: ("er2r_gamma_global", tol.er2r_gamma_global(), false),
            conclusion: ("er2r_delta_global", tol.er2r_delta_global),
            rule: PassRule::Relaxed {
                lambda: tol.er2r_lambda_global,
            },
            min: tol.min_relaxed_sample_global,
            note: "estimated probability that diverging models get matching cross-method explanations",
        },
    ];
    for c in conditions {
        let id = c.criterion;
        let r = evaluate(c, methods.clone(), models, &pairs, &div, &dist, tol);
        out.push(id, &methods, r)?;
    }
    Ok(out)
}
