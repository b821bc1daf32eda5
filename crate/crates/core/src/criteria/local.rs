use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tolerance::ToleranceConfig;
use super::verdict::{CriterionId, CriterionVerdict, PassRule, Record};
use crate::error::{Error, Result};
use crate::explainers::{explain, ExplainerConfig, Explanation, MethodId, Target};
use crate::metrics::{
    apply_transform, explanation_distance, pair_distance, MetricSpec, PairDistance,
    TransformTable,
};
use crate::model::{InputOutputPair, Model};

/// One explained target: an input-output pair together with the model
/// that produced it.
#[derive(Clone, Debug)]
pub struct Case<'m> {
    pub model: &'m Model,
    pub pair: InputOutputPair,
}

impl Case<'_> {
    pub fn label(&self) -> String {
        format!("{}#{}", self.model.id, self.pair.id)
    }
}

/// How similar and distinct pairs are drawn from a pool of base inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairSamplePlan {
    /// Similar pairs: a base input and a copy with N(0, noise²) added.
    pub similar: usize,
    pub noise: f64,
    /// Distinct pairs: two independent base inputs.
    pub distinct: usize,
    /// Keep a distinct candidate only if its output component exceeds this.
    pub min_output: f64,
    /// Keep a distinct candidate only if the predicted classes differ.
    pub class_flip: bool,
    pub seed: u64,
}

impl Default for PairSamplePlan {
    fn default() -> Self {
        PairSamplePlan {
            similar: 150,
            noise: 0.05,
            distinct: 150,
            min_output: 0.0,
            class_flip: false,
            seed: 0,
        }
    }
}

impl PairSamplePlan {
    pub fn validate(&self) -> Result<()> {
        if self.similar == 0 || self.distinct == 0 {
            return Err(Error::param("pair plan", "counts must be >= 1"));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::param("pair plan", "noise scale must be > 0"));
        }
        if !(self.min_output >= 0.0) {
            return Err(Error::param("pair plan", "min_output must be >= 0"));
        }
        Ok(())
    }
}

/// Cases plus the candidate index pairs the pairwise conditions range over.
///
/// Quantile tolerances are read off the distances over `reference` pairs,
/// which default to the candidates themselves.
#[derive(Clone, Debug)]
pub struct PairSample<'m> {
    pub cases: Vec<Case<'m>>,
    pub pairs: Vec<(usize, usize)>,
    pub reference: Vec<(usize, usize)>,
}

impl<'m> PairSample<'m> {
    pub fn new(cases: Vec<Case<'m>>, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &cases {
            if !seen.insert(c.label()) {
                return Err(Error::param("pair sample", format!("duplicate case {}", c.label())));
            }
            if !c.pair.is_consistent_with(c.model) {
                return Err(Error::param(
                    "pair sample",
                    format!("case {} was not produced by its model", c.label()),
                ));
            }
        }
        check_range(&pairs, cases.len())?;
        Ok(PairSample {
            reference: pairs.clone(),
            cases,
            pairs,
        })
    }

    pub fn with_reference(mut self, reference: Vec<(usize, usize)>) -> Result<Self> {
        check_range(&reference, self.cases.len())?;
        if reference.is_empty() {
            return Err(Error::param("pair sample", "empty reference"));
        }
        self.reference = reference;
        Ok(self)
    }

    /// Draws the sample described by `plan` around `base` inputs of one model.
    ///
    /// Base inputs become cases `0..base.len()`; noisy copies follow. All
    /// unordered pairs of base inputs form the calibration reference.
    /// Distinct candidates are resampled until the filter accepts them or
    /// `50 ×` the requested count is exhausted.
    pub fn from_plan(model: &'m Model, base: &[Vec<f64>], plan: &PairSamplePlan) -> Result<Self> {
        plan.validate()?;
        if base.len() < 2 {
            return Err(Error::param("pair sample", "needs at least 2 base inputs"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        let mut cases = base
            .iter()
            .enumerate()
            .map(|(k, x)| {
                Ok(Case {
                    model,
                    pair: InputOutputPair::new(model, k, x.clone())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut pairs = Vec::with_capacity(plan.similar + plan.distinct);
        for s in 0..plan.similar {
            let i = s % base.len();
            let x: Vec<f64> = base[i]
                .iter()
                .map(|v| v + plan.noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let id = cases.len();
            cases.push(Case {
                model,
                pair: InputOutputPair::new(model, id, x)?,
            });
            pairs.push((i, id));
        }
        let spec = MetricSpec::default();
        let indices: Vec<usize> = (0..base.len()).collect();
        let mut accepted = 0;
        let mut attempts = 0;
        while accepted < plan.distinct && attempts < 50 * plan.distinct {
            attempts += 1;
            let pick: Vec<usize> = indices.choose_multiple(&mut rng, 2).copied().collect();
            let (a, b) = (&cases[pick[0]].pair, &cases[pick[1]].pair);
            if plan.class_flip && a.predicted_class() == b.predicted_class() {
                continue;
            }
            if pair_distance(a, b, &spec)?.output <= plan.min_output {
                continue;
            }
            pairs.push((pick[0], pick[1]));
            accepted += 1;
        }
        let reference = (0..base.len())
            .flat_map(|i| (i + 1..base.len()).map(move |j| (i, j)))
            .collect();
        PairSample::new(cases, pairs)?.with_reference(reference)
    }

    /// Explanations of every case, aligned with `cases`.
    pub fn explain(&self, method: MethodId, config: &ExplainerConfig) -> Result<Vec<Explanation>> {
        self.cases
            .par_iter()
            .map(|c| explain(method, c.model, &c.pair, config))
            .collect()
    }

    pub fn pair_distances(&self, metric: &MetricSpec) -> Result<Vec<PairDistance>> {
        self.distances_over(&self.pairs, metric)
    }

    fn distances_over(&self, pairs: &[(usize, usize)], metric: &MetricSpec) -> Result<Vec<PairDistance>> {
        pairs
            .par_iter()
            .map(|&(i, j)| pair_distance(&self.cases[i].pair, &self.cases[j].pair, metric))
            .collect()
    }
}

fn check_range(pairs: &[(usize, usize)], n: usize) -> Result<()> {
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= n || j >= n) {
        return Err(Error::param("pair sample", format!("pair ({i}, {j}) out of range")));
    }
    Ok(())
}

fn check_aligned(sample: &PairSample<'_>, expls: &[Explanation], method: MethodId) -> Result<()> {
    if expls.len() != sample.cases.len() {
        return Err(Error::LengthMismatch {
            left: sample.cases.len(),
            right: expls.len(),
        });
    }
    for (c, e) in sample.cases.iter().zip(expls) {
        if e.method != method {
            return Err(Error::TransformMismatch {
                expected: method.to_string(),
                actual: e.method.to_string(),
            });
        }
        match e.target {
            Target::Local { pair } if pair == c.pair.id => {}
            Target::Local { pair } => {
                return Err(Error::IncompatibleGoals(format!(
                    "{method} explanation targets pair {pair}, case is {}",
                    c.label()
                )))
            }
            Target::Global { ref model } => {
                return Err(Error::IncompatibleGoals(format!(
                    "{method} explains model `{model}` globally; local criteria need local explanations"
                )))
            }
        }
    }
    Ok(())
}

fn insufficient(criterion: CriterionId, required: usize, actual: usize) -> Error {
    Error::InsufficientSample {
        criterion: criterion.to_string(),
        required,
        actual,
    }
}

struct Measured {
    pairs: Vec<(usize, usize)>,
    d_pair: Vec<PairDistance>,
    d_expl: Vec<f64>,
    ref_pair: Vec<PairDistance>,
    ref_expl: Vec<f64>,
}

fn expl_distances(
    pairs: &[(usize, usize)],
    a: &[Explanation],
    b: &[Explanation],
    metric: &MetricSpec,
) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|&(i, j)| explanation_distance(&a[i], &b[j], metric))
        .collect()
}

fn both_ways(pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
    pairs.iter().flat_map(|&(i, j)| [(i, j), (j, i)]).collect()
}

/// Pair metric and explanation distance for every candidate and reference pair.
fn measure(sample: &PairSample<'_>, a: &[Explanation], metric: &MetricSpec) -> Result<Measured> {
    Ok(Measured {
        pairs: sample.pairs.clone(),
        d_pair: sample.pair_distances(metric)?,
        d_expl: expl_distances(&sample.pairs, a, a, metric)?,
        ref_pair: sample.distances_over(&sample.reference, metric)?,
        ref_expl: expl_distances(&sample.reference, a, a, metric)?,
    })
}

/// Cross measurements for two methods over pairs in both orientations:
/// `d(A_i, φB_j)` and `d(A_j, φB_i)`.
fn measure_cross(
    sample: &PairSample<'_>,
    a: &[Explanation],
    phi_b: &[Explanation],
    metric: &MetricSpec,
) -> Result<Measured> {
    let pairs = both_ways(&sample.pairs);
    let d_pair = sample.pair_distances(metric)?;
    Ok(Measured {
        d_expl: expl_distances(&pairs, a, phi_b, metric)?,
        pairs,
        d_pair: d_pair.iter().flat_map(|&d| [d, d]).collect(),
        ref_pair: sample.distances_over(&sample.reference, metric)?,
        ref_expl: expl_distances(&both_ways(&sample.reference), a, phi_b, metric)?,
    })
}

fn pair_record(
    sample: &PairSample<'_>,
    (i, j): (usize, usize),
    d: PairDistance,
    d_expl: f64,
    qualifies: bool,
    flagged: bool,
    margin: f64,
) -> Record {
    Record {
        a: sample.cases[i].label(),
        b: sample.cases[j].label(),
        d_input: Some(d.input),
        d_output: Some(d.output),
        d_expl,
        qualifies,
        flagged,
        margin,
    }
}

/// Which side of the explanation-distance threshold a qualifying pair must
/// land on.
#[derive(Clone, Copy)]
enum Conclusion {
    /// Strict: `d < threshold` required.
    Below,
    /// Strict: `d > threshold` required.
    Above,
    /// Relaxed: the event is `d < threshold`.
    EventBelow,
}

impl Conclusion {
    fn judge(self, d: f64, t: f64) -> (bool, f64) {
        match self {
            Conclusion::Below => (d >= t, d - t),
            Conclusion::Above => (d <= t, t - d),
            Conclusion::EventBelow => (d < t, t - d),
        }
    }
}

#[derive(Clone, Copy)]
enum Premise {
    Similar,
    Distinct,
}

#[allow(clippy::too_many_arguments)]
fn pairwise(
    criterion: CriterionId,
    methods: Vec<MethodId>,
    sample: &PairSample<'_>,
    m: &Measured,
    metric: &MetricSpec,
    tol: &ToleranceConfig,
    premise: (Premise, &str, super::tolerance::PairThreshold),
    conclusion: (Conclusion, &str, super::tolerance::Threshold),
    rule: PassRule,
    min_qualifiers: usize,
    note: &str,
) -> Result<CriterionVerdict> {
    let eps = premise.2.resolve(&m.ref_pair, tol.quantile_floor)?;
    let delta = conclusion.2.resolve(&m.ref_expl, tol.quantile_floor)?;
    let mut thresholds = BTreeMap::new();
    thresholds.insert(format!("{}.input", premise.1), eps.input);
    thresholds.insert(format!("{}.output", premise.1), eps.output);
    thresholds.insert(conclusion.1.to_string(), delta);
    let records: Vec<Record> = m
        .pairs
        .iter()
        .zip(m.d_pair.iter().zip(&m.d_expl))
        .map(|(&ij, (&dp, &de))| {
            let qualifies = match premise.0 {
                Premise::Similar => metric.is_similar(dp, eps),
                Premise::Distinct => metric.is_distinct(dp, eps),
            };
            let (flagged, margin) = conclusion.0.judge(de, delta);
            pair_record(sample, ij, dp, de, qualifies, flagged, margin)
        })
        .collect();
    finish(criterion, methods, rule, thresholds, records, min_qualifiers, tol, note)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn finish(
    criterion: CriterionId,
    methods: Vec<MethodId>,
    rule: PassRule,
    thresholds: BTreeMap<String, f64>,
    records: Vec<Record>,
    min_qualifiers: usize,
    tol: &ToleranceConfig,
    note: &str,
) -> Result<CriterionVerdict> {
    let qualifying = records.iter().filter(|r| r.qualifies).count();
    let required = min_qualifiers.max(1);
    if qualifying < required {
        return Err(insufficient(criterion, required, qualifying));
    }
    CriterionVerdict::build(
        criterion,
        methods,
        rule,
        thresholds,
        records,
        tol.counterexamples,
        note,
    )
}

/// Similar targets must receive similar explanations.
pub fn check_emr1(
    method: MethodId,
    sample: &PairSample<'_>,
    expls: &[Explanation],
    tol: &ToleranceConfig,
    metric: &MetricSpec,
) -> Result<CriterionVerdict> {
    check_aligned(sample, expls, method)?;
    let m = measure(sample, expls, metric)?;
    pairwise(
        CriterionId::Emr1,
        vec![method],
        sample,
        &m,
        metric,
        tol,
        (Premise::Similar, "emr1_input", tol.emr1_input),
        (Conclusion::Below, "emr1_output", tol.emr1_output),
        PassRule::Strict { slack: tol.slack },
        1,
        "noise robustness: explanations of similar pairs stay within tolerance",
    )
}

/// Distinct targets must receive distinct explanations.
pub fn check_emr2(
    method: MethodId,
    sample: &PairSample<'_>,
    expls: &[Explanation],
    tol: &ToleranceConfig,
    metric: &MetricSpec,
) -> Result<CriterionVerdict> {
    check_aligned(sample, expls, method)?;
    let m = measure(sample, expls, metric)?;
    pairwise(
        CriterionId::Emr2,
        vec![method],
        sample,
        &m,
        metric,
        tol,
        (Premise::Distinct, "emr2_input", tol.emr2_input),
        (Conclusion::Above, "emr2_output", tol.emr2_output),
        PassRule::Strict { slack: tol.slack },
        1,
        "a violation means distinct predictions are explained by near-identical attributions",
    )
}

/// Distinct targets may share an explanation, but only rarely.
pub fn check_emr2_relaxed(
    method: MethodId,
    sample: &PairSample<'_>,
    expls: &[Explanation],
    tol: &ToleranceConfig,
    metric: &MetricSpec,
) -> Result<CriterionVerdict> {
    check_aligned(sample, expls, method)?;
    let m = measure(sample, expls, metric)?;
    pairwise(
        CriterionId::Emr2Relaxed,
        vec![method],
        sample,
        &m,
        metric,
        tol,
        (Premise::Distinct, "emr2_input", tol.emr2_input),
        (Conclusion::EventBelow, "emr2r_delta", tol.emr2r_delta),
        PassRule::Relaxed {
            lambda: tol.emr2r_lambda,
        },
        tol.min_relaxed_sample,
        "estimated probability that distinct pairs get near-identical attributions",
    )
}

/// Explanations of method B mapped into A's comparison space.
fn transformed(expls: &[Explanation], method: MethodId, transforms: &TransformTable) -> Result<Vec<Explanation>> {
    let t = transforms.get(method);
    expls.iter().map(|e| apply_transform(e, &t)).collect()
}

fn er_inputs(
    (ma, a): (MethodId, &[Explanation]),
    (mb, b): (MethodId, &[Explanation]),
    sample: &PairSample<'_>,
    transforms: &TransformTable,
) -> Result<Vec<Explanation>> {
    check_aligned(sample, a, ma)?;
    check_aligned(sample, b, mb)?;
    transformed(b, mb, transforms)
}

/// Different methods agree on the same target: `d(A(z), φ(B(z))) < ε`.
pub fn check_er1_local(
    a: (MethodId, &[Explanation]),
    b: (MethodId, &[Explanation]),
    sample: &PairSample<'_>,
    tol: &ToleranceConfig,
    metric: &MetricSpec,
    transforms: &TransformTable,
) -> Result<CriterionVerdict> {
    let phi_b = er_inputs(a, b, sample, transforms)?;
    let a_ex = a.1;
    let same = sample
        .cases
        .par_iter()
        .enumerate()
        .map(|(i, _)| explanation_distance(&a_ex[i], &phi_b[i], metric))
        .collect::<Result<Vec<_>>>()?;
    let reference = if sample.reference.is_empty() {
        same.clone()
    } else {
        expl_distances(&both_ways(&sample.reference), a_ex, &phi_b, metric)?
    };
    let eps = tol.er1_local.resolve(&reference, tol.quantile_floor)?;
    let records = same
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let label = sample.cases[i].label();
            Record {
                a: label.clone(),
                b: label,
                d_input: None,
                d_output: None,
                d_expl: d,
                qualifies: true,
                flagged: d >= eps,
                margin: d - eps,
            }
        })
        .collect();
    finish(
        CriterionId::Er1Local,
        vec![a.0, b.0],
        PassRule::Strict { slack: tol.slack },
        BTreeMap::from([("er1_local".to_string(), eps)]),
        records,
        1,
        tol,
        "agreement of two methods on the same targets",
    )
}

/// Methods must disagree on distinct targets: `d'(z_i, z_j) > γ ⇒
/// d(A(z_i), φ(B(z_j))) > ϵ`.
pub fn check_er2_local(
    a: (MethodId, &[Explanation]),
    b: (MethodId, &[Explanation]),
    sample: &PairSample<'_>,
    tol: &ToleranceConfig,
    metric: &MetricSpec,
    transforms: &TransformTable,
) -> Result<CriterionVerdict> {
    let phi_b = er_inputs(a, b, sample, transforms)?;
    let m = measure_cross(sample, a.1, &phi_b, metric)?;
    pairwise(
        CriterionId::Er2Local,
        vec![a.0, b.0],
        sample,
        &m,
        metric,
        tol,
        (Premise::Distinct, "er2_gamma", tol.er2_gamma),
        (Conclusion::Above, "er2_epsilon", tol.er2_epsilon),
        PassRule::Strict { slack: tol.slack },
        1,
        "discriminant validity: a violation means the methods agree for the wrong reasons",
    )
}

pub fn check_er2_relaxed_local(
    a: (MethodId, &[Explanation]),
    b: (MethodId, &[Explanation]),
    sample: &PairSample<'_>,
    tol: &ToleranceConfig,
    metric: &MetricSpec,
    transforms: &TransformTable,
) -> Result<CriterionVerdict> {
    let phi_b = er_inputs(a, b, sample, transforms)?;
    let m = measure_cross(sample, a.1, &phi_b, metric)?;
    pairwise(
        CriterionId::Er2RelaxedLocal,
        vec![a.0, b.0],
        sample,
        &m,
        metric,
        tol,
        (Premise::Distinct, "er2_gamma", tol.er2_gamma),
        (Conclusion::EventBelow, "er2r_delta", tol.er2r_delta),
        PassRule::Relaxed {
            lambda: tol.er2r_lambda,
        },
        tol.min_relaxed_sample,
        "estimated probability that distinct pairs get matching cross-method attributions",
    )
}

/// Experimental: agreement demanded of merely similar pairs, using the
/// EMR-1 similarity premise with the ER-1 tolerance.
pub fn check_er1_similar_local(
    a: (MethodId, &[Explanation]),
    b: (MethodId, &[Explanation]),
    sample: &PairSample<'_>,
    tol: &ToleranceConfig,
    metric: &MetricSpec,
    transforms: &TransformTable,
) -> Result<CriterionVerdict> {
    let phi_b = er_inputs(a, b, sample, transforms)?;
    let m = measure_cross(sample, a.1, &phi_b, metric)?;
    pairwise(
        CriterionId::Er1SimilarLocal,
        vec![a.0, b.0],
        sample,
        &m,
        metric,
        tol,
        (Premise::Similar, "emr1_input", tol.emr1_input),
        (Conclusion::Below, "er1_local", tol.er1_local),
        PassRule::Strict { slack: tol.slack },
        1,
        "experimental: ER-1 extended to similar pairs",
    )
}
