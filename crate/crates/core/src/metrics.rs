//! Distances between explanations, between input-output pairs, and between
//! models, plus the normalization that puts attributions of different
//! methods into one comparison space.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainers::{Explanation, MethodId};
use crate::model::{InputOutputPair, Model, ProbeSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationMetric {
    /// Euclidean distance between sign-preserving L1-normalized vectors.
    #[default]
    EuclideanNormalized,
    /// `1 − cos`; the zero vector is at distance 1 from any nonzero vector.
    Cosine,
    /// `(1 − ρ)/2` with ρ the Spearman correlation of attribution magnitudes.
    Rank,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMetric {
    #[default]
    Euclidean,
    /// Euclidean distance after removing the mean of the difference, so
    /// inputs differing by `c·(1, …, 1)` are at distance 0.
    EuclideanModuloTranslation,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    KeepComponents,
    /// Both components replaced by their maximum before thresholds apply.
    MaxComponent,
}

/// When a pair counts as "similar".
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarRule {
    #[default]
    InputAndOutput,
    InputOnly,
    OutputOnly,
}

/// When a pair counts as "distinct".
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistinctRule {
    #[default]
    OutputFar,
    InputFar,
    InputOrOutputFar,
    InputAndOutputFar,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelDivergence {
    #[default]
    MeanJensenShannon,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSpec {
    pub explanation: ExplanationMetric,
    pub input: InputMetric,
    pub model: ModelDivergence,
    pub aggregation: Aggregation,
    pub similar: SimilarRule,
    pub distinct: DistinctRule,
}

impl MetricSpec {
    pub fn with_input(mut self, input: InputMetric) -> Self {
        self.input = input;
        self
    }

    pub fn with_explanation(mut self, explanation: ExplanationMetric) -> Self {
        self.explanation = explanation;
        self
    }

    /// Pair classification against resolved thresholds. Strict inequalities
    /// on both sides.
    pub fn is_similar(&self, d: PairDistance, eps: PairDistance) -> bool {
        let d = d.aggregated(self.aggregation);
        let close_in = d.input < eps.input;
        let close_out = d.output < eps.output;
        match self.similar {
            SimilarRule::InputAndOutput => close_in && close_out,
            SimilarRule::InputOnly => close_in,
            SimilarRule::OutputOnly => close_out,
        }
    }

    pub fn is_distinct(&self, d: PairDistance, eps: PairDistance) -> bool {
        let d = d.aggregated(self.aggregation);
        let far_in = d.input > eps.input;
        let far_out = d.output > eps.output;
        match self.distinct {
            DistinctRule::OutputFar => far_out,
            DistinctRule::InputFar => far_in,
            DistinctRule::InputOrOutputFar => far_in || far_out,
            DistinctRule::InputAndOutputFar => far_in && far_out,
        }
    }
}

/// The two components of the pair metric: input space and output space.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub input: f64,
    pub output: f64,
}

impl PairDistance {
    pub fn new(input: f64, output: f64) -> Self {
        PairDistance { input, output }
    }

    pub fn aggregated(self, mode: Aggregation) -> Self {
        match mode {
            Aggregation::KeepComponents => self,
            Aggregation::MaxComponent => {
                let m = self.input.max(self.output);
                PairDistance::new(m, m)
            }
        }
    }
}

fn check_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

/// Divides by the sum of absolute values; the zero vector maps to itself.
pub fn l1_normalize(v: &[f64]) -> Vec<f64> {
    let total: f64 = v.iter().map(|x| x.abs()).sum();
    if total == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| x / total).collect()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut end = k;
        while end + 1 < idx.len() && v[idx[end + 1]] == v[idx[k]] {
            end += 1;
        }
        let r = (k + end) as f64 / 2.0;
        for &i in &idx[k..=end] {
            ranks[i] = r;
        }
        k = end + 1;
    }
    ranks
}

fn spearman_magnitude(a: &[f64], b: &[f64]) -> f64 {
    let abs = |v: &[f64]| v.iter().map(|x| x.abs()).collect::<Vec<_>>();
    let ra = average_ranks(&abs(a));
    let rb = average_ranks(&abs(b));
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    match (saa == 0.0, sbb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0),
    }
}

pub fn attribution_distance(a: &[f64], b: &[f64], kind: ExplanationMetric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    check_finite(a, "attribution")?;
    check_finite(b, "attribution")?;
    Ok(match kind {
        ExplanationMetric::EuclideanNormalized => euclidean(&l1_normalize(a), &l1_normalize(b)),
        ExplanationMetric::Cosine => {
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            match (na == 0.0, nb == 0.0) {
                (true, true) => 0.0,
                (true, false) | (false, true) => 1.0,
                _ => {
                    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
                }
            }
        }
        ExplanationMetric::Rank => {
            if a.len() < 2 {
                return Err(Error::param("rank distance", "needs at least 2 features"));
            }
            (1.0 - spearman_magnitude(a, b)) / 2.0
        }
    })
}

/// `d(e1, e2)`; `e2` is expected to be in `e1`'s comparison space already.
pub fn explanation_distance(e1: &Explanation, e2: &Explanation, spec: &MetricSpec) -> Result<f64> {
    attribution_distance(&e1.attribution, &e2.attribution, spec.explanation)
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidDistribution("negative or non-finite entry".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("sums to {total}")));
    }
    Ok(())
}

/// Jensen-Shannon divergence in nats, in `[0, ln 2]`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let half_kl = |a: f64, m: f64| if a > 0.0 { a * (a / m).ln() } else { 0.0 };
    let (mut kp, mut kq) = (0.0, 0.0);
    for (&a, &b) in p.iter().zip(q) {
        let m = (a + b) / 2.0;
        kp += half_kl(a, m);
        kq += half_kl(b, m);
    }
    Ok((0.5 * (kp + kq)).clamp(0.0, LN_2))
}

fn input_distance(a: &[f64], b: &[f64], kind: InputMetric) -> f64 {
    match kind {
        InputMetric::Euclidean => euclidean(a, b),
        InputMetric::EuclideanModuloTranslation => {
            let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let mean = diff.iter().sum::<f64>() / diff.len() as f64;
            diff.iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                .sqrt()
        }
    }
}

pub fn pair_distance(
    z1: &InputOutputPair,
    z2: &InputOutputPair,
    spec: &MetricSpec,
) -> Result<PairDistance> {
    if z1.x.len() != z2.x.len() {
        return Err(Error::InputShape {
            expected: z1.x.len(),
            actual: z2.x.len(),
        });
    }
    check_finite(&z1.x, "input")?;
    check_finite(&z2.x, "input")?;
    Ok(PairDistance {
        input: input_distance(&z1.x, &z2.x, spec.input),
        output: js_divergence(&z1.y, &z2.y)?,
    })
}

/// Mean Jensen-Shannon divergence between the two models' outputs over the probe.
pub fn model_divergence(f: &Model, g: &Model, probe: &ProbeSet) -> Result<f64> {
    if f.input_dim != g.input_dim {
        return Err(Error::InputShape {
            expected: f.input_dim,
            actual: g.input_dim,
        });
    }
    if f.classes != g.classes {
        return Err(Error::InvalidModel(format!(
            "class counts differ: {} vs {}",
            f.classes, g.classes
        )));
    }
    if probe.is_empty() {
        return Err(Error::EmptyProbe);
    }
    let mut total = 0.0;
    for x in &probe.inputs {
        total += js_divergence(&f.forward(x)?, &g.forward(x)?)?;
    }
    Ok(total / probe.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    SignedL1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub source: MethodId,
    #[serde(default = "default_space")]
    pub space: String,
    #[serde(default)]
    pub rule: Normalization,
}

fn default_space() -> String {
    "attribution/l1".to_string()
}

impl TransformSpec {
    pub fn signed_l1(source: MethodId) -> Self {
        TransformSpec {
            source,
            space: default_space(),
            rule: Normalization::SignedL1,
        }
    }
}

/// Transforms keyed by source method; unregistered methods get signed L1.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransformTable(pub BTreeMap<MethodId, TransformSpec>);

impl TransformTable {
    pub fn get(&self, method: MethodId) -> TransformSpec {
        self.0
            .get(&method)
            .cloned()
            .unwrap_or_else(|| TransformSpec::signed_l1(method))
    }

    pub fn validate(&self) -> Result<()> {
        for (k, t) in &self.0 {
            if *k != t.source {
                return Err(Error::Config(format!(
                    "transform registered under `{k}` has source `{}`",
                    t.source
                )));
            }
        }
        Ok(())
    }
}

pub fn apply_transform(e: &Explanation, t: &TransformSpec) -> Result<Explanation> {
    if e.method != t.source {
        return Err(Error::TransformMismatch {
            expected: t.source.to_string(),
            actual: e.method.to_string(),
        });
    }
    check_finite(&e.attribution, "attribution")?;
    let attribution = match t.rule {
        Normalization::SignedL1 => l1_normalize(&e.attribution),
    };
    Ok(Explanation {
        attribution,
        transformed: true,
        ..e.clone()
    })
}
