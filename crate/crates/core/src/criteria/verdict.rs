use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainers::MethodId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CriterionId {
    #[serde(rename = "ER-1-local")]
    Er1Local,
    #[serde(rename = "ER-1-global")]
    Er1Global,
    #[serde(rename = "ER-2-local")]
    Er2Local,
    #[serde(rename = "ER-2-global")]
    Er2Global,
    #[serde(rename = "ER-2'-local")]
    Er2RelaxedLocal,
    #[serde(rename = "ER-2'-global")]
    Er2RelaxedGlobal,
    /// ER-1 demanded of similar (not identical) pairs. Experimental.
    #[serde(rename = "ER-1-similar-local")]
    Er1SimilarLocal,
    #[serde(rename = "EMR-1")]
    Emr1,
    #[serde(rename = "EMR-2")]
    Emr2,
    #[serde(rename = "EMR-2'")]
    Emr2Relaxed,
    #[serde(rename = "EMR-1-global")]
    Emr1Global,
    #[serde(rename = "EMR-2-global")]
    Emr2Global,
    #[serde(rename = "EMR-2'-global")]
    Emr2RelaxedGlobal,
}

impl CriterionId {
    pub fn as_str(self) -> &'static str {
        match self {
            CriterionId::Er1Local => "ER-1-local",
            CriterionId::Er1Global => "ER-1-global",
            CriterionId::Er2Local => "ER-2-local",
            CriterionId::Er2Global => "ER-2-global",
            CriterionId::Er2RelaxedLocal => "ER-2'-local",
            CriterionId::Er2RelaxedGlobal => "ER-2'-global",
            CriterionId::Er1SimilarLocal => "ER-1-similar-local",
            CriterionId::Emr1 => "EMR-1",
            CriterionId::Emr2 => "EMR-2",
            CriterionId::Emr2Relaxed => "EMR-2'",
            CriterionId::Emr1Global => "EMR-1-global",
            CriterionId::Emr2Global => "EMR-2-global",
            CriterionId::Emr2RelaxedGlobal => "EMR-2'-global",
        }
    }

    pub fn is_experimental(self) -> bool {
        self == CriterionId::Er1SimilarLocal
    }
}

impl fmt::Display for CriterionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How qualifying measurements turn into a pass flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PassRule {
    /// Universally quantified: pass iff `violations / total <= slack`.
    Strict { slack: f64 },
    /// Probabilistic: pass iff the estimated conditional probability `< lambda`.
    Relaxed { lambda: f64 },
}

/// Estimate of `Pr[event | qualifier]` with a 95% Wilson interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub qualifiers: usize,
    pub events: usize,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

pub fn wilson_interval(events: usize, n: usize, z: f64) -> (f64, f64) {
    let n = n as f64;
    let p = events as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// `(# qualifier ∧ event) / (# qualifier)` from `(qualifier, event)` flags.
pub fn estimate_conditional_probability(events: &[(bool, bool)]) -> Result<ProbabilityEstimate> {
    let qualifiers = events.iter().filter(|(q, _)| *q).count();
    if qualifiers == 0 {
        return Err(Error::UndefinedConditional);
    }
    let hits = events.iter().filter(|(q, e)| *q && *e).count();
    let (lower, upper) = wilson_interval(hits, qualifiers, Z_95);
    Ok(ProbabilityEstimate {
        qualifiers,
        events: hits,
        estimate: hits as f64 / qualifiers as f64,
        lower,
        upper,
    })
}

/// One measured comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub a: String,
    pub b: String,
    /// Pair-metric components (local criteria).
    pub d_input: Option<f64>,
    /// Output component of the pair metric, or the model divergence.
    pub d_output: Option<f64>,
    pub d_expl: f64,
    pub qualifies: bool,
    /// Conclusion violated (strict rules) or event observed (relaxed rules).
    pub flagged: bool,
    /// How far past the threshold a flagged record is.
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub count: usize,
    pub min: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl DistanceSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(DistanceSummary {
            count: sorted.len(),
            min: sorted[0],
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            median: super::tolerance::quantile_of(&sorted, 0.5).unwrap_or(f64::NAN),
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionVerdict {
    pub criterion: CriterionId,
    pub methods: Vec<MethodId>,
    pub pass: bool,
    pub violations: usize,
    pub total: usize,
    pub candidates: usize,
    pub rule: PassRule,
    /// Resolved tolerances keyed by their `ToleranceConfig` field names.
    pub thresholds: BTreeMap<String, f64>,
    pub distances: Option<DistanceSummary>,
    pub probability: Option<ProbabilityEstimate>,
    pub counterexamples: Vec<Record>,
    pub note: String,
    #[serde(skip)]
    pub records: Vec<Record>,
}

impl CriterionVerdict {
    pub(crate) fn build(
        criterion: CriterionId,
        methods: Vec<MethodId>,
        rule: PassRule,
        thresholds: BTreeMap<String, f64>,
        records: Vec<Record>,
        keep: usize,
        note: impl Into<String>,
    ) -> Result<Self> {
        let qualifying: Vec<&Record> = records.iter().filter(|r| r.qualifies).collect();
        let total = qualifying.len();
        let violations = qualifying.iter().filter(|r| r.flagged).count();
        let probability = match rule {
            PassRule::Relaxed { .. } => Some(estimate_conditional_probability(
                &records
                    .iter()
                    .map(|r| (r.qualifies, r.flagged))
                    .collect::<Vec<_>>(),
            )?),
            PassRule::Strict { .. } => None,
        };
        let dists: Vec<f64> = qualifying.iter().map(|r| r.d_expl).collect();
        let mut worst: Vec<Record> = qualifying
            .iter()
            .filter(|r| r.flagged)
            .map(|r| (*r).clone())
            .collect();
        worst.sort_by(|x, y| {
            y.margin
                .total_cmp(&x.margin)
                .then_with(|| x.a.cmp(&y.a))
                .then_with(|| x.b.cmp(&y.b))
        });
        worst.truncate(keep);
        let mut v = CriterionVerdict {
            criterion,
            methods,
            pass: false,
            violations,
            total,
            candidates: records.len(),
            rule,
            thresholds,
            distances: DistanceSummary::of(&dists),
            probability,
            counterexamples: worst,
            note: note.into(),
            records,
        };
        v.pass = v.recompute_pass();
        Ok(v)
    }

    /// Pass flag recomputed from the stored records and rule.
    pub fn recompute_pass(&self) -> bool {
        let qualifying: Vec<&Record> = self.records.iter().filter(|r| r.qualifies).collect();
        if qualifying.is_empty() {
            return false;
        }
        let flagged = qualifying.iter().filter(|r| r.flagged).count();
        match self.rule {
            PassRule::Strict { slack } => flagged as f64 / qualifying.len() as f64 <= slack,
            PassRule::Relaxed { lambda } => (flagged as f64 / qualifying.len() as f64) < lambda,
        }
    }

    pub fn violation_fraction(&self) -> f64 {
        if self.total == 0 {
            return 1.0;
        }
        self.violations as f64 / self.total as f64
    }

    /// Score in [0, 1]: fraction of qualifying records not flagged.
    pub fn fulfilment(&self) -> f64 {
        1.0 - self.violation_fraction()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_ratio_examples() {
        let mut flags = vec![(true, false); 10];
        flags.iter_mut().take(3).for_each(|f| f.1 = true);
        flags.push((false, true));
        assert_eq!(estimate_conditional_probability(&flags).unwrap().estimate, 0.3);
        let none = vec![(true, false); 5];
        assert_eq!(estimate_conditional_probability(&none).unwrap().estimate, 0.0);
        let all = vec![(true, true); 5];
        assert_eq!(estimate_conditional_probability(&all).unwrap().estimate, 1.0);
        assert!(matches!(
            estimate_conditional_probability(&[(false, true)]),
            Err(Error::UndefinedConditional)
        ));
    }

    #[test]
    fn wilson_contains_estimate() {
        for n in 1..40 {
            for k in 0..=n {
                let (lo, hi) = wilson_interval(k, n, Z_95);
                let p = k as f64 / n as f64;
                assert!(0.0 <= lo && lo <= p + 1e-15 && p <= hi + 1e-15 && hi <= 1.0);
            }
        }
    }

    fn rec(flagged: bool, margin: f64, a: &str) -> Record {
        Record {
            a: a.into(),
            b: a.into(),
            d_input: None,
            d_output: None,
            d_expl: 0.0,
            qualifies: true,
            flagged,
            margin,
        }
    }

    #[test]
    fn counterexamples_are_worst_first() {
        let records = vec![rec(true, 0.1, "a"), rec(false, 0.0, "b"), rec(true, 0.5, "c")];
        let v = CriterionVerdict::build(
            CriterionId::Emr1,
            vec![MethodId::Gradient],
            PassRule::Strict { slack: 0.0 },
            BTreeMap::new(),
            records,
            1,
            "",
        )
        .unwrap();
        assert!(!v.pass);
        assert_eq!(v.violations, 2);
        assert_eq!(v.counterexamples.len(), 1);
        assert_eq!(v.counterexamples[0].a, "c");
        assert_eq!(v.pass, v.recompute_pass());
    }

    #[test]
    fn criterion_ids_serialize_with_primes() {
        assert_eq!(serde_json::to_string(&CriterionId::Emr2Relaxed).unwrap(), "\"EMR-2'\"");
        assert_eq!(
            serde_json::from_str::<CriterionId>("\"ER-2'-global\"").unwrap(),
            CriterionId::Er2RelaxedGlobal
        );
    }
}
