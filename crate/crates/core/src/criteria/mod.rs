//! The ER and EMR conditions evaluated over sampled pairs and models.
//!
//! Every check takes precomputed explanations aligned with its cases (or
//! models) and returns a verdict carrying the resolved tolerances, the
//! measured distances and the worst counterexamples.

mod global;
mod local;
mod tolerance;
mod verdict;

pub use global::{check_emr_global, check_emr_global_over, check_er_global, CheckSet, Skipped};
pub use local::{
    check_emr1, check_emr2, check_emr2_relaxed, check_er1_local, check_er1_similar_local,
    check_er2_local, check_er2_relaxed_local, Case, PairSample, PairSamplePlan,
};
pub use tolerance::{quantile_of, PairThreshold, Threshold, ToleranceConfig};
pub use verdict::{
    estimate_conditional_probability, wilson_interval, CriterionId, CriterionVerdict,
    DistanceSummary, PassRule, ProbabilityEstimate, Record, Z_95,
};
