//! Packaged experiments: tabular stand-ins for published failure modes of
//! saliency methods, plus a ground-truth correlation study.
//!
//! Each scenario is described by a JSON fixture shipped with the crate. The
//! fixture fixes the data, models, tolerances, the qualitative outcome
//! expected per criterion, and measured values frozen from a first run.

mod adebayo;
mod disagreement;
mod groundtruth;
mod kindermans;
mod rudin;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::criteria::{CriterionId, CriterionVerdict, ToleranceConfig};
use crate::datasets::{Dataset, Generator};
use crate::error::{Error, Result};
use crate::explainers::{ExplainerConfig, MethodId};
use crate::model::{Model, ModelSpec};

pub use disagreement::AgreementCell;
pub use groundtruth::{CorrelationReport, MethodScore};

pub const SCENARIO_SCHEMA: &str = "scenario/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    KindermansShift,
    AdebayoRandomization,
    RudinDistinctPredictions,
    MethodDisagreement,
    GroundtruthCorrelation,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] = [
        ScenarioId::KindermansShift,
        ScenarioId::AdebayoRandomization,
        ScenarioId::RudinDistinctPredictions,
        ScenarioId::MethodDisagreement,
        ScenarioId::GroundtruthCorrelation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::KindermansShift => "kindermans_shift",
            ScenarioId::AdebayoRandomization => "adebayo_randomization",
            ScenarioId::RudinDistinctPredictions => "rudin_distinct_predictions",
            ScenarioId::MethodDisagreement => "method_disagreement",
            ScenarioId::GroundtruthCorrelation => "groundtruth_correlation",
        }
    }

    /// The fixture shipped with the crate.
    pub fn builtin_fixture(self) -> &'static str {
        match self {
            ScenarioId::KindermansShift => include_str!("../../fixtures/scenarios/kindermans_shift.json"),
            ScenarioId::AdebayoRandomization => {
                include_str!("../../fixtures/scenarios/adebayo_randomization.json")
            }
            ScenarioId::RudinDistinctPredictions => {
                include_str!("../../fixtures/scenarios/rudin_distinct_predictions.json")
            }
            ScenarioId::MethodDisagreement => {
                include_str!("../../fixtures/scenarios/method_disagreement.json")
            }
            ScenarioId::GroundtruthCorrelation => {
                include_str!("../../fixtures/scenarios/groundtruth_correlation.json")
            }
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

/// A qualitative expectation: `criterion` over `methods` in `arm` should
/// pass or fail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub arm: String,
    pub criterion: CriterionId,
    pub methods: Vec<MethodId>,
    pub pass: bool,
}

/// What a frozen measurement is compared against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Near { value: f64, tolerance: f64 },
    Below(f64),
    Above(f64),
}

impl Bound {
    pub fn holds(&self, observed: f64) -> bool {
        match *self {
            Bound::Near { value, tolerance } => (observed - value).abs() <= tolerance,
            Bound::Below(b) => observed < b,
            Bound::Above(b) => observed > b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionCheck {
    pub name: String,
    pub observed: Option<f64>,
    pub target: Bound,
    pub ok: bool,
}

/// One experimental arm: a dataset and a model, with optional tolerance
/// overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub name: String,
    pub dataset: Generator,
    pub model: ModelSpec,
    #[serde(default)]
    pub tolerances: Option<ToleranceConfig>,
}

impl ArmSpec {
    pub(crate) fn build(&self, seed: u64) -> Result<(Dataset, Model)> {
        let data = self.dataset.generate(seed)?;
        let model = self.model.build(&data)?;
        Ok((data, model))
    }

    pub(crate) fn tolerances<'a>(&'a self, fallback: &'a ToleranceConfig) -> &'a ToleranceConfig {
        self.tolerances.as_ref().unwrap_or(fallback)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFixture {
    pub schema: String,
    pub id: ScenarioId,
    pub description: String,
    /// How the tabular setup stands in for the image experiments it mirrors.
    pub stand_in: String,
    pub seed: u64,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub explainer: ExplainerConfig,
    pub params: serde_json::Value,
    #[serde(default)]
    pub expected: Vec<Expectation>,
    /// Measurements from a first run, keyed as in `ScenarioResult::measurements`.
    #[serde(default)]
    pub frozen: BTreeMap<String, Bound>,
}

impl ScenarioFixture {
    pub fn builtin(id: ScenarioId) -> Result<Self> {
        Self::from_json(id.builtin_fixture())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let f: ScenarioFixture = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Config(format!("scenario fixture: {}: {}", e.path(), e.inner())))?;
        if f.schema != SCENARIO_SCHEMA {
            return Err(Error::Config(format!(
                "scenario fixture schema `{}`, expected `{SCENARIO_SCHEMA}`",
                f.schema
            )));
        }
        f.tolerances.validate()?;
        f.explainer.validate()?;
        Ok(f)
    }

    pub(crate) fn params<T: DeserializeOwned>(&self) -> Result<T> {
        serde_path_to_error::deserialize(self.params.clone()).map_err(|e| {
            Error::Config(format!("{} params: {}: {}", self.id, e.path(), e.inner()))
        })
    }
}

/// Observed outcome of one criterion in one arm; `pass` is `None` when the
/// criterion could not be evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub arm: String,
    pub criterion: CriterionId,
    pub methods: Vec<MethodId>,
    pub pass: Option<bool>,
    pub expected: Option<bool>,
    pub note: String,
}

impl Observation {
    pub fn matches(&self) -> bool {
        match self.expected {
            Some(e) => self.pass == Some(e),
            None => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmVerdict {
    pub arm: String,
    pub verdict: CriterionVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: ScenarioId,
    pub description: String,
    pub stand_in: String,
    pub observed: Vec<Observation>,
    /// True iff every expectation in the fixture was observed as stated.
    pub agreement: bool,
    pub measurements: BTreeMap<String, f64>,
    pub regressions: Vec<RegressionCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<AgreementCell>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<CorrelationReport>>,
    pub verdicts: Vec<ArmVerdict>,
}

impl ScenarioResult {
    pub fn regressions_ok(&self) -> bool {
        self.regressions.iter().all(|r| r.ok)
    }

    pub fn observation(&self, arm: &str, criterion: CriterionId, methods: &[MethodId]) -> Option<&Observation> {
        self.observed
            .iter()
            .find(|o| o.arm == arm && o.criterion == criterion && o.methods == methods)
    }
}

/// Accumulates observations while a scenario runs.
pub(crate) struct Recorder<'f> {
    fixture: &'f ScenarioFixture,
    observed: Vec<Observation>,
    verdicts: Vec<ArmVerdict>,
    measurements: BTreeMap<String, f64>,
}

impl<'f> Recorder<'f> {
    pub(crate) fn new(fixture: &'f ScenarioFixture) -> Self {
        Recorder {
            fixture,
            observed: Vec::new(),
            verdicts: Vec::new(),
            measurements: BTreeMap::new(),
        }
    }

    fn expected(&self, arm: &str, criterion: CriterionId, methods: &[MethodId]) -> Option<bool> {
        self.fixture
            .expected
            .iter()
            .find(|e| e.arm == arm && e.criterion == criterion && e.methods == methods)
            .map(|e| e.pass)
    }

    /// Records a verdict, or an unevaluated observation on insufficient
    /// sample. Other errors propagate.
    pub(crate) fn verdict(
        &mut self,
        arm: &str,
        criterion: CriterionId,
        methods: &[MethodId],
        result: Result<CriterionVerdict>,
    ) -> Result<Option<&CriterionVerdict>> {
        let expected = self.expected(arm, criterion, methods);
        match result {
            Ok(v) => {
                self.observed.push(Observation {
                    arm: arm.to_string(),
                    criterion,
                    methods: methods.to_vec(),
                    pass: Some(v.pass),
                    expected,
                    note: v.note.clone(),
                });
                self.verdicts.push(ArmVerdict {
                    arm: arm.to_string(),
                    verdict: v,
                });
                Ok(self.verdicts.last().map(|a| &a.verdict))
            }
            Err(e @ (Error::InsufficientSample { .. } | Error::UndefinedConditional)) => {
                self.observed.push(Observation {
                    arm: arm.to_string(),
                    criterion,
                    methods: methods.to_vec(),
                    pass: None,
                    expected,
                    note: format!("unevaluated: {e}"),
                });
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    pub(crate) fn measure(&mut self, key: impl Into<String>, value: f64) {
        self.measurements.insert(key.into(), value);
    }

    pub(crate) fn finish(
        self,
        matrix: Option<Vec<AgreementCell>>,
        correlation: Option<Vec<CorrelationReport>>,
    ) -> ScenarioResult {
        let mut observed = self.observed;
        // Expectations that never produced an observation count as mismatches.
        for e in &self.fixture.expected {
            if !observed
                .iter()
                .any(|o| o.arm == e.arm && o.criterion == e.criterion && o.methods == e.methods)
            {
                observed.push(Observation {
                    arm: e.arm.clone(),
                    criterion: e.criterion,
                    methods: e.methods.clone(),
                    pass: None,
                    expected: Some(e.pass),
                    note: "not observed".into(),
                });
            }
        }
        let agreement = observed.iter().all(Observation::matches);
        let regressions = self
            .fixture
            .frozen
            .iter()
            .map(|(name, target)| {
                let observed = self.measurements.get(name).copied();
                RegressionCheck {
                    name: name.clone(),
                    observed,
                    target: *target,
                    ok: observed.is_some_and(|v| target.holds(v)),
                }
            })
            .collect();
        ScenarioResult {
            scenario: self.fixture.id,
            description: self.fixture.description.clone(),
            stand_in: self.fixture.stand_in.clone(),
            observed,
            agreement,
            measurements: self.measurements,
            regressions,
            matrix,
            correlation,
            verdicts: self.verdicts,
        }
    }
}

/// Explainer configuration with a zero baseline filled in when none is set.
pub(crate) fn with_zero_baseline(config: &ExplainerConfig, d: usize, seed: u64) -> ExplainerConfig {
    let mut c = config.clone().with_seed(seed);
    if c.baseline.is_none() {
        c.baseline = Some(vec![0.0; d]);
    }
    c
}

pub fn run_scenario(fixture: &ScenarioFixture) -> Result<ScenarioResult> {
    match fixture.id {
        ScenarioId::KindermansShift => kindermans::run_kindermans_shift(fixture),
        ScenarioId::AdebayoRandomization => adebayo::run_adebayo_randomization(fixture),
        ScenarioId::RudinDistinctPredictions => rudin::run_rudin_distinct_predictions(fixture),
        ScenarioId::MethodDisagreement => disagreement::run_method_disagreement(fixture),
        ScenarioId::GroundtruthCorrelation => groundtruth::run_groundtruth_correlation(fixture),
    }
}

pub use adebayo::run_adebayo_randomization;
pub use disagreement::run_method_disagreement;
pub use groundtruth::run_groundtruth_correlation;
pub use kindermans::run_kindermans_shift;
pub use rudin::run_rudin_distinct_predictions;
