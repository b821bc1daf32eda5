use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::criteria::ToleranceConfig;
use crate::datasets::Generator;
use crate::error::{Error, Result};
use crate::explainers::{ExplainerConfig, MethodId};
use crate::metrics::{MetricSpec, TransformTable};
use crate::model::ModelSpec;
use crate::scenarios::ScenarioId;

pub const CONFIG_SCHEMA: &str = "cfg/1";

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "EXROB_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    pub spec: ModelSpec,
    /// Seeds of weight-randomized copies to add to the global comparison.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub randomized: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodEntry {
    pub method: MethodId,
    /// Baseline defaults to the dataset mean for methods that need one.
    #[serde(default)]
    pub config: ExplainerConfig,
}

/// Pair sampling around the first `base` dataset rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairsConfig {
    pub base: usize,
    pub similar: usize,
    pub noise: f64,
    pub distinct: usize,
    pub min_output: f64,
    pub class_flip: bool,
}

impl Default for PairsConfig {
    fn default() -> Self {
        PairsConfig {
            base: 100,
            similar: 200,
            noise: 0.05,
            distinct: 2000,
            min_output: 0.0,
            class_flip: false,
        }
    }
}

/// Model-level checks over every pair of models (including randomized
/// copies), evaluated on a Gaussian probe set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub enabled: bool,
    pub probe_size: usize,
    pub probe_scale: f64,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            enabled: false,
            probe_size: 64,
            probe_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub master_seed: u64,
    pub dataset: Generator,
    pub models: Vec<ModelEntry>,
    pub methods: Vec<MethodEntry>,
    #[serde(default)]
    pub metric: MetricSpec,
    #[serde(default)]
    pub transforms: TransformTable,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    /// Partial tolerance objects layered over `tolerances`, keyed by method
    /// id (EMR checks) or `"a|b"` (ER checks of method `a` against `b`).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tolerance_overrides: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub pairs: PairsConfig,
    #[serde(default)]
    pub global: GlobalConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scenarios: Vec<ScenarioId>,
    /// Compute ER also for pairs involving EMR-failing methods, flagged
    /// informational.
    #[serde(default = "yes")]
    pub er_over_failed_methods: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; `None` uses the rayon default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

fn yes() -> bool {
    true
}

pub fn er_key(a: MethodId, b: MethodId) -> String {
    format!("{a}|{b}")
}

impl RunConfig {
    /// Parses and validates; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            Error::Config(format!(
                "at `{}` (line {}, column {}): {inner}",
                e.path(),
                inner.line(),
                inner.column()
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "schema `{}`, expected `{CONFIG_SCHEMA}`",
                self.schema
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("method pool is empty".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("no models".into()));
        }
        let mut names: Vec<&str> = self.models.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate model names".into()));
        }
        let mut methods: Vec<MethodId> = self.methods.iter().map(|m| m.method).collect();
        methods.sort();
        if methods.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate methods in pool".into()));
        }
        for m in &self.methods {
            m.config
                .validate()
                .map_err(|e| Error::Config(format!("methods.{}: {e}", m.method)))?;
        }
        self.transforms.validate()?;
        self.tolerances.validate()?;
        for key in self.tolerance_overrides.keys() {
            let known = key.split('|').all(|part| part.parse::<MethodId>().is_ok())
                && key.split('|').count() <= 2;
            if !known {
                return Err(Error::Config(format!(
                    "tolerance_overrides: `{key}` is neither a method id nor `a|b`"
                )));
            }
            self.tolerances_for(key)?;
        }
        if self.pairs.base < 2 {
            return Err(Error::Config("pairs.base must be >= 2".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        if self.global.enabled && self.global.probe_size == 0 {
            return Err(Error::Config("global.probe_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Base tolerances with the override for `key` layered on top.
    pub fn tolerances_for(&self, key: &str) -> Result<ToleranceConfig> {
        let Some(patch) = self.tolerance_overrides.get(key) else {
            return Ok(self.tolerances.clone());
        };
        let mut merged = serde_json::to_value(&self.tolerances)?;
        merge(&mut merged, patch);
        let t: ToleranceConfig = serde_path_to_error::deserialize(merged)
            .map_err(|e| Error::Config(format!("tolerance_overrides.{key}.{}: {}", e.path(), e.inner())))?;
        t.validate()?;
        Ok(t)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("exrob-out"))
    }
}

fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        r#"{
  "schema": "cfg/1",
  "master_seed": 1,
  "dataset": {"kind": "planted_linear", "d": 3, "n": 50, "weights": [1, -1, 0.5], "noise_sd": 0},
  "models": [{"name": "f", "spec": {"kind": "planted"}}],
  "methods": [{"method": "gradient"}]
}"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses() {
        let c = RunConfig::from_json(&minimal()).unwrap();
        assert_eq!(c.pairs, PairsConfig::default());
        assert!(c.er_over_failed_methods);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = minimal().replace("\"gradient\"", "\"gradiant\"");
        let msg = RunConfig::from_json(&bad).unwrap_err().to_string();
        assert!(msg.contains("methods[0].method"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn overrides_layer_on_base() {
        let text = minimal().replace(
            "\"methods\": [{\"method\": \"gradient\"}]",
            "\"methods\": [{\"method\": \"gradient\"}], \"tolerance_overrides\": {\"gradient\": {\"emr1_input\": {\"output\": 0.5}}}",
        );
        let c = RunConfig::from_json(&text).unwrap();
        let t = c.tolerances_for("gradient").unwrap();
        assert_eq!(t.emr1_input.output, crate::criteria::Threshold::Absolute(0.5));
        assert_eq!(t.emr1_input.input, c.tolerances.emr1_input.input);
        assert_eq!(c.tolerances_for("lime").unwrap(), c.tolerances);
    }

    #[test]
    fn rejects_bad_override_keys_and_empty_pool() {
        let text = minimal().replace(
            "\"methods\": [{\"method\": \"gradient\"}]",
            "\"methods\": [{\"method\": \"gradient\"}], \"tolerance_overrides\": {\"nope\": {}}",
        );
        assert!(RunConfig::from_json(&text).is_err());
        let text = minimal().replace("[{\"method\": \"gradient\"}]", "[]");
        assert!(RunConfig::from_json(&text).is_err());
    }
}
