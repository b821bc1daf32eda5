//! Feature-attribution methods.
//!
//! Every method attributes the logit of the class predicted at the explained
//! input, so all of them target the same quantity and their outputs live in
//! one space (one real score per input feature).

mod lime;
mod saliency;
mod shapley;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InputOutputPair, Model, ProbeSet};

pub use lime::explain_lime;
pub use saliency::{
    broken_constant_attribution, explain_broken_constant, explain_gradient,
    explain_input_x_gradient, explain_occlusion,
};
pub use shapley::{explain_exact_shapley, explain_kernel_shap, EXACT_COALITION_LIMIT};

pub const EXPLANATION_SCHEMA: &str = "expl/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodId {
    Gradient,
    InputXGradient,
    Occlusion,
    Lime,
    KernelShap,
    ExactShapley,
    BrokenConstant,
}

impl MethodId {
    pub const ALL: [MethodId; 7] = [
        MethodId::Gradient,
        MethodId::InputXGradient,
        MethodId::Occlusion,
        MethodId::Lime,
        MethodId::KernelShap,
        MethodId::ExactShapley,
        MethodId::BrokenConstant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Gradient => "gradient",
            MethodId::InputXGradient => "input_x_gradient",
            MethodId::Occlusion => "occlusion",
            MethodId::Lime => "lime",
            MethodId::KernelShap => "kernel_shap",
            MethodId::ExactShapley => "exact_shapley",
            MethodId::BrokenConstant => "broken_constant",
        }
    }

    pub fn needs_baseline(self) -> bool {
        matches!(
            self,
            MethodId::Occlusion | MethodId::KernelShap | MethodId::ExactShapley
        )
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// What an explanation is about: one input-output pair or a whole model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum Target {
    Local { pair: usize },
    Global { model: String },
}

impl Target {
    pub fn is_local(&self) -> bool {
        matches!(self, Target::Local { .. })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplanationMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub attribution: Vec<f64>,
    pub method: MethodId,
    pub target: Target,
    pub class: usize,
    #[serde(default)]
    pub transformed: bool,
    #[serde(default)]
    pub meta: ExplanationMeta,
}

impl Explanation {
    pub(crate) fn local(
        method: MethodId,
        pair: &InputOutputPair,
        class: usize,
        attribution: Vec<f64>,
    ) -> Result<Self> {
        if attribution.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("attribution"));
        }
        Ok(Explanation {
            attribution,
            method,
            target: Target::Local { pair: pair.id },
            class,
            transformed: false,
            meta: ExplanationMeta::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.attribution.len()
    }

    pub(crate) fn with_meta(mut self, samples: Option<usize>, seed: Option<u64>) -> Self {
        self.meta = ExplanationMeta { samples, seed };
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapMode {
    /// Exact enumeration up to the coalition limit, sampling beyond it.
    #[default]
    Auto,
    Exact,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainerConfig {
    /// Perturbation draws (LIME) or coalition draws (sampled kernel SHAP).
    pub samples: usize,
    /// Standard deviation of LIME perturbations.
    pub scale: f64,
    /// LIME kernel width; `None` means `0.75·√d`.
    pub kernel_width: Option<f64>,
    /// Reference input for occlusion and the Shapley methods.
    pub baseline: Option<Vec<f64>>,
    pub ridge: f64,
    pub seed: u64,
    pub shap_mode: ShapMode,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        ExplainerConfig {
            samples: 500,
            scale: 0.5,
            kernel_width: None,
            baseline: None,
            ridge: 1e-8,
            seed: 0,
            shap_mode: ShapMode::Auto,
        }
    }
}

impl ExplainerConfig {
    pub fn with_baseline(mut self, baseline: Vec<f64>) -> Self {
        self.baseline = Some(baseline);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn kernel_width_for(&self, d: usize) -> f64 {
        self.kernel_width.unwrap_or(0.75 * (d as f64).sqrt())
    }

    pub(crate) fn baseline_for(&self, method: MethodId, d: usize) -> Result<&[f64]> {
        let b = self
            .baseline
            .as_deref()
            .ok_or_else(|| Error::MissingBaseline {
                method: method.to_string(),
            })?;
        if b.len() != d {
            return Err(Error::InputShape {
                expected: d,
                actual: b.len(),
            });
        }
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.kernel_width {
            if !(w > 0.0) {
                return Err(Error::param("kernel_width", "must be > 0"));
            }
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::param("ridge", "must be >= 0"));
        }
        if !(self.scale >= 0.0) || !self.scale.is_finite() {
            return Err(Error::param("scale", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Explains `pair` (produced by `model`) with `method`.
pub fn explain(
    method: MethodId,
    model: &Model,
    pair: &InputOutputPair,
    config: &ExplainerConfig,
) -> Result<Explanation> {
    match method {
        MethodId::Gradient => explain_gradient(model, pair),
        MethodId::InputXGradient => explain_input_x_gradient(model, pair),
        MethodId::Occlusion => explain_occlusion(model, pair, config),
        MethodId::Lime => explain_lime(model, pair, config),
        MethodId::KernelShap => explain_kernel_shap(model, pair, config),
        MethodId::ExactShapley => {
            let baseline = config.baseline_for(method, model.input_dim)?;
            explain_exact_shapley(model, pair, baseline)
        }
        MethodId::BrokenConstant => explain_broken_constant(model, pair),
    }
}

/// Model-level attribution: mean absolute local attribution over the probe
/// set, L1-normalized (the zero vector stays zero).
pub fn explain_global(
    method: MethodId,
    model: &Model,
    probe: &ProbeSet,
    config: &ExplainerConfig,
) -> Result<Explanation> {
    if probe.is_empty() {
        return Err(Error::EmptyProbe);
    }
    let locals = probe
        .inputs
        .par_iter()
        .enumerate()
        .map(|(k, x)| {
            let pair = InputOutputPair::new(model, k, x.clone())?;
            explain(method, model, &pair, config)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = vec![0.0; model.input_dim];
    for e in &locals {
        for (m, a) in mean.iter_mut().zip(&e.attribution) {
            *m += a.abs();
        }
    }
    let n = locals.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let total: f64 = mean.iter().sum();
    if total > 0.0 {
        mean.iter_mut().for_each(|m| *m /= total);
    }
    let class_mode = {
        let mut counts = vec![0usize; model.classes];
        locals.iter().for_each(|e| counts[e.class] += 1);
        counts
            .iter()
            .enumerate()
            .max_by_key(|&(i, c)| (c, std::cmp::Reverse(i)))
            .map(|(i, _)| i)
            .unwrap_or(0)
    };
    let meta = locals.first().map(|e| e.meta.clone()).unwrap_or_default();
    Ok(Explanation {
        attribution: mean,
        method,
        target: Target::Global {
            model: model.id.clone(),
        },
        class: class_mode,
        transformed: false,
        meta: ExplanationMeta {
            samples: Some(probe.len()),
            seed: meta.seed,
        },
    })
}

#[derive(Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub schema: String,
    pub method: MethodId,
    pub target: Target,
    pub class: usize,
    pub attribution: Vec<f64>,
    pub config: ExplainerConfig,
    pub seed: Option<u64>,
}

impl ExplanationRecord {
    pub fn new(e: &Explanation, config: &ExplainerConfig) -> Self {
        ExplanationRecord {
            schema: EXPLANATION_SCHEMA.into(),
            method: e.method,
            target: e.target.clone(),
            class: e.class,
            attribution: e.attribution.clone(),
            config: config.clone(),
            seed: e.meta.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_ids_round_trip_through_strings() {
        for m in MethodId::ALL {
            assert_eq!(m.as_str().parse::<MethodId>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
        assert!("saliency".parse::<MethodId>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = ExplainerConfig::default();
        assert!(c.validate().is_ok());
        c.kernel_width = Some(0.0);
        assert!(c.validate().is_err());
        c.kernel_width = None;
        c.ridge = -1.0;
        assert!(c.validate().is_err());
    }

    fn linear() -> Model {
        Model::planted_linear(&[1.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn global_of_zero_attributions_is_zero() {
        let m = Model::linear("z", &[vec![0.0; 3], vec![0.0; 3]], &[0.0, 0.0]).unwrap();
        let probe = ProbeSet::gaussian(3, 20, 1.0, 1).unwrap();
        let g = explain_global(MethodId::Gradient, &m, &probe, &ExplainerConfig::default()).unwrap();
        assert_eq!(g.attribution, vec![0.0; 3]);
    }

    #[test]
    fn global_gradient_concentrates_on_planted_feature() {
        let probe = ProbeSet::gaussian(3, 50, 1.0, 2).unwrap();
        let g = explain_global(MethodId::Gradient, &linear(), &probe, &ExplainerConfig::default())
            .unwrap();
        assert!(g.attribution[0] >= 0.9);
        assert_eq!(
            g.target,
            Target::Global {
                model: "planted-linear".into()
            }
        );
    }

    #[test]
    fn global_of_singleton_probe() {
        let m = Model::linear("l", &[vec![1.0, -3.0], vec![2.0, 0.5]], &[0.0, 0.0]).unwrap();
        let x = vec![0.4, 1.2];
        let probe = ProbeSet::new(vec![x.clone()], None, "one").unwrap();
        let cfg = ExplainerConfig::default();
        let g = explain_global(MethodId::InputXGradient, &m, &probe, &cfg).unwrap();
        let pair = InputOutputPair::new(&m, 0, x).unwrap();
        let local = explain(MethodId::InputXGradient, &m, &pair, &cfg).unwrap();
        let l1: f64 = local.attribution.iter().map(|v| v.abs()).sum();
        for (gv, lv) in g.attribution.iter().zip(&local.attribution) {
            assert!((gv - lv.abs() / l1).abs() < 1e-15);
        }
    }

    #[test]
    fn global_rejects_empty_probe() {
        let probe = ProbeSet {
            inputs: vec![],
            seed: None,
            source: "empty".into(),
        };
        assert!(matches!(
            explain_global(MethodId::Gradient, &linear(), &probe, &ExplainerConfig::default()),
            Err(Error::EmptyProbe)
        ));
    }

    #[test]
    fn record_carries_schema() {
        let m = linear();
        let pair = InputOutputPair::new(&m, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let cfg = ExplainerConfig::default();
        let e = explain(MethodId::Gradient, &m, &pair, &cfg).unwrap();
        let json = serde_json::to_string(&ExplanationRecord::new(&e, &cfg)).unwrap();
        assert!(json.contains("\"schema\":\"expl/1\""));
        assert!(json.contains("\"scope\":\"local\""));
    }
}
