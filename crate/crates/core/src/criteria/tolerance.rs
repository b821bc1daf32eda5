use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::PairDistance;

/// A tolerance given either directly or as a quantile of an empirically
/// observed distance distribution.
///
/// In JSON a bare number is absolute and `{"quantile": q}` is a quantile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Threshold {
    Absolute(f64),
    Quantile { quantile: f64 },
}

impl Threshold {
    pub fn q(quantile: f64) -> Self {
        Threshold::Quantile { quantile }
    }

    pub fn is_quantile(&self) -> bool {
        matches!(self, Threshold::Quantile { .. })
    }

    /// Absolute values pass through; quantiles are read off `reference`
    /// and clamped below by `floor`.
    pub fn resolve(&self, reference: &[f64], floor: f64) -> Result<f64> {
        match *self {
            Threshold::Absolute(v) => Ok(v),
            Threshold::Quantile { quantile } => {
                let q = quantile_of(reference, quantile).ok_or_else(|| {
                    Error::Config("quantile threshold over an empty reference sample".into())
                })?;
                Ok(q.max(floor))
            }
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        match *self {
            Threshold::Absolute(v) if !(v.is_finite() && v >= 0.0) => Err(Error::Config(format!(
                "tolerance `{name}` must be finite and >= 0, got {v}"
            ))),
            Threshold::Quantile { quantile } if !(quantile > 0.0 && quantile < 1.0) => {
                Err(Error::Config(format!(
                    "tolerance `{name}` quantile must lie in (0, 1), got {quantile}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Linear-interpolation quantile of the sorted sample.
pub fn quantile_of(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Componentwise tolerance on the vector-valued pair metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairThreshold {
    pub input: Threshold,
    pub output: Threshold,
}

impl PairThreshold {
    pub fn both(t: Threshold) -> Self {
        PairThreshold { input: t, output: t }
    }

    pub fn absolute(input: f64, output: f64) -> Self {
        PairThreshold {
            input: Threshold::Absolute(input),
            output: Threshold::Absolute(output),
        }
    }

    pub fn resolve(&self, reference: &[PairDistance], floor: f64) -> Result<PairDistance> {
        let inputs: Vec<f64> = reference.iter().map(|d| d.input).collect();
        let outputs: Vec<f64> = reference.iter().map(|d| d.output).collect();
        Ok(PairDistance::new(
            self.input.resolve(&inputs, floor)?,
            self.output.resolve(&outputs, floor)?,
        ))
    }
}

/// Every contextual tolerance of the ER and EMR conditions.
///
/// Field names follow the conditions they parameterize: `*_input` fields
/// bound the premise (pair metric or model divergence), `*_output` fields
/// bound the explanation distance in the conclusion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceConfig {
    /// ER-1 local: `d(X(z), φ(X̂(z))) < er1_local`.
    pub er1_local: Threshold,
    pub er1_global: Threshold,
    /// ER-2 local premise on the pair metric.
    pub er2_gamma: PairThreshold,
    /// ER-2 global premise on the model divergence.
    pub er2_gamma_global: Threshold,
    pub er2_epsilon: Threshold,
    pub er2_epsilon_global: Threshold,
    pub er2r_delta: Threshold,
    pub er2r_delta_global: Threshold,
    pub er2r_lambda: f64,
    pub er2r_lambda_global: f64,
    /// Premise of global ER-2'; falls back to `er2_gamma_global`.
    pub er2r_gamma_global: Option<Threshold>,
    pub emr1_input: PairThreshold,
    pub emr1_output: Threshold,
    pub emr2_input: PairThreshold,
    pub emr2_output: Threshold,
    pub emr2r_delta: Threshold,
    pub emr2r_lambda: f64,
    pub global_emr1_input: Threshold,
    pub global_emr1_output: Threshold,
    pub global_emr2_input: Threshold,
    pub global_emr2_output: Threshold,
    pub global_emr2r_delta: Threshold,
    pub global_emr2r_lambda: f64,
    /// Allowed violation fraction for universally quantified conditions.
    pub slack: f64,
    pub min_relaxed_sample: usize,
    pub min_relaxed_sample_global: usize,
    /// Lower bound applied to quantile-resolved thresholds.
    pub quantile_floor: f64,
    pub counterexamples: usize,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        let lo = Threshold::q(0.10);
        let mid = Threshold::q(0.50);
        let hi = Threshold::q(0.90);
        ToleranceConfig {
            er1_local: lo,
            er1_global: lo,
            er2_gamma: PairThreshold::both(hi),
            er2_gamma_global: hi,
            er2_epsilon: lo,
            er2_epsilon_global: lo,
            er2r_delta: lo,
            er2r_delta_global: lo,
            er2r_lambda: 0.1,
            er2r_lambda_global: 0.1,
            er2r_gamma_global: None,
            emr1_input: PairThreshold::both(lo),
            emr1_output: mid,
            emr2_input: PairThreshold::both(hi),
            emr2_output: lo,
            emr2r_delta: lo,
            emr2r_lambda: 0.1,
            global_emr1_input: lo,
            global_emr1_output: mid,
            global_emr2_input: hi,
            global_emr2_output: lo,
            global_emr2r_delta: lo,
            global_emr2r_lambda: 0.1,
            slack: 0.0,
            min_relaxed_sample: 100,
            min_relaxed_sample_global: 1,
            quantile_floor: 1e-12,
            counterexamples: 10,
        }
    }
}

fn ordered(name: &str, similar: &Threshold, distinct: &Threshold) -> Result<()> {
    let bad = match (similar, distinct) {
        (Threshold::Absolute(a), Threshold::Absolute(b)) => a > b,
        (Threshold::Quantile { quantile: a }, Threshold::Quantile { quantile: b }) => a > b,
        _ => false,
    };
    if bad {
        return Err(Error::Config(format!(
            "`{name}`: similarity tolerance exceeds distinctness tolerance"
        )));
    }
    Ok(())
}

impl ToleranceConfig {
    pub fn er2r_gamma_global(&self) -> Threshold {
        self.er2r_gamma_global.unwrap_or(self.er2_gamma_global)
    }

    pub fn thresholds(&self) -> Vec<(&'static str, Threshold)> {
        vec![
            ("er1_local", self.er1_local),
            ("er1_global", self.er1_global),
            ("er2_gamma.input", self.er2_gamma.input),
            ("er2_gamma.output", self.er2_gamma.output),
            ("er2_gamma_global", self.er2_gamma_global),
            ("er2_epsilon", self.er2_epsilon),
            ("er2_epsilon_global", self.er2_epsilon_global),
            ("er2r_delta", self.er2r_delta),
            ("er2r_delta_global", self.er2r_delta_global),
            ("er2r_gamma_global", self.er2r_gamma_global()),
            ("emr1_input.input", self.emr1_input.input),
            ("emr1_input.output", self.emr1_input.output),
            ("emr1_output", self.emr1_output),
            ("emr2_input.input", self.emr2_input.input),
            ("emr2_input.output", self.emr2_input.output),
            ("emr2_output", self.emr2_output),
            ("emr2r_delta", self.emr2r_delta),
            ("global_emr1_input", self.global_emr1_input),
            ("global_emr1_output", self.global_emr1_output),
            ("global_emr2_input", self.global_emr2_input),
            ("global_emr2_output", self.global_emr2_output),
            ("global_emr2r_delta", self.global_emr2r_delta),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in self.thresholds() {
            t.validate(name)?;
        }
        for (name, l) in [
            ("er2r_lambda", self.er2r_lambda),
            ("er2r_lambda_global", self.er2r_lambda_global),
            ("emr2r_lambda", self.emr2r_lambda),
            ("global_emr2r_lambda", self.global_emr2r_lambda),
            ("slack", self.slack),
        ] {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::Config(format!("`{name}` must lie in [0, 1], got {l}")));
            }
        }
        if !(self.quantile_floor >= 0.0) {
            return Err(Error::Config("`quantile_floor` must be >= 0".into()));
        }
        ordered("emr input", &self.emr1_input.input, &self.emr2_input.input)?;
        ordered("emr output", &self.emr1_input.output, &self.emr2_input.output)?;
        ordered("global emr", &self.global_emr1_input, &self.global_emr2_input)?;
        Ok(())
    }

    /// Whether any threshold is still given as a quantile.
    pub fn has_quantiles(&self) -> bool {
        self.thresholds().iter().any(|(_, t)| t.is_quantile())
    }

    /// Replaces the threshold named `key` (as reported in verdicts) with an
    /// absolute value.
    pub fn pin(&mut self, key: &str, value: f64) -> Result<()> {
        let abs = Threshold::Absolute(value);
        match key {
            "er1_local" => self.er1_local = abs,
            "er1_global" => self.er1_global = abs,
            "er2_gamma.input" => self.er2_gamma.input = abs,
            "er2_gamma.output" => self.er2_gamma.output = abs,
            "er2_gamma_global" => self.er2_gamma_global = abs,
            "er2_epsilon" => self.er2_epsilon = abs,
            "er2_epsilon_global" => self.er2_epsilon_global = abs,
            "er2r_delta" => self.er2r_delta = abs,
            "er2r_delta_global" => self.er2r_delta_global = abs,
            "er2r_gamma_global" => self.er2r_gamma_global = Some(abs),
            "emr1_input.input" => self.emr1_input.input = abs,
            "emr1_input.output" => self.emr1_input.output = abs,
            "emr1_output" => self.emr1_output = abs,
            "emr2_input.input" => self.emr2_input.input = abs,
            "emr2_input.output" => self.emr2_input.output = abs,
            "emr2_output" => self.emr2_output = abs,
            "emr2r_delta" => self.emr2r_delta = abs,
            "global_emr1_input" => self.global_emr1_input = abs,
            "global_emr1_output" => self.global_emr1_output = abs,
            "global_emr2_input" => self.global_emr2_input = abs,
            "global_emr2_output" => self.global_emr2_output = abs,
            "global_emr2r_delta" => self.global_emr2r_delta = abs,
            "er2r_lambda" => self.er2r_lambda = value,
            "er2r_lambda_global" => self.er2r_lambda_global = value,
            "emr2r_lambda" => self.emr2r_lambda = value,
            "global_emr2r_lambda" => self.global_emr2r_lambda = value,
            "slack" => self.slack = value,
            other => return Err(Error::Config(format!("unknown tolerance `{other}`"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile_of(&v, 0.5), Some(3.0));
        assert_eq!(quantile_of(&v, 0.1), Some(1.4));
        assert_eq!(quantile_of(&[], 0.5), None);
        assert_eq!(quantile_of(&[7.0], 0.9), Some(7.0));
    }

    #[test]
    fn floor_applies_only_to_quantiles() {
        assert_eq!(Threshold::q(0.5).resolve(&[0.0, 0.0], 1e-12).unwrap(), 1e-12);
        assert_eq!(Threshold::Absolute(0.0).resolve(&[], 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn json_forms() {
        let t: Threshold = serde_json::from_str("0.25").unwrap();
        assert_eq!(t, Threshold::Absolute(0.25));
        let t: Threshold = serde_json::from_str("{\"quantile\": 0.9}").unwrap();
        assert_eq!(t, Threshold::q(0.9));
        let cfg: ToleranceConfig = serde_json::from_str("{\"emr2r_lambda\": 0.2}").unwrap();
        assert_eq!(cfg.emr2r_lambda, 0.2);
        assert!(serde_json::from_str::<ToleranceConfig>("{\"bogus\": 1}").is_err());
    }

    #[test]
    fn validation() {
        assert!(ToleranceConfig::default().validate().is_ok());
        let bad = [
            ToleranceConfig {
                emr2r_lambda: 1.5,
                ..Default::default()
            },
            ToleranceConfig {
                er1_local: Threshold::q(1.0),
                ..Default::default()
            },
            ToleranceConfig {
                emr1_input: PairThreshold::absolute(2.0, 0.1),
                emr2_input: PairThreshold::absolute(1.0, 0.5),
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn pinning_removes_quantiles() {
        let mut c = ToleranceConfig::default();
        assert!(c.has_quantiles());
        let names: Vec<&str> = c.thresholds().into_iter().map(|(n, _)| n).collect();
        for name in names {
            c.pin(name, 0.5).unwrap();
        }
        assert!(!c.has_quantiles());
        assert!(c.pin("nope", 1.0).is_err());
    }
}
