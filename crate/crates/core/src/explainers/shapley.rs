//! Exact Shapley values and the kernel-SHAP weighted least-squares estimator.
//!
//! The cooperative game is `v(S) = logit_c(x on S, baseline off S)`, with `c`
//! the class predicted at `x`.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::explainers::{ExplainerConfig, Explanation, MethodId, ShapMode};
use crate::model::{InputOutputPair, Model};

/// Largest feature count for which coalitions are enumerated.
pub const EXACT_COALITION_LIMIT: usize = 16;

struct Game<'a> {
    model: &'a Model,
    x: &'a [f64],
    baseline: &'a [f64],
    class: usize,
}

impl Game<'_> {
    fn value(&self, mask: u32) -> Result<f64> {
        let composite: Vec<f64> = (0..self.x.len())
            .map(|i| {
                if mask & (1 << i) != 0 {
                    self.x[i]
                } else {
                    self.baseline[i]
                }
            })
            .collect();
        self.model.logit(&composite, self.class)
    }

    fn all_values(&self) -> Result<Vec<f64>> {
        (0..1u32 << self.x.len()).map(|m| self.value(m)).collect()
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn check_limit(d: usize) -> Result<()> {
    if d > EXACT_COALITION_LIMIT {
        return Err(Error::CombinatorialLimit {
            limit: EXACT_COALITION_LIMIT,
            actual: d,
        });
    }
    Ok(())
}

/// `φ_i = Σ_{S ⊆ N∖{i}} |S|!(d−|S|−1)!/d! · (v(S ∪ {i}) − v(S))`.
pub fn explain_exact_shapley(
    model: &Model,
    pair: &InputOutputPair,
    baseline: &[f64],
) -> Result<Explanation> {
    let d = model.input_dim;
    check_limit(d)?;
    if baseline.len() != d {
        return Err(Error::InputShape {
            expected: d,
            actual: baseline.len(),
        });
    }
    let class = pair.predicted_class();
    let game = Game {
        model,
        x: &pair.x,
        baseline,
        class,
    };
    let v = game.all_values()?;
    let weight: Vec<f64> = (0..d)
        .map(|s| factorial(s) * factorial(d - s - 1) / factorial(d))
        .collect();
    let phi = (0..d)
        .map(|i| {
            let bit = 1u32 << i;
            (0..1u32 << d)
                .filter(|m| m & bit == 0)
                .map(|m| weight[m.count_ones() as usize] * (v[(m | bit) as usize] - v[m as usize]))
                .sum()
        })
        .collect();
    Explanation::local(MethodId::ExactShapley, pair, class, phi)
}

/// Shapley kernel weight of a coalition of size `s` among `d` players.
fn kernel_weight(d: usize, s: usize) -> f64 {
    let binom = factorial(d) / (factorial(s) * factorial(d - s));
    (d as f64 - 1.0) / (binom * s as f64 * (d - s) as f64)
}

/// Kernel SHAP with the efficiency constraint `Σφ = v(N) − v(∅)` imposed by
/// eliminating the last coordinate.
pub fn explain_kernel_shap(
    model: &Model,
    pair: &InputOutputPair,
    config: &ExplainerConfig,
) -> Result<Explanation> {
    let d = model.input_dim;
    let baseline = config.baseline_for(MethodId::KernelShap, d)?;
    let exact = match config.shap_mode {
        ShapMode::Auto => d <= EXACT_COALITION_LIMIT,
        ShapMode::Exact => {
            check_limit(d)?;
            true
        }
        ShapMode::Sampled => false,
    };
    if !exact && config.samples < 2 * d {
        return Err(Error::InsufficientSamples {
            method: MethodId::KernelShap.to_string(),
            required: 2 * d,
            actual: config.samples,
        });
    }
    let class = pair.predicted_class();
    let game = Game {
        model,
        x: &pair.x,
        baseline,
        class,
    };
    let full_mask = if d == 32 { u32::MAX } else { (1u32 << d) - 1 };
    let v_empty = game.value(0)?;
    let total = game.value(full_mask)? - v_empty;
    if d == 1 {
        return Explanation::local(MethodId::KernelShap, pair, class, vec![total]);
    }

    let coalitions: Vec<(u32, f64)> = if exact {
        (1..full_mask)
            .map(|m| (m, kernel_weight(d, m.count_ones() as usize)))
            .collect()
    } else {
        sample_coalitions(d, config.samples, config.seed)
    };

    // Unknowns φ_1..φ_{d−1}; φ_d = total − Σ φ_i.
    let p = d - 1;
    let last = 1u32 << (d - 1);
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for &(mask, w) in &coalitions {
        let z_last = if mask & last != 0 { 1.0 } else { 0.0 };
        for (i, r) in row.iter_mut().enumerate() {
            let zi = if mask & (1 << i) != 0 { 1.0 } else { 0.0 };
            *r = zi - z_last;
        }
        let t = game.value(mask)? - v_empty - z_last * total;
        for a in 0..p {
            rhs[a] += w * row[a] * t;
            for b in 0..p {
                gram[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    if !exact {
        for i in 0..p {
            gram[(i, i)] += config.ridge;
        }
    }
    let sol = gram.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
    let mut phi: Vec<f64> = sol.iter().copied().collect();
    phi.push(total - phi.iter().sum::<f64>());
    let e = Explanation::local(MethodId::KernelShap, pair, class, phi)?;
    Ok(if exact {
        e.with_meta(Some(coalitions.len()), None)
    } else {
        e.with_meta(Some(config.samples), Some(config.seed))
    })
}

/// Coalition sizes drawn proportionally to their total kernel mass
/// `(d−1)/(s(d−s))`, members uniform within a size; unit weights.
fn sample_coalitions(d: usize, n: usize, seed: u64) -> Vec<(u32, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mass: Vec<f64> = (1..d)
        .map(|s| (d as f64 - 1.0) / (s as f64 * (d - s) as f64))
        .collect();
    let total: f64 = mass.iter().sum();
    (0..n)
        .map(|_| {
            let mut u = rng.gen::<f64>() * total;
            let mut size = d - 1;
            for (k, m) in mass.iter().enumerate() {
                if u < *m {
                    size = k + 1;
                    break;
                }
                u -= m;
            }
            let mask = sample(&mut rng, d, size)
                .iter()
                .fold(0u32, |acc, i| acc | (1 << i));
            (mask, 1.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explainers::explain;

    fn zero_cfg(d: usize) -> ExplainerConfig {
        ExplainerConfig::default().with_baseline(vec![0.0; d])
    }

    #[test]
    fn two_feature_linear_by_hand() {
        // v(∅)=0, v({1})=2, v({2})=3, v({1,2})=5 -> φ = (2, 3)
        let m = Model::linear("l", &[vec![2.0, 3.0], vec![0.0, 0.0]], &[0.0, 0.0]).unwrap();
        let pair = InputOutputPair::new(&m, 0, vec![1.0, 1.0]).unwrap();
        assert_eq!(pair.predicted_class(), 0);
        let e = explain_exact_shapley(&m, &pair, &[0.0, 0.0]).unwrap();
        assert_eq!(e.attribution, vec![2.0, 3.0]);
    }

    #[test]
    fn kernel_shap_linear_with_baseline() {
        let w = [0.8, -1.5, 0.3, 2.2];
        let m = Model::planted_linear(&w).unwrap();
        let b = vec![0.5, -0.25, 1.0, 0.0];
        let cfg = ExplainerConfig::default().with_baseline(b.clone());
        let pair = InputOutputPair::new(&m, 0, vec![1.0, 0.3, -0.7, 0.4]).unwrap();
        let scale = (pair.predicted_class() + 1) as f64;
        let e = explain_kernel_shap(&m, &pair, &cfg).unwrap();
        for i in 0..4 {
            let expect = scale * w[i] * (pair.x[i] - b[i]);
            assert!((e.attribution[i] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn at_baseline_everything_is_zero() {
        let m = Model::planted_linear(&[1.0, 2.0, 3.0]).unwrap();
        let x = vec![0.4, 0.4, -0.2];
        let cfg = ExplainerConfig::default().with_baseline(x.clone());
        let pair = InputOutputPair::new(&m, 0, x.clone()).unwrap();
        let ks = explain_kernel_shap(&m, &pair, &cfg).unwrap();
        let ex = explain_exact_shapley(&m, &pair, &x).unwrap();
        assert!(ks.attribution.iter().all(|v| v.abs() < 1e-15));
        assert!(ex.attribution.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn symmetric_players_get_equal_value() {
        let m = Model::linear("s", &[vec![1.0, 1.0, 1.0], vec![-1.0, -1.0, -1.0]], &[0.0, 0.0])
            .unwrap();
        let pair = InputOutputPair::new(&m, 0, vec![0.7, 0.7, 0.7]).unwrap();
        let e = explain_exact_shapley(&m, &pair, &[0.0; 3]).unwrap();
        assert!((e.attribution[0] - e.attribution[1]).abs() < 1e-15);
        assert!((e.attribution[1] - e.attribution[2]).abs() < 1e-15);
    }

    #[test]
    fn combinatorial_limit() {
        let w = vec![0.1; 17];
        let m = Model::planted_linear(&w).unwrap();
        let pair = InputOutputPair::new(&m, 0, vec![0.0; 17]).unwrap();
        assert!(matches!(
            explain_exact_shapley(&m, &pair, &[0.0; 17]),
            Err(Error::CombinatorialLimit { limit: 16, actual: 17 })
        ));
        let cfg = ExplainerConfig {
            shap_mode: ShapMode::Exact,
            ..zero_cfg(17)
        };
        assert!(explain_kernel_shap(&m, &pair, &cfg).is_err());
    }

    #[test]
    fn sampled_mode_sample_floor_and_accuracy() {
        let w = [0.5, -1.0, 1.5, 0.25, -0.75];
        let m = Model::planted_linear(&w).unwrap();
        let pair = InputOutputPair::new(&m, 0, vec![1.0, -0.5, 0.2, 0.9, 0.4]).unwrap();
        let mut cfg = ExplainerConfig {
            shap_mode: ShapMode::Sampled,
            samples: 9,
            ..zero_cfg(5)
        };
        assert!(matches!(
            explain_kernel_shap(&m, &pair, &cfg),
            Err(Error::InsufficientSamples { required: 10, .. })
        ));
        // Linear games are fit exactly by any full-rank coalition sample.
        cfg.samples = 200;
        let e = explain_kernel_shap(&m, &pair, &cfg).unwrap();
        let scale = (pair.predicted_class() + 1) as f64;
        for ((a, wi), xi) in e.attribution.iter().zip(&w).zip(&pair.x) {
            assert!((a - scale * wi * xi).abs() < 1e-6);
        }
        let total: f64 = e.attribution.iter().sum();
        let v_full = m.logit(&pair.x, pair.predicted_class()).unwrap();
        assert!((total - v_full).abs() < 1e-12);
    }

    #[test]
    fn missing_baseline() {
        let m = Model::planted_linear(&[1.0, 2.0]).unwrap();
        let pair = InputOutputPair::new(&m, 0, vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            explain(MethodId::KernelShap, &m, &pair, &ExplainerConfig::default()),
            Err(Error::MissingBaseline { .. })
        ));
        assert!(matches!(
            explain(MethodId::ExactShapley, &m, &pair, &ExplainerConfig::default()),
            Err(Error::MissingBaseline { .. })
        ));
    }

    #[test]
    fn kernel_weights_match_definition() {
        // d=4, s=2: (4-1)/(C(4,2)*2*2) = 3/24
        assert!((kernel_weight(4, 2) - 0.125).abs() < 1e-15);
        assert!((kernel_weight(4, 1) - 0.25).abs() < 1e-15);
    }
}
