use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::explainers::{ExplainerConfig, Explanation, MethodId};
use crate::model::{InputOutputPair, Model};

/// Local surrogate: kernel-weighted ridge regression of the predicted-class
/// logit on Gaussian perturbation offsets `x' − x`. The intercept is fitted
/// and dropped.
pub fn explain_lime(
    model: &Model,
    pair: &InputOutputPair,
    config: &ExplainerConfig,
) -> Result<Explanation> {
    config.validate()?;
    let d = model.input_dim;
    if pair.x.len() != d {
        return Err(Error::InputShape {
            expected: d,
            actual: pair.x.len(),
        });
    }
    if config.samples < d + 2 {
        return Err(Error::InsufficientSamples {
            method: MethodId::Lime.to_string(),
            required: d + 2,
            actual: config.samples,
        });
    }
    let class = pair.predicted_class();
    let centre = model.logit(&pair.x, class)?;
    let width2 = config.kernel_width_for(d).powi(2);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Normal equations over the augmented design [1, z].
    let p = d + 1;
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    let mut perturbed = vec![0.0; d];
    row[0] = 1.0;
    for _ in 0..config.samples {
        for i in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            row[i + 1] = config.scale * z;
            perturbed[i] = pair.x[i] + row[i + 1];
        }
        let dist2: f64 = row[1..].iter().map(|z| z * z).sum();
        let k = (-dist2 / width2).exp();
        let t = model.logit(&perturbed, class)? - centre;
        for a in 0..p {
            rhs[a] += k * row[a] * t;
            for b in 0..p {
                gram[(a, b)] += k * row[a] * row[b];
            }
        }
    }
    for i in 1..p {
        gram[(i, i)] += config.ridge;
    }
    let coef = gram.cholesky().ok_or(Error::SingularSystem)?.solve(&rhs);
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(Error::SingularSystem);
    }
    let attribution = coef.iter().skip(1).copied().collect();
    Ok(Explanation::local(MethodId::Lime, pair, class, attribution)?
        .with_meta(Some(config.samples), Some(config.seed)))
}
