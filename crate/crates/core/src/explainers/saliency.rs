use crate::error::Result;
use crate::explainers::{ExplainerConfig, Explanation, MethodId};
use crate::model::{InputOutputPair, Model};

/// Gradient of the predicted-class logit at `x`.
pub fn explain_gradient(model: &Model, pair: &InputOutputPair) -> Result<Explanation> {
    let class = pair.predicted_class();
    let g = model.gradient(&pair.x, class)?;
    Explanation::local(MethodId::Gradient, pair, class, g)
}

/// `x_i · ∂logit/∂x_i`.
pub fn explain_input_x_gradient(model: &Model, pair: &InputOutputPair) -> Result<Explanation> {
    let class = pair.predicted_class();
    let g = model.gradient(&pair.x, class)?;
    let a = g.iter().zip(&pair.x).map(|(g, x)| g * x).collect();
    Explanation::local(MethodId::InputXGradient, pair, class, a)
}

/// Drop in predicted-class logit when feature `i` is replaced by `baseline_i`.
pub fn explain_occlusion(
    model: &Model,
    pair: &InputOutputPair,
    config: &ExplainerConfig,
) -> Result<Explanation> {
    let baseline = config.baseline_for(MethodId::Occlusion, model.input_dim)?;
    let class = pair.predicted_class();
    let full = model.logit(&pair.x, class)?;
    let mut probe = pair.x.clone();
    let mut a = Vec::with_capacity(pair.x.len());
    for i in 0..pair.x.len() {
        probe[i] = baseline[i];
        a.push(full - model.logit(&probe, class)?);
        probe[i] = pair.x[i];
    }
    Explanation::local(MethodId::Occlusion, pair, class, a)
}

/// `(1, …, 1)/√d`.
pub fn broken_constant_attribution(d: usize) -> Vec<f64> {
    vec![1.0 / (d as f64).sqrt(); d]
}

/// Negative control: ignores the model and the input entirely.
pub fn explain_broken_constant(model: &Model, pair: &InputOutputPair) -> Result<Explanation> {
    model.logits(&pair.x)?;
    Explanation::local(
        MethodId::BrokenConstant,
        pair,
        pair.predicted_class(),
        broken_constant_attribution(model.input_dim),
    )
}
