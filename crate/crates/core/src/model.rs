//! Small differentiable classifiers with exact input gradients.
//!
//! Every model is a stack of affine layers. Hidden layers apply an
//! elementwise activation; the last layer produces class logits which
//! `forward` turns into a probability vector with a softmax.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};

pub const MODEL_SCHEMA: &str = "model/1";

/// Largest supported input dimension.
pub const MAX_INPUT_DIM: usize = 32;
/// Largest supported hidden width.
pub const MAX_HIDDEN_WIDTH: usize = 64;
/// Largest supported number of hidden layers.
pub const MAX_HIDDEN_LAYERS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Relu => a.max(0.0),
            Activation::Tanh => a.tanh(),
        }
    }

    /// Derivative with respect to the pre-activation. ReLU uses the
    /// subgradient 0 at exactly 0.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = a.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    LinearSoftmax,
    Mlp {
        hidden: Vec<usize>,
        activation: Activation,
    },
}

impl Architecture {
    pub fn mlp(hidden: &[usize], activation: Activation) -> Self {
        Architecture::Mlp {
            hidden: hidden.to_vec(),
            activation,
        }
    }

    fn hidden(&self) -> &[usize] {
        match self {
            Architecture::LinearSoftmax => &[],
            Architecture::Mlp { hidden, .. } => hidden,
        }
    }

    fn activation(&self) -> Option<Activation> {
        match self {
            Architecture::LinearSoftmax => None,
            Architecture::Mlp { activation, .. } => Some(*activation),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Architecture::LinearSoftmax => "linear".to_string(),
            Architecture::Mlp { hidden, activation } => {
                let widths: Vec<String> = hidden.iter().map(|w| w.to_string()).collect();
                format!("mlp{}-{:?}", widths.join("x"), activation).to_lowercase()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let hidden = self.hidden();
        if let Architecture::Mlp { .. } = self {
            if hidden.is_empty() || hidden.len() > MAX_HIDDEN_LAYERS {
                return Err(Error::InvalidModel(format!(
                    "MLP needs 1..={MAX_HIDDEN_LAYERS} hidden layers, got {}",
                    hidden.len()
                )));
            }
        }
        if let Some(&w) = hidden.iter().find(|&&w| w == 0 || w > MAX_HIDDEN_WIDTH) {
            return Err(Error::InvalidModel(format!(
                "hidden width {w} outside 1..={MAX_HIDDEN_WIDTH}"
            )));
        }
        Ok(())
    }
}

/// How a model is obtained from a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// [`Model::planted_linear`] with the dataset's ground-truth weights.
    Planted,
    Trained {
        architecture: Architecture,
        #[serde(default)]
        training: TrainParams,
        #[serde(default)]
        seed: u64,
    },
}

impl ModelSpec {
    pub fn build(&self, data: &Dataset) -> Result<Model> {
        match self {
            ModelSpec::Planted => match &data.ground_truth {
                Some(crate::datasets::GroundTruth::Linear { weights }) => {
                    Model::planted_linear(weights)
                }
                None => Err(Error::MissingGroundTruth),
            },
            ModelSpec::Trained {
                architecture,
                training,
                seed,
            } => Model::train(data, architecture.clone(), *training, *seed),
        }
    }

    pub fn with_seed(&self, seed: u64) -> ModelSpec {
        match self {
            ModelSpec::Planted => ModelSpec::Planted,
            ModelSpec::Trained {
                architecture,
                training,
                ..
            } => ModelSpec::Trained {
                architecture: architecture.clone(),
                training: *training,
                seed,
            },
        }
    }
}

/// One affine map `out = W·in + b`, weights stored row-major (`outputs × inputs`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.inputs..(r + 1) * self.inputs]
    }

    fn apply(&self, input: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(input)
                    .fold(self.bias[r], |acc, (w, x)| acc + w * x)
            })
            .collect()
    }

    /// `Wᵀ·g`
    fn back(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.inputs];
        for (r, &gr) in g.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += w * gr;
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub iterations: usize,
    #[serde(default)]
    pub l2: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            learning_rate: 0.5,
            iterations: 500,
            l2: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Constructed,
    Trained,
    Randomized,
    ShiftCompensated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

impl Provenance {
    pub fn constructed() -> Self {
        Provenance {
            origin: Origin::Constructed,
            dataset: None,
            seed: None,
            training: None,
            parent: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub id: String,
    pub architecture: Architecture,
    pub input_dim: usize,
    pub classes: usize,
    pub layers: Vec<Layer>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    schema: String,
    #[serde(flatten)]
    model: Model,
}

impl Model {
    /// Linear-softmax model from per-class weight rows and biases.
    pub fn linear(id: impl Into<String>, rows: &[Vec<f64>], bias: &[f64]) -> Result<Self> {
        let classes = rows.len();
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidModel("ragged weight rows".into()));
        }
        let layer = Layer {
            inputs: dim,
            outputs: classes,
            weights: rows.concat(),
            bias: bias.to_vec(),
        };
        Model::from_layers(
            id,
            Architecture::LinearSoftmax,
            vec![layer],
            Provenance::constructed(),
        )
    }

    /// Two-class linear model whose class-`c` logit is `(c + 1)·w·x`.
    ///
    /// P(class 1) = σ(w·x), so the predicted class is the planted label rule,
    /// and every class logit has input gradient parallel to `w`.
    pub fn planted_linear(weights: &[f64]) -> Result<Self> {
        let doubled: Vec<f64> = weights.iter().map(|w| 2.0 * w).collect();
        Model::linear("planted-linear", &[weights.to_vec(), doubled], &[0.0, 0.0])
    }

    pub fn from_layers(
        id: impl Into<String>,
        architecture: Architecture,
        layers: Vec<Layer>,
        provenance: Provenance,
    ) -> Result<Self> {
        let input_dim = layers.first().map(|l| l.inputs).unwrap_or(0);
        let classes = layers.last().map(|l| l.outputs).unwrap_or(0);
        let model = Model {
            id: id.into(),
            architecture,
            input_dim,
            classes,
            layers,
            provenance,
        };
        model.validate()?;
        Ok(model)
    }

    /// Parameters drawn from the initialization distribution: weights
    /// N(0, gain/fan_in) with gain 2 for ReLU inputs and 1 otherwise, zero biases.
    pub fn initialized(
        id: impl Into<String>,
        architecture: Architecture,
        input_dim: usize,
        classes: usize,
        seed: u64,
    ) -> Result<Self> {
        architecture.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![input_dim];
        widths.extend_from_slice(architecture.hidden());
        widths.push(classes);
        let activation = architecture.activation();
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let gain = match (k, activation) {
                    (0, _) | (_, None) | (_, Some(Activation::Tanh)) => 1.0,
                    (_, Some(Activation::Relu)) => 2.0,
                };
                let normal = Normal::new(0.0, (gain / w[0] as f64).sqrt())
                    .expect("positive standard deviation");
                Layer {
                    inputs: w[0],
                    outputs: w[1],
                    weights: (0..w[0] * w[1]).map(|_| normal.sample(&mut rng)).collect(),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Model::from_layers(
            id,
            architecture,
            layers,
            Provenance {
                origin: Origin::Randomized,
                dataset: None,
                seed: Some(seed),
                training: None,
                parent: None,
            },
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        let mut widths = vec![self.input_dim];
        widths.extend_from_slice(self.architecture.hidden());
        widths.push(self.classes);
        if self.layers.len() + 1 != widths.len() {
            return Err(Error::InvalidModel(format!(
                "architecture {} expects {} layers, found {}",
                self.architecture.label(),
                widths.len() - 1,
                self.layers.len()
            )));
        }
        if self.input_dim == 0 || self.input_dim > MAX_INPUT_DIM {
            return Err(Error::InvalidModel(format!(
                "input dimension {} outside 1..={MAX_INPUT_DIM}",
                self.input_dim
            )));
        }
        if self.classes < 2 {
            return Err(Error::InvalidModel("need at least 2 classes".into()));
        }
        for (k, (layer, w)) in self.layers.iter().zip(widths.windows(2)).enumerate() {
            if layer.inputs != w[0]
                || layer.outputs != w[1]
                || layer.weights.len() != w[0] * w[1]
                || layer.bias.len() != w[1]
            {
                return Err(Error::InvalidModel(format!(
                    "layer {k} shape inconsistent with {}",
                    self.architecture.label()
                )));
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("model parameters"));
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::InputShape {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.logits_unchecked(x))
    }

    fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let activation = self.architecture.activation();
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let a = layer.apply(&h);
            h = match activation {
                Some(act) if k < last => a.into_iter().map(|v| act.apply(v)).collect(),
                _ => a,
            };
        }
        h
    }

    pub fn logit(&self, x: &[f64], class: usize) -> Result<f64> {
        self.check_class(class)?;
        Ok(self.logits(x)?[class])
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.classes {
            return Err(Error::ClassIndex {
                index: class,
                classes: self.classes,
            });
        }
        Ok(())
    }

    /// Exact ∂ logit_class / ∂x by backpropagation.
    pub fn gradient(&self, x: &[f64], class: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.check_class(class)?;
        let activation = self.architecture.activation();
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(last);
        let mut h = x.to_vec();
        for layer in &self.layers[..last] {
            let a = layer.apply(&h);
            let act = activation.expect("hidden layers imply an activation");
            h = a.iter().map(|&v| act.apply(v)).collect();
            pre.push(a);
        }
        let mut g = self.layers[last].row(class).to_vec();
        for (layer, a) in self.layers[..last].iter().zip(&pre).rev() {
            let act = activation.expect("hidden layers imply an activation");
            for (gi, &ai) in g.iter_mut().zip(a) {
                *gi *= act.derivative(ai);
            }
            g = layer.back(&g);
        }
        Ok(g)
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        let correct = data
            .rows()
            .zip(&data.labels)
            .filter(|(x, &y)| argmax(&self.logits_unchecked(x)) == y)
            .count();
        correct as f64 / data.len() as f64
    }

    /// Same architecture, parameters redrawn with `seed`.
    pub fn randomize_weights(&self, seed: u64) -> Model {
        let mut fresh = Model::initialized(
            format!("{}~rand{seed}", self.id),
            self.architecture.clone(),
            self.input_dim,
            self.classes,
            seed,
        )
        .expect("architecture of a valid model is valid");
        fresh.provenance.parent = Some(self.id.clone());
        fresh.provenance.dataset = self.provenance.dataset.clone();
        fresh
    }

    /// Model `g` with `g(x + shift) = f(x)`, absorbing the shift into the
    /// first-layer bias: `b' = b − W·shift`.
    pub fn shift_compensated(&self, shift: &[f64]) -> Result<Model> {
        self.check_input(shift)?;
        let mut g = self.clone();
        let first = g
            .layers
            .first_mut()
            .ok_or_else(|| Error::UnsupportedArchitecture("no affine first layer".into()))?;
        for r in 0..first.outputs {
            let ws: f64 = first.row(r).iter().zip(shift).map(|(w, s)| w * s).sum();
            first.bias[r] -= ws;
        }
        g.id = format!("{}+shift", self.id);
        g.provenance = Provenance {
            origin: Origin::ShiftCompensated,
            parent: Some(self.id.clone()),
            ..self.provenance.clone()
        };
        Ok(g)
    }

    /// Full-batch gradient descent on mean cross-entropy.
    ///
    /// Linear-softmax models start from zero parameters (the problem is
    /// convex); MLPs start from [`Model::initialized`] with `seed`.
    pub fn train(
        data: &Dataset,
        architecture: Architecture,
        params: TrainParams,
        seed: u64,
    ) -> Result<Model> {
        if data.is_empty() {
            return Err(Error::param("dataset", "empty"));
        }
        if !(params.learning_rate > 0.0) || !(params.l2 >= 0.0) {
            return Err(Error::param(
                "training",
                "learning rate must be > 0 and l2 >= 0",
            ));
        }
        if let Some(&bad) = data.labels.iter().find(|&&y| y >= data.classes) {
            return Err(Error::param(
                "labels",
                format!("label {bad} out of range for {} classes", data.classes),
            ));
        }
        let id = format!("{}-{}-s{seed}", data.id(), architecture.label());
        let mut model = Model::initialized(id, architecture, data.dim, data.classes, seed)?;
        if model.architecture == Architecture::LinearSoftmax {
            model.layers = vec![Layer::zeros(data.dim, data.classes)];
        }
        let n = data.len() as f64;
        for iteration in 0..params.iterations {
            let mut grads: Vec<Layer> = model
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect();
            let mut loss = 0.0;
            for (x, &y) in data.rows().zip(&data.labels) {
                loss += model.accumulate_gradients(x, y, &mut grads);
            }
            loss /= n;
            if params.l2 > 0.0 {
                let sq: f64 = model
                    .layers
                    .iter()
                    .flat_map(|l| &l.weights)
                    .map(|w| w * w)
                    .sum();
                loss += 0.5 * params.l2 * sq;
            }
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { iteration });
            }
            for (layer, grad) in model.layers.iter_mut().zip(&grads) {
                for (w, g) in layer.weights.iter_mut().zip(&grad.weights) {
                    *w -= params.learning_rate * (g / n + params.l2 * *w);
                }
                for (b, g) in layer.bias.iter_mut().zip(&grad.bias) {
                    *b -= params.learning_rate * g / n;
                }
            }
        }
        if model
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .any(|v| !v.is_finite())
        {
            return Err(Error::TrainingDiverged {
                iteration: params.iterations,
            });
        }
        model.provenance = Provenance {
            origin: Origin::Trained,
            dataset: Some(data.id()),
            seed: Some(seed),
            training: Some(params),
            parent: None,
        };
        Ok(model)
    }

    /// Adds ∂CE/∂θ for one sample into `grads`; returns the sample loss.
    fn accumulate_gradients(&self, x: &[f64], label: usize, grads: &mut [Layer]) -> f64 {
        let activation = self.architecture.activation();
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let a = layer.apply(&h);
            inputs.push(h);
            if k < last {
                let act = activation.expect("hidden layers imply an activation");
                h = a.iter().map(|&v| act.apply(v)).collect();
                pre.push(a);
            } else {
                h = a;
            }
        }
        let p = softmax(&h);
        let loss = -p[label].max(f64::MIN_POSITIVE).ln();
        let mut delta: Vec<f64> = p;
        delta[label] -= 1.0;
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let grad = &mut grads[k];
            for (r, &dr) in delta.iter().enumerate() {
                grad.bias[r] += dr;
                let row = &mut grad.weights[r * layer.inputs..(r + 1) * layer.inputs];
                for (g, xi) in row.iter_mut().zip(&inputs[k]) {
                    *g += dr * xi;
                }
            }
            if k > 0 {
                let act = activation.expect("hidden layers imply an activation");
                let mut back = layer.back(&delta);
                for (b, &a) in back.iter_mut().zip(&pre[k - 1]) {
                    *b *= act.derivative(a);
                }
                delta = back;
            }
        }
        loss
    }

    pub fn parameters(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument {
            schema: MODEL_SCHEMA.to_string(),
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Model> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.schema != MODEL_SCHEMA {
            return Err(Error::InvalidModel(format!(
                "unsupported schema `{}`, expected `{MODEL_SCHEMA}`",
                doc.schema
            )));
        }
        doc.model.validate()?;
        Ok(doc.model)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// One input together with the model's output distribution at it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputOutputPair {
    pub id: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl InputOutputPair {
    pub fn new(model: &Model, id: usize, x: Vec<f64>) -> Result<Self> {
        let y = model.forward(&x)?;
        Ok(InputOutputPair { id, x, y })
    }

    pub fn predicted_class(&self) -> usize {
        argmax(&self.y)
    }

    /// Whether `y` still equals `forward(model, x)`.
    pub fn is_consistent_with(&self, model: &Model) -> bool {
        model.forward(&self.x).map(|y| y == self.y).unwrap_or(false)
    }
}

/// Fixed inputs over which model-level quantities are estimated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub inputs: Vec<Vec<f64>>,
    pub seed: Option<u64>,
    pub source: String,
}

impl ProbeSet {
    pub fn new(inputs: Vec<Vec<f64>>, seed: Option<u64>, source: impl Into<String>) -> Result<Self> {
        let dim = inputs.first().ok_or(Error::EmptyProbe)?.len();
        if let Some(bad) = inputs.iter().find(|x| x.len() != dim) {
            return Err(Error::InputShape {
                expected: dim,
                actual: bad.len(),
            });
        }
        Ok(ProbeSet {
            inputs,
            seed,
            source: source.into(),
        })
    }

    /// `n` draws from N(0, scale²·I).
    pub fn gaussian(dim: usize, n: usize, scale: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(0.0, scale).map_err(|e| Error::param("scale", e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = (0..n)
            .map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        ProbeSet::new(inputs, Some(seed), format!("gaussian(scale={scale})"))
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}
