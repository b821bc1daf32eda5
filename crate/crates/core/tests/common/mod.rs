#![allow(dead_code)]

use exrob_core::criteria::{PairSample, PairSamplePlan};
use exrob_core::datasets::{gen_planted_linear, gen_xor, Dataset};
use exrob_core::explainers::ExplainerConfig;
use exrob_core::model::{Activation, Architecture, Model, TrainParams};

pub const PLANTED_W: [f64; 4] = [1.5, -1.0, 0.5, 2.0];

pub fn planted_data() -> Dataset {
    gen_planted_linear(4, 120, &PLANTED_W, 0.0, 11).unwrap()
}

pub fn planted_model() -> Model {
    Model::planted_linear(&PLANTED_W).unwrap()
}

pub fn base_inputs(data: &Dataset, n: usize) -> Vec<Vec<f64>> {
    data.features.iter().take(n).cloned().collect()
}

pub fn plan(class_flip: bool) -> PairSamplePlan {
    PairSamplePlan {
        similar: 300,
        noise: 0.05,
        distinct: 1000,
        min_output: 0.0,
        class_flip,
        seed: 5,
    }
}

pub fn planted_sample(model: &Model) -> PairSample<'_> {
    PairSample::from_plan(model, &base_inputs(&planted_data(), 60), &plan(true)).unwrap()
}

pub fn zero_baseline(d: usize) -> ExplainerConfig {
    ExplainerConfig::default().with_baseline(vec![0.0; d]).with_seed(3)
}

pub fn xor_data() -> Dataset {
    gen_xor(200, 0.2, 4).unwrap()
}

pub fn xor_mlp(seed: u64) -> Model {
    Model::train(
        &xor_data(),
        Architecture::mlp(&[8], Activation::Tanh),
        TrainParams {
            learning_rate: 0.5,
            iterations: 1500,
            l2: 0.0,
        },
        seed,
    )
    .unwrap()
}
