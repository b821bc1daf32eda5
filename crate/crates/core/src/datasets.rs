//! Synthetic dataset generators, some with a planted ground-truth attribution.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATASET_SCHEMA: &str = "dataset/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    PlantedLinear {
        d: usize,
        n: usize,
        weights: Vec<f64>,
        noise_sd: f64,
    },
    TwoGaussians {
        d: usize,
        n: usize,
        separation: f64,
    },
    Xor {
        n: usize,
        margin: f64,
    },
}

impl Generator {
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        match self {
            Generator::PlantedLinear {
                d,
                n,
                weights,
                noise_sd,
            } => gen_planted_linear(*d, *n, weights, *noise_sd, seed),
            Generator::TwoGaussians { d, n, separation } => {
                gen_two_gaussians(*d, *n, *separation, seed)
            }
            Generator::Xor { n, margin } => gen_xor(*n, *margin, seed),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Generator::PlantedLinear { .. } => "planted_linear",
            Generator::TwoGaussians { .. } => "two_gaussians",
            Generator::Xor { .. } => "xor",
        }
    }
}

/// Analytically known correct attribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    /// Attribution of `x` is `(w_1·x_1, …, w_d·x_d)`.
    Linear { weights: Vec<f64> },
}

impl GroundTruth {
    pub fn attribution(&self, x: &[f64]) -> Vec<f64> {
        match self {
            GroundTruth::Linear { weights } => weights.iter().zip(x).map(|(w, v)| w * v).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub dim: usize,
    pub classes: usize,
    pub generator: Generator,
    pub seed: u64,
    pub ground_truth: Option<GroundTruth>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    schema: String,
    generator: Generator,
    seed: u64,
    dim: usize,
    classes: usize,
    n: usize,
    ground_truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn id(&self) -> String {
        format!("{}-d{}-n{}-s{}", self.generator.name(), self.dim, self.len(), self.seed)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.iter().map(Vec::as_slice)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for row in &self.features {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    pub fn ground_truth_for(&self, i: usize) -> Option<Vec<f64>> {
        self.ground_truth
            .as_ref()
            .map(|gt| gt.attribution(&self.features[i]))
    }

    fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::param("dataset", "needs at least one sample"));
        }
        if self.features.len() != self.labels.len() {
            return Err(Error::param("dataset", "feature and label counts differ"));
        }
        if self.features.iter().any(|r| r.len() != self.dim) {
            return Err(Error::param("dataset", "ragged feature rows"));
        }
        if self.labels.iter().any(|&y| y >= self.classes) {
            return Err(Error::param("dataset", "label out of range"));
        }
        Ok(())
    }

    /// Writes `<stem>.csv` (features then `label`) and `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
        let mut header: Vec<String> = (0..self.dim).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (row, y) in self.features.iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        let sidecar = Sidecar {
            schema: DATASET_SCHEMA.into(),
            generator: self.generator.clone(),
            seed: self.seed,
            dim: self.dim,
            classes: self.classes,
            n: self.len(),
            ground_truth: self.ground_truth.clone(),
        };
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&sidecar)?,
        )?;
        Ok(())
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Dataset> {
        let sidecar: Sidecar =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        if sidecar.schema != DATASET_SCHEMA {
            return Err(Error::Config(format!(
                "dataset sidecar schema `{}`, expected `{DATASET_SCHEMA}`",
                sidecar.schema
            )));
        }
        let mut r = csv::Reader::from_path(dir.join(format!("{stem}.csv")))?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Config(format!("bad number `{s}` in dataset csv")))
            };
            let n = rec.len();
            let row = rec.iter().take(n - 1).map(parse).collect::<Result<Vec<_>>>()?;
            let label = rec[n - 1]
                .parse()
                .map_err(|_| Error::Config(format!("bad label `{}`", &rec[n - 1])))?;
            features.push(row);
            labels.push(label);
        }
        let data = Dataset {
            features,
            labels,
            dim: sidecar.dim,
            classes: sidecar.classes,
            generator: sidecar.generator,
            seed: sidecar.seed,
            ground_truth: sidecar.ground_truth,
        };
        data.validate()?;
        Ok(data)
    }
}

fn standard_normal_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect())
        .collect()
}

/// Standard-normal features, label `1` iff `w·x + noise > 0`.
pub fn gen_planted_linear(
    d: usize,
    n: usize,
    weights: &[f64],
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    if d == 0 {
        return Err(Error::param("d", "must be >= 1"));
    }
    if n < 2 {
        return Err(Error::param("n", "must be >= 2"));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::param("noise_sd", "must be >= 0"));
    }
    if weights.len() != d {
        return Err(Error::InputShape {
            expected: d,
            actual: weights.len(),
        });
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::DegenerateWeights);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = standard_normal_rows(&mut rng, n, d);
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::param("noise_sd", e.to_string()))?;
    let labels = features
        .iter()
        .map(|x| {
            let score: f64 = weights.iter().zip(x).map(|(w, v)| w * v).sum();
            let eps = if noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            usize::from(score + eps > 0.0)
        })
        .collect();
    let data = Dataset {
        features,
        labels,
        dim: d,
        classes: 2,
        generator: Generator::PlantedLinear {
            d,
            n,
            weights: weights.to_vec(),
            noise_sd,
        },
        seed,
        ground_truth: Some(GroundTruth::Linear {
            weights: weights.to_vec(),
        }),
    };
    Ok(data)
}

/// Two identity-covariance Gaussians with means `±(separation/2)·e_1`.
pub fn gen_two_gaussians(d: usize, n: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if d == 0 || n == 0 {
        return Err(Error::param("d/n", "must be >= 1"));
    }
    if !(separation > 0.0) {
        return Err(Error::param("separation", "must be > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = standard_normal_rows(&mut rng, n, d);
    let labels: Vec<usize> = (0..n).map(|_| usize::from(rng.gen_bool(0.5))).collect();
    for (row, &y) in features.iter_mut().zip(&labels) {
        row[0] += if y == 1 { separation / 2.0 } else { -separation / 2.0 };
    }
    Ok(Dataset {
        features,
        labels,
        dim: d,
        classes: 2,
        generator: Generator::TwoGaussians { d, n, separation },
        seed,
        ground_truth: None,
    })
}

/// Four quadrant clusters in 2-D. Each coordinate has magnitude in
/// `[margin, 1]`; the label is the XOR of the two coordinate signs.
pub fn gen_xor(n: usize, margin: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::param("n", "must be >= 1"));
    }
    if !(margin > 0.0 && margin < 1.0) {
        return Err(Error::param("margin", "must lie in (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let sa = rng.gen_bool(0.5);
        let sb = rng.gen_bool(0.5);
        let mag = |rng: &mut ChaCha8Rng| margin + (1.0 - margin) * rng.gen::<f64>();
        let a = mag(&mut rng) * if sa { 1.0 } else { -1.0 };
        let b = mag(&mut rng) * if sb { 1.0 } else { -1.0 };
        features.push(vec![a, b]);
        labels.push(usize::from(sa != sb));
    }
    Ok(Dataset {
        features,
        labels,
        dim: 2,
        classes: 2,
        generator: Generator::Xor { n, margin },
        seed,
        ground_truth: None,
    })
}
