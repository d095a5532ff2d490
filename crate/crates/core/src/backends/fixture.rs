//! Seeded two-layer perceptron whose forward pass is bit-deterministic.

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, InputVector};
use crate::metrics::{softmax, SoftmaxVector};
use crate::splitmix::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureModelSpec {
    pub seed: u64,
    #[serde(default = "default_f_in")]
    pub f_in: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
}

fn default_f_in() -> usize {
    64
}
fn default_hidden() -> usize {
    32
}
fn default_classes() -> usize {
    10
}

impl FixtureModelSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            f_in: default_f_in(),
            hidden: default_hidden(),
            classes: default_classes(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("f_in", self.f_in), ("hidden", self.hidden), ("classes", self.classes)] {
            if v < 2 {
                return Err(format!("fixture {name} must be >= 2, got {v}"));
            }
        }
        Ok(())
    }
}

/// Dense weights, row-major: `w1` is `hidden x f_in`, `w2` is `classes x hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureModel {
    pub spec: FixtureModelSpec,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Draws `W1, b1, W2, b2` in that order from one splitmix64 stream, each
/// value mapped to `[-0.5, 0.5)`.
pub fn generate_fixture_model(spec: FixtureModelSpec) -> FixtureModel {
    let mut rng = SplitMix64::new(spec.seed);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.next_unit() - 0.5).collect() };
    let w1 = draw(spec.hidden * spec.f_in);
    let b1 = draw(spec.hidden);
    let w2 = draw(spec.classes * spec.hidden);
    let b2 = draw(spec.classes);
    FixtureModel {
        spec,
        w1,
        b1,
        w2,
        b2,
    }
}

/// Input `i` comes from its own stream seeded with `seed ^ i`.
pub fn generate_test_set(seed: u64, count: usize, f_in: usize) -> Vec<InputVector> {
    (0..count)
        .map(|i| {
            let mut rng = SplitMix64::new(seed ^ i as u64);
            InputVector {
                input_index: i,
                values: (0..f_in).map(|_| rng.next_unit()).collect(),
            }
        })
        .collect()
}

impl FixtureModel {
    /// `logits = W2 * relu(W1 * x + b1) + b2`. Each dot product starts at
    /// zero and accumulates in ascending index order; the bias is added last.
    pub fn infer_logits(&self, input: &InputVector) -> Result<Vec<f64>, BackendError> {
        let f_in = self.spec.f_in;
        if input.values.len() != f_in {
            return Err(BackendError::DimensionMismatch {
                expected: f_in,
                got: input.values.len(),
            });
        }
        let hidden: Vec<f64> = self
            .w1
            .chunks_exact(f_in)
            .zip(&self.b1)
            .map(|(row, b)| (dot(row, &input.values) + b).max(0.0))
            .collect();
        Ok(self
            .w2
            .chunks_exact(self.spec.hidden)
            .zip(&self.b2)
            .map(|(row, b)| dot(row, &hidden) + b)
            .collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// In-process fixture model: logits followed by softmax.
#[derive(Debug, Clone)]
pub struct FixtureBackend {
    model: FixtureModel,
}

impl FixtureBackend {
    pub fn new(spec: FixtureModelSpec) -> Self {
        Self {
            model: generate_fixture_model(spec),
        }
    }

    pub fn from_model(model: FixtureModel) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &FixtureModel {
        &self.model
    }
}

impl Backend for FixtureBackend {
    fn classes(&self) -> usize {
        self.model.spec.classes
    }

    fn infer(&mut self, input: &InputVector) -> Result<SoftmaxVector, BackendError> {
        let logits = self.model.infer_logits(input)?;
        Ok(softmax(&logits)?)
    }
}
