use super::{Backend, BackendError, InputVector};
use crate::metrics::{top_two, SoftmaxVector};

/// Moves probability mass `mu` from the top class to the runner-up
/// (lowest index on ties). The result stays on the simplex and sits at
/// L-infinity distance `mu` from the input, up to one rounding step.
pub fn apply_drift(output: &SoftmaxVector, mu: f64) -> Result<SoftmaxVector, BackendError> {
    if mu == 0.0 {
        return Ok(output.clone());
    }
    let mut probs = output.probs().to_vec();
    let (top, runner_up) = top_two(&probs);
    if probs[top] < mu {
        return Err(BackendError::PerturbationTooLarge {
            top_prob: probs[top],
            mu,
        });
    }
    probs[top] -= mu;
    probs[runner_up] = (probs[runner_up] + mu).min(1.0);
    Ok(SoftmaxVector::new(probs)?)
}

/// Wraps a backend and drifts every output by a fixed mass.
pub struct DriftBackend<B> {
    inner: B,
    mu: f64,
}

impl<B: Backend> DriftBackend<B> {
    pub fn new(inner: B, mu: f64) -> Result<Self, BackendError> {
        if !(0.0..1.0).contains(&mu) {
            return Err(BackendError::InvalidDescriptor(format!(
                "drift mu {mu} must lie in [0, 1)"
            )));
        }
        Ok(Self { inner, mu })
    }
}

impl<B: Backend> Backend for DriftBackend<B> {
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    fn infer(&mut self, input: &InputVector) -> Result<SoftmaxVector, BackendError> {
        let out = self.inner.infer(input)?;
        apply_drift(&out, self.mu)
    }

    fn shutdown(&mut self) -> Result<(), BackendError> {
        self.inner.shutdown()
    }

    fn measurement_scope(&self) -> String {
        self.inner.measurement_scope()
    }
}
