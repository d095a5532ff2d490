use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, InputVector};
use crate::metrics::SoftmaxVector;
use crate::splitmix::SplitMix64;

/// Added delay per activation, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase", deny_unknown_fields)]
pub enum DelaySpec {
    Constant { ms: f64 },
    Uniform { min_ms: f64, max_ms: f64 },
}

impl DelaySpec {
    pub fn validate(&self) -> Result<(), String> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        match *self {
            DelaySpec::Constant { ms } if ok(ms) => Ok(()),
            DelaySpec::Uniform { min_ms, max_ms } if ok(min_ms) && ok(max_ms) && min_ms <= max_ms => {
                Ok(())
            }
            other => Err(format!("invalid jitter delay {other:?}")),
        }
    }
}

fn ms(v: f64) -> Duration {
    Duration::from_nanos((v * 1e6).round() as u64)
}

/// Sleeps after each inner inference; outputs pass through untouched.
pub struct JitterBackend<B> {
    inner: B,
    delay: DelaySpec,
    rng: SplitMix64,
}

impl<B: Backend> JitterBackend<B> {
    pub fn new(inner: B, delay: DelaySpec, seed: u64) -> Result<Self, BackendError> {
        delay.validate().map_err(BackendError::InvalidDescriptor)?;
        Ok(Self {
            inner,
            delay,
            rng: SplitMix64::new(seed),
        })
    }

    fn next_delay(&mut self) -> Duration {
        match self.delay {
            DelaySpec::Constant { ms: d } => ms(d),
            DelaySpec::Uniform { min_ms, max_ms } => {
                ms(min_ms + (max_ms - min_ms) * self.rng.next_unit())
            }
        }
    }
}

impl<B: Backend> Backend for JitterBackend<B> {
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    fn infer(&mut self, input: &InputVector) -> Result<SoftmaxVector, BackendError> {
        let out = self.inner.infer(input)?;
        let delay = self.next_delay();
        if !delay.is_zero() {
            thread::sleep(delay);
        }
        Ok(out)
    }

    fn shutdown(&mut self) -> Result<(), BackendError> {
        self.inner.shutdown()
    }

    fn measurement_scope(&self) -> String {
        format!("{} + injected delay", self.inner.measurement_scope())
    }
}
