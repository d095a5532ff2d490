//! Inference backends under test.
//!
//! A [`Backend`] turns one input vector into one probability vector. The
//! fixture model is the deterministic reference; [`DriftBackend`] and
//! [`JitterBackend`] perturb the output axis and the timing axis
//! independently; [`ExternalBackend`] drives a real runtime in a child process.

pub mod drift;
pub mod external;
pub mod fixture;
pub mod jitter;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricsError, SoftmaxVector};

pub use drift::{apply_drift, DriftBackend};
pub use external::ExternalBackend;
pub use fixture::{
    generate_fixture_model, generate_test_set, FixtureBackend, FixtureModel, FixtureModelSpec,
};
pub use jitter::{DelaySpec, JitterBackend};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("input has {got} features, backend expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("top-class probability {top_prob} is below drift mass {mu}")]
    PerturbationTooLarge { top_prob: f64, mu: f64 },
    #[error("invalid backend descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("failed to start {program}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{program} exited after {completed} completed requests ({status})")]
    ProcessExited {
        program: String,
        completed: u64,
        status: String,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BackendError {
    /// Errors that exclude a single activation rather than ending the trial.
    pub fn is_per_activation(&self) -> bool {
        matches!(self, BackendError::PerturbationTooLarge { .. })
    }
}

/// One element of the fixed test set.
#[derive(Debug, Clone, PartialEq)]
pub struct InputVector {
    pub input_index: usize,
    pub values: Vec<f64>,
}

pub trait Backend: Send {
    fn classes(&self) -> usize;

    /// One activation: inference followed by softmax.
    fn infer(&mut self, input: &InputVector) -> Result<SoftmaxVector, BackendError>;

    /// Releases external resources. Called once at the end of a condition.
    fn shutdown(&mut self) -> Result<(), BackendError> {
        Ok(())
    }

    /// What the timed window around [`Backend::infer`] covers.
    fn measurement_scope(&self) -> String {
        "in-process inference + softmax (input generation excluded)".into()
    }
}

impl Backend for Box<dyn Backend> {
    fn classes(&self) -> usize {
        (**self).classes()
    }

    fn infer(&mut self, input: &InputVector) -> Result<SoftmaxVector, BackendError> {
        (**self).infer(input)
    }

    fn shutdown(&mut self) -> Result<(), BackendError> {
        (**self).shutdown()
    }

    fn measurement_scope(&self) -> String {
        (**self).measurement_scope()
    }
}

/// Serializable backend identity, as it appears in plan and profile files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendDescriptor {
    Fixture {
        seed: u64,
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default = "default_classes")]
        classes: usize,
    },
    Drift {
        mu: f64,
        inner: Box<BackendDescriptor>,
    },
    Jitter {
        delay: DelaySpec,
        #[serde(default)]
        seed: u64,
        inner: Box<BackendDescriptor>,
    },
    External {
        command: Vec<String>,
        /// Whether the process claims bit-identical outputs for identical inputs.
        #[serde(default)]
        deterministic: bool,
        #[serde(default = "default_timeout_ms")]
        response_timeout_ms: u64,
    },
}

fn default_hidden() -> usize {
    32
}
fn default_classes() -> usize {
    10
}
fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT_MS
}
const DEFAULT_TIMEOUT_MS: u64 = 30_000;

impl BackendDescriptor {
    pub fn fixture(seed: u64) -> Self {
        BackendDescriptor::Fixture {
            seed,
            hidden: default_hidden(),
            classes: default_classes(),
        }
    }

    pub fn drift(self, mu: f64) -> Self {
        BackendDescriptor::Drift {
            mu,
            inner: Box::new(self),
        }
    }

    pub fn jitter(self, delay: DelaySpec) -> Self {
        BackendDescriptor::Jitter {
            delay,
            seed: 0,
            inner: Box::new(self),
        }
    }

    /// The innermost backend with all wrappers removed. Profiles captured on
    /// one family may be used to measure any wrapped variant of it.
    pub fn family(&self) -> &BackendDescriptor {
        match self {
            BackendDescriptor::Drift { inner, .. } | BackendDescriptor::Jitter { inner, .. } => {
                inner.family()
            }
            other => other,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            BackendDescriptor::Fixture { .. } => true,
            BackendDescriptor::Drift { inner, .. } | BackendDescriptor::Jitter { inner, .. } => {
                inner.is_deterministic()
            }
            BackendDescriptor::External { deterministic, .. } => *deterministic,
        }
    }

    /// Short human label, e.g. `drift(0.06, fixture#42)`.
    pub fn label(&self) -> String {
        match self {
            BackendDescriptor::Fixture { seed, .. } => format!("fixture#{seed}"),
            BackendDescriptor::Drift { mu, inner } => format!("drift({mu}, {})", inner.label()),
            BackendDescriptor::Jitter { delay, inner, .. } => match delay {
                DelaySpec::Constant { ms } => format!("jitter({ms}ms, {})", inner.label()),
                DelaySpec::Uniform { min_ms, max_ms } => {
                    format!("jitter({min_ms}-{max_ms}ms, {})", inner.label())
                }
            },
            BackendDescriptor::External { command, .. } => {
                format!("external({})", command.first().map(String::as_str).unwrap_or(""))
            }
        }
    }

    pub fn validate(&self, f_in: usize) -> Result<(), BackendError> {
        match self {
            BackendDescriptor::Fixture { hidden, classes, .. } => FixtureModelSpec {
                seed: 0,
                f_in,
                hidden: *hidden,
                classes: *classes,
            }
            .validate()
            .map_err(BackendError::InvalidDescriptor),
            BackendDescriptor::Drift { mu, inner } => {
                if !(0.0..1.0).contains(mu) {
                    return Err(BackendError::InvalidDescriptor(format!(
                        "drift mu {mu} must lie in [0, 1)"
                    )));
                }
                inner.validate(f_in)
            }
            BackendDescriptor::Jitter { delay, inner, .. } => {
                delay.validate().map_err(BackendError::InvalidDescriptor)?;
                inner.validate(f_in)
            }
            BackendDescriptor::External { command, .. } => {
                if command.is_empty() || command[0].is_empty() {
                    return Err(BackendError::InvalidDescriptor(
                        "external command is empty".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Instantiates a descriptor for inputs of width `f_in`. External backends
/// spawn their process here.
pub fn build_backend(desc: &BackendDescriptor, f_in: usize) -> Result<Box<dyn Backend>, BackendError> {
    desc.validate(f_in)?;
    Ok(match desc {
        BackendDescriptor::Fixture {
            seed,
            hidden,
            classes,
        } => Box::new(FixtureBackend::new(FixtureModelSpec {
            seed: *seed,
            f_in,
            hidden: *hidden,
            classes: *classes,
        })),
        BackendDescriptor::Drift { mu, inner } => {
            Box::new(DriftBackend::new(build_backend(inner, f_in)?, *mu)?)
        }
        BackendDescriptor::Jitter { delay, seed, inner } => {
            Box::new(JitterBackend::new(build_backend(inner, f_in)?, *delay, *seed)?)
        }
        BackendDescriptor::External {
            command,
            response_timeout_ms,
            ..
        } => Box::new(ExternalBackend::spawn(
            command,
            f_in,
            Duration::from_millis(*response_timeout_ms),
        )?),
    })
}
