//! Joint output-stability and tail-latency verification for inference
//! backends under controlled resource contention.

pub mod backends;
pub mod host;
pub mod metrics;
pub mod protocol;
pub mod reporting;
pub mod splitmix;
pub mod stressors;

pub use protocol::HARNESS_VERSION;
