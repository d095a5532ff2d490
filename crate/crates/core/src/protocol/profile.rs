use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::plan::TestSetSpec;
use crate::backends::BackendDescriptor;
use crate::metrics::{MetricsError, SoftmaxVector};

/// Per-input zero-load reference outputs: entry `i` is the component-wise
/// mean of `passes` outputs for input `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceProfile {
    pub test_set: TestSetSpec,
    pub backend: BackendDescriptor,
    pub passes: usize,
    pub created_unix_ms: u64,
    pub harness_version: String,
    pub vectors: Vec<SoftmaxVector>,
}

impl ReferenceProfile {
    pub fn vector(&self, input_index: usize) -> Option<&SoftmaxVector> {
        self.vectors.get(input_index)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        let profile: Self = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        if profile.vectors.len() != profile.test_set.count {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!(
                    "profile covers {} inputs, test set has {}",
                    profile.vectors.len(),
                    profile.test_set.count
                ),
            ));
        }
        Ok(profile)
    }

    /// Writes through a temporary sibling and renames, so a failed write
    /// never leaves a partial profile behind.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let tmp = path.with_extension("json.partial");
        {
            let mut f = fs::File::create(&tmp)?;
            serde_json::to_writer_pretty(&mut f, self)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)
    }
}

/// Running component-wise mean. Identical inputs reproduce the input bits
/// exactly, since each update adds `(x - m) / k = 0`.
#[derive(Debug, Clone)]
pub struct MeanAccumulator {
    mean: Vec<f64>,
    count: usize,
}

impl MeanAccumulator {
    pub fn new() -> Self {
        Self {
            mean: Vec::new(),
            count: 0,
        }
    }

    pub fn push(&mut self, v: &SoftmaxVector) -> Result<(), MetricsError> {
        if self.count == 0 {
            self.mean = v.probs().to_vec();
        } else {
            if v.classes() != self.mean.len() {
                return Err(MetricsError::DimensionMismatch {
                    left: v.classes(),
                    right: self.mean.len(),
                });
            }
            let k = (self.count + 1) as f64;
            for (m, x) in self.mean.iter_mut().zip(v.probs()) {
                *m += (x - *m) / k;
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<SoftmaxVector, MetricsError> {
        if self.count == 0 {
            return Err(MetricsError::Empty("mean"));
        }
        SoftmaxVector::new(self.mean.into_iter().map(|m| m.clamp(0.0, 1.0)).collect())
    }
}

impl Default for MeanAccumulator {
    fn default() -> Self {
        Self::new()
    }
}
