use std::fs::{File, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metrics::SoftmaxVector;

/// One inference activation as measured.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub condition_id: String,
    pub trial_index: u32,
    pub activation_index: usize,
    pub input_index: usize,
    pub latency_ns: u64,
    pub output: SoftmaxVector,
    pub delta: f64,
    pub argmax: usize,
}

impl ActivationRecord {
    pub fn to_row(&self) -> RecordRow {
        RecordRow {
            condition_id: self.condition_id.clone(),
            trial: self.trial_index,
            activation: self.activation_index,
            input: self.input_index,
            latency_ns: self.latency_ns,
            delta: self.delta,
            argmax: self.argmax,
        }
    }
}

/// The persisted form of an activation: one line of `records-<condition>.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub condition_id: String,
    pub trial: u32,
    pub activation: usize,
    pub input: usize,
    pub latency_ns: u64,
    pub delta: f64,
    pub argmax: usize,
}

pub fn records_file_name(condition_id: &str) -> String {
    format!("records-{condition_id}.csv")
}

/// Appends rows to a CSV file, flushing after every row so that a crash
/// loses at most the activation in flight.
pub struct RecordWriter {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl RecordWriter {
    pub fn create(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            writer: csv::Writer::from_writer(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&mut self, row: &RecordRow) -> io::Result<()> {
        self.writer.serialize(row).map_err(io::Error::other)?;
        self.writer.flush()
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.writer.flush()?;
        let file = self
            .writer
            .into_inner()
            .map_err(|e| io::Error::other(e.to_string()))?;
        file.sync_data()
    }
}

pub fn read_records(path: &Path) -> io::Result<Vec<RecordRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(io::Error::other)?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)))
        .collect()
}
