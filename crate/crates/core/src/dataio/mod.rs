//! Labeled activation datasets: binary dumps, JSON-lines fixtures, splits and
//! synthetic generators.

mod dump;
mod jsonl;
mod split;
mod synth;

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

pub use dump::{
    decode_dump, encode_dump, read_dump, write_dump, DumpHeader, DumpReader, DumpWriter, RawRecord,
    DUMP_FORMAT_VERSION, DUMP_MAGIC,
};
pub use jsonl::{read_jsonl, write_jsonl, JsonRecord};
pub use split::split;
pub use synth::{generate_synthetic, multi_constraint_fixture, MultiConstraintSpec, SyntheticKind, SyntheticSpec};

use crate::error::Result;
use crate::types::{LabeledState, SafetyLabel};

#[derive(Debug, Error)]
pub enum DumpError {
    /// Not a dump of a supported format (bad magic, version, short header).
    #[error("format error: {0}")]
    Format(String),
    /// Structurally damaged record stream.
    #[error("corrupt dump at byte {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("line {line}: {reason}")]
    Json { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Outcome counters for one read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct ReadReport {
    pub records_read: u64,
    /// Records dropped because their vector had NaN or infinite entries.
    pub rejected_non_finite: u64,
}

/// Labeled latent states with a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyDataset {
    d_h: usize,
    layer_index: u32,
    records: Vec<LabeledState>,
}

impl SafetyDataset {
    pub fn new(d_h: usize, layer_index: u32, records: Vec<LabeledState>) -> Result<Self> {
        for r in &records {
            r.state.check_dim(d_h)?;
        }
        Ok(Self {
            d_h,
            layer_index,
            records,
        })
    }

    pub fn d_h(&self) -> usize {
        self.d_h
    }

    pub fn layer_index(&self) -> u32 {
        self.layer_index
    }

    pub fn records(&self) -> &[LabeledState] {
        &self.records
    }

    pub fn into_records(self) -> Vec<LabeledState> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let safe = self.records.iter().filter(|r| r.label == SafetyLabel::Safe).count();
        (safe, self.records.len() - safe)
    }

    pub fn with_label(&self, label: SafetyLabel) -> Vec<LabeledState> {
        self.records.iter().filter(|r| r.label == label).cloned().collect()
    }

    pub fn source_ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.source_id.as_str()).collect()
    }

    /// Consecutive runs of records sharing a source id, in file order.
    pub fn sequences(&self) -> Vec<&[LabeledState]> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.records.len() {
            if i == self.records.len() || self.records[i].source_id != self.records[start].source_id {
                if i > start {
                    out.push(&self.records[start..i]);
                }
                start = i;
            }
        }
        out
    }
}

/// Read either a CBFA dump or, for `.jsonl` / `.ndjson` paths, JSON lines.
pub fn read_dataset(path: &Path) -> Result<(SafetyDataset, ReadReport)> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("ndjson") => read_jsonl(path),
        _ => read_dump(path),
    }
}
