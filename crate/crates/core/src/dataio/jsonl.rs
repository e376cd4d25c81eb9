//! Line-delimited JSON fixtures: one `{id, label, layer, vector}` object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DumpError, ReadReport, SafetyDataset};
use crate::error::Result;
use crate::types::{LabeledState, LatentState, SafetyLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsonRecord {
    pub id: String,
    pub label: SafetyLabel,
    #[serde(default)]
    pub layer: u32,
    pub vector: Vec<f64>,
}

pub fn read_jsonl(path: &Path) -> Result<(SafetyDataset, ReadReport)> {
    let reader = BufReader::new(File::open(path).map_err(DumpError::Io)?);
    let mut report = ReadReport::default();
    let mut records = Vec::new();
    let mut d_h: Option<usize> = None;
    let mut layer = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(DumpError::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        // NaN is not valid JSON; null entries mark non-finite values
        let raw: serde_json::Value = serde_json::from_str(&line).map_err(|e| DumpError::Json {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let has_null = raw
            .get("vector")
            .and_then(|v| v.as_array())
            .is_some_and(|a| a.iter().any(|x| x.is_null()));
        report.records_read += 1;
        if has_null {
            report.rejected_non_finite += 1;
            continue;
        }
        let rec: JsonRecord = serde_json::from_value(raw).map_err(|e| DumpError::Json {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let dim = *d_h.get_or_insert(rec.vector.len());
        if rec.vector.len() != dim {
            return Err(DumpError::Json {
                line: i + 1,
                reason: format!("vector length {} != {}", rec.vector.len(), dim),
            }
            .into());
        }
        layer = rec.layer;
        records.push(LabeledState {
            state: LatentState::new(rec.vector)?,
            label: rec.label,
            source_id: rec.id,
        });
    }
    let d_h = d_h.ok_or_else(|| DumpError::Format("no records in JSON-lines file".into()))?;
    Ok((SafetyDataset::new(d_h, layer, records)?, report))
}

pub fn write_jsonl(ds: &SafetyDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in ds.records() {
        let rec = JsonRecord {
            id: r.source_id.clone(),
            label: r.label,
            layer: ds.layer_index(),
            vector: r.state.as_slice().to_vec(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
