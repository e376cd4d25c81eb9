//! "CBFA" activation dump.
//!
//! ```text
//! header:  magic "CBFA" | version u16 | d_h u32 | count u64 | layer_index u32
//! record:  label i8 (+1 safe / -1 unsafe) | source_id_len u16 | source_id (UTF-8)
//!          | d_h x f32
//! ```
//!
//! Everything is little-endian. Vectors are stored as `f32`; values are
//! widened to `f64` on read.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{DumpError, ReadReport, SafetyDataset};
use crate::error::Result;
use crate::types::{LabeledState, LatentState, SafetyLabel};

pub const DUMP_MAGIC: [u8; 4] = *b"CBFA";
pub const DUMP_FORMAT_VERSION: u16 = 1;
const HEADER_LEN: u64 = 4 + 2 + 4 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DumpHeader {
    pub d_h: u32,
    pub count: u64,
    pub layer_index: u32,
}

/// One record as stored, before finiteness checks.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub label: SafetyLabel,
    pub source_id: String,
    pub values: Vec<f32>,
}

/// Streaming reader; records are decoded one at a time.
pub struct DumpReader<R: Read> {
    inner: R,
    header: DumpHeader,
    offset: u64,
    remaining: u64,
}

fn read_exact_or<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    on_eof: impl FnOnce() -> DumpError,
) -> std::result::Result<(), DumpError> {
    match r.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => Err(on_eof()),
        Err(e) => Err(DumpError::Io(e)),
    }
}

impl<R: Read> DumpReader<R> {
    pub fn new(mut inner: R) -> std::result::Result<Self, DumpError> {
        let mut head = [0u8; HEADER_LEN as usize];
        read_exact_or(&mut inner, &mut head, || {
            DumpError::Format("file shorter than the 22-byte header".into())
        })?;
        if head[..4] != DUMP_MAGIC {
            return Err(DumpError::Format("bad magic, expected CBFA".into()));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != DUMP_FORMAT_VERSION {
            return Err(DumpError::Format(format!("unsupported version {version}")));
        }
        let d_h = u32::from_le_bytes(head[6..10].try_into().expect("4 bytes"));
        let count = u64::from_le_bytes(head[10..18].try_into().expect("8 bytes"));
        let layer_index = u32::from_le_bytes(head[18..22].try_into().expect("4 bytes"));
        Ok(Self {
            inner,
            header: DumpHeader {
                d_h,
                count,
                layer_index,
            },
            offset: HEADER_LEN,
            remaining: count,
        })
    }

    pub fn header(&self) -> DumpHeader {
        self.header
    }

    /// Next record, or `None` after `count` records. Trailing bytes after the
    /// last record are reported as corruption.
    pub fn next_record(&mut self) -> std::result::Result<Option<RawRecord>, DumpError> {
        if self.remaining == 0 {
            let mut probe = [0u8; 1];
            return match self.inner.read(&mut probe) {
                Ok(0) => Ok(None),
                Ok(_) => Err(DumpError::Corrupt {
                    offset: self.offset,
                    reason: "trailing bytes after last record".into(),
                }),
                Err(e) => Err(DumpError::Io(e)),
            };
        }
        let start = self.offset;
        let truncated = || DumpError::Corrupt {
            offset: start,
            reason: "truncated record".into(),
        };
        let mut fixed = [0u8; 3];
        read_exact_or(&mut self.inner, &mut fixed, truncated)?;
        let label = SafetyLabel::from_i8(fixed[0] as i8).ok_or_else(|| DumpError::Corrupt {
            offset: start,
            reason: format!("invalid label byte {}", fixed[0] as i8),
        })?;
        let id_len = u16::from_le_bytes([fixed[1], fixed[2]]) as usize;
        let mut id = vec![0u8; id_len];
        read_exact_or(&mut self.inner, &mut id, truncated)?;
        let source_id = String::from_utf8(id).map_err(|_| DumpError::Corrupt {
            offset: start + 3,
            reason: "source id is not UTF-8".into(),
        })?;
        let d_h = self.header.d_h as usize;
        let mut values = Vec::with_capacity(d_h.min(1 << 20));
        let mut chunk = [0u8; 4];
        for _ in 0..d_h {
            read_exact_or(&mut self.inner, &mut chunk, truncated)?;
            values.push(f32::from_le_bytes(chunk));
        }
        self.offset += 3 + id_len as u64 + 4 * d_h as u64;
        self.remaining -= 1;
        Ok(Some(RawRecord {
            label,
            source_id,
            values,
        }))
    }
}

/// Writer for a known number of records.
pub struct DumpWriter<W: Write> {
    inner: W,
    d_h: usize,
    expected: u64,
    written: u64,
}

impl<W: Write> DumpWriter<W> {
    pub fn new(mut inner: W, header: DumpHeader) -> std::io::Result<Self> {
        inner.write_all(&DUMP_MAGIC)?;
        inner.write_all(&DUMP_FORMAT_VERSION.to_le_bytes())?;
        inner.write_all(&header.d_h.to_le_bytes())?;
        inner.write_all(&header.count.to_le_bytes())?;
        inner.write_all(&header.layer_index.to_le_bytes())?;
        Ok(Self {
            inner,
            d_h: header.d_h as usize,
            expected: header.count,
            written: 0,
        })
    }

    /// Write one record verbatim; no finiteness check.
    pub fn write_record(&mut self, label: SafetyLabel, source_id: &str, values: &[f32]) -> std::io::Result<()> {
        let invalid = |m: String| std::io::Error::new(ErrorKind::InvalidInput, m);
        if values.len() != self.d_h {
            return Err(invalid(format!("vector length {} != d_h {}", values.len(), self.d_h)));
        }
        let id_len = u16::try_from(source_id.len()).map_err(|_| invalid("source id longer than 65535 bytes".into()))?;
        if self.written == self.expected {
            return Err(invalid("more records than declared in header".into()));
        }
        self.inner.write_all(&[label.as_i8() as u8])?;
        self.inner.write_all(&id_len.to_le_bytes())?;
        self.inner.write_all(source_id.as_bytes())?;
        for v in values {
            self.inner.write_all(&v.to_le_bytes())?;
        }
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        if self.written != self.expected {
            return Err(std::io::Error::new(
                ErrorKind::InvalidInput,
                format!("wrote {} of {} declared records", self.written, self.expected),
            ));
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

fn collect<R: Read>(mut reader: DumpReader<R>) -> Result<(SafetyDataset, ReadReport)> {
    let header = reader.header();
    let mut report = ReadReport::default();
    let mut records = Vec::new();
    while let Some(raw) = reader.next_record()? {
        report.records_read += 1;
        if raw.values.iter().any(|v| !v.is_finite()) {
            report.rejected_non_finite += 1;
            continue;
        }
        let state = LatentState::new(raw.values.iter().map(|&v| f64::from(v)).collect())?;
        records.push(LabeledState {
            state,
            label: raw.label,
            source_id: raw.source_id,
        });
    }
    let ds = SafetyDataset::new(header.d_h as usize, header.layer_index, records)?;
    Ok((ds, report))
}

pub fn decode_dump(bytes: &[u8]) -> Result<(SafetyDataset, ReadReport)> {
    collect(DumpReader::new(bytes)?)
}

pub fn read_dump(path: &Path) -> Result<(SafetyDataset, ReadReport)> {
    let f = File::open(path).map_err(DumpError::Io)?;
    collect(DumpReader::new(BufReader::new(f))?)
}

fn write_to<W: Write>(ds: &SafetyDataset, w: W) -> std::io::Result<W> {
    let mut writer = DumpWriter::new(
        w,
        DumpHeader {
            d_h: ds.d_h() as u32,
            count: ds.len() as u64,
            layer_index: ds.layer_index(),
        },
    )?;
    let mut buf = Vec::with_capacity(ds.d_h());
    for r in ds.records() {
        buf.clear();
        buf.extend(r.state.as_slice().iter().map(|&v| v as f32));
        writer.write_record(r.label, &r.source_id, &buf)?;
    }
    writer.finish()
}

/// Encode a dataset; entries are rounded to `f32`.
pub fn encode_dump(ds: &SafetyDataset) -> Vec<u8> {
    write_to(ds, Vec::new()).expect("in-memory write")
}

pub fn write_dump(ds: &SafetyDataset, path: &Path) -> Result<()> {
    let f = File::create(path)?;
    write_to(ds, BufWriter::new(f))?;
    Ok(())
}
