//! Binary bank container ("CBFB") and its JSON sidecar.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      4 bytes  "CBFB"
//! version    u16      = 1
//! K          u32      number of heads
//! d_h        u32      input dimension
//! per head:  kind u8  (0 = network, 1 = half-space, 2 = sphere)
//!            network only: n_hidden u32, then n_hidden x u32 hidden widths
//! weights:   per head, f64 values in order
//!            network:    per block: weight (row-major out x in), bias, gain, shift;
//!                        then head weight, head bias
//!            half-space: normal (d_h), offset
//!            sphere:     center (d_h), radius
//! ```
//!
//! The sidecar `<path>.json` carries category names and the training config.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::net::{BarrierNet, DenseBlock};
use super::{Barrier, BarrierBank, TrainConfig};
use crate::error::{Error, Result};

pub const BANK_MAGIC: [u8; 4] = *b"CBFB";
pub const BANK_FORMAT_VERSION: u16 = 1;

const KIND_NEURAL: u8 = 0;
const KIND_HALF_SPACE: u8 = 1;
const KIND_SPHERE: u8 = 2;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankSidecar {
    pub format_version: u16,
    pub category_names: Option<Vec<String>>,
    pub train_config: Option<TrainConfig>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_bank(bank: &BarrierBank) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&BANK_MAGIC);
    out.extend_from_slice(&BANK_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(bank.len() as u32).to_le_bytes());
    out.extend_from_slice(&(bank.input_dim() as u32).to_le_bytes());
    for b in bank.barriers() {
        match b {
            Barrier::Neural(net) => {
                out.push(KIND_NEURAL);
                out.extend_from_slice(&(net.blocks.len() as u32).to_le_bytes());
                for blk in &net.blocks {
                    out.extend_from_slice(&(blk.out_dim as u32).to_le_bytes());
                }
            }
            Barrier::HalfSpace { .. } => out.push(KIND_HALF_SPACE),
            Barrier::Sphere { .. } => out.push(KIND_SPHERE),
        }
    }
    let mut put = |vals: &[f64]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for b in bank.barriers() {
        match b {
            Barrier::Neural(net) => {
                for slice in net.params() {
                    put(slice);
                }
            }
            Barrier::HalfSpace { normal, offset } => {
                put(normal);
                put(&[*offset]);
            }
            Barrier::Sphere { center, radius } => {
                put(center);
                put(&[*radius]);
            }
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::ModelFormat(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| overflow(what))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn overflow(what: &str) -> Error {
    Error::ModelFormat(format!("size overflow in {what}"))
}

enum HeadShape {
    Neural(Vec<usize>),
    HalfSpace,
    Sphere,
}

pub fn decode_bank(buf: &[u8]) -> Result<BarrierBank> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4, "magic")? != BANK_MAGIC {
        return Err(Error::ModelFormat("bad magic, expected CBFB".into()));
    }
    let version = c.u16("version")?;
    if version != BANK_FORMAT_VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let k = c.u32("head count")?;
    let d_h = c.u32("input dimension")?;
    if k == 0 {
        return Err(Error::EmptyBank);
    }
    // every head needs at least one kind byte
    if k > c.remaining() {
        return Err(Error::ModelFormat(format!("head count {k} exceeds file size")));
    }
    let mut shapes = Vec::with_capacity(k);
    let mut total_params: usize = 0;
    for _ in 0..k {
        let shape = match c.u8("head kind")? {
            KIND_NEURAL => {
                let n = c.u32("hidden layer count")?;
                if n > c.remaining() / 4 {
                    return Err(Error::ModelFormat("hidden layer count exceeds file size".into()));
                }
                let dims = (0..n).map(|_| c.u32("hidden width")).collect::<Result<Vec<_>>>()?;
                let mut fan_in = d_h;
                let mut count: usize = 0;
                for &d in &dims {
                    count = fan_in
                        .checked_mul(d)
                        .and_then(|w| w.checked_add(3 * d))
                        .and_then(|w| w.checked_add(count))
                        .ok_or_else(|| overflow("layer sizes"))?;
                    fan_in = d;
                }
                total_params = total_params
                    .checked_add(count + fan_in + 1)
                    .ok_or_else(|| overflow("layer sizes"))?;
                HeadShape::Neural(dims)
            }
            KIND_HALF_SPACE => {
                total_params = total_params.saturating_add(d_h + 1);
                HeadShape::HalfSpace
            }
            KIND_SPHERE => {
                total_params = total_params.saturating_add(d_h + 1);
                HeadShape::Sphere
            }
            other => return Err(Error::ModelFormat(format!("unknown head kind {other}"))),
        };
        shapes.push(shape);
    }
    if total_params.checked_mul(8) != Some(c.remaining()) {
        return Err(Error::ModelFormat(format!(
            "weight section is {} bytes, expected {} parameters",
            c.remaining(),
            total_params
        )));
    }
    let mut barriers = Vec::with_capacity(k);
    for shape in shapes {
        let b = match shape {
            HeadShape::Neural(dims) => {
                let mut blocks = Vec::with_capacity(dims.len());
                let mut fan_in = d_h;
                for d in dims {
                    blocks.push(DenseBlock {
                        in_dim: fan_in,
                        out_dim: d,
                        weight: c.f64s(fan_in * d, "weight")?,
                        bias: c.f64s(d, "bias")?,
                        gain: c.f64s(d, "gain")?,
                        shift: c.f64s(d, "shift")?,
                    });
                    fan_in = d;
                }
                let head_weight = c.f64s(fan_in, "head weight")?;
                let head_bias = c.f64s(1, "head bias")?[0];
                Barrier::Neural(BarrierNet {
                    input_dim: d_h,
                    blocks,
                    head_weight,
                    head_bias,
                })
            }
            HeadShape::HalfSpace => Barrier::HalfSpace {
                normal: c.f64s(d_h, "normal")?,
                offset: c.f64s(1, "offset")?[0],
            },
            HeadShape::Sphere => Barrier::Sphere {
                center: c.f64s(d_h, "center")?,
                radius: c.f64s(1, "radius")?[0],
            },
        };
        barriers.push(b);
    }
    BarrierBank::new(barriers)
}

/// Write `path` and its JSON sidecar.
pub fn write_bank(bank: &BarrierBank, path: &Path, train_config: Option<&TrainConfig>) -> Result<()> {
    fs::write(path, encode_bank(bank))?;
    let sidecar = BankSidecar {
        format_version: BANK_FORMAT_VERSION,
        category_names: bank.category_names().map(|n| n.to_vec()),
        train_config: train_config.cloned(),
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Option<BankSidecar>> {
    let p = sidecar_path(path);
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&fs::read(p)?)?))
}

/// Read a bank; category names are taken from the sidecar when present.
pub fn read_bank(path: &Path) -> Result<BarrierBank> {
    let bank = decode_bank(&fs::read(path)?)?;
    match read_sidecar(path)?.and_then(|s| s.category_names) {
        Some(names) => bank.with_category_names(names),
        None => Ok(bank),
    }
}
