//! The `GLTD` binary dataset format.
//!
//! ```text
//! header  magic "GLTD" | version u16 | n_samples u32 | D u16 | K u16 | A u16 | regime u8
//! record  id u32 | y u16 | attrs | D x f32
//! ```
//!
//! All integers and floats are little endian. `attrs` is a `u16` attribute index
//! in the single-label regime and a `ceil(A / 8)` byte bitmask (attribute `a` is
//! bit `a % 8` of byte `a / 8`) in the multi-label regime.

use std::fs;
use std::path::Path;

use super::{Attributes, Dataset, Regime, Sample};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GLTD";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 17;

fn mask_len(n_attributes: usize) -> usize {
    n_attributes.div_ceil(8)
}

pub fn record_len(ds: &Dataset) -> usize {
    let attrs = match ds.regime {
        Regime::Single => 2,
        Regime::Multi => mask_len(ds.n_attributes),
    };
    4 + 2 + attrs + 4 * ds.feat_dim
}

pub fn encode(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + ds.len() * record_len(ds));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.feat_dim as u16).to_le_bytes());
    out.extend_from_slice(&(ds.n_classes as u16).to_le_bytes());
    out.extend_from_slice(&(ds.n_attributes as u16).to_le_bytes());
    out.push(ds.regime.code());
    for s in &ds.samples {
        out.extend_from_slice(&s.id.to_le_bytes());
        out.extend_from_slice(&(s.y as u16).to_le_bytes());
        match &s.attrs {
            Attributes::Single(a) => out.extend_from_slice(&a.to_le_bytes()),
            Attributes::Multi(bits) => {
                let mut mask = vec![0u8; mask_len(ds.n_attributes)];
                for (a, _) in bits.iter().enumerate().filter(|(_, on)| **on) {
                    mask[a / 8] |= 1 << (a % 8);
                }
                out.extend_from_slice(&mask);
            }
        }
        for v in &s.x {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let out = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::format("GLTD", format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::format("GLTD", "bad magic"));
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(Error::format("GLTD", format!("unsupported version {version}")));
    }
    let n = cur.u32()? as usize;
    let feat_dim = cur.u16()? as usize;
    let n_classes = cur.u16()? as usize;
    let n_attributes = cur.u16()? as usize;
    let regime_code = cur.take(1)?[0];
    let regime = Regime::from_code(regime_code)
        .ok_or_else(|| Error::format("GLTD", format!("unknown regime {regime_code}")))?;

    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let id = cur.u32()?;
        let y = cur.u16()? as usize;
        let attrs = match regime {
            Regime::Single => Attributes::Single(cur.u16()?),
            Regime::Multi => {
                let mask = cur.take(mask_len(n_attributes))?;
                Attributes::Multi((0..n_attributes).map(|a| mask[a / 8] >> (a % 8) & 1 == 1).collect())
            }
        };
        let x = cur
            .take(4 * feat_dim)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        samples.push(Sample { id, x, y, attrs });
    }
    if cur.pos != buf.len() {
        return Err(Error::format("GLTD", "trailing bytes after last record"));
    }
    let ds = Dataset {
        samples,
        n_classes,
        n_attributes,
        feat_dim,
        regime,
        generation: None,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn write(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, encode(ds))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Dataset> {
    decode(&fs::read(path)?)
}
