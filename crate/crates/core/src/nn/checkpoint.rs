//! Model checkpoints: `"GLTM" | header_len u32 | JSON header | f32 weights`.
//!
//! The weight blob is the little-endian `f32` encoding of
//! [`ModelParams::to_flat`](super::ModelParams::to_flat).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{logit_adjust, Activation, Method, ModelParams};
use crate::error::{Error, Result};
use crate::splits::Protocol;

pub const MAGIC: &[u8; 4] = b"GLTM";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Input dim followed by hidden widths.
    pub dims: Vec<usize>,
    pub n_classes: usize,
    pub activation: Activation,
    pub method: Method,
    pub protocol: Protocol,
    /// Training-split class frequencies.
    pub class_prior: Vec<f64>,
    pub tau: f64,
    pub n_params: usize,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

/// Trained parameters plus what is needed to turn logits into predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, method: Method, protocol: Protocol, class_prior: Vec<f64>, tau: f64) -> Self {
        let header = CheckpointHeader {
            dims: params.dims(),
            n_classes: params.n_classes(),
            activation: params.activation,
            method,
            protocol,
            class_prior,
            tau,
            n_params: params.n_params(),
            provenance: BTreeMap::new(),
        };
        Self { header, params }
    }

    /// Logits used for the final decision, with post-hoc adjustment applied when the method asks for it.
    pub fn decision_logits(&self, logits: &[f64]) -> Vec<f64> {
        match self.header.method {
            Method::Logitadj => logit_adjust(logits, &self.header.class_prior, self.header.tau),
            _ => logits.to_vec(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let flat = self.params.to_flat();
        let mut out = Vec::with_capacity(8 + header.len() + 4 * flat.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in flat {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        if buf.len() < 8 || &buf[..4] != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let len = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
        let body = buf
            .get(8..8 + len)
            .ok_or_else(|| Error::format("checkpoint", "truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        let blob = &buf[8 + len..];
        if blob.len() != 4 * header.n_params {
            return Err(Error::format(
                "checkpoint",
                format!("blob holds {} bytes, header declares {} parameters", blob.len(), header.n_params),
            ));
        }
        let flat: Vec<f64> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let mut params = ModelParams::zeros(&header.dims, header.n_classes, header.activation);
        params.load_flat(&flat)?;
        Ok(Self { header, params })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stage_rng;

    #[test]
    fn survives_encoding_at_f32_precision() {
        let p = ModelParams::init(&[5, 7], 3, Activation::Relu, &mut stage_rng(0, "init")).unwrap();
        let ck = Checkpoint::new(p.clone(), Method::Logitadj, Protocol::Clt, vec![0.5, 0.3, 0.2], 1.0);
        let back = Checkpoint::decode(&ck.encode().unwrap()).unwrap();
        assert_eq!(back.header, ck.header);
        for (a, b) in back.params.to_flat().iter().zip(p.to_flat()) {
            assert_eq!(*a, b as f32 as f64);
        }
    }

    #[test]
    fn rejects_short_blob() {
        let p = ModelParams::zeros(&[2, 2], 2, Activation::Relu);
        let bytes = Checkpoint::new(p, Method::Ce, Protocol::Alt, vec![0.5, 0.5], 1.0).encode().unwrap();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 4]).is_err());
    }
}
