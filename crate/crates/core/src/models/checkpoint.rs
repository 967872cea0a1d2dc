//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "KDMSICKP"
//! version  u32
//! hdr_len  u64
//! header   hdr_len bytes of UTF-8 JSON (CheckpointHeader)
//! payload  f64 values of every tensor, in header order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::backbone::{BackboneConfig, BackboneKind};
use super::layers::Parameterized;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"KDMSICKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub backbone_kind: BackboneKind,
    pub output_stride: usize,
    pub channels: Vec<usize>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub backbone_kind: BackboneKind,
    pub output_stride: usize,
    pub channels: Vec<usize>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub tensors: Vec<(TensorEntry, Vec<f64>)>,
}

impl Checkpoint {
    pub fn from_model<C: Serialize, M: Parameterized>(
        kind: &str,
        config: &C,
        backbone: &BackboneConfig,
        seed: u64,
        model: &M,
    ) -> Self {
        let mut tensors = Vec::new();
        model.visit_params("", &mut |name, p| {
            tensors.push((
                TensorEntry {
                    name: name.to_string(),
                    shape: p.shape.clone(),
                },
                p.value.clone(),
            ))
        });
        let channels = match backbone.kind {
            BackboneKind::TinyCnn => backbone.channels.clone(),
            BackboneKind::Resnet50Shaped => [256, 512, 1024, 2048].iter().map(|c| c / backbone.width_divisor).collect(),
        };
        Checkpoint {
            kind: kind.to_string(),
            backbone_kind: backbone.kind,
            output_stride: backbone.output_stride(),
            channels,
            seed,
            config: serde_json::to_value(config).expect("config serializes"),
            tensors,
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }

    pub fn config<C: DeserializeOwned>(&self) -> Result<C> {
        serde_json::from_value(self.config.clone()).map_err(|e| Error::Checkpoint(format!("bad config: {e}")))
    }

    /// Copies stored tensors into `model`, matching by name and shape.
    pub fn load_into<M: Parameterized>(&self, model: &mut M) -> Result<()> {
        let mut idx = 0usize;
        let mut err = None;
        model.visit_params_mut("", &mut |name, p| {
            if err.is_some() {
                return;
            }
            match self.tensors.get(idx) {
                Some((entry, values)) if entry.name == name && entry.shape == p.shape => {
                    p.value.copy_from_slice(values);
                    p.zero_grad();
                }
                Some((entry, _)) => {
                    err = Some(format!("tensor {idx}: stored {} {:?}, model {name} {:?}", entry.name, entry.shape, p.shape))
                }
                None => err = Some(format!("missing tensor {name}")),
            }
            idx += 1;
        });
        if let Some(e) = err {
            return Err(Error::Checkpoint(e));
        }
        if idx != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model has {idx}",
                self.tensors.len()
            )));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = CheckpointHeader {
            kind: self.kind.clone(),
            backbone_kind: self.backbone_kind,
            output_stride: self.output_stride,
            channels: self.channels.clone(),
            seed: self.seed,
            config: self.config.clone(),
            tensors: self.tensors.iter().map(|(e, _)| e.clone()).collect(),
        };
        let hdr = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(hdr.len() as u64).to_le_bytes())?;
        w.write_all(&hdr)?;
        for (_, values) in &self.tensors {
            let mut buf = Vec::with_capacity(values.len() * 8);
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        let mut hdr = vec![0u8; len];
        r.read_exact(&mut hdr)?;
        let header: CheckpointHeader = serde_json::from_slice(&hdr)?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let mut raw = vec![0u8; n * 8];
            r.read_exact(&mut raw)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((entry, values));
        }
        Ok(Checkpoint {
            kind: header.kind,
            backbone_kind: header.backbone_kind,
            output_stride: header.output_stride,
            channels: header.channels,
            seed: header.seed,
            config: header.config,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(f)
    }
}
