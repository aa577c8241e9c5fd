//! Adversarial-set container "QADV": header (magic, version, count, shape),
//! then clean floats, adversarial floats, labels as bytes, and success
//! flags as bytes. Attack metadata travels in a sidecar JSON written by the
//! CLI, keeping this format exactly the fixed layout above.

use super::Reader;
use crate::attacks::{AdversarialBatch, AttackConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

const MAGIC: &[u8; 4] = b"QADV";
const VERSION: u32 = 1;

pub fn to_bytes(batch: &AdversarialBatch) -> Vec<u8> {
    let n = batch.len();
    let sample_shape = &batch.clean.shape()[1..];
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(sample_shape.len() as u32).to_le_bytes());
    for &d in sample_shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in batch.clean.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in batch.adversarial.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(batch.labels.iter().map(|&l| l as u8));
    out.extend(batch.source_success.iter().map(|&s| s as u8));
    out
}

/// Raw container contents; the caller re-attaches metadata.
pub struct AdvSet {
    pub clean: Tensor,
    pub adversarial: Tensor,
    pub labels: Vec<usize>,
    pub source_success: Vec<bool>,
}

impl AdvSet {
    /// Rebuild a full batch given the metadata from the sidecar.
    pub fn into_batch(
        self,
        source_model: impl Into<String>,
        attack: AttackConfig,
    ) -> Result<AdversarialBatch> {
        AdversarialBatch::new(
            self.clean,
            self.adversarial,
            self.labels,
            source_model,
            attack,
            self.source_success,
        )
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<AdvSet> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format { offset: 0, detail: format!("bad magic {magic:?}") });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let n = r.u32("count")? as usize;
    let rank = r.u32("shape rank")? as usize;
    let mut shape = vec![n];
    for _ in 0..rank {
        shape.push(r.u32("shape dim")? as usize);
    }
    let per: usize = shape[1..].iter().product();
    let clean = Tensor::new(r.f32s(n * per, "clean data")?, shape.clone())?;
    let adversarial = Tensor::new(r.f32s(n * per, "adversarial data")?, shape)?;
    let labels: Vec<usize> = r.take(n, "labels")?.iter().map(|&b| b as usize).collect();
    let success: Vec<bool> = r.take(n, "success flags")?.iter().map(|&b| b != 0).collect();
    if r.remaining() != 0 {
        return Err(r.error(format!("{} trailing bytes", r.remaining())));
    }
    Ok(AdvSet { clean, adversarial, labels, source_success: success })
}

pub fn save(batch: &AdversarialBatch, path: &Path) -> Result<()> {
    super::atomic_write(path, &to_bytes(batch))
}

pub fn load(path: &Path) -> Result<AdvSet> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    from_bytes(&bytes)
}
