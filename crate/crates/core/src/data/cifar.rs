//! CIFAR-10 binary batch loader.
//!
//! Each record is 3073 bytes: one label byte followed by 1024 red, 1024
//! green, and 1024 blue plane bytes (32x32), which maps directly onto the
//! crate's CHW tensor layout.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

pub const RECORD_BYTES: usize = 3073;
const IMAGE_BYTES: usize = 3072;
const SIDE: usize = 32;

/// Decode one batch file worth of records.
pub fn parse_cifar_records(bytes: &[u8]) -> Result<(Tensor, Vec<u8>)> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Format {
            offset: (bytes.len() / RECORD_BYTES * RECORD_BYTES) as u64,
            detail: format!(
                "file length {} is not a multiple of the {RECORD_BYTES}-byte record stride",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * IMAGE_BYTES);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = rec[0];
        if label > 9 {
            return Err(Error::Format {
                offset: (i * RECORD_BYTES) as u64,
                detail: format!("label byte {label} outside [0,9] in record {i}"),
            });
        }
        labels.push(label);
        data.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    let images = Tensor::new(data, vec![n, 3, SIDE, SIDE])?;
    Ok((images, labels))
}

fn load_files(dir: &Path, names: &[String], id: &str) -> Result<Dataset> {
    let mut all_images: Vec<f32> = Vec::new();
    let mut all_labels: Vec<u8> = Vec::new();
    for name in names {
        let path = dir.join(name);
        let bytes = std::fs::read(&path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        let (images, labels) = parse_cifar_records(&bytes)?;
        all_images.extend_from_slice(images.data());
        all_labels.extend_from_slice(&labels);
    }
    let n = all_labels.len();
    Dataset::new(id, Tensor::new(all_images, vec![n, 3, SIDE, SIDE])?, all_labels)
}

/// Load the standard layout: data_batch_1.bin .. data_batch_5.bin plus
/// test_batch.bin.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train_names: Vec<String> = (1..=5).map(|i| format!("data_batch_{i}.bin")).collect();
    let train = load_files(dir, &train_names, "cifar10/train")?;
    let test = load_files(dir, &["test_batch.bin".to_string()], "cifar10/test")?;
    Ok((train, test))
}
