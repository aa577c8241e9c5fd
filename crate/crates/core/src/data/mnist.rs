//! MNIST IDX loader (big-endian dimension headers, uncompressed files).

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::io::Read;
use std::path::Path;

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn u32_be(&mut self, what: &str) -> Result<u32> {
        if self.offset + 4 > self.bytes.len() {
            return Err(Error::Format {
                offset: self.offset as u64,
                detail: format!("truncated while reading {what}"),
            });
        }
        let v = u32::from_be_bytes(self.bytes[self.offset..self.offset + 4].try_into().unwrap());
        self.offset += 4;
        Ok(v)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                detail: format!(
                    "truncated {what}: want {} bytes, file ends at {}",
                    self.offset + n,
                    self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?
        .read_to_end(&mut buf)?;
    Ok(buf)
}

/// Parse an IDX3 image file into (N, 1, rows, cols) with pixels in [0,1].
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let mut c = Cursor { bytes, offset: 0 };
    let magic = c.u32_be("image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad image magic {magic} (want {IMAGE_MAGIC})"),
        });
    }
    let n = c.u32_be("image count")? as usize;
    let rows = c.u32_be("row count")? as usize;
    let cols = c.u32_be("column count")? as usize;
    let pixels = c.take(n * rows * cols, "pixel data")?;
    if c.offset != bytes.len() {
        return Err(Error::Format {
            offset: c.offset as u64,
            detail: format!("{} trailing bytes after pixel data", bytes.len() - c.offset),
        });
    }
    let data: Vec<f32> = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(data, vec![n, 1, rows, cols])
}

/// Parse an IDX1 label file; total length must be 8 + sample count.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut c = Cursor { bytes, offset: 0 };
    let magic = c.u32_be("label magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad label magic {magic} (want {LABEL_MAGIC})"),
        });
    }
    let n = c.u32_be("label count")? as usize;
    let labels = c.take(n, "label data")?.to_vec();
    if bytes.len() != 8 + n {
        return Err(Error::Format {
            offset: (8 + n) as u64,
            detail: format!("label file length {} != 8 + {n}", bytes.len()),
        });
    }
    Ok(labels)
}

fn load_split(dir: &Path, prefix: &str, id: &str) -> Result<Dataset> {
    let images = parse_idx_images(&read_file(&dir.join(format!("{prefix}-images-idx3-ubyte")))?)?;
    let labels = parse_idx_labels(&read_file(&dir.join(format!("{prefix}-labels-idx1-ubyte")))?)?;
    if images.batch() != labels.len() {
        return Err(Error::Format {
            offset: 4,
            detail: format!(
                "{} images but {} labels in {prefix} split",
                images.batch(),
                labels.len()
            ),
        });
    }
    Dataset::new(id, images, labels)
}

/// Load the standard four-file layout from a directory:
/// train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte,
/// t10k-labels-idx1-ubyte.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_split(dir, "train", "mnist/train")?;
    let test = load_split(dir, "t10k", "mnist/test")?;
    Ok((train, test))
}

/// Serialize pixels into the IDX3 image layout (test fixtures, subsets).
pub fn write_idx_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    out
}

/// Serialize labels into the IDX1 layout.
pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_canonical_layout() {
        // 2 images of 2x3; byte 255 must normalize to exactly 1.0.
        let pixels: Vec<u8> = vec![0, 51, 102, 153, 204, 255, 255, 0, 0, 0, 0, 0];
        let bytes = write_idx_images(2, 2, 3, &pixels);
        let t = parse_idx_images(&bytes).unwrap();
        assert_eq!(t.shape(), &[2, 1, 2, 3]);
        assert_eq!(t.data()[5], 1.0);
        assert_eq!(t.data()[0], 0.0);
        assert!((t.data()[1] - 0.2).abs() < 1e-6);

        let lb = write_idx_labels(&[3, 9]);
        assert_eq!(lb.len(), 8 + 2, "IDX1 length is 8 + sample count");
        assert_eq!(parse_idx_labels(&lb).unwrap(), vec![3, 9]);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = write_idx_images(1, 2, 2, &[0; 4]);
        bytes[3] = 0x00; // corrupt magic 2051 -> 2048
        let err = parse_idx_images(&bytes).unwrap_err();
        match err {
            Error::Format { offset, detail } => {
                assert_eq!(offset, 0);
                assert!(detail.contains("magic"), "{detail}");
            }
            other => panic!("wrong error {other:?}"),
        }

        let mut lb = write_idx_labels(&[1]);
        lb[3] = 0xff;
        assert!(matches!(parse_idx_labels(&lb), Err(Error::Format { .. })));
    }

    #[test]
    fn rejects_truncation_with_offset() {
        let bytes = write_idx_images(2, 2, 2, &[0; 8]);
        let err = parse_idx_images(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::Format { offset, detail } => {
                assert_eq!(offset, (bytes.len() - 3) as u64);
                assert!(detail.contains("truncated"), "{detail}");
            }
            other => panic!("wrong error {other:?}"),
        }
    }

    #[test]
    fn loads_directory_pair() {
        let dir = tempfile::tempdir().unwrap();
        let img = |n: usize| write_idx_images(n, 4, 4, &vec![128u8; n * 16]);
        let lbl = |n: usize| write_idx_labels(&vec![1u8; n]);
        std::fs::write(dir.path().join("train-images-idx3-ubyte"), img(6)).unwrap();
        std::fs::write(dir.path().join("train-labels-idx1-ubyte"), lbl(6)).unwrap();
        std::fs::write(dir.path().join("t10k-images-idx3-ubyte"), img(3)).unwrap();
        std::fs::write(dir.path().join("t10k-labels-idx1-ubyte"), lbl(3)).unwrap();
        let (train, test) = load_mnist(dir.path()).unwrap();
        assert_eq!(train.len(), 6);
        assert_eq!(test.len(), 3);
        assert_eq!(train.sample_shape(), &[1, 4, 4]);
    }
}
