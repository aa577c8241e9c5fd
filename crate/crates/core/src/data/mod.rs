//! Datasets: in-memory container, loaders, and the synthetic generator.

pub mod cifar;
pub mod mnist;
pub mod synthetic;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use synthetic::{gen_synthetic, SyntheticSpec};

/// A labeled image set. Pixel values are normalized to [0,1]; layout is
/// NCHW with the batch dimension leading.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub id: String,
    images: Tensor,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(id: impl Into<String>, images: Tensor, labels: Vec<u8>) -> Result<Self> {
        if images.batch() != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.batch(),
                labels.len()
            )));
        }
        Ok(Dataset { id: id.into(), images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape (C, H, W).
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        self.images.row(i)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Batch tensor + labels for the given sample indices.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        let mut out = Tensor::zeros(&shape);
        let mut labels = Vec::with_capacity(indices.len());
        for (o, &i) in indices.iter().enumerate() {
            out.row_mut(o).copy_from_slice(self.images.row(i));
            labels.push(self.label(i));
        }
        (out, labels)
    }

    /// First `n` samples as a new dataset (deterministic subset).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        let (images, _) = self.gather(&idx);
        Dataset {
            id: format!("{}[0..{n}]", self.id),
            images,
            labels: self.labels[..n].to_vec(),
        }
    }
}

/// How a CLI invocation names its data: `synthetic:...`, `mnist:DIR`,
/// or `cifar10:DIR`.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetDescriptor {
    MnistIdx { dir: std::path::PathBuf },
    Cifar10Binary { dir: std::path::PathBuf },
    Synthetic(SyntheticSpec),
}

impl DatasetDescriptor {
    /// Parse `mnist:DIR`, `cifar10:DIR`, or
    /// `synthetic:classes=10,size=28,channels=1,per-class=200,test-per-class=50,seed=7`.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("dataset descriptor {s:?} needs kind:args")))?;
        match kind {
            "mnist" | "mnist-idx" => Ok(DatasetDescriptor::MnistIdx { dir: rest.into() }),
            "cifar10" | "cifar10-binary" => Ok(DatasetDescriptor::Cifar10Binary { dir: rest.into() }),
            "synthetic" => {
                let mut spec = SyntheticSpec::default();
                for kv in rest.split(',').filter(|p| !p.is_empty()) {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| Error::Config(format!("bad synthetic param {kv:?}")))?;
                    let parse_usize = |v: &str| {
                        v.parse::<usize>()
                            .map_err(|_| Error::Config(format!("bad value {v:?} for {k}")))
                    };
                    match k {
                        "classes" => spec.classes = parse_usize(v)?,
                        "size" => spec.size = parse_usize(v)?,
                        "channels" => spec.channels = parse_usize(v)?,
                        "per-class" => spec.train_per_class = parse_usize(v)?,
                        "test-per-class" => spec.test_per_class = parse_usize(v)?,
                        "seed" => {
                            spec.seed = v
                                .parse::<u64>()
                                .map_err(|_| Error::Config(format!("bad seed {v:?}")))?
                        }
                        _ => return Err(Error::Config(format!("unknown synthetic param {k:?}"))),
                    }
                }
                if spec.classes < 2 {
                    return Err(Error::Config("synthetic data needs classes >= 2".into()));
                }
                Ok(DatasetDescriptor::Synthetic(spec))
            }
            other => Err(Error::Config(format!("unknown dataset kind {other:?}"))),
        }
    }

    /// Load (train, test) pair.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetDescriptor::MnistIdx { dir } => mnist::load_mnist(dir),
            DatasetDescriptor::Cifar10Binary { dir } => cifar::load_cifar10(dir),
            DatasetDescriptor::Synthetic(spec) => gen_synthetic(spec),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_parses_and_rejects() {
        let d = DatasetDescriptor::parse("synthetic:classes=4,size=12,per-class=9,seed=3").unwrap();
        let DatasetDescriptor::Synthetic(spec) = d else { panic!() };
        assert_eq!(spec.classes, 4);
        assert_eq!(spec.size, 12);
        assert_eq!(spec.train_per_class, 9);
        assert!(DatasetDescriptor::parse("nope").is_err());
        assert!(DatasetDescriptor::parse("synthetic:classes=1").is_err());
        assert!(DatasetDescriptor::parse("synthetic:bogus=1").is_err());
        assert!(matches!(
            DatasetDescriptor::parse("mnist:/data/mnist").unwrap(),
            DatasetDescriptor::MnistIdx { .. }
        ));
    }

    #[test]
    fn gather_preserves_order() {
        let images = Tensor::from_fn(&[4, 1, 2, 2], |i| i as f32);
        let ds = Dataset::new("t", images, vec![0, 1, 2, 3]).unwrap();
        let (batch, labels) = ds.gather(&[2, 0]);
        assert_eq!(labels, vec![2, 0]);
        assert_eq!(batch.row(0)[0], 8.0);
        assert_eq!(batch.row(1)[0], 0.0);
    }
}
