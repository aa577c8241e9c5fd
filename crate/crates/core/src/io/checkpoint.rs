//! Checkpoint format "QNTK": header, layer table, little-endian f32
//! parameter blobs (full-precision shadow weights), and a SHA-256 digest.
//!
//! Round trip is bitwise: a loaded model reproduces forward outputs exactly.

use super::{push_string, Reader};
use crate::error::{Error, Result};
use crate::layers::{LayerSpec, Padding};
use crate::model::{Model, ParamMap};
use crate::quant::{BitwidthSpec, QuantConfig};
use crate::tensor::Tensor;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

const MAGIC: &[u8; 4] = b"QNTK";
const VERSION: u32 = 1;

fn padding_code(p: Padding) -> u8 {
    match p {
        Padding::Same => 0,
        Padding::Valid => 1,
    }
}

fn padding_from(code: u8, r: &Reader) -> Result<Padding> {
    match code {
        0 => Ok(Padding::Same),
        1 => Ok(Padding::Valid),
        other => Err(r.error(format!("bad padding code {other}"))),
    }
}

fn push32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn push_layer(out: &mut Vec<u8>, spec: &LayerSpec) {
    match *spec {
        LayerSpec::Dense { in_dim, out_dim } => {
            out.push(0);
            push32(out, in_dim);
            push32(out, out_dim);
        }
        LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, padding, bias } => {
            out.push(1);
            push32(out, in_ch);
            push32(out, out_ch);
            push32(out, kernel);
            push32(out, stride);
            out.push(padding_code(padding));
            out.push(bias as u8);
        }
        LayerSpec::Relu => out.push(2),
        LayerSpec::MaxPool { kernel, stride, padding } => {
            out.push(3);
            push32(out, kernel);
            push32(out, stride);
            out.push(padding_code(padding));
        }
        LayerSpec::AvgPool { kernel, stride } => {
            out.push(4);
            push32(out, kernel);
            push32(out, stride);
        }
        LayerSpec::Flatten => out.push(5),
        LayerSpec::BatchNorm { channels } => {
            out.push(6);
            push32(out, channels);
        }
        LayerSpec::Residual { in_ch, out_ch, stride } => {
            out.push(7);
            push32(out, in_ch);
            push32(out, out_ch);
            push32(out, stride);
        }
    }
}

fn read_layer(r: &mut Reader) -> Result<LayerSpec> {
    let tag = r.u8("layer tag")?;
    let spec = match tag {
        0 => LayerSpec::Dense {
            in_dim: r.u32("dense in")? as usize,
            out_dim: r.u32("dense out")? as usize,
        },
        1 => {
            let in_ch = r.u32("conv in_ch")? as usize;
            let out_ch = r.u32("conv out_ch")? as usize;
            let kernel = r.u32("conv kernel")? as usize;
            let stride = r.u32("conv stride")? as usize;
            let padding = padding_from(r.u8("conv padding")?, r)?;
            let bias = r.u8("conv bias")? != 0;
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, padding, bias }
        }
        2 => LayerSpec::Relu,
        3 => {
            let kernel = r.u32("pool kernel")? as usize;
            let stride = r.u32("pool stride")? as usize;
            let padding = padding_from(r.u8("pool padding")?, r)?;
            LayerSpec::MaxPool { kernel, stride, padding }
        }
        4 => LayerSpec::AvgPool {
            kernel: r.u32("avgpool kernel")? as usize,
            stride: r.u32("avgpool stride")? as usize,
        },
        5 => LayerSpec::Flatten,
        6 => LayerSpec::BatchNorm { channels: r.u32("bn channels")? as usize },
        7 => LayerSpec::Residual {
            in_ch: r.u32("res in_ch")? as usize,
            out_ch: r.u32("res out_ch")? as usize,
            stride: r.u32("res stride")? as usize,
        },
        other => return Err(r.error(format!("unknown layer tag {other}"))),
    };
    Ok(spec)
}

/// Serialize a model. The digest covers every preceding byte.
pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    push_string(&mut out, model.id());
    push_string(&mut out, model.dataset_id());
    out.extend_from_slice(&model.seed().to_le_bytes());
    let q = model.quant();
    out.push(q.weight_bits.as_bits());
    out.push(q.activation_bits.as_bits());
    out.push(q.exempt_first_layer as u8);
    out.push(q.exempt_last_layer as u8);
    out.push(model.input_shape().len() as u8);
    for &d in model.input_shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for spec in model.layers() {
        push_layer(&mut out, spec);
    }
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (name, tensor) in model.params() {
        push_string(&mut out, name);
        out.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Parse and verify a checkpoint.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 36 {
        return Err(Error::Format { offset: 0, detail: "file too short for a checkpoint".into() });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let expect = Sha256::digest(body);
    if digest != expect.as_slice() {
        return Err(Error::Format {
            offset: body.len() as u64,
            detail: "content digest mismatch".into(),
        });
    }

    let mut r = Reader::new(body);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format { offset: 0, detail: format!("bad magic {magic:?}") });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let id = r.string("model id")?;
    let dataset_id = r.string("dataset id")?;
    let seed = r.u64("seed")?;
    let weight_bits = BitwidthSpec::from_bits(r.u8("weight bits")?)
        .map_err(|e| r.error(e.to_string()))?;
    let activation_bits = BitwidthSpec::from_bits(r.u8("activation bits")?)
        .map_err(|e| r.error(e.to_string()))?;
    let quant = QuantConfig {
        weight_bits,
        activation_bits,
        exempt_first_layer: r.u8("exempt first")? != 0,
        exempt_last_layer: r.u8("exempt last")? != 0,
    };
    let rank = r.u8("input rank")? as usize;
    let mut input_shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        input_shape.push(r.u32("input dim")? as usize);
    }
    let n_layers = r.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        layers.push(read_layer(&mut r)?);
    }
    let n_params = r.u32("param count")? as usize;
    let mut params: ParamMap = BTreeMap::new();
    for _ in 0..n_params {
        let name = r.string("param name")?;
        let rank = r.u8("param rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("param dim")? as usize);
        }
        let len: usize = shape.iter().product();
        let data = r.f32s(len, "param data")?;
        params.insert(name, Tensor::new(data, shape)?);
    }
    if r.remaining() != 0 {
        return Err(r.error(format!("{} trailing bytes", r.remaining())));
    }

    let mut model = Model::build(id.clone(), dataset_id.clone(), &input_shape, layers, quant, seed)
        .map_err(|e| Error::Format { offset: 0, detail: format!("invalid architecture: {e}") })?;
    model.set_metadata(id, dataset_id, seed);
    model
        .load_params(params)
        .map_err(|e| Error::Format { offset: 0, detail: format!("invalid params: {e}") })?;
    Ok(model)
}

/// Hex SHA-256 of a serialized checkpoint (the manifest's reference key).
pub fn digest_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    super::atomic_write(path, &to_bytes(model))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::LayerSpec;
    use crate::quant::{BitwidthSpec, QuantConfig};

    fn sample_model() -> Model {
        Model::build(
            "ckpt-test",
            "unit",
            &[1, 6, 6],
            vec![
                LayerSpec::Conv2d { in_ch: 1, out_ch: 2, kernel: 3, stride: 1, padding: Padding::Same, bias: true },
                LayerSpec::Relu,
                LayerSpec::MaxPool { kernel: 2, stride: 2, padding: Padding::Valid },
                LayerSpec::Flatten,
                LayerSpec::Dense { in_dim: 18, out_dim: 4 },
            ],
            QuantConfig::uniform(BitwidthSpec::Bits(4)),
            77,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_forward_bitwise() {
        let m = sample_model();
        let bytes = to_bytes(&m);
        let loaded = from_bytes(&bytes).unwrap();
        assert_eq!(loaded.id(), "ckpt-test");
        assert_eq!(loaded.seed(), 77);
        assert_eq!(loaded.quant(), m.quant());
        let x = Tensor::from_fn(&[3, 1, 6, 6], |i| ((i * 7) % 13) as f32 / 13.0);
        let (p1, z1, _) = m.forward(&x).unwrap();
        let (p2, z2, _) = loaded.forward(&x).unwrap();
        assert_eq!(p1.data(), p2.data());
        assert_eq!(z1.data(), z2.data());
    }

    #[test]
    fn corrupted_bytes_are_rejected() {
        let m = sample_model();
        let mut bytes = to_bytes(&m);
        // Flip one parameter byte: digest check must fire.
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        assert!(matches!(from_bytes(&bytes), Err(Error::Format { .. })));

        // Bad magic with a recomputed digest: magic check must fire.
        let mut bytes = to_bytes(&m);
        bytes[0] = b'X';
        let body_len = bytes.len() - 32;
        let d = Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&d);
        let err = from_bytes(&bytes).unwrap_err();
        match err {
            Error::Format { offset, detail } => {
                assert_eq!(offset, 0);
                assert!(detail.contains("magic"), "{detail}");
            }
            other => panic!("wrong error {other:?}"),
        }

        assert!(matches!(from_bytes(&[1, 2, 3]), Err(Error::Format { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.qntk");
        let m = sample_model();
        save(&m, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.params()["l0.w"].data(), m.params()["l0.w"].data());
    }

    #[test]
    fn digest_is_stable() {
        let m = sample_model();
        let b1 = to_bytes(&m);
        let b2 = to_bytes(&m);
        assert_eq!(b1, b2, "serialization is deterministic");
        assert_eq!(digest_hex(&b1).len(), 64);
    }
}
