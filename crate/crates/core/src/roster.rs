//! The model zoo: MNIST CNN family, CIFAR ResNets, and the plain CIFAR CNN.
//!
//! Parameter budgets (within 5%): MnistA 414K with B/C at 2x/4x channels
//! (836K / 1.7M), Resnet20/32/44 at 269K / 464K / 658K, CifarA 4.5M.

use crate::error::{Error, Result};
use crate::layers::{LayerSpec, Padding};
use crate::model::Model;
use crate::quant::QuantConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RosterId {
    MnistA,
    MnistB,
    MnistC,
    Resnet20,
    Resnet32,
    Resnet44,
    CifarA,
}

impl RosterId {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "mnista" => Ok(RosterId::MnistA),
            "mnistb" => Ok(RosterId::MnistB),
            "mnistc" => Ok(RosterId::MnistC),
            "resnet20" => Ok(RosterId::Resnet20),
            "resnet32" => Ok(RosterId::Resnet32),
            "resnet44" => Ok(RosterId::Resnet44),
            "cifara" => Ok(RosterId::CifarA),
            other => Err(Error::Roster(format!("unknown model id {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RosterId::MnistA => "MnistA",
            RosterId::MnistB => "MnistB",
            RosterId::MnistC => "MnistC",
            RosterId::Resnet20 => "Resnet20",
            RosterId::Resnet32 => "Resnet32",
            RosterId::Resnet44 => "Resnet44",
            RosterId::CifarA => "CifarA",
        }
    }
}

impl std::fmt::Display for RosterId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ModelRosterEntry {
    pub id: RosterId,
    pub channel_multiplier: usize,
    pub expected_params: usize,
}

pub fn entry(id: RosterId) -> ModelRosterEntry {
    let (channel_multiplier, expected_params) = match id {
        RosterId::MnistA => (1, 414_000),
        RosterId::MnistB => (2, 836_000),
        RosterId::MnistC => (4, 1_700_000),
        RosterId::Resnet20 => (1, 269_000),
        RosterId::Resnet32 => (1, 464_000),
        RosterId::Resnet44 => (1, 658_000),
        RosterId::CifarA => (1, 4_500_000),
    };
    ModelRosterEntry { id, channel_multiplier, expected_params }
}

pub const MNIST_INPUT: [usize; 3] = [1, 28, 28];
pub const CIFAR_INPUT: [usize; 3] = [3, 32, 32];
const CLASSES: usize = 10;

fn conv(in_ch: usize, out_ch: usize, padding: Padding) -> LayerSpec {
    LayerSpec::Conv2d { in_ch, out_ch, kernel: 3, stride: 1, padding, bias: true }
}

/// Four conv layers with two pools, one hidden dense layer: 8 layers
/// counting conv/pool/dense. Base channels (8, 8, 16, 16) scaled by the
/// multiplier land the A/B/C parameter budgets.
fn mnist_layers(mult: usize) -> Vec<LayerSpec> {
    let c1 = 8 * mult;
    let c2 = 16 * mult;
    vec![
        conv(1, c1, Padding::Same),
        LayerSpec::Relu,
        conv(c1, c1, Padding::Same),
        LayerSpec::Relu,
        LayerSpec::MaxPool { kernel: 2, stride: 2, padding: Padding::Valid },
        conv(c1, c2, Padding::Same),
        LayerSpec::Relu,
        conv(c2, c2, Padding::Same),
        LayerSpec::Relu,
        LayerSpec::MaxPool { kernel: 2, stride: 2, padding: Padding::Valid },
        LayerSpec::Flatten,
        LayerSpec::Dense { in_dim: 7 * 7 * c2, out_dim: 512 },
        LayerSpec::Relu,
        LayerSpec::Dense { in_dim: 512, out_dim: CLASSES },
    ]
}

/// Standard CIFAR ResNet of depth 6n+2: conv stem, three stages of n
/// residual blocks at 16/32/64 channels, global average pool, dense head.
fn resnet_layers(n: usize) -> Vec<LayerSpec> {
    let mut layers = vec![
        LayerSpec::Conv2d { in_ch: 3, out_ch: 16, kernel: 3, stride: 1, padding: Padding::Same, bias: false },
        LayerSpec::BatchNorm { channels: 16 },
        LayerSpec::Relu,
    ];
    for _ in 0..n {
        layers.push(LayerSpec::Residual { in_ch: 16, out_ch: 16, stride: 1 });
    }
    layers.push(LayerSpec::Residual { in_ch: 16, out_ch: 32, stride: 2 });
    for _ in 1..n {
        layers.push(LayerSpec::Residual { in_ch: 32, out_ch: 32, stride: 1 });
    }
    layers.push(LayerSpec::Residual { in_ch: 32, out_ch: 64, stride: 2 });
    for _ in 1..n {
        layers.push(LayerSpec::Residual { in_ch: 64, out_ch: 64, stride: 1 });
    }
    layers.extend([
        LayerSpec::AvgPool { kernel: 8, stride: 8 },
        LayerSpec::Flatten,
        LayerSpec::Dense { in_dim: 64, out_dim: CLASSES },
    ]);
    layers
}

/// 11-layer CIFAR CNN: six convs with two pools, three dense layers.
fn cifar_a_layers() -> Vec<LayerSpec> {
    vec![
        conv(3, 64, Padding::Same),
        LayerSpec::Relu,
        conv(64, 64, Padding::Same),
        LayerSpec::Relu,
        LayerSpec::MaxPool { kernel: 3, stride: 2, padding: Padding::Same },
        conv(64, 128, Padding::Same),
        LayerSpec::Relu,
        conv(128, 128, Padding::Same),
        LayerSpec::Relu,
        LayerSpec::MaxPool { kernel: 3, stride: 2, padding: Padding::Same },
        conv(128, 128, Padding::Valid),
        LayerSpec::Relu,
        conv(128, 128, Padding::Valid),
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense { in_dim: 4 * 4 * 128, out_dim: 1536 },
        LayerSpec::Relu,
        LayerSpec::Dense { in_dim: 1536, out_dim: 512 },
        LayerSpec::Relu,
        LayerSpec::Dense { in_dim: 512, out_dim: CLASSES },
    ]
}

/// Architecture and initial parameters are deterministic in (entry, seed).
pub fn build_model(entry: ModelRosterEntry, quant: QuantConfig, seed: u64) -> Result<Model> {
    let (input, layers, dataset): (&[usize], Vec<LayerSpec>, &str) = match entry.id {
        RosterId::MnistA | RosterId::MnistB | RosterId::MnistC => {
            (&MNIST_INPUT, mnist_layers(entry.channel_multiplier), "mnist")
        }
        RosterId::Resnet20 => (&CIFAR_INPUT, resnet_layers(3), "cifar10"),
        RosterId::Resnet32 => (&CIFAR_INPUT, resnet_layers(5), "cifar10"),
        RosterId::Resnet44 => (&CIFAR_INPUT, resnet_layers(7), "cifar10"),
        RosterId::CifarA => (&CIFAR_INPUT, cifar_a_layers(), "cifar10"),
    };
    let model = Model::build(entry.id.name(), dataset, input, layers, quant, seed)?;
    debug_assert!(
        param_count_within_budget(model.param_count(), entry.expected_params),
        "{} has {} params, expected about {}",
        entry.id,
        model.param_count(),
        entry.expected_params
    );
    Ok(model)
}

/// Build by id string (CLI surface).
pub fn build_by_name(name: &str, quant: QuantConfig, seed: u64) -> Result<Model> {
    Ok(build_model(entry(RosterId::parse(name)?), quant, seed)?)
}

pub fn param_count_within_budget(actual: usize, expected: usize) -> bool {
    let lo = expected as f64 * 0.95;
    let hi = expected as f64 * 1.05;
    (actual as f64) >= lo && (actual as f64) <= hi
}
