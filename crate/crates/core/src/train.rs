//! Quantization-aware training loops and the recipes for the model zoo.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{loss_cross_entropy, Model, ParamMap};
use crate::quant::QuantConfig;
use crate::rng::{permutation, sample_rng};
use crate::tensor::Tensor;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OptimMethod {
    Adam { alpha: f32, beta1: f32, beta2: f32, eps: f32 },
    /// Momentum with a learning-rate schedule of (epoch, value) pairs,
    /// 1-indexed epochs, strictly increasing.
    Momentum { gamma: f32, lr_schedule: Vec<(usize, f32)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub method: OptimMethod,
    /// Loss penalty lambda * ||theta||^2 on the selected weights.
    pub weight_decay: f32,
    /// Restrict decay to dense-layer weights (the MNIST recipe).
    pub decay_fc_only: bool,
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        if let OptimMethod::Momentum { lr_schedule, .. } = &self.method {
            if lr_schedule.is_empty() {
                return Err(Error::Config("momentum schedule is empty".into()));
            }
            if !lr_schedule.windows(2).all(|w| w[0].0 < w[1].0) {
                return Err(Error::Config(
                    "momentum schedule epochs must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dataset_id: String,
    /// Pad-4 + random-crop augmentation (CIFAR recipe).
    pub augment_pad_crop: bool,
    /// Random horizontal flip (CIFAR recipe).
    pub augment_hflip: bool,
    pub optimizer: OptimizerSpec,
    pub quant: QuantConfig,
}

impl TrainConfig {
    /// Adam recipe for the MNIST family: lr 0.001, betas (0.9, 0.999),
    /// eps 1e-8, weight decay 1e-5 on FC layers only, cross-entropy loss.
    pub fn mnist_recipe(quant: QuantConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 30,
            batch_size: 128,
            seed,
            dataset_id: "mnist".into(),
            augment_pad_crop: false,
            augment_hflip: false,
            optimizer: OptimizerSpec {
                method: OptimMethod::Adam { alpha: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 },
                weight_decay: 1e-5,
                decay_fc_only: true,
            },
            quant,
        }
    }

    /// Momentum recipe for the CIFAR family: gamma 0.9, stepped learning
    /// rate, weight decay 2e-4 on all layers, pad-crop + flip augmentation.
    pub fn cifar_recipe(quant: QuantConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 90,
            batch_size: 128,
            seed,
            dataset_id: "cifar10".into(),
            augment_pad_crop: true,
            augment_hflip: true,
            optimizer: OptimizerSpec {
                method: OptimMethod::Momentum {
                    gamma: 0.9,
                    lr_schedule: vec![
                        (1, 0.1),
                        (32, 0.01),
                        (48, 0.001),
                        (72, 0.0002),
                        (82, 0.00002),
                    ],
                },
                weight_decay: 2e-4,
                decay_fc_only: false,
            },
            quant,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub mean_loss: f64,
}

/// Accuracy-history CSV: epoch, train_acc, test_acc.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_acc,test_acc\n");
    for h in history {
        out.push_str(&format!("{},{:.4},{:.4}\n", h.epoch, h.train_acc, h.test_acc));
    }
    out
}

struct Optimizer {
    spec: OptimizerSpec,
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
    t: usize,
}

impl Optimizer {
    fn new(spec: OptimizerSpec) -> Self {
        Optimizer { spec, m: BTreeMap::new(), v: BTreeMap::new(), t: 0 }
    }

    fn lr_for_epoch(&self, epoch1: usize) -> f32 {
        match &self.spec.method {
            OptimMethod::Adam { alpha, .. } => *alpha,
            OptimMethod::Momentum { lr_schedule, .. } => {
                let mut lr = lr_schedule[0].1;
                for &(e, v) in lr_schedule {
                    if e <= epoch1 {
                        lr = v;
                    }
                }
                lr
            }
        }
    }

    fn step(&mut self, model: &mut Model, grads: &ParamMap, epoch1: usize, decayed: &[String]) {
        self.t += 1;
        let lr = self.lr_for_epoch(epoch1);
        let spec = self.spec.clone();
        let params = model.params_mut();
        for (name, grad) in grads {
            let theta = params.get_mut(name).expect("grad for unknown param");
            let mut g: Vec<f32> = grad.data().to_vec();
            if spec.weight_decay > 0.0 && decayed.iter().any(|d| d == name) {
                // d/d theta of lambda * ||theta||^2.
                for (gi, &ti) in g.iter_mut().zip(theta.data().iter()) {
                    *gi += 2.0 * spec.weight_decay * ti;
                }
            }
            match &spec.method {
                OptimMethod::Adam { beta1, beta2, eps, .. } => {
                    let m = self
                        .m
                        .entry(name.clone())
                        .or_insert_with(|| vec![0.0; g.len()]);
                    let v = self
                        .v
                        .entry(name.clone())
                        .or_insert_with(|| vec![0.0; g.len()]);
                    let bc1 = 1.0 - beta1.powi(self.t as i32);
                    let bc2 = 1.0 - beta2.powi(self.t as i32);
                    for ((ti, gi), (mi, vi)) in theta
                        .data_mut()
                        .iter_mut()
                        .zip(g.iter())
                        .zip(m.iter_mut().zip(v.iter_mut()))
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *ti -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
                OptimMethod::Momentum { gamma, .. } => {
                    let v = self
                        .v
                        .entry(name.clone())
                        .or_insert_with(|| vec![0.0; g.len()]);
                    for ((ti, gi), vi) in theta.data_mut().iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                        *vi = gamma * *vi + gi;
                        *ti -= lr * *vi;
                    }
                }
            }
        }
    }
}

/// Names of weight tensors subject to decay under the config.
fn decayed_params(model: &Model, fc_only: bool) -> Vec<String> {
    use crate::layers::LayerSpec;
    model
        .params()
        .keys()
        .filter(|name| {
            if !name.ends_with(".w") {
                return false;
            }
            if !fc_only {
                return true;
            }
            let idx: usize = name[1..name.find('.').unwrap()].parse().unwrap();
            matches!(model.layers()[idx], LayerSpec::Dense { .. })
        })
        .cloned()
        .collect()
}

fn augment(
    sample: &[f32],
    shape: &[usize],
    cfg: &TrainConfig,
    rng: &mut crate::rng::Rng,
    out: &mut [f32],
) {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (mut dy, mut dx) = (4i32, 4i32);
    if cfg.augment_pad_crop {
        dy = rng.gen_range(0..=8);
        dx = rng.gen_range(0..=8);
    }
    let flip = cfg.augment_hflip && rng.gen_bool(0.5);
    if !cfg.augment_pad_crop && !flip {
        out.copy_from_slice(sample);
        return;
    }
    // Pad 4 on each side, crop at (dy, dx); flip mirrors x.
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let sx = if flip { w - 1 - x } else { x };
                let py = y as i32 + dy - 4;
                let px = sx as i32 + dx - 4;
                out[ci * h * w + y * w + x] =
                    if py < 0 || py >= h as i32 || px < 0 || px >= w as i32 {
                        0.0
                    } else {
                        sample[ci * h * w + py as usize * w + px as usize]
                    };
            }
        }
    }
}

/// Quantization-aware training. The returned model keeps full-precision
/// shadow weights; quantizers stay active during both training and any
/// later inference via its QuantConfig. Passing an already-trained model
/// warm-starts from its weights.
pub fn train(
    mut model: Model,
    cfg: &TrainConfig,
    train_data: &Dataset,
    test_data: &Dataset,
) -> Result<(Model, Vec<EpochStats>)> {
    cfg.optimizer.validate()?;
    if train_data.is_empty() {
        return Err(Error::Domain("empty training set".into()));
    }
    if train_data.sample_shape() != model.input_shape() {
        return Err(Error::Shape(format!(
            "data shape {:?} does not match model input {:?}",
            train_data.sample_shape(),
            model.input_shape()
        )));
    }
    let mut opt = Optimizer::new(cfg.optimizer.clone());
    let decayed = decayed_params(&model, cfg.optimizer.decay_fc_only);
    let mut history = Vec::with_capacity(cfg.epochs);
    let shape = model.input_shape().to_vec();
    let needs_augment = cfg.augment_pad_crop || cfg.augment_hflip;

    for epoch in 0..cfg.epochs {
        let order = permutation(cfg.seed.wrapping_add(epoch as u64), train_data.len());
        let mut correct = 0usize;
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let (mut batch, labels) = train_data.gather(chunk);
            if needs_augment {
                let mut buf = vec![0.0f32; batch.row_len()];
                for (row, &idx) in chunk.iter().enumerate() {
                    let mut rng = sample_rng(cfg.seed.wrapping_add(epoch as u64), idx);
                    augment(train_data.image(idx), &shape, cfg, &mut rng, &mut buf);
                    batch.row_mut(row).copy_from_slice(&buf);
                }
            }
            let (probs, _, trace) = model.forward_train(&batch)?;
            if !probs.all_finite() {
                return Err(Error::Training {
                    epoch,
                    detail: format!("non-finite network output after {batches} batches"),
                });
            }
            let loss = loss_cross_entropy(&probs, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    detail: format!("loss became {loss} after {batches} batches"),
                });
            }
            loss_sum += loss as f64;
            batches += 1;
            for (i, &label) in labels.iter().enumerate() {
                if Tensor::argmax_slice(probs.row(i)) == label {
                    correct += 1;
                }
            }
            let (grads, _) = model.backward(&trace, &labels)?;
            opt.step(&mut model, &grads, epoch + 1, &decayed);
        }
        let test_acc = if test_data.is_empty() {
            f64::NAN
        } else {
            evaluate_accuracy(&model, test_data)?
        };
        history.push(EpochStats {
            epoch,
            train_acc: correct as f64 / train_data.len() as f64,
            test_acc,
            mean_loss: loss_sum / batches.max(1) as f64,
        });
    }
    Ok((model, history))
}

/// Fraction of samples with predict == label.
pub fn evaluate_accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty dataset".into()));
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(256) {
        let (batch, labels) = data.gather(chunk);
        let pred = model.predict(&batch)?;
        correct += pred
            .iter()
            .zip(labels.iter())
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}
