//! Model graph: forward inference, cross-entropy loss, and exact
//! reverse-mode gradients with respect to both parameters and inputs.
//!
//! Quantizers from [`crate::quant`] hook into the forward pass (effective
//! weights, post-activation outputs); the backward pass routes through the
//! straight-through estimator, so gradients themselves are never quantized.

use crate::error::{Error, Result};
use crate::layers::{self, BnAux, LayerSpec, Padding};
use crate::quant::{quantize_activations, quantize_weights, BitwidthSpec, QuantConfig};
use crate::rng::run_rng;
use crate::tensor::Tensor;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;

pub type ParamMap = BTreeMap<String, Tensor>;

#[derive(Debug, Clone)]
pub struct Model {
    id: String,
    dataset_id: String,
    seed: u64,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    /// shapes[i] is the input shape of layer i; shapes[layers.len()] is the
    /// output shape. Batch dimension excluded.
    shapes: Vec<Vec<usize>>,
    params: ParamMap,
    quant: QuantConfig,
    /// Index of the first and last layer owning weights; used for the
    /// quantization exemption flags.
    first_param_layer: usize,
    last_param_layer: usize,
    /// Bumped whenever parameters change; traces remember the stamp they
    /// were produced under.
    stamp: u64,
}

#[derive(Debug, Clone)]
pub enum Aux {
    None,
    Pool(Vec<u32>),
    Bn(BnAux),
    Residual(Box<ResAux>),
}

#[derive(Debug, Clone)]
pub struct ResAux {
    pub conv1_in_shape: Vec<usize>,
    pub bn1: BnAux,
    pub bn1_y: Tensor,
    pub z1: Tensor,
    pub bn2: BnAux,
    pub sum: Tensor,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub output: Tensor,
    pub aux: Aux,
}

/// Cached per-layer activations from one forward call.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    stamp: u64,
    train_mode: bool,
    input: Tensor,
    pub layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Whether the trace came from a batch-statistics (training) forward.
    pub fn train_mode(&self) -> bool {
        self.train_mode
    }
}

/// Row-wise softmax with max subtraction for stability.
pub fn softmax(logits: &Tensor) -> Tensor {
    let batch = logits.batch();
    let n = logits.row_len();
    let mut out = vec![0.0f32; batch * n];
    for (i, row) in logits.data().chunks(n).enumerate() {
        let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let dst = &mut out[i * n..(i + 1) * n];
        let mut denom = 0.0f32;
        for (d, &z) in dst.iter_mut().zip(row.iter()) {
            let e = (z - m).exp();
            *d = e;
            denom += e;
        }
        for d in dst.iter_mut() {
            *d /= denom;
        }
    }
    Tensor::new(out, logits.shape().to_vec()).expect("softmax shape")
}

/// Mean over the batch of -log(probability of the true class).
pub fn loss_cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f32> {
    let batch = probs.batch();
    let n = probs.row_len();
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let mut total = 0.0f64;
    for (i, &label) in labels.iter().enumerate() {
        if label >= n {
            return Err(Error::Domain(format!(
                "label {label} out of range for {n} classes"
            )));
        }
        let p = probs.row(i)[label].max(f32::MIN_POSITIVE);
        total -= (p as f64).ln();
    }
    Ok((total / batch as f64) as f32)
}

impl Model {
    pub fn build(
        id: impl Into<String>,
        dataset_id: impl Into<String>,
        input_shape: &[usize],
        layers: Vec<LayerSpec>,
        quant: QuantConfig,
        seed: u64,
    ) -> Result<Model> {
        if layers.is_empty() {
            return Err(Error::Shape("model needs at least one layer".into()));
        }
        let mut shapes = vec![input_shape.to_vec()];
        for spec in &layers {
            let next = spec.out_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        let param_layers: Vec<usize> = layers
            .iter()
            .enumerate()
            .filter(|(_, l)| {
                matches!(
                    l,
                    LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } | LayerSpec::Residual { .. }
                )
            })
            .map(|(i, _)| i)
            .collect();
        let (first, last) = match (param_layers.first(), param_layers.last()) {
            (Some(&f), Some(&l)) => (f, l),
            _ => return Err(Error::Shape("model has no parameterized layers".into())),
        };

        let mut model = Model {
            id: id.into(),
            dataset_id: dataset_id.into(),
            seed,
            input_shape: input_shape.to_vec(),
            layers,
            shapes,
            params: BTreeMap::new(),
            quant,
            first_param_layer: first,
            last_param_layer: last,
            stamp: 1,
        };
        model.init_params();
        Ok(model)
    }

    /// He-normal initialization for weights, deterministic in the seed.
    fn init_params(&mut self) {
        let mut rng = run_rng(self.seed);
        let mut draw = |shape: &[usize], fan_in: usize| {
            let std = (2.0 / fan_in as f32).sqrt();
            let normal = Normal::new(0.0f32, std).expect("normal params");
            Tensor::from_fn(shape, |_| normal.sample(&mut rng))
        };
        let mut params = BTreeMap::new();
        for (i, spec) in self.layers.iter().enumerate() {
            let key = |suffix: &str| format!("l{i}.{suffix}");
            match *spec {
                LayerSpec::Dense { in_dim, out_dim } => {
                    params.insert(key("w"), draw(&[out_dim, in_dim], in_dim));
                    params.insert(key("b"), Tensor::zeros(&[out_dim]));
                }
                LayerSpec::Conv2d { in_ch, out_ch, kernel, bias, .. } => {
                    let fan_in = in_ch * kernel * kernel;
                    params.insert(key("w"), draw(&[out_ch, in_ch, kernel, kernel], fan_in));
                    if bias {
                        params.insert(key("b"), Tensor::zeros(&[out_ch]));
                    }
                }
                LayerSpec::BatchNorm { channels } => {
                    params.insert(key("gamma"), Tensor::filled(&[channels], 1.0));
                    params.insert(key("beta"), Tensor::zeros(&[channels]));
                    params.insert(key("mean"), Tensor::zeros(&[channels]));
                    params.insert(key("var"), Tensor::filled(&[channels], 1.0));
                }
                LayerSpec::Residual { in_ch, out_ch, .. } => {
                    params.insert(key("c1.w"), draw(&[out_ch, in_ch, 3, 3], in_ch * 9));
                    params.insert(key("c2.w"), draw(&[out_ch, out_ch, 3, 3], out_ch * 9));
                    for bn in ["bn1", "bn2"] {
                        params.insert(key(&format!("{bn}.gamma")), Tensor::filled(&[out_ch], 1.0));
                        params.insert(key(&format!("{bn}.beta")), Tensor::zeros(&[out_ch]));
                        params.insert(key(&format!("{bn}.mean")), Tensor::zeros(&[out_ch]));
                        params.insert(key(&format!("{bn}.var")), Tensor::filled(&[out_ch], 1.0));
                    }
                }
                LayerSpec::Relu | LayerSpec::MaxPool { .. } | LayerSpec::AvgPool { .. } | LayerSpec::Flatten => {}
            }
        }
        self.params = params;
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn quant(&self) -> &QuantConfig {
        &self.quant
    }

    pub fn params(&self) -> &ParamMap {
        &self.params
    }

    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    /// Running statistics are buffers, not trainable parameters.
    pub fn is_buffer(name: &str) -> bool {
        name.ends_with(".mean") || name.ends_with(".var")
    }

    /// Trainable parameter count; a pure function of the layer list.
    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| !Model::is_buffer(k))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Mutable parameter access for optimizers; invalidates existing traces.
    pub fn params_mut(&mut self) -> &mut ParamMap {
        self.stamp += 1;
        &mut self.params
    }

    pub fn set_metadata(&mut self, id: impl Into<String>, dataset_id: impl Into<String>, seed: u64) {
        self.id = id.into();
        self.dataset_id = dataset_id.into();
        self.seed = seed;
    }

    /// Replace all parameters with a loaded set; names and shapes must
    /// match the architecture exactly.
    pub fn load_params(&mut self, params: ParamMap) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "loaded {} params, architecture has {}",
                params.len(),
                self.params.len()
            )));
        }
        for (name, tensor) in &params {
            match self.params.get(name) {
                Some(existing) if existing.shape() == tensor.shape() => {}
                Some(existing) => {
                    return Err(Error::Shape(format!(
                        "param {name} has shape {:?}, expected {:?}",
                        tensor.shape(),
                        existing.shape()
                    )));
                }
                None => return Err(Error::Shape(format!("unexpected param {name}"))),
            }
        }
        self.stamp += 1;
        self.params = params;
        Ok(())
    }

    /// New model view sharing the same weights with a different quantization
    /// config; the original is unmodified.
    pub fn with_quant(&self, quant: QuantConfig) -> Model {
        let mut m = self.clone();
        m.quant = quant;
        m.stamp += 1;
        m
    }

    fn weight_bits_for_layer(&self, idx: usize) -> BitwidthSpec {
        if self.quant.weight_bits.is_fp() {
            return BitwidthSpec::Fp;
        }
        if self.quant.exempt_first_layer && idx == self.first_param_layer {
            return BitwidthSpec::Fp;
        }
        if self.quant.exempt_last_layer && idx == self.last_param_layer {
            return BitwidthSpec::Fp;
        }
        self.quant.weight_bits
    }

    fn effective_weight(&self, idx: usize, name: &str) -> Tensor {
        let w = &self.params[name];
        quantize_weights(w, self.weight_bits_for_layer(idx))
    }

    fn act_quant(&self, y: Tensor) -> Tensor {
        match self.quant.activation_bits {
            BitwidthSpec::Fp => y,
            spec => quantize_activations(&y, spec),
        }
    }

    /// Backward through relu followed by an activation quantizer. The
    /// lattice rounding is the straight-through estimator (identity); the
    /// [0,1] clip ahead of it keeps its real gradient, so saturated
    /// activations stop receiving updates. Without quantization this is
    /// plain relu backward.
    fn act_backward(&self, input: &Tensor, d: &Tensor) -> Tensor {
        match self.quant.activation_bits {
            BitwidthSpec::Fp => layers::relu_backward(input, d),
            _ => input
                .zip_map(d, |x, g| if x > 0.0 && x <= 1.0 { g } else { 0.0 })
                .expect("activation grad shape"),
        }
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() != self.input_shape.len() + 1
            || batch.shape()[1..] != *self.input_shape
        {
            return Err(Error::Shape(format!(
                "input batch {:?} does not match model input {:?}",
                batch.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    /// Forward pass in eval mode: probabilities, logits, and the trace
    /// needed for a matching backward call.
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, Tensor, ForwardTrace)> {
        let (probs, logits, trace, _) = self.forward_impl(batch, false)?;
        Ok((probs, logits, trace))
    }

    /// Forward pass with batch-statistics batchnorm; folds the batch
    /// statistics into the running estimates.
    pub fn forward_train(&mut self, batch: &Tensor) -> Result<(Tensor, Tensor, ForwardTrace)> {
        let (probs, logits, trace, updates) = self.forward_impl(batch, true)?;
        for (name, (mean, var)) in updates {
            let m = self.params.get_mut(&name.replace("#stat", "mean")).expect("bn mean buffer");
            for (r, b) in m.data_mut().iter_mut().zip(mean.iter()) {
                *r = layers::BN_DECAY * *r + (1.0 - layers::BN_DECAY) * b;
            }
            let v = self.params.get_mut(&name.replace("#stat", "var")).expect("bn var buffer");
            for (r, b) in v.data_mut().iter_mut().zip(var.iter()) {
                *r = layers::BN_DECAY * *r + (1.0 - layers::BN_DECAY) * b;
            }
        }
        Ok((probs, logits, trace))
    }

    #[allow(clippy::type_complexity)]
    fn forward_impl(
        &self,
        batch: &Tensor,
        train: bool,
    ) -> Result<(Tensor, Tensor, ForwardTrace, Vec<(String, (Vec<f32>, Vec<f32>))>)> {
        self.check_input(batch)?;
        let b = batch.batch();
        let mut x = batch.clone();
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut bn_updates = Vec::new();

        for (i, spec) in self.layers.iter().enumerate() {
            let key = |suffix: &str| format!("l{i}.{suffix}");
            let (out, aux) = match *spec {
                LayerSpec::Dense { .. } => {
                    let w = self.effective_weight(i, &key("w"));
                    let y = layers::dense_forward(&x, &w, &self.params[&key("b")]);
                    (y, Aux::None)
                }
                LayerSpec::Conv2d { stride, padding, bias, .. } => {
                    let w = self.effective_weight(i, &key("w"));
                    let bias_t = bias.then(|| &self.params[&key("b")]);
                    let y = layers::conv2d_forward(&x, &w, bias_t, stride, padding);
                    (y, Aux::None)
                }
                LayerSpec::Relu => {
                    let y = self.act_quant(layers::relu_forward(&x));
                    (y, Aux::None)
                }
                LayerSpec::MaxPool { kernel, stride, padding } => {
                    let (y, idx) = layers::maxpool_forward(&x, kernel, stride, padding);
                    (y, Aux::Pool(idx))
                }
                LayerSpec::AvgPool { kernel, stride } => {
                    (layers::avgpool_forward(&x, kernel, stride), Aux::None)
                }
                LayerSpec::Flatten => {
                    let y = x.clone().reshaped(&[b, x.row_len()])?;
                    (y, Aux::None)
                }
                LayerSpec::BatchNorm { .. } => {
                    let f = layers::batchnorm_forward(
                        &x,
                        &self.params[&key("gamma")],
                        &self.params[&key("beta")],
                        &self.params[&key("mean")],
                        &self.params[&key("var")],
                        train,
                    );
                    if let Some(stats) = f.batch_stats {
                        bn_updates.push((key("#stat"), stats));
                    }
                    (f.y, Aux::Bn(f.aux))
                }
                LayerSpec::Residual { stride, out_ch, .. } => {
                    let w1 = self.effective_weight(i, &key("c1.w"));
                    let w2 = self.effective_weight(i, &key("c2.w"));
                    let c1 = layers::conv2d_forward(&x, &w1, None, stride, Padding::Same);
                    let f1 = layers::batchnorm_forward(
                        &c1,
                        &self.params[&key("bn1.gamma")],
                        &self.params[&key("bn1.beta")],
                        &self.params[&key("bn1.mean")],
                        &self.params[&key("bn1.var")],
                        train,
                    );
                    if let Some(stats) = f1.batch_stats {
                        bn_updates.push((key("bn1.#stat"), stats));
                    }
                    let z1 = self.act_quant(layers::relu_forward(&f1.y));
                    let c2 = layers::conv2d_forward(&z1, &w2, None, 1, Padding::Same);
                    let f2 = layers::batchnorm_forward(
                        &c2,
                        &self.params[&key("bn2.gamma")],
                        &self.params[&key("bn2.beta")],
                        &self.params[&key("bn2.mean")],
                        &self.params[&key("bn2.var")],
                        train,
                    );
                    if let Some(stats) = f2.batch_stats {
                        bn_updates.push((key("bn2.#stat"), stats));
                    }
                    let sc = layers::shortcut_forward(&x, out_ch, stride);
                    let sum = f2.y.zip_map(&sc, |a, b| a + b)?;
                    let out = self.act_quant(layers::relu_forward(&sum));
                    let aux = ResAux {
                        conv1_in_shape: x.shape().to_vec(),
                        bn1: f1.aux,
                        bn1_y: f1.y,
                        z1,
                        bn2: f2.aux,
                        sum,
                    };
                    (out, Aux::Residual(Box::new(aux)))
                }
            };
            traces.push(LayerTrace { output: out.clone(), aux });
            x = out;
        }

        let logits = x;
        // Non-finite outputs are possible mid-divergence; callers that care
        // (the train loop) check and report rather than assert.
        let probs = softmax(&logits);
        let trace = ForwardTrace {
            stamp: self.stamp,
            train_mode: train,
            input: batch.clone(),
            layers: traces,
        };
        Ok((probs, logits, trace, bn_updates))
    }

    /// Per-sample argmax labels; ties break toward the lowest class index.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let (probs, _, _) = self.forward(batch)?;
        Ok((0..probs.batch())
            .map(|i| Tensor::argmax_slice(probs.row(i)))
            .collect())
    }

    /// Gradients of mean cross-entropy over the batch, for parameters and
    /// input. The trace must come from a matching forward call.
    pub fn backward(&self, trace: &ForwardTrace, labels: &[usize]) -> Result<(ParamMap, Tensor)> {
        let logits = &trace
            .layers
            .last()
            .ok_or_else(|| Error::Trace("empty trace".into()))?
            .output;
        let probs = softmax(logits);
        let batch = probs.batch();
        let n = probs.row_len();
        if labels.len() != batch {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {batch}",
                labels.len()
            )));
        }
        let mut d_logits = probs;
        let scale = 1.0 / batch as f32;
        for (i, &label) in labels.iter().enumerate() {
            if label >= n {
                return Err(Error::Domain(format!(
                    "label {label} out of range for {n} classes"
                )));
            }
            let row = d_logits.row_mut(i);
            row[label] -= 1.0;
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
        let (grads, d_input) = self.backward_from_logits(trace, &d_logits, true)?;
        Ok((grads.expect("param grads requested"), d_input))
    }

    /// Reverse-mode pass from an arbitrary gradient on the logits.
    /// `need_params = false` skips parameter gradients (attack hot path).
    pub fn backward_from_logits(
        &self,
        trace: &ForwardTrace,
        d_logits: &Tensor,
        need_params: bool,
    ) -> Result<(Option<ParamMap>, Tensor)> {
        if trace.stamp != self.stamp {
            return Err(Error::Trace(
                "trace is stale: model parameters changed since the forward pass".into(),
            ));
        }
        if trace.layers.len() != self.layers.len() {
            return Err(Error::Trace(format!(
                "trace has {} layers, model has {}",
                trace.layers.len(),
                self.layers.len()
            )));
        }
        let last = &trace.layers.last().unwrap().output;
        if d_logits.shape() != last.shape() {
            return Err(Error::Trace(format!(
                "logit gradient shape {:?} does not match trace output {:?}",
                d_logits.shape(),
                last.shape()
            )));
        }

        let mut grads: ParamMap = BTreeMap::new();
        let mut d = d_logits.clone();

        for (i, spec) in self.layers.iter().enumerate().rev() {
            let key = |suffix: &str| format!("l{i}.{suffix}");
            let input = if i == 0 {
                &trace.input
            } else {
                &trace.layers[i - 1].output
            };
            let aux = &trace.layers[i].aux;
            d = match *spec {
                LayerSpec::Dense { .. } => {
                    let w = self.effective_weight(i, &key("w"));
                    let (dx, pg) = layers::dense_backward(input, &w, &d, need_params);
                    if let Some(pg) = pg {
                        grads.insert(key("w"), pg.dw);
                        grads.insert(key("b"), pg.db);
                    }
                    dx
                }
                LayerSpec::Conv2d { stride, padding, bias, .. } => {
                    let w = self.effective_weight(i, &key("w"));
                    let (dx, pg) =
                        layers::conv2d_backward(input, &w, &d, stride, padding, bias, need_params);
                    if let Some(pg) = pg {
                        grads.insert(key("w"), pg.dw);
                        if let Some(db) = pg.db {
                            grads.insert(key("b"), db);
                        }
                    }
                    dx
                }
                LayerSpec::Relu => self.act_backward(input, &d),
                LayerSpec::MaxPool { .. } => {
                    let Aux::Pool(idx) = aux else {
                        return Err(Error::Trace("missing pool indices in trace".into()));
                    };
                    layers::maxpool_backward(idx, input.shape(), &d)
                }
                LayerSpec::AvgPool { kernel, stride } => {
                    layers::avgpool_backward(input.shape(), kernel, stride, &d)
                }
                LayerSpec::Flatten => d.clone().reshaped(input.shape())?,
                LayerSpec::BatchNorm { .. } => {
                    let Aux::Bn(bn) = aux else {
                        return Err(Error::Trace("missing batchnorm aux in trace".into()));
                    };
                    let (dx, pg) =
                        layers::batchnorm_backward(&d, bn, &self.params[&key("gamma")], need_params);
                    if let Some(pg) = pg {
                        grads.insert(key("gamma"), pg.d_gamma);
                        grads.insert(key("beta"), pg.d_beta);
                    }
                    dx
                }
                LayerSpec::Residual { stride, .. } => {
                    let Aux::Residual(res) = aux else {
                        return Err(Error::Trace("missing residual aux in trace".into()));
                    };
                    let w1 = self.effective_weight(i, &key("c1.w"));
                    let w2 = self.effective_weight(i, &key("c2.w"));
                    let d_sum = self.act_backward(&res.sum, &d);
                    let (d_c2, pg2) = layers::batchnorm_backward(
                        &d_sum,
                        &res.bn2,
                        &self.params[&key("bn2.gamma")],
                        need_params,
                    );
                    if let Some(pg) = pg2 {
                        grads.insert(key("bn2.gamma"), pg.d_gamma);
                        grads.insert(key("bn2.beta"), pg.d_beta);
                    }
                    let (d_z1, cg2) = layers::conv2d_backward(
                        &res.z1,
                        &w2,
                        &d_c2,
                        1,
                        Padding::Same,
                        false,
                        need_params,
                    );
                    if let Some(cg) = cg2 {
                        grads.insert(key("c2.w"), cg.dw);
                    }
                    let d_bn1y = self.act_backward(&res.bn1_y, &d_z1);
                    let (d_c1, pg1) = layers::batchnorm_backward(
                        &d_bn1y,
                        &res.bn1,
                        &self.params[&key("bn1.gamma")],
                        need_params,
                    );
                    if let Some(pg) = pg1 {
                        grads.insert(key("bn1.gamma"), pg.d_gamma);
                        grads.insert(key("bn1.beta"), pg.d_beta);
                    }
                    let (mut dx, cg1) = layers::conv2d_backward(
                        input,
                        &w1,
                        &d_c1,
                        stride,
                        Padding::Same,
                        false,
                        need_params,
                    );
                    if let Some(cg) = cg1 {
                        grads.insert(key("c1.w"), cg.dw);
                    }
                    let d_sc = layers::shortcut_backward(&d_sum, &res.conv1_in_shape, stride);
                    dx.add_scaled(&d_sc, 1.0);
                    dx
                }
            };
        }

        Ok((need_params.then_some(grads), d))
    }

    /// Gradient of mean cross-entropy with respect to the input batch.
    pub fn input_gradient(&self, batch: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let (probs, _, trace) = self.forward(batch)?;
        let d_logits = ce_logit_gradient(&probs, labels)?;
        let (_, d_input) = self.backward_from_logits(&trace, &d_logits, false)?;
        Ok(d_input)
    }

    /// Jacobian of the softmax outputs with respect to one input sample:
    /// entry (j, i) = d f_j / d x_i, computed by one backward pass per class.
    pub fn jacobian_wrt_input(&self, x: &Tensor) -> Result<Tensor> {
        if x.batch() != 1 {
            return Err(Error::Shape("jacobian expects a single sample".into()));
        }
        let (probs, _, trace) = self.forward(x)?;
        let n = self.num_classes();
        let m = x.row_len();
        let p = probs.row(0);
        let mut jac = vec![0.0f32; n * m];
        for j in 0..n {
            // Softmax vjp row: dz_k = p_j * (d_jk - p_k).
            let mut d_logits = Tensor::zeros(&[1, n]);
            for (k, dz) in d_logits.row_mut(0).iter_mut().enumerate() {
                *dz = if k == j { p[j] * (1.0 - p[j]) } else { -p[j] * p[k] };
            }
            let (_, d_input) = self.backward_from_logits(&trace, &d_logits, false)?;
            jac[j * m..(j + 1) * m].copy_from_slice(d_input.data());
        }
        Tensor::new(jac, vec![n, m])
    }

    /// Per-sample Jacobians for a whole batch, computed by replicating each
    /// sample once per class and doing a single fused backward pass. Bitwise
    /// identical to [`Model::jacobian_wrt_input`] per sample.
    pub fn jacobian_wrt_input_batch(&self, batch: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(batch)?;
        let b = batch.batch();
        let n = self.num_classes();
        let m = batch.row_len();
        let mut rep_shape = batch.shape().to_vec();
        rep_shape[0] = b * n;
        let mut rep = Tensor::zeros(&rep_shape);
        for s in 0..b {
            for j in 0..n {
                rep.row_mut(s * n + j).copy_from_slice(batch.row(s));
            }
        }
        let (probs, _, trace) = self.forward(&rep)?;
        let mut d_logits = Tensor::zeros(&[b * n, n]);
        for s in 0..b {
            for j in 0..n {
                let p = probs.row(s * n + j);
                let pj = p[j];
                let row = d_logits.row_mut(s * n + j);
                for (k, dz) in row.iter_mut().enumerate() {
                    *dz = if k == j { pj * (1.0 - pj) } else { -pj * p[k] };
                }
            }
        }
        let (_, d_input) = self.backward_from_logits(&trace, &d_logits, false)?;
        Ok((0..b)
            .map(|s| {
                let mut jac = vec![0.0f32; n * m];
                for j in 0..n {
                    jac[j * m..(j + 1) * m].copy_from_slice(d_input.row(s * n + j));
                }
                Tensor::new(jac, vec![n, m]).expect("jacobian shape")
            })
            .collect())
    }
}

/// d loss / d logits for mean cross-entropy: (softmax - onehot) / batch.
pub fn ce_logit_gradient(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let batch = probs.batch();
    let n = probs.row_len();
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let mut d = probs.clone();
    let scale = 1.0 / batch as f32;
    for (i, &label) in labels.iter().enumerate() {
        if label >= n {
            return Err(Error::Domain(format!(
                "label {label} out of range for {n} classes"
            )));
        }
        let row = d.row_mut(i);
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Ok(d)
}
