//! Minimal dense-tensor training engine for the block architectures produced
//! by [`crate::netspec`]: forward/backward for every layer kind, Adam and
//! scheduled Nesterov-momentum SGD, He initialisation, and the epoch loop.
//!
//! All arithmetic is 64-bit. Training is deterministic for a fixed seed: the
//! only parallelism is across independent output elements, and every
//! reduction runs in a fixed order.

pub mod checkpoint;
pub mod layers;
pub mod optim;

use std::collections::BTreeMap;

use rand::Rng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::netspec::{LayerKind, NetworkGraph};
use layers::*;

pub use rand_chacha::ChaCha8Rng as TrainRng;

/// Batch-norm epsilon, pinned so tests can rely on it.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics momentum: running = (1 - m) * running + m * batch.
pub const BN_MOMENTUM: f64 = 0.1;

/// The deterministic generator used throughout training.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrainError {
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: u32, batch: u32 },
}

/// Dense n-dimensional array with an optional gradient buffer of the same
/// shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; len],
            grad: None,
        }
    }

    pub fn from_values(shape: Vec<usize>, values: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "tensor shape does not match value count"
        );
        Self {
            shape,
            values,
            grad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Zeroes the gradient buffer, allocating it on first use.
    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
            None => self.grad = Some(vec![0.0; self.values.len()]),
        }
    }

    /// Mutable values together with the gradient, for optimiser steps.
    pub fn values_and_grad(&mut self) -> (&mut [f64], Option<&[f64]>) {
        (&mut self.values, self.grad.as_deref())
    }
}

/// Named tensors in deterministic (sorted) order. Running batch-norm
/// statistics live here too; they are state, not trainable parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
}

/// Running-statistics entries are tracked but never optimised.
pub fn is_trainable(name: &str) -> bool {
    !name.ends_with(".running_mean") && !name.ends_with(".running_var")
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total element count across trainable tensors; the brute-force
    /// counterpart of the analytic parameter count.
    pub fn trainable_elements(&self) -> u64 {
        self.entries
            .iter()
            .filter(|(name, _)| is_trainable(name))
            .map(|(_, t)| t.len() as u64)
            .sum()
    }

    /// Resets every trainable gradient to zero, allocating buffers on first
    /// use.
    pub fn zero_grads(&mut self) {
        for (name, t) in self.entries.iter_mut() {
            if is_trainable(name) {
                t.zero_grad();
            }
        }
    }

    fn accumulate_grad(&mut self, name: &str, delta: &[f64]) {
        let t = self.get_mut(name);
        let g = t.grad.as_mut().expect("gradients not initialised");
        assert_eq!(g.len(), delta.len(), "gradient shape mismatch for `{name}`");
        for (gv, &dv) in g.iter_mut().zip(delta) {
            *gv += dv;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// He-style initialisation: conv and FC weights are zero-mean normal with
/// variance 2 / fan_in, biases zero, BN scale 1 and shift 0.
pub fn initialize_parameters(graph: &NetworkGraph, rng_seed: u64) -> ParamStore {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut normal = BoxMuller::default();
    let mut store = ParamStore::new();

    for layer in &graph.layers {
        match layer.kind {
            LayerKind::Conv { kernel, .. } => {
                let fan_in = layer.in_channels * kernel * kernel;
                let std = (2.0 / fan_in as f64).sqrt();
                let len = layer.out_channels * fan_in;
                let values = (0..len).map(|_| std * normal.sample(&mut rng)).collect();
                store.insert(
                    format!("{}.weight", layer.name),
                    Tensor::from_values(
                        vec![layer.out_channels, layer.in_channels, kernel, kernel],
                        values,
                    ),
                );
                store.insert(
                    format!("{}.bias", layer.name),
                    Tensor::zeros(vec![layer.out_channels]),
                );
            }
            LayerKind::FullyConnected => {
                let std = (2.0 / layer.in_channels as f64).sqrt();
                let len = layer.out_channels * layer.in_channels;
                let values = (0..len).map(|_| std * normal.sample(&mut rng)).collect();
                store.insert(
                    format!("{}.weight", layer.name),
                    Tensor::from_values(vec![layer.out_channels, layer.in_channels], values),
                );
                store.insert(
                    format!("{}.bias", layer.name),
                    Tensor::zeros(vec![layer.out_channels]),
                );
            }
            LayerKind::BatchNorm => {
                let c = layer.out_channels;
                store.insert(
                    format!("{}.scale", layer.name),
                    Tensor::from_values(vec![c], vec![1.0; c]),
                );
                store.insert(format!("{}.shift", layer.name), Tensor::zeros(vec![c]));
                store.insert(
                    format!("{}.running_mean", layer.name),
                    Tensor::zeros(vec![c]),
                );
                store.insert(
                    format!("{}.running_var", layer.name),
                    Tensor::from_values(vec![c], vec![1.0; c]),
                );
            }
            LayerKind::Relu | LayerKind::AvgPool { .. } | LayerKind::GlobalAvgPool => {}
        }
    }
    store
}

/// Box-Muller transform; keeps the spare draw so consecutive samples come in
/// deterministic pairs.
#[derive(Default)]
pub(crate) struct BoxMuller {
    spare: Option<f64>,
}

impl BoxMuller {
    pub(crate) fn sample(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1], safe for ln
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

struct CompositeCache {
    bn: BnCache,
    /// ReLU output, which is also the convolution input.
    act: Vec<f64>,
    conv: ConvShape,
    width: usize,
}

struct StageCache {
    layers: Vec<CompositeCache>,
    cat_channels: usize,
    spatial: (usize, usize),
    trans: Option<TransCache>,
}

struct TransCache {
    conv_in: Vec<f64>,
    conv: ConvShape,
}

struct HeadCache {
    bn: BnCache,
    relu_out: Vec<f64>,
    channels: usize,
    spatial: (usize, usize),
    fc_in: Vec<f64>,
}

struct ForwardCache {
    stem: ConvShape,
    stages: Vec<StageCache>,
    head: HeadCache,
    /// Deferred running-statistics updates: (bn name, batch mean, batch var).
    bn_updates: Vec<(String, Vec<f64>, Vec<f64>)>,
}

fn conv_params<'a>(params: &'a ParamStore, name: &str) -> (&'a Tensor, &'a Tensor) {
    (
        params.get(&format!("{name}.weight")),
        params.get(&format!("{name}.bias")),
    )
}

/// Runs one batch-norm layer in the requested mode, collecting the cache and
/// the pending running-stat update in train mode.
#[allow(clippy::too_many_arguments)]
fn run_bn(
    params: &ParamStore,
    name: &str,
    x: &[f64],
    batch: usize,
    channels: usize,
    spatial: usize,
    mode: Mode,
    cache: Option<(&mut Option<BnCache>, &mut Vec<(String, Vec<f64>, Vec<f64>)>)>,
) -> Vec<f64> {
    let scale = &params.get(&format!("{name}.scale")).values;
    let shift = &params.get(&format!("{name}.shift")).values;
    match mode {
        Mode::Train => {
            let (y, bn_cache, mean, var) =
                bn_forward_train(x, batch, channels, spatial, scale, shift, BN_EPS);
            if let Some((slot, updates)) = cache {
                *slot = Some(bn_cache);
                updates.push((name.to_string(), mean, var));
            }
            y
        }
        Mode::Eval => {
            let mean = &params.get(&format!("{name}.running_mean")).values;
            let var = &params.get(&format!("{name}.running_var")).values;
            bn_forward_eval(x, batch, channels, spatial, scale, shift, mean, var, BN_EPS)
        }
    }
}

/// Full network forward pass. Returns logits and, when `want_cache` is set,
/// everything the backward pass needs.
fn run_forward(
    graph: &NetworkGraph,
    params: &ParamStore,
    batch: &Tensor,
    mode: Mode,
    want_cache: bool,
) -> (Vec<f64>, Option<ForwardCache>) {
    let (c_in, height, width) = graph.input_shape;
    assert_eq!(
        batch.shape[1..],
        [c_in, height, width],
        "batch shape does not match the graph input shape"
    );
    let n = batch.shape[0];
    let growth = graph.block.growth_rate as usize;
    let num_layers = graph.block.num_layers as usize;

    let mut bn_updates = Vec::new();
    let mut stage_caches = Vec::new();

    // stem
    let (w, b) = conv_params(params, "stem.conv");
    let stem_shape = ConvShape {
        batch: n,
        in_channels: c_in,
        height,
        width,
        out_channels: w.shape[0],
        kernel: 3,
        stride: 1,
        padding: 1,
    };
    let mut x = conv_forward(&batch.values, &stem_shape, &w.values, &b.values);
    let mut channels = stem_shape.out_channels;
    let mut size = (height, width);

    for stage in 0..graph.stack_count as usize {
        let stage_size = size;
        let spatial = size.0 * size.1;
        let cat_channels = channels + num_layers * growth;
        let mut cat = vec![0.0; n * cat_channels * spatial];
        concat_into(&x, &mut cat, n, channels, cat_channels, 0, spatial);

        let mut layer_caches = Vec::with_capacity(num_layers);
        for layer in 0..num_layers {
            let cur_width = channels + layer * growth;
            let name = format!("s{stage}.l{layer}");
            let xl = slice_channels(&cat, n, cat_channels, 0, cur_width, spatial);

            let mut bn_slot = None;
            let a = run_bn(
                params,
                &format!("{name}.bn"),
                &xl,
                n,
                cur_width,
                spatial,
                mode,
                want_cache.then_some((&mut bn_slot, &mut bn_updates)),
            );
            let act = relu_forward(&a);
            let (cw, cb) = conv_params(params, &format!("{name}.conv"));
            let conv_shape = ConvShape {
                batch: n,
                in_channels: cur_width,
                height: size.0,
                width: size.1,
                out_channels: growth,
                kernel: 3,
                stride: 1,
                padding: 1,
            };
            let y = conv_forward(&act, &conv_shape, &cw.values, &cb.values);
            concat_into(&y, &mut cat, n, growth, cat_channels, cur_width, spatial);

            if want_cache {
                layer_caches.push(CompositeCache {
                    bn: bn_slot.expect("train-mode cache"),
                    act,
                    conv: conv_shape,
                    width: cur_width,
                });
            }
        }
        x = cat;
        channels = cat_channels;

        let mut trans_cache = None;
        if stage + 1 < graph.stack_count as usize {
            let name = format!("s{stage}.trans.conv");
            let (tw, tb) = conv_params(params, &name);
            let conv_shape = ConvShape {
                batch: n,
                in_channels: channels,
                height: size.0,
                width: size.1,
                out_channels: tw.shape[0],
                kernel: 1,
                stride: 1,
                padding: 0,
            };
            let conv_out = conv_forward(&x, &conv_shape, &tw.values, &tb.values);
            if want_cache {
                trans_cache = Some(TransCache {
                    conv_in: std::mem::take(&mut x),
                    conv: conv_shape,
                });
            }
            let pooled = avgpool_forward(&conv_out, n, conv_shape.out_channels, size.0, size.1);
            x = pooled;
            channels = conv_shape.out_channels;
            size = (size.0 / 2, size.1 / 2);
        }

        stage_caches.push(StageCache {
            layers: layer_caches,
            cat_channels,
            spatial: stage_size,
            trans: trans_cache,
        });
    }

    // head: BN -> ReLU -> global pool -> FC
    let spatial = size.0 * size.1;
    let mut bn_slot = None;
    let a = run_bn(
        params,
        "head.bn",
        &x,
        n,
        channels,
        spatial,
        mode,
        want_cache.then_some((&mut bn_slot, &mut bn_updates)),
    );
    let relu_out = relu_forward(&a);
    let pooled = global_pool_forward(&relu_out, n, channels, spatial);
    let (fw, fb) = conv_params(params, "head.fc");
    let logits = fc_forward(&pooled, n, channels, graph.num_classes, &fw.values, &fb.values);

    let cache = want_cache.then(|| ForwardCache {
        stem: stem_shape,
        stages: stage_caches,
        head: HeadCache {
            bn: bn_slot.expect("train-mode cache"),
            relu_out,
            channels,
            spatial: size,
            fc_in: pooled,
        },
        bn_updates,
    });
    (logits, cache)
}

/// Forward pass producing logits; pure in both modes (train mode computes
/// batch statistics on the fly without touching the running averages).
pub fn forward(graph: &NetworkGraph, params: &ParamStore, batch: &Tensor, mode: Mode) -> Tensor {
    let n = batch.shape[0];
    let (logits, _) = run_forward(graph, params, batch, mode, false);
    Tensor::from_values(vec![n, graph.num_classes], logits)
}

/// One training step's loss and gradients: runs the train-mode forward pass,
/// mean softmax cross-entropy against `labels`, and the full backward pass.
///
/// Gradients are written into the parameter store's gradient buffers (values
/// are never touched) and the batch-norm running statistics are advanced.
pub fn backward(
    graph: &NetworkGraph,
    params: &mut ParamStore,
    batch: &Tensor,
    labels: &[u32],
) -> Result<f64, TrainError> {
    train_step(graph, params, batch, labels).map(|(loss, _)| loss)
}

/// As [`backward`] but also hands back the train-mode logits so the epoch
/// loop can derive the train error without a second forward pass.
pub fn train_step(
    graph: &NetworkGraph,
    params: &mut ParamStore,
    batch: &Tensor,
    labels: &[u32],
) -> Result<(f64, Vec<f64>), TrainError> {
    assert_eq!(batch.shape[0], labels.len(), "batch/label count mismatch");
    assert!(
        labels.iter().all(|&l| (l as usize) < graph.num_classes),
        "label out of range"
    );
    let n = batch.shape[0];
    let (logits, cache) = run_forward(graph, params, batch, Mode::Train, true);
    let cache = cache.expect("cache requested");
    let (loss, dlogits) = softmax_cross_entropy(&logits, labels, graph.num_classes);
    if !loss.is_finite() {
        return Err(TrainError::NonFiniteLoss);
    }

    for (name, mean, var) in &cache.bn_updates {
        let rm = &mut params.get_mut(&format!("{name}.running_mean")).values;
        for (r, &m) in rm.iter_mut().zip(mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        let rv = &mut params.get_mut(&format!("{name}.running_var")).values;
        for (r, &v) in rv.iter_mut().zip(var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }

    params.zero_grads();

    // head, in reverse
    let head = &cache.head;
    let spatial = head.spatial.0 * head.spatial.1;
    let fw = params.get("head.fc.weight").values.clone();
    let mut dfw = vec![0.0; fw.len()];
    let mut dfb = vec![0.0; graph.num_classes];
    let dpool = fc_backward(
        &head.fc_in,
        n,
        head.channels,
        graph.num_classes,
        &fw,
        &dlogits,
        &mut dfw,
        &mut dfb,
    );
    params.accumulate_grad("head.fc.weight", &dfw);
    params.accumulate_grad("head.fc.bias", &dfb);

    let drelu = global_pool_backward(&dpool, n, head.channels, spatial);
    let da = relu_backward(&head.relu_out, &drelu);
    let scale = params.get("head.bn.scale").values.clone();
    let mut dscale = vec![0.0; head.channels];
    let mut dshift = vec![0.0; head.channels];
    let mut grad = bn_backward(
        &head.bn,
        n,
        head.channels,
        spatial,
        &scale,
        &da,
        &mut dscale,
        &mut dshift,
    );
    params.accumulate_grad("head.bn.scale", &dscale);
    params.accumulate_grad("head.bn.shift", &dshift);

    // stages, in reverse
    for (stage, sc) in cache.stages.iter().enumerate().rev() {
        if let Some(tc) = &sc.trans {
            let name = format!("s{stage}.trans.conv");
            let (oh, ow) = (tc.conv.height, tc.conv.width);
            let dconv_out = avgpool_backward(&grad, n, tc.conv.out_channels, oh, ow);
            let w = params.get(&format!("{name}.weight")).values.clone();
            let mut dw = vec![0.0; w.len()];
            let mut db = vec![0.0; tc.conv.out_channels];
            grad = conv_backward(&tc.conv_in, &tc.conv, &w, &dconv_out, &mut dw, &mut db);
            params.accumulate_grad(&format!("{name}.weight"), &dw);
            params.accumulate_grad(&format!("{name}.bias"), &db);
        }

        let spatial = sc.spatial.0 * sc.spatial.1;
        for (layer, lc) in sc.layers.iter().enumerate().rev() {
            let name = format!("s{stage}.l{layer}");
            // gradient of this layer's output: the channel band it appended
            let dy = slice_channels(&grad, n, sc.cat_channels, lc.width, lc.conv.out_channels, spatial);
            let w = params.get(&format!("{name}.conv.weight")).values.clone();
            let mut dw = vec![0.0; w.len()];
            let mut db = vec![0.0; lc.conv.out_channels];
            let dact = conv_backward(&lc.act, &lc.conv, &w, &dy, &mut dw, &mut db);
            params.accumulate_grad(&format!("{name}.conv.weight"), &dw);
            params.accumulate_grad(&format!("{name}.conv.bias"), &db);

            let da = relu_backward(&lc.act, &dact);
            let scale = params.get(&format!("{name}.bn.scale")).values.clone();
            let mut dscale = vec![0.0; lc.width];
            let mut dshift = vec![0.0; lc.width];
            let dxl = bn_backward(&lc.bn, n, lc.width, spatial, &scale, &da, &mut dscale, &mut dshift);
            params.accumulate_grad(&format!("{name}.bn.scale"), &dscale);
            params.accumulate_grad(&format!("{name}.bn.shift"), &dshift);

            // route back onto the concatenation prefix this layer consumed
            add_into_channels(&dxl, &mut grad, n, lc.width, sc.cat_channels, 0, spatial);
        }
        // gradient of the stage input is the leading channel band
        let stage_in = sc.cat_channels - graph.block.num_layers as usize * graph.block.growth_rate as usize;
        grad = slice_channels(&grad, n, sc.cat_channels, 0, stage_in, spatial);
    }

    // stem
    let w = params.get("stem.conv.weight").values.clone();
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; cache.stem.out_channels];
    let _dinput = conv_backward(&batch.values, &cache.stem, &w, &grad, &mut dw, &mut db);
    params.accumulate_grad("stem.conv.weight", &dw);
    params.accumulate_grad("stem.conv.bias", &db);

    Ok((loss, logits))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Per-epoch training curve entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: u32,
    pub train_loss: f64,
    pub train_error: f64,
    pub eval_error: f64,
}

/// Per-batch input transform; training may randomise, evaluation must be
/// deterministic.
pub trait BatchTransform {
    fn apply_train(&self, batch: &mut [f64], n: usize, rng: &mut ChaCha8Rng);
    fn apply_eval(&self, batch: &mut [f64], n: usize);
}

/// No-op transform for raw training.
pub struct Identity;

impl BatchTransform for Identity {
    fn apply_train(&self, _batch: &mut [f64], _n: usize, _rng: &mut ChaCha8Rng) {}
    fn apply_eval(&self, _batch: &mut [f64], _n: usize) {}
}

/// A labelled image set borrowed from its owner; images are (n, c, h, w).
#[derive(Clone, Copy)]
pub struct Examples<'a> {
    pub images: &'a Tensor,
    pub labels: &'a [u32],
}

impl<'a> Examples<'a> {
    pub fn count(&self) -> usize {
        self.labels.len()
    }
}

fn gather_batch(examples: &Examples, indices: &[usize]) -> (Tensor, Vec<u32>) {
    let item = examples.images.values.len() / examples.images.shape[0];
    let mut values = Vec::with_capacity(indices.len() * item);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        values.extend_from_slice(&examples.images.values[i * item..(i + 1) * item]);
        labels.push(examples.labels[i]);
    }
    let mut shape = examples.images.shape.clone();
    shape[0] = indices.len();
    (Tensor::from_values(shape, values), labels)
}

/// Top-1 error rate in eval mode, computed in fixed-size batches.
pub fn evaluate_error<T: BatchTransform>(
    graph: &NetworkGraph,
    params: &ParamStore,
    examples: &Examples,
    batch_size: usize,
    transform: &T,
) -> f64 {
    let total = examples.count();
    if total == 0 {
        return 0.0;
    }
    let mut wrong = 0usize;
    let indices: Vec<usize> = (0..total).collect();
    for chunk in indices.chunks(batch_size) {
        let (mut batch, labels) = gather_batch(examples, chunk);
        transform.apply_eval(&mut batch.values, chunk.len());
        let logits = forward(graph, params, &batch, Mode::Eval);
        let classes = graph.num_classes;
        for (i, &label) in labels.iter().enumerate() {
            if argmax(&logits.values[i * classes..(i + 1) * classes]) != label as usize {
                wrong += 1;
            }
        }
    }
    wrong as f64 / total as f64
}

/// Standard epoch loop: in-epoch shuffling from the seeded generator, one
/// optimiser step per batch, held-out evaluation after every epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_epochs<O: optim::Optimizer, T: BatchTransform>(
    graph: &NetworkGraph,
    params: &mut ParamStore,
    train: &Examples,
    eval: &Examples,
    optimizer: &mut O,
    epochs: u32,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    transform: &T,
) -> Result<Vec<EpochStats>, TrainError> {
    assert!(train.count() > 0, "training set is empty");
    assert!(batch_size > 0, "batch size must be positive");
    let mut curves = Vec::with_capacity(epochs as usize);
    let mut indices: Vec<usize> = (0..train.count()).collect();

    for epoch in 0..epochs {
        indices.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut wrong = 0usize;
        for (batch_idx, chunk) in indices.chunks(batch_size).enumerate() {
            let (mut batch, labels) = gather_batch(train, chunk);
            transform.apply_train(&mut batch.values, chunk.len(), rng);
            let (loss, logits) = train_step(graph, params, &batch, &labels).map_err(|_| {
                TrainError::Diverged {
                    epoch,
                    batch: batch_idx as u32,
                }
            })?;
            loss_sum += loss * chunk.len() as f64;

            let classes = graph.num_classes;
            for (i, &label) in labels.iter().enumerate() {
                if argmax(&logits[i * classes..(i + 1) * classes]) != label as usize {
                    wrong += 1;
                }
            }

            optimizer.step(params, epoch);
        }
        let eval_error = evaluate_error(graph, params, eval, batch_size, transform);
        curves.push(EpochStats {
            epoch,
            train_loss: loss_sum / train.count() as f64,
            train_error: wrong as f64 / train.count() as f64,
            eval_error,
        });
    }
    Ok(curves)
}

/// Serialises training curves as CSV (`epoch,train_loss,train_error,eval_error`).
pub fn curves_to_csv(curves: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,train_error,eval_error\n");
    for c in curves {
        out.push_str(&format!(
            "{},{},{},{}\n",
            c.epoch, c.train_loss, c.train_error, c.eval_error
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netspec::{build_network, BlockSpec};
    use rand::SeedableRng;

    fn micro_graph() -> NetworkGraph {
        build_network(BlockSpec::new(2, 3), 2, (2, 4, 4), 3).unwrap()
    }

    #[test]
    fn zero_parameters_give_zero_logits() {
        let graph = micro_graph();
        let mut params = initialize_parameters(&graph, 7);
        // zero out the FC layer only: logits = W * pooled + b = 0
        params.get_mut("head.fc.weight").values.iter_mut().for_each(|v| *v = 0.0);
        params.get_mut("head.fc.bias").values.iter_mut().for_each(|v| *v = 0.0);
        let batch = Tensor::from_values(
            vec![2, 2, 4, 4],
            (0..64).map(|i| i as f64 * 0.01).collect(),
        );
        let logits = forward(&graph, &params, &batch, Mode::Eval);
        assert!(logits.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_rows_give_identical_eval_logits() {
        let graph = micro_graph();
        let params = initialize_parameters(&graph, 3);
        let one: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut values = one.clone();
        values.extend_from_slice(&one);
        let batch = Tensor::from_values(vec![2, 2, 4, 4], values);
        let logits = forward(&graph, &params, &batch, Mode::Eval);
        let (a, b) = logits.values.split_at(3);
        assert_eq!(a, b);
    }

    #[test]
    fn init_is_deterministic_and_he_scaled() {
        let graph = build_network(BlockSpec::new(1, 8), 1, (16, 32, 32), 4).unwrap();
        let a = initialize_parameters(&graph, 42);
        let b = initialize_parameters(&graph, 42);
        assert_eq!(a, b);

        // stem conv: fan_in = 16 * 9 = 144, target variance 2/144
        let w = &a.get("stem.conv.weight").values;
        assert!(w.len() >= 2304);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w.len() as f64;
        let target = 2.0 / 144.0;
        assert!(
            (var - target).abs() < 0.05 * target,
            "sample variance {var} vs target {target}"
        );

        for (name, t) in a.iter() {
            if name.ends_with(".bn.scale") || name.ends_with("head.bn.scale") {
                assert!(t.values.iter().all(|&v| v == 1.0));
            }
            if name.ends_with(".shift") || name.ends_with(".bias") {
                assert!(t.values.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn trainable_count_matches_analytic() {
        let graph = micro_graph();
        let params = initialize_parameters(&graph, 0);
        assert_eq!(params.trainable_elements(), graph.total_parameters);
    }

    #[test]
    fn zero_epochs_leaves_params_untouched() {
        let graph = micro_graph();
        let mut params = initialize_parameters(&graph, 1);
        let before = params.clone();
        let images = Tensor::from_values(vec![4, 2, 4, 4], vec![0.5; 4 * 32]);
        let labels = vec![0u32, 1, 2, 0];
        let ex = Examples {
            images: &images,
            labels: &labels,
        };
        let mut opt = optim::AdamOptimizer::with_defaults();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let curves =
            train_epochs(&graph, &mut params, &ex, &ex, &mut opt, 0, 2, &mut rng, &Identity)
                .unwrap();
        assert!(curves.is_empty());
        assert_eq!(params, before);
    }

    #[test]
    fn separable_two_class_set_trains_below_five_percent() {
        let data = crate::data::generate_synthetic(2, 12, 8, 0.0, 3);
        let graph = build_network(BlockSpec::new(1, 4), 1, (3, 8, 8), 2).unwrap();
        let mut params = initialize_parameters(&graph, 8);
        let mut opt = optim::AdamOptimizer::with_defaults();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let curves = train_epochs(
            &graph,
            &mut params,
            &data.examples(),
            &data.examples(),
            &mut opt,
            20,
            8,
            &mut rng,
            &Identity,
        )
        .unwrap();
        assert_eq!(curves.len(), 20);
        assert!(
            curves.last().unwrap().train_error < 0.05,
            "final train error {}",
            curves.last().unwrap().train_error
        );
    }

    #[test]
    fn training_is_deterministic() {
        let graph = micro_graph();
        let images = Tensor::from_values(
            vec![6, 2, 4, 4],
            (0..6 * 32).map(|i| ((i * 37 % 101) as f64) / 101.0).collect(),
        );
        let labels = vec![0u32, 1, 2, 0, 1, 2];
        let ex = Examples {
            images: &images,
            labels: &labels,
        };
        let run = || {
            let mut params = initialize_parameters(&graph, 5);
            let mut opt = optim::AdamOptimizer::with_defaults();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let curves =
                train_epochs(&graph, &mut params, &ex, &ex, &mut opt, 3, 2, &mut rng, &Identity)
                    .unwrap();
            (params, curves)
        };
        let (p1, c1) = run();
        let (p2, c2) = run();
        assert_eq!(p1, p2);
        assert_eq!(c1, c2);
    }
}
