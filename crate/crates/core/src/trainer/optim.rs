//! Optimisers: Adam with bias correction and scheduled Nesterov-momentum SGD.

use std::collections::BTreeMap;

use super::{is_trainable, ParamStore};

/// Per-tensor Adam state with its hyperparameters. Defaults follow the
/// original study: lr 0.001, beta1 0.9, beta2 0.999, epsilon 1e-8.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self::with_lr(len, 0.001)
    }

    pub fn with_lr(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One Adam update: exponential moving averages of the gradient and its
/// square, bias-corrected, then `param -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(state: &mut AdamState, param: &mut [f64], grad: &[f64]) {
    assert_eq!(param.len(), grad.len(), "parameter/gradient shape mismatch");
    assert_eq!(param.len(), state.m.len(), "state shape mismatch");
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        param[i] -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
}

/// The final-training schedule: initial rate divided by `drop_factor` at each
/// drop point, Nesterov momentum without dampening, L2 weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdSchedule {
    pub initial_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub total_epochs: u32,
    /// Fractions of `total_epochs` at which the rate drops; strictly
    /// increasing, inside (0, 1).
    pub drop_points: Vec<f64>,
    pub drop_factor: f64,
}

impl SgdSchedule {
    pub fn new(total_epochs: u32) -> Self {
        Self {
            initial_lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            total_epochs,
            drop_points: vec![0.5, 0.75],
            drop_factor: 10.0,
        }
    }

    /// Epochs at which the learning rate drops: floor(fraction * total).
    pub fn drop_epochs(&self) -> Vec<u32> {
        self.drop_points
            .iter()
            .map(|&f| (f * self.total_epochs as f64).floor() as u32)
            .collect()
    }

    /// Pure function of (epoch, total_epochs).
    pub fn learning_rate(&self, epoch: u32) -> f64 {
        let drops = self
            .drop_epochs()
            .into_iter()
            .filter(|&d| epoch >= d)
            .count() as i32;
        self.initial_lr / self.drop_factor.powi(drops)
    }
}

/// One Nesterov SGD update without dampening:
/// `g += wd * param; buf = mu * buf + g; param -= lr * (g + mu * buf)`.
pub fn sgd_nesterov_step(
    schedule: &SgdSchedule,
    epoch: u32,
    param: &mut [f64],
    grad: &[f64],
    buffer: &mut [f64],
    apply_weight_decay: bool,
) {
    assert!(epoch < schedule.total_epochs, "epoch beyond schedule");
    assert_eq!(param.len(), grad.len(), "parameter/gradient shape mismatch");
    assert_eq!(param.len(), buffer.len(), "momentum buffer shape mismatch");
    let lr = schedule.learning_rate(epoch);
    let mu = schedule.momentum;
    let wd = if apply_weight_decay {
        schedule.weight_decay
    } else {
        0.0
    };
    for i in 0..param.len() {
        let g = grad[i] + wd * param[i];
        buffer[i] = mu * buffer[i] + g;
        param[i] -= lr * (g + mu * buffer[i]);
    }
}

/// Steps every trainable tensor of a parameter store once per batch.
pub trait Optimizer {
    fn step(&mut self, params: &mut ParamStore, epoch: u32);
}

/// Adam over a whole store; lazily creates per-tensor state.
#[derive(Debug, Clone, Default)]
pub struct AdamOptimizer {
    lr: f64,
    states: BTreeMap<String, AdamState>,
}

impl AdamOptimizer {
    pub fn with_defaults() -> Self {
        Self::with_lr(0.001)
    }

    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            states: BTreeMap::new(),
        }
    }
}

impl Optimizer for AdamOptimizer {
    fn step(&mut self, params: &mut ParamStore, _epoch: u32) {
        for (name, tensor) in params.iter_mut() {
            if !is_trainable(name) {
                continue;
            }
            let state = self
                .states
                .entry(name.clone())
                .or_insert_with(|| AdamState::with_lr(tensor.len(), self.lr));
            let (values, grad) = tensor.values_and_grad();
            let grad = grad.expect("gradient missing; run backward first");
            adam_step(state, values, grad);
        }
    }
}

/// Scheduled Nesterov SGD over a whole store. Weight decay applies to conv
/// and FC weights only, never to biases or batch-norm parameters.
#[derive(Debug, Clone)]
pub struct SgdOptimizer {
    pub schedule: SgdSchedule,
    buffers: BTreeMap<String, Vec<f64>>,
}

impl SgdOptimizer {
    pub fn new(schedule: SgdSchedule) -> Self {
        Self {
            schedule,
            buffers: BTreeMap::new(),
        }
    }
}

impl Optimizer for SgdOptimizer {
    fn step(&mut self, params: &mut ParamStore, epoch: u32) {
        for (name, tensor) in params.iter_mut() {
            if !is_trainable(name) {
                continue;
            }
            let buffer = self
                .buffers
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; tensor.len()]);
            let decay = name.ends_with(".weight");
            let (values, grad) = tensor.values_and_grad();
            let grad = grad.expect("gradient missing; run backward first");
            sgd_nesterov_step(&self.schedule, epoch, values, grad, buffer, decay);
        }
    }
}
