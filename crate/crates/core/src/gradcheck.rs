//! Central finite-difference verification for every layer kind.
//!
//! The checks perturb each scalar by `h = 1e-5`, rebuild the loss through the
//! forward path only, and compare the difference quotient against the
//! analytic backward pass. They are the independent oracle for the training
//! engine and run at full 64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::netspec::{build_network, BlockSpec};
use crate::trainer::layers::*;
use crate::trainer::{backward, forward, initialize_parameters, is_trainable, Mode, Tensor};

pub const FD_STEP: f64 = 1e-5;

/// Layer kinds covered by the finite-difference oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerCheck {
    Conv,
    BatchNorm,
    Relu,
    AvgPool,
    GlobalAvgPool,
    FullyConnected,
    SoftmaxCrossEntropy,
    Concat,
}

impl LayerCheck {
    pub const ALL: [LayerCheck; 8] = [
        LayerCheck::Conv,
        LayerCheck::BatchNorm,
        LayerCheck::Relu,
        LayerCheck::AvgPool,
        LayerCheck::GlobalAvgPool,
        LayerCheck::FullyConnected,
        LayerCheck::SoftmaxCrossEntropy,
        LayerCheck::Concat,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LayerCheck::Conv => "conv",
            LayerCheck::BatchNorm => "batchnorm",
            LayerCheck::Relu => "relu",
            LayerCheck::AvgPool => "avgpool",
            LayerCheck::GlobalAvgPool => "globalpool",
            LayerCheck::FullyConnected => "fc",
            LayerCheck::SoftmaxCrossEntropy => "softmax_ce",
            LayerCheck::Concat => "concat",
        }
    }
}

/// Relative error with a small floor so exact zeros compare cleanly.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Central finite differences of `loss` at `point`, compared element-wise
/// against `analytic`. Returns the worst relative error.
fn fd_against(
    point: &mut [f64],
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(point.len(), analytic.len());
    let mut worst: f64 = 0.0;
    for i in 0..point.len() {
        let orig = point[i];
        point[i] = orig + FD_STEP;
        let up = loss(point);
        point[i] = orig - FD_STEP;
        let down = loss(point);
        point[i] = orig;
        let fd = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic[i], fd));
    }
    worst
}

fn uniform(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Random values bounded away from zero, for kinked activations.
fn uniform_off_zero(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let mag = rng.gen_range(0.2..1.2);
            if rng.gen::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_conv(rng: &mut ChaCha8Rng) -> f64 {
    let kernel = if rng.gen::<bool>() { 3 } else { 1 };
    let s = ConvShape {
        batch: rng.gen_range(1..3),
        in_channels: rng.gen_range(1..4),
        height: rng.gen_range(kernel.max(2)..6),
        width: rng.gen_range(kernel.max(2)..6),
        out_channels: rng.gen_range(1..4),
        kernel,
        stride: 1,
        padding: if kernel == 3 { 1 } else { 0 },
    };
    let mut x = uniform(rng, s.batch * s.in_channels * s.height * s.width);
    let mut w = uniform(rng, s.out_channels * s.patch_len());
    let mut b = uniform(rng, s.out_channels);
    let covec = uniform(rng, s.out_len());

    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; b.len()];
    let dx = conv_backward(&x, &s, &w, &covec, &mut dw, &mut db);

    let (w_snap, b_snap, x_snap) = (w.clone(), b.clone(), x.clone());
    let e_x = fd_against(&mut x, &dx, |p| dot(&conv_forward(p, &s, &w_snap, &b_snap), &covec));
    let e_w = fd_against(&mut w, &dw, |p| dot(&conv_forward(&x_snap, &s, p, &b_snap), &covec));
    let e_b = fd_against(&mut b, &db, |p| dot(&conv_forward(&x_snap, &s, &w_snap, p), &covec));
    e_x.max(e_w).max(e_b)
}

fn check_batchnorm(rng: &mut ChaCha8Rng) -> f64 {
    let batch = rng.gen_range(2..5);
    let channels = rng.gen_range(1..4);
    let spatial = rng.gen_range(2..10);
    let mut x = uniform(rng, batch * channels * spatial);
    let mut scale = uniform_off_zero(rng, channels);
    let mut shift = uniform(rng, channels);
    let covec = uniform(rng, x.len());

    let (_, cache, _, _) =
        bn_forward_train(&x, batch, channels, spatial, &scale, &shift, crate::trainer::BN_EPS);
    let mut dscale = vec![0.0; channels];
    let mut dshift = vec![0.0; channels];
    let dx = bn_backward(&cache, batch, channels, spatial, &scale, &covec, &mut dscale, &mut dshift);

    let eps = crate::trainer::BN_EPS;
    let run = |x: &[f64], scale: &[f64], shift: &[f64]| {
        let (y, _, _, _) = bn_forward_train(x, batch, channels, spatial, scale, shift, eps);
        dot(&y, &covec)
    };
    let (x_snap, sc_snap, sh_snap) = (x.clone(), scale.clone(), shift.clone());
    let e_x = fd_against(&mut x, &dx, |p| run(p, &sc_snap, &sh_snap));
    let e_s = fd_against(&mut scale, &dscale, |p| run(&x_snap, p, &sh_snap));
    let e_b = fd_against(&mut shift, &dshift, |p| run(&x_snap, &sc_snap, p));
    e_x.max(e_s).max(e_b)
}

fn check_relu(rng: &mut ChaCha8Rng) -> f64 {
    let len = rng.gen_range(4..40);
    let mut x = uniform_off_zero(rng, len);
    let covec = uniform(rng, len);
    let y = relu_forward(&x);
    let dx = relu_backward(&y, &covec);
    fd_against(&mut x, &dx, |p| dot(&relu_forward(p), &covec))
}

fn check_avgpool(rng: &mut ChaCha8Rng) -> f64 {
    let (batch, channels) = (rng.gen_range(1..3), rng.gen_range(1..4));
    let h = 2 * rng.gen_range(1..4);
    let w = 2 * rng.gen_range(1..4);
    let mut x = uniform(rng, batch * channels * h * w);
    let covec = uniform(rng, batch * channels * (h / 2) * (w / 2));
    let dx = avgpool_backward(&covec, batch, channels, h, w);
    fd_against(&mut x, &dx, |p| dot(&avgpool_forward(p, batch, channels, h, w), &covec))
}

fn check_global_pool(rng: &mut ChaCha8Rng) -> f64 {
    let (batch, channels, spatial) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..17));
    let mut x = uniform(rng, batch * channels * spatial);
    let covec = uniform(rng, batch * channels);
    let dx = global_pool_backward(&covec, batch, channels, spatial);
    fd_against(&mut x, &dx, |p| {
        dot(&global_pool_forward(p, batch, channels, spatial), &covec)
    })
}

fn check_fc(rng: &mut ChaCha8Rng) -> f64 {
    let (batch, inf, outf) = (rng.gen_range(1..4), rng.gen_range(1..6), rng.gen_range(1..6));
    let mut x = uniform(rng, batch * inf);
    let mut w = uniform(rng, outf * inf);
    let mut b = uniform(rng, outf);
    let covec = uniform(rng, batch * outf);

    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; b.len()];
    let dx = fc_backward(&x, batch, inf, outf, &w, &covec, &mut dw, &mut db);

    let (x_snap, w_snap, b_snap) = (x.clone(), w.clone(), b.clone());
    let e_x = fd_against(&mut x, &dx, |p| dot(&fc_forward(p, batch, inf, outf, &w_snap, &b_snap), &covec));
    let e_w = fd_against(&mut w, &dw, |p| dot(&fc_forward(&x_snap, batch, inf, outf, p, &b_snap), &covec));
    let e_b = fd_against(&mut b, &db, |p| dot(&fc_forward(&x_snap, batch, inf, outf, &w_snap, p), &covec));
    e_x.max(e_w).max(e_b)
}

fn check_softmax_ce(rng: &mut ChaCha8Rng) -> f64 {
    let (batch, classes) = (rng.gen_range(1..5), rng.gen_range(2..7));
    let mut logits = uniform(rng, batch * classes);
    let labels: Vec<u32> = (0..batch).map(|_| rng.gen_range(0..classes as u32)).collect();
    let (_, dlogits) = softmax_cross_entropy(&logits, &labels, classes);
    fd_against(&mut logits, &dlogits, |p| {
        softmax_cross_entropy(p, &labels, classes).0
    })
}

fn check_concat(rng: &mut ChaCha8Rng) -> f64 {
    let (batch, spatial) = (rng.gen_range(1..3), rng.gen_range(1..9));
    let (ca, cb) = (rng.gen_range(1..4), rng.gen_range(1..4));
    let mut a = uniform(rng, batch * ca * spatial);
    let mut b = uniform(rng, batch * cb * spatial);
    let covec = uniform(rng, batch * (ca + cb) * spatial);

    // analytic routing: each source receives exactly its channel band
    let da = slice_channels(&covec, batch, ca + cb, 0, ca, spatial);
    let db = slice_channels(&covec, batch, ca + cb, ca, cb, spatial);

    let run = |a: &[f64], b: &[f64]| {
        let mut full = vec![0.0; batch * (ca + cb) * spatial];
        concat_into(a, &mut full, batch, ca, ca + cb, 0, spatial);
        concat_into(b, &mut full, batch, cb, ca + cb, ca, spatial);
        dot(&full, &covec)
    };
    let (a_snap, b_snap) = (a.clone(), b.clone());
    let e_a = fd_against(&mut a, &da, |p| run(p, &b_snap));
    let e_b = fd_against(&mut b, &db, |p| run(&a_snap, p));
    e_a.max(e_b)
}

/// Runs `instances` randomized micro-instances of one layer kind and returns
/// the worst relative error between analytic and finite-difference gradients.
pub fn check_layer(kind: LayerCheck, instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let e = match kind {
            LayerCheck::Conv => check_conv(&mut rng),
            LayerCheck::BatchNorm => check_batchnorm(&mut rng),
            LayerCheck::Relu => check_relu(&mut rng),
            LayerCheck::AvgPool => check_avgpool(&mut rng),
            LayerCheck::GlobalAvgPool => check_global_pool(&mut rng),
            LayerCheck::FullyConnected => check_fc(&mut rng),
            LayerCheck::SoftmaxCrossEntropy => check_softmax_ce(&mut rng),
            LayerCheck::Concat => check_concat(&mut rng),
        };
        worst = worst.max(e);
    }
    worst
}

/// End-to-end check on a stacked micro-network: every trainable parameter's
/// analytic gradient against finite differences of the cross-entropy loss.
pub fn check_network(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graph = build_network(BlockSpec::new(2, 2), 2, (2, 4, 4), 3).unwrap();
    let mut params = initialize_parameters(&graph, seed ^ 0x5eed);
    let batch = Tensor::from_values(vec![2, 2, 4, 4], uniform(&mut rng, 2 * 2 * 4 * 4));
    let labels = vec![rng.gen_range(0..3u32), rng.gen_range(0..3u32)];

    backward(&graph, &mut params, &batch, &labels).unwrap();

    let names: Vec<String> = params
        .iter()
        .filter(|(n, _)| is_trainable(n))
        .map(|(n, _)| n.clone())
        .collect();
    let mut worst: f64 = 0.0;
    for name in names {
        let analytic = params.get(&name).grad.clone().expect("gradient filled");
        let mut point = params.get(&name).values.clone();
        let err = fd_against(&mut point, &analytic, |p| {
            let mut probe = params.clone();
            probe.get_mut(&name).values.copy_from_slice(p);
            let logits = forward(&graph, &probe, &batch, Mode::Train);
            softmax_cross_entropy(&logits.values, &labels, 3).0
        });
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_kind_passes_micro_checks() {
        for kind in LayerCheck::ALL {
            let err = check_layer(kind, 10, 0xfeed);
            assert!(err < 1e-4, "{}: max relative error {err}", kind.name());
        }
    }

    #[test]
    fn stacked_micro_network_passes() {
        let err = check_network(21);
        assert!(err < 1e-4, "network gradient check failed: {err}");
    }
}
