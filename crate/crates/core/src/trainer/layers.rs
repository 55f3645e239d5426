//! Dense computational kernels: convolution (im2col + GEMM), batch
//! normalisation, ReLU, pooling, fully connected, and softmax cross-entropy.
//!
//! Every kernel is deterministic: parallel loops only split work across
//! independent output elements, and each element's reduction runs in a fixed
//! sequential order.

use rayon::prelude::*;

/// Below this many multiply-accumulates the kernels stay single-threaded;
/// rayon overhead dominates on micro instances.
const PAR_FLOPS: usize = 1 << 18;

/// c (m x n) += a (m x k) . b (k x n), all row-major. Output rows are
/// processed in blocks of four that share each B-row read.
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let block = |i0: usize, c_block: &mut [f64]| {
        let rows = c_block.len() / n;
        for t in 0..k {
            let b_row = &b[t * n..(t + 1) * n];
            match rows {
                4 => {
                    let (a0, a1, a2, a3) = (
                        a[i0 * k + t],
                        a[(i0 + 1) * k + t],
                        a[(i0 + 2) * k + t],
                        a[(i0 + 3) * k + t],
                    );
                    let (c01, c23) = c_block.split_at_mut(2 * n);
                    let (c0, c1) = c01.split_at_mut(n);
                    let (c2, c3) = c23.split_at_mut(n);
                    for j in 0..n {
                        let bv = b_row[j];
                        c0[j] += a0 * bv;
                        c1[j] += a1 * bv;
                        c2[j] += a2 * bv;
                        c3[j] += a3 * bv;
                    }
                }
                _ => {
                    for (r, c_row) in c_block.chunks_mut(n).enumerate() {
                        let av = a[(i0 + r) * k + t];
                        for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                            *cv += av * bv;
                        }
                    }
                }
            }
        }
    };
    if m * n * k >= PAR_FLOPS && m > 4 {
        c.par_chunks_mut(4 * n)
            .enumerate()
            .for_each(|(g, c_block)| block(4 * g, c_block));
    } else {
        for (g, c_block) in c.chunks_mut(4 * n).enumerate() {
            block(4 * g, c_block);
        }
    }
}

/// c (m x n) += a (m x k) . b^T, where b is (n x k) row-major.
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let row = |i: usize, c_row: &mut [f64]| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *cv += acc;
        }
    };
    if m * n * k >= PAR_FLOPS && m > 1 {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, c_row)| row(i, c_row));
    } else {
        for (i, c_row) in c.chunks_mut(n).enumerate() {
            row(i, c_row);
        }
    }
}

/// c (m x n) += a^T . b, where a is (k x m) and b is (k x n), row-major.
/// Same four-row blocking as [`gemm_nn`].
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let block = |i0: usize, c_block: &mut [f64]| {
        let rows = c_block.len() / n;
        for t in 0..k {
            let a_row = &a[t * m..(t + 1) * m];
            let b_row = &b[t * n..(t + 1) * n];
            match rows {
                4 => {
                    let (a0, a1, a2, a3) =
                        (a_row[i0], a_row[i0 + 1], a_row[i0 + 2], a_row[i0 + 3]);
                    let (c01, c23) = c_block.split_at_mut(2 * n);
                    let (c0, c1) = c01.split_at_mut(n);
                    let (c2, c3) = c23.split_at_mut(n);
                    for j in 0..n {
                        let bv = b_row[j];
                        c0[j] += a0 * bv;
                        c1[j] += a1 * bv;
                        c2[j] += a2 * bv;
                        c3[j] += a3 * bv;
                    }
                }
                _ => {
                    for (r, c_row) in c_block.chunks_mut(n).enumerate() {
                        let av = a_row[i0 + r];
                        for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                            *cv += av * bv;
                        }
                    }
                }
            }
        }
    };
    if m * n * k >= PAR_FLOPS && m > 4 {
        c.par_chunks_mut(4 * n)
            .enumerate()
            .for_each(|(g, c_block)| block(4 * g, c_block));
    } else {
        for (g, c_block) in c.chunks_mut(4 * n).enumerate() {
            block(4 * g, c_block);
        }
    }
}

/// Convolution geometry for one call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvShape {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }
    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
    fn out_spatial(&self) -> usize {
        self.out_height() * self.out_width()
    }
    pub fn out_len(&self) -> usize {
        self.batch * self.out_channels * self.out_spatial()
    }
}

/// Unfolds the whole batch into a (patch_len x batch*out_spatial) column
/// matrix; column index q = n * out_spatial + s. One GEMM then covers the
/// batch, which keeps the inner loops long.
fn im2col_batch(x: &[f64], s: &ConvShape, col: &mut [f64]) {
    let (oh, ow) = (s.out_height(), s.out_width());
    let spatial = oh * ow;
    let q_total = s.batch * spatial;
    let (h, w, k) = (s.height, s.width, s.kernel);
    let in_stride = s.in_channels * h * w;

    let fill_row = |r: usize, dst: &mut [f64]| {
        let ci = r / (k * k);
        let ky = (r / k) % k;
        let kx = r % k;
        for n in 0..s.batch {
            let plane = &x[n * in_stride + ci * h * w..n * in_stride + (ci + 1) * h * w];
            let dst_n = &mut dst[n * spatial..(n + 1) * spatial];
            let mut q = 0;
            for oy in 0..oh {
                let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                if iy < 0 || iy >= h as isize {
                    dst_n[q..q + ow].iter_mut().for_each(|v| *v = 0.0);
                    q += ow;
                    continue;
                }
                let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                for ox in 0..ow {
                    let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                    dst_n[q] = if ix >= 0 && ix < w as isize {
                        src_row[ix as usize]
                    } else {
                        0.0
                    };
                    q += 1;
                }
            }
        }
    };
    if s.patch_len() * q_total >= PAR_FLOPS {
        col.par_chunks_mut(q_total)
            .enumerate()
            .for_each(|(r, dst)| fill_row(r, dst));
    } else {
        for (r, dst) in col.chunks_mut(q_total).enumerate() {
            fill_row(r, dst);
        }
    }
}

/// Scatter-adds a column-matrix gradient back onto the input planes.
fn col2im_batch(col: &[f64], s: &ConvShape, dx: &mut [f64]) {
    let (oh, ow) = (s.out_height(), s.out_width());
    let spatial = oh * ow;
    let q_total = s.batch * spatial;
    let (h, w, k) = (s.height, s.width, s.kernel);
    let in_stride = s.in_channels * h * w;
    let patch = s.patch_len();

    let back_example = |n: usize, dx_n: &mut [f64]| {
        for r in 0..patch {
            let ci = r / (k * k);
            let ky = (r / k) % k;
            let kx = r % k;
            let src = &col[r * q_total + n * spatial..r * q_total + (n + 1) * spatial];
            let plane = &mut dx_n[ci * h * w..(ci + 1) * h * w];
            let mut q = 0;
            for oy in 0..oh {
                let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                if iy < 0 || iy >= h as isize {
                    q += ow;
                    continue;
                }
                let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                for ox in 0..ow {
                    let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                    if ix >= 0 && ix < w as isize {
                        dst_row[ix as usize] += src[q];
                    }
                    q += 1;
                }
            }
        }
    };
    if patch * q_total >= PAR_FLOPS && s.batch > 1 {
        dx.par_chunks_mut(in_stride)
            .enumerate()
            .for_each(|(n, dx_n)| back_example(n, dx_n));
    } else {
        for (n, dx_n) in dx.chunks_mut(in_stride).enumerate() {
            back_example(n, dx_n);
        }
    }
}

/// Forward convolution; `weight` is (cout x cin x k x k), `bias` is (cout).
pub fn conv_forward(x: &[f64], s: &ConvShape, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let (oh, ow) = (s.out_height(), s.out_width());
    let spatial = oh * ow;
    let q_total = s.batch * spatial;
    let patch = s.patch_len();

    let mut col = vec![0.0; patch * q_total];
    im2col_batch(x, s, &mut col);
    let mut out_mat = vec![0.0; s.out_channels * q_total];
    gemm_nn(s.out_channels, patch, q_total, weight, &col, &mut out_mat);

    // out_mat is (cout, batch*spatial); reorder to (batch, cout, spatial)
    let mut out = vec![0.0; s.batch * s.out_channels * spatial];
    for n in 0..s.batch {
        for co in 0..s.out_channels {
            let src = &out_mat[co * q_total + n * spatial..co * q_total + (n + 1) * spatial];
            let dst =
                &mut out[(n * s.out_channels + co) * spatial..(n * s.out_channels + co + 1) * spatial];
            let b = bias[co];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = v + b;
            }
        }
    }
    out
}

/// Backward convolution. Returns the input gradient and accumulates the
/// weight/bias gradients into `dweight`/`dbias`.
pub fn conv_backward(
    x: &[f64],
    s: &ConvShape,
    weight: &[f64],
    d_out: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let (oh, ow) = (s.out_height(), s.out_width());
    let spatial = oh * ow;
    let q_total = s.batch * spatial;
    let patch = s.patch_len();
    let in_stride = s.in_channels * s.height * s.width;

    // rebuild the unfolded batch; shared by both gradient products
    let mut col = vec![0.0; patch * q_total];
    im2col_batch(x, s, &mut col);

    // gradient in (cout, batch*spatial) layout
    let mut dout_mat = vec![0.0; s.out_channels * q_total];
    for n in 0..s.batch {
        for co in 0..s.out_channels {
            let src = &d_out[(n * s.out_channels + co) * spatial
                ..(n * s.out_channels + co + 1) * spatial];
            dout_mat[co * q_total + n * spatial..co * q_total + (n + 1) * spatial]
                .copy_from_slice(src);
        }
    }

    // dW = dOut . col^T, computed transposed so the big col matrix streams
    // once while the small dOut matrix stays cache-resident
    let mut dwt = vec![0.0; patch * s.out_channels];
    gemm_nt(patch, q_total, s.out_channels, &col, &dout_mat, &mut dwt);
    for co in 0..s.out_channels {
        for r in 0..patch {
            dweight[co * patch + r] += dwt[r * s.out_channels + co];
        }
    }
    for co in 0..s.out_channels {
        let mut acc = 0.0;
        for &g in &dout_mat[co * q_total..(co + 1) * q_total] {
            acc += g;
        }
        dbias[co] += acc;
    }

    // dX = fold(W^T . dOut)
    let mut dcol = vec![0.0; patch * q_total];
    gemm_tn(patch, s.out_channels, q_total, weight, &dout_mat, &mut dcol);
    let mut dx = vec![0.0; s.batch * in_stride];
    col2im_batch(&dcol, s, &mut dx);
    dx
}

/// Saved batch statistics from a train-mode batch-norm forward pass.
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Train-mode batch norm: normalises with batch statistics, returns the
/// output plus the cache needed for the backward pass and the batch
/// mean/variance for the running-average update.
pub fn bn_forward_train(
    x: &[f64],
    batch: usize,
    channels: usize,
    spatial: usize,
    scale: &[f64],
    shift: &[f64],
    eps: f64,
) -> (Vec<f64>, BnCache, Vec<f64>, Vec<f64>) {
    let m = (batch * spatial) as f64;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; channels];
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];

    for c in 0..channels {
        let mut sum = 0.0;
        for n in 0..batch {
            let base = (n * channels + c) * spatial;
            for &v in &x[base..base + spatial] {
                sum += v;
            }
        }
        let mu = sum / m;
        let mut sq = 0.0;
        for n in 0..batch {
            let base = (n * channels + c) * spatial;
            for &v in &x[base..base + spatial] {
                let d = v - mu;
                sq += d * d;
            }
        }
        let v = sq / m; // biased variance, as normalised against
        let istd = 1.0 / (v + eps).sqrt();
        mean[c] = mu;
        var[c] = v;
        inv_std[c] = istd;
        let (g, b) = (scale[c], shift[c]);
        for n in 0..batch {
            let base = (n * channels + c) * spatial;
            for i in 0..spatial {
                let xh = (x[base + i] - mu) * istd;
                xhat[base + i] = xh;
                y[base + i] = g * xh + b;
            }
        }
    }
    (y, BnCache { xhat, inv_std }, mean, var)
}

/// Eval-mode batch norm: normalises with the running statistics.
pub fn bn_forward_eval(
    x: &[f64],
    batch: usize,
    channels: usize,
    spatial: usize,
    scale: &[f64],
    shift: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for c in 0..channels {
        let istd = 1.0 / (running_var[c] + eps).sqrt();
        let (mu, g, b) = (running_mean[c], scale[c], shift[c]);
        for n in 0..batch {
            let base = (n * channels + c) * spatial;
            for i in 0..spatial {
                y[base + i] = g * (x[base + i] - mu) * istd + b;
            }
        }
    }
    y
}

/// Backward through train-mode batch norm.
pub fn bn_backward(
    cache: &BnCache,
    batch: usize,
    channels: usize,
    spatial: usize,
    scale: &[f64],
    d_out: &[f64],
    dscale: &mut [f64],
    dshift: &mut [f64],
) -> Vec<f64> {
    let m = (batch * spatial) as f64;
    let mut dx = vec![0.0; d_out.len()];
    for c in 0..channels {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for n in 0..batch {
            let base = (n * channels + c) * spatial;
            for i in 0..spatial {
                let g = d_out[base + i];
                sum_dy += g;
                sum_dy_xhat += g * cache.xhat[base + i];
            }
        }
        dshift[c] += sum_dy;
        dscale[c] += sum_dy_xhat;
        let k = scale[c] * cache.inv_std[c];
        let mean_dy = sum_dy / m;
        let mean_dy_xhat = sum_dy_xhat / m;
        for n in 0..batch {
            let base = (n * channels + c) * spatial;
            for i in 0..spatial {
                dx[base + i] =
                    k * (d_out[base + i] - mean_dy - cache.xhat[base + i] * mean_dy_xhat);
            }
        }
    }
    dx
}

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Backward through ReLU given the forward *output* (the mask source).
pub fn relu_backward(y: &[f64], d_out: &[f64]) -> Vec<f64> {
    y.iter()
        .zip(d_out)
        .map(|(&yv, &g)| if yv > 0.0 { g } else { 0.0 })
        .collect()
}

/// 2x2 average pooling with stride 2; spatial dimensions must be even.
pub fn avgpool_forward(x: &[f64], batch: usize, channels: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut y = vec![0.0; batch * channels * oh * ow];
    for nc in 0..batch * channels {
        let src = &x[nc * h * w..(nc + 1) * h * w];
        let dst = &mut y[nc * oh * ow..(nc + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let i = 2 * oy * w + 2 * ox;
                dst[oy * ow + ox] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
            }
        }
    }
    y
}

pub fn avgpool_backward(
    d_out: &[f64],
    batch: usize,
    channels: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![0.0; batch * channels * h * w];
    for nc in 0..batch * channels {
        let src = &d_out[nc * oh * ow..(nc + 1) * oh * ow];
        let dst = &mut dx[nc * h * w..(nc + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let g = 0.25 * src[oy * ow + ox];
                let i = 2 * oy * w + 2 * ox;
                dst[i] += g;
                dst[i + 1] += g;
                dst[i + w] += g;
                dst[i + w + 1] += g;
            }
        }
    }
    dx
}

/// Global average pool: (n, c, h, w) -> (n, c).
pub fn global_pool_forward(x: &[f64], batch: usize, channels: usize, spatial: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * channels];
    for nc in 0..batch * channels {
        let mut acc = 0.0;
        for &v in &x[nc * spatial..(nc + 1) * spatial] {
            acc += v;
        }
        y[nc] = acc / spatial as f64;
    }
    y
}

pub fn global_pool_backward(
    d_out: &[f64],
    batch: usize,
    channels: usize,
    spatial: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; batch * channels * spatial];
    for nc in 0..batch * channels {
        let g = d_out[nc] / spatial as f64;
        for v in &mut dx[nc * spatial..(nc + 1) * spatial] {
            *v = g;
        }
    }
    dx
}

/// Fully connected: y (n x out) = x (n x in) . W^T + b, W is (out x in).
pub fn fc_forward(
    x: &[f64],
    batch: usize,
    in_features: usize,
    out_features: usize,
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let mut y = vec![0.0; batch * out_features];
    gemm_nt(batch, in_features, out_features, x, weight, &mut y);
    for n in 0..batch {
        for (j, &b) in bias.iter().enumerate() {
            y[n * out_features + j] += b;
        }
    }
    y
}

pub fn fc_backward(
    x: &[f64],
    batch: usize,
    in_features: usize,
    out_features: usize,
    weight: &[f64],
    d_out: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    gemm_tn(out_features, batch, in_features, d_out, x, dweight);
    for n in 0..batch {
        for (j, db) in dbias.iter_mut().enumerate() {
            *db += d_out[n * out_features + j];
        }
    }
    let mut dx = vec![0.0; batch * in_features];
    gemm_nn(batch, out_features, in_features, d_out, weight, &mut dx);
    dx
}

/// Mean softmax cross-entropy over the batch. Returns the loss and the
/// gradient with respect to the logits.
pub fn softmax_cross_entropy(
    logits: &[f64],
    labels: &[u32],
    num_classes: usize,
) -> (f64, Vec<f64>) {
    let batch = labels.len();
    debug_assert_eq!(logits.len(), batch * num_classes);
    let mut dlogits = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (n, &label) in labels.iter().enumerate() {
        let row = &logits[n * num_classes..(n + 1) * num_classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &z in row {
            sum += (z - max).exp();
        }
        let lse = max + sum.ln();
        loss += lse - row[label as usize];
        let drow = &mut dlogits[n * num_classes..(n + 1) * num_classes];
        for (j, dz) in drow.iter_mut().enumerate() {
            let p = (row[j] - lse).exp();
            *dz = (p - if j == label as usize { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    (loss / batch as f64, dlogits)
}

/// Copies `src` (n, c_src, spatial) into the channel band starting at
/// `dst_offset` of `dst` (n, c_dst, spatial).
pub fn concat_into(
    src: &[f64],
    dst: &mut [f64],
    batch: usize,
    c_src: usize,
    c_dst: usize,
    dst_offset: usize,
    spatial: usize,
) {
    for n in 0..batch {
        let s = &src[n * c_src * spatial..(n + 1) * c_src * spatial];
        let d_base = (n * c_dst + dst_offset) * spatial;
        dst[d_base..d_base + c_src * spatial].copy_from_slice(s);
    }
}

/// Extracts the channel band `[offset, offset + c_take)` from a
/// (n, c_full, spatial) buffer; the routing inverse of [`concat_into`].
pub fn slice_channels(
    x: &[f64],
    batch: usize,
    c_full: usize,
    offset: usize,
    c_take: usize,
    spatial: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * c_take * spatial];
    for n in 0..batch {
        let s_base = (n * c_full + offset) * spatial;
        let d = &mut out[n * c_take * spatial..(n + 1) * c_take * spatial];
        d.copy_from_slice(&x[s_base..s_base + c_take * spatial]);
    }
    out
}

/// Adds `src` (n, c_src, spatial) into the channel band of `dst` starting at
/// `dst_offset` (gradient routing for concatenation).
pub fn add_into_channels(
    src: &[f64],
    dst: &mut [f64],
    batch: usize,
    c_src: usize,
    c_dst: usize,
    dst_offset: usize,
    spatial: usize,
) {
    for n in 0..batch {
        let s = &src[n * c_src * spatial..(n + 1) * c_src * spatial];
        let d_base = (n * c_dst + dst_offset) * spatial;
        for (dv, &sv) in dst[d_base..d_base + c_src * spatial].iter_mut().zip(s) {
            *dv += sv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel_preserves_single_pixel() {
        // 1x1 spatial input through a 3x3 pad-1 conv whose centre weight is 1.
        let s = ConvShape {
            batch: 1,
            in_channels: 1,
            height: 1,
            width: 1,
            out_channels: 1,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        let mut weight = vec![0.0; 9];
        weight[4] = 1.0; // centre tap
        let out = conv_forward(&[3.25], &s, &weight, &[0.0]);
        assert_eq!(out, vec![3.25]);
    }

    #[test]
    fn conv_matches_direct_computation() {
        let s = ConvShape {
            batch: 1,
            in_channels: 1,
            height: 3,
            width: 3,
            out_channels: 1,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        let x: Vec<f64> = (1..=9).map(f64::from).collect();
        let weight = vec![1.0; 9];
        let out = conv_forward(&x, &s, &weight, &[0.5]);
        // centre output = sum of all nine inputs + bias
        assert!((out[4] - 45.5).abs() < 1e-12);
        // corner output = sum of the 2x2 neighbourhood + bias
        assert!((out[0] - (1.0 + 2.0 + 4.0 + 5.0 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn bn_train_normalises_to_unit_stats() {
        let batch = 4;
        let spatial = 9;
        let x: Vec<f64> = (0..batch * 2 * spatial).map(|i| (i as f64) * 0.37 - 3.0).collect();
        let (_, cache, _, _) =
            bn_forward_train(&x, batch, 2, spatial, &[1.0, 1.0], &[0.0, 0.0], 1e-5);
        for c in 0..2 {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for n in 0..batch {
                let base = (n * 2 + c) * spatial;
                for i in 0..spatial {
                    sum += cache.xhat[base + i];
                    sq += cache.xhat[base + i] * cache.xhat[base + i];
                }
            }
            let m = (batch * spatial) as f64;
            assert!((sum / m).abs() < 1e-9);
            // variance of xhat is var/(var+eps): within 1e-6 of 1 here
            assert!((sq / m - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_ce_uniform_logits_is_ln_c() {
        for &classes in &[2usize, 10, 100] {
            let logits = vec![0.7; 3 * classes];
            let labels = vec![0u32, 1, (classes - 1) as u32];
            let (loss, _) = softmax_cross_entropy(&logits, &labels, classes);
            assert!((loss - (classes as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_ce_confident_logit_drives_loss_to_zero() {
        let mut logits = vec![0.0; 10];
        logits[3] = 50.0;
        let (loss, _) = softmax_cross_entropy(&logits, &[3], 10);
        assert!(loss < 1e-12);
    }

    #[test]
    fn concat_routing_preserves_norm() {
        let batch = 2;
        let spatial = 4;
        let full: Vec<f64> = (0..batch * 5 * spatial).map(|i| i as f64 * 0.13 - 1.0).collect();
        let head = slice_channels(&full, batch, 5, 0, 3, spatial);
        let tail = slice_channels(&full, batch, 5, 3, 2, spatial);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        assert!((norm(&full) - norm(&head) - norm(&tail)).abs() < 1e-12);
        let mut rebuilt = vec![0.0; full.len()];
        concat_into(&head, &mut rebuilt, batch, 3, 5, 0, spatial);
        concat_into(&tail, &mut rebuilt, batch, 2, 5, 3, spatial);
        assert_eq!(rebuilt, full);
    }

    #[test]
    fn avgpool_roundtrip_shapes() {
        let x: Vec<f64> = (0..2 * 3 * 4 * 4).map(|i| i as f64).collect();
        let y = avgpool_forward(&x, 2, 3, 4, 4);
        assert_eq!(y.len(), 2 * 3 * 2 * 2);
        assert!((y[0] - (0.0 + 1.0 + 4.0 + 5.0) / 4.0).abs() < 1e-12);
        let dx = avgpool_backward(&y, 2, 3, 4, 4);
        assert_eq!(dx.len(), x.len());
    }
}
