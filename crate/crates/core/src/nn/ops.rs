//! Differentiable CPU tensor operations.
//!
//! Every op comes as a `*_forward` returning `(output, cache)` and a
//! `*_backward` consuming the cache; nothing here mutates parameters, so a
//! forward is a pure function and training can replay or discard caches
//! freely. Tensors are NCHW `Array4`; convolutions go through im2col so the
//! heavy lifting lands in one matrix multiply.
//!
//! Generic over `f32` (training) and `f64` (gradient checking).

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView1, ArrayView2, ArrayView4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Float width the network stack is generic over.
pub trait Scalar: ndarray::NdFloat + num_traits::FromPrimitive {}
impl<T: ndarray::NdFloat + num_traits::FromPrimitive> Scalar for T {}

/// Shorthand for lossy f64 -> F constant conversion.
pub(crate) fn c<F: Scalar>(x: f64) -> F {
    F::from_f64(x).unwrap()
}

/// Epsilon inside batch-norm's variance square root.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics update rate: `r' = (1-m)*r + m*batch`.
pub const BN_MOMENTUM: f64 = 0.1;

/// Deterministic per-site RNG: one base seed, one stream per dropout site.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn conv_out_len(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Unfold NCHW into a `(C*k*k, N*Ho*Wo)` patch matrix (zero padding).
pub fn im2col<F: Scalar>(
    input: ArrayView4<F>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array2<F> {
    let (n, cin, h, w) = input.dim();
    let ho = conv_out_len(h, k, stride, pad);
    let wo = conv_out_len(w, k, stride, pad);
    let ncol = n * ho * wo;
    let mut cols = Array2::<F>::zeros((cin * k * k, ncol));
    let input = input.as_standard_layout();
    let src = input.as_slice().expect("standard layout");
    let dst = cols.as_slice_mut().expect("freshly allocated");
    for ci in 0..cin {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let row_base = row * ncol;
                for ni in 0..n {
                    let src_base = (ni * cin + ci) * h * w;
                    for i in 0..ho {
                        let yy = (i * stride + ki) as isize - pad as isize;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        let src_row = src_base + yy as usize * w;
                        let dst_row = row_base + (ni * ho + i) * wo;
                        for j in 0..wo {
                            let xx = (j * stride + kj) as isize - pad as isize;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            dst[dst_row + j] = src[src_row + xx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add a patch matrix back onto an NCHW
/// canvas of size `(n, ch, h_out, w_out)`; `(h_grid, w_grid)` is the patch
/// grid the columns are indexed by.
#[allow(clippy::too_many_arguments)]
pub fn col2im<F: Scalar>(
    cols: ArrayView2<F>,
    n: usize,
    ch: usize,
    h_out: usize,
    w_out: usize,
    h_grid: usize,
    w_grid: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array4<F> {
    let ncol = n * h_grid * w_grid;
    debug_assert_eq!(cols.dim(), (ch * k * k, ncol));
    let mut out = Array4::<F>::zeros((n, ch, h_out, w_out));
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    let dst = out.as_slice_mut().expect("freshly allocated");
    for ci in 0..ch {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let row_base = row * ncol;
                for ni in 0..n {
                    let dst_base = (ni * ch + ci) * h_out * w_out;
                    for i in 0..h_grid {
                        let yy = (i * stride + ki) as isize - pad as isize;
                        if yy < 0 || yy >= h_out as isize {
                            continue;
                        }
                        let dst_row = dst_base + yy as usize * w_out;
                        let src_row = row_base + (ni * h_grid + i) * w_grid;
                        for j in 0..w_grid {
                            let xx = (j * stride + kj) as isize - pad as isize;
                            if xx < 0 || xx >= w_out as isize {
                                continue;
                            }
                            dst[dst_row + xx as usize] = dst[dst_row + xx as usize] + src[src_row + j];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `(N, C, H, W) -> (C, N*H*W)` channel-major matrix copy.
fn nchw_to_cm<F: Scalar>(x: ArrayView4<F>) -> Array2<F> {
    let (n, ch, h, w) = x.dim();
    let mut out = Array2::<F>::zeros((ch, n * h * w));
    for ci in 0..ch {
        let mut row = out.row_mut(ci);
        let row = row.as_slice_mut().unwrap();
        for ni in 0..n {
            let plane = x.index_axis(Axis(0), ni);
            let plane = plane.index_axis(Axis(0), ci);
            for i in 0..h {
                for j in 0..w {
                    row[(ni * h + i) * w + j] = plane[(i, j)];
                }
            }
        }
    }
    out
}

/// Inverse of [`nchw_to_cm`].
fn cm_to_nchw<F: Scalar>(m: &Array2<F>, n: usize, ch: usize, h: usize, w: usize) -> Array4<F> {
    let mut out = Array4::<F>::zeros((n, ch, h, w));
    for ci in 0..ch {
        let row = m.row(ci);
        let row = row.as_slice().unwrap();
        for ni in 0..n {
            let mut plane = out.index_axis_mut(Axis(0), ni);
            let mut plane = plane.index_axis_mut(Axis(0), ci);
            for i in 0..h {
                for j in 0..w {
                    plane[(i, j)] = row[(ni * h + i) * w + j];
                }
            }
        }
    }
    out
}

fn add_channel_bias<F: Scalar>(out: &mut Array4<F>, bias: ArrayView1<F>) {
    for (ci, &b) in bias.iter().enumerate() {
        out.index_axis_mut(Axis(1), ci).mapv_inplace(|v| v + b);
    }
}

/// Stashed forward state a convolution backward needs.
pub struct Conv2dCache<F> {
    cols: Array2<F>,
    in_dim: (usize, usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
}

/// Strided convolution; weight layout `(C_out, C_in, k, k)`.
pub fn conv2d_forward<F: Scalar>(
    x: ArrayView4<F>,
    weight: ArrayView4<F>,
    bias: ArrayView1<F>,
    stride: usize,
    pad: usize,
) -> (Array4<F>, Conv2dCache<F>) {
    let (n, cin, h, w) = x.dim();
    let (cout, cin_w, k, _) = weight.dim();
    debug_assert_eq!(cin, cin_w, "conv input channels");
    let ho = conv_out_len(h, k, stride, pad);
    let wo = conv_out_len(w, k, stride, pad);
    let cols = im2col(x, k, stride, pad);
    let w_mat = weight
        .to_shape((cout, cin * k * k))
        .expect("weight reshape");
    let mut out_mat = Array2::<F>::zeros((cout, n * ho * wo));
    general_mat_mul(F::one(), &w_mat.view(), &cols.view(), F::zero(), &mut out_mat);
    // Column index is (n, i, j)-major, so rows are per-sample planes.
    let mut out = Array4::<F>::zeros((n, cout, ho, wo));
    for ci in 0..cout {
        let row = out_mat.row(ci);
        let row = row.as_slice().unwrap();
        for ni in 0..n {
            let mut plane = out.index_axis_mut(Axis(0), ni);
            let mut plane = plane.index_axis_mut(Axis(0), ci);
            for i in 0..ho {
                for j in 0..wo {
                    plane[(i, j)] = row[(ni * ho + i) * wo + j];
                }
            }
        }
    }
    add_channel_bias(&mut out, bias);
    (
        out,
        Conv2dCache {
            cols,
            in_dim: (n, cin, h, w),
            k,
            stride,
            pad,
        },
    )
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward<F: Scalar>(
    cache: &Conv2dCache<F>,
    weight: ArrayView4<F>,
    d_out: ArrayView4<F>,
) -> (Array4<F>, Array4<F>, Array1<F>) {
    let (n, cin, h, w) = cache.in_dim;
    let (_, cout, ho, wo) = d_out.dim();
    let (k, stride, pad) = (cache.k, cache.stride, cache.pad);
    let d_out_mat = nchw_to_cm(d_out);

    let mut dw_mat = Array2::<F>::zeros((cout, cin * k * k));
    general_mat_mul(
        F::one(),
        &d_out_mat.view(),
        &cache.cols.t(),
        F::zero(),
        &mut dw_mat,
    );
    let d_weight = dw_mat
        .to_shape((cout, cin, k, k))
        .expect("weight reshape")
        .to_owned();

    let d_bias = d_out.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));

    let w_mat = weight
        .to_shape((cout, cin * k * k))
        .expect("weight reshape");
    let mut d_cols = Array2::<F>::zeros((cin * k * k, n * ho * wo));
    general_mat_mul(
        F::one(),
        &w_mat.t(),
        &d_out_mat.view(),
        F::zero(),
        &mut d_cols,
    );
    let d_input = col2im(d_cols.view(), n, cin, h, w, ho, wo, k, stride, pad);
    (d_input, d_weight, d_bias)
}

/// Stashed forward state a transposed-convolution backward needs.
pub struct ConvT2dCache<F> {
    x_mat: Array2<F>,
    in_dim: (usize, usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
}

/// Fractionally strided (transposed) convolution; weight layout
/// `(C_in, C_out, k, k)`; output spatial size `(H-1)*stride - 2*pad + k`.
pub fn conv_transpose2d_forward<F: Scalar>(
    x: ArrayView4<F>,
    weight: ArrayView4<F>,
    bias: ArrayView1<F>,
    stride: usize,
    pad: usize,
) -> (Array4<F>, ConvT2dCache<F>) {
    let (n, cin, h, w) = x.dim();
    let (cin_w, cout, k, _) = weight.dim();
    debug_assert_eq!(cin, cin_w, "conv-transpose input channels");
    let ho = (h - 1) * stride + k - 2 * pad;
    let wo = (w - 1) * stride + k - 2 * pad;
    let x_mat = nchw_to_cm(x);
    let w_mat = weight
        .to_shape((cin, cout * k * k))
        .expect("weight reshape");
    let mut cols = Array2::<F>::zeros((cout * k * k, n * h * w));
    general_mat_mul(F::one(), &w_mat.t(), &x_mat.view(), F::zero(), &mut cols);
    let mut out = col2im(cols.view(), n, cout, ho, wo, h, w, k, stride, pad);
    add_channel_bias(&mut out, bias);
    (
        out,
        ConvT2dCache {
            x_mat,
            in_dim: (n, cin, h, w),
            k,
            stride,
            pad,
        },
    )
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn conv_transpose2d_backward<F: Scalar>(
    cache: &ConvT2dCache<F>,
    weight: ArrayView4<F>,
    d_out: ArrayView4<F>,
) -> (Array4<F>, Array4<F>, Array1<F>) {
    let (n, cin, h, w) = cache.in_dim;
    let (_, cout, k, _) = weight.dim();
    let (stride, pad) = (cache.stride, cache.pad);
    debug_assert_eq!(k, cache.k);
    // The output of the forward is a col2im over the (h, w) patch grid, so
    // its adjoint is an im2col of d_out over that same grid.
    let d_cols = im2col(d_out, k, stride, pad);
    debug_assert_eq!(d_cols.dim(), (cout * k * k, n * h * w));

    let w_mat = weight
        .to_shape((cin, cout * k * k))
        .expect("weight reshape");
    let mut dx_mat = Array2::<F>::zeros((cin, n * h * w));
    general_mat_mul(F::one(), &w_mat.view(), &d_cols.view(), F::zero(), &mut dx_mat);
    let d_input = cm_to_nchw(&dx_mat, n, cin, h, w);

    let mut dw_mat = Array2::<F>::zeros((cin, cout * k * k));
    general_mat_mul(
        F::one(),
        &cache.x_mat.view(),
        &d_cols.t(),
        F::zero(),
        &mut dw_mat,
    );
    let d_weight = dw_mat
        .to_shape((cin, cout, k, k))
        .expect("weight reshape")
        .to_owned();

    let d_bias = d_out.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
    (d_input, d_weight, d_bias)
}

/// Stashed forward state for batch-norm backward plus the fresh batch
/// statistics the training loop may fold into the running buffers.
pub struct BnCache<F> {
    xhat: Array4<F>,
    invstd: Array1<F>,
    gamma: Array1<F>,
    pub batch_mean: Array1<F>,
    pub batch_var: Array1<F>,
}

/// Batch normalization over `(N, H, W)` per channel, using *batch*
/// statistics (training mode). Variance is biased (divide by the count).
pub fn bn_forward_train<F: Scalar>(
    x: ArrayView4<F>,
    gamma: ArrayView1<F>,
    beta: ArrayView1<F>,
) -> (Array4<F>, BnCache<F>) {
    let (n, ch, h, w) = x.dim();
    let m = c::<F>((n * h * w) as f64);
    let eps = c::<F>(BN_EPS);
    let mut mean = Array1::<F>::zeros(ch);
    let mut var = Array1::<F>::zeros(ch);
    for ci in 0..ch {
        let plane = x.index_axis(Axis(1), ci);
        let mu = plane.sum() / m;
        let v = plane.mapv(|e| (e - mu) * (e - mu)).sum() / m;
        mean[ci] = mu;
        var[ci] = v;
    }
    let invstd = var.mapv(|v| F::one() / (v + eps).sqrt());
    let mut xhat = x.to_owned();
    for ci in 0..ch {
        let (mu, is) = (mean[ci], invstd[ci]);
        xhat.index_axis_mut(Axis(1), ci)
            .mapv_inplace(|e| (e - mu) * is);
    }
    let mut out = xhat.clone();
    for ci in 0..ch {
        let (g, b) = (gamma[ci], beta[ci]);
        out.index_axis_mut(Axis(1), ci).mapv_inplace(|e| g * e + b);
    }
    (
        out,
        BnCache {
            xhat,
            invstd,
            gamma: gamma.to_owned(),
            batch_mean: mean,
            batch_var: var,
        },
    )
}

/// Batch normalization with frozen running statistics (inference mode).
pub fn bn_forward_eval<F: Scalar>(
    x: ArrayView4<F>,
    gamma: ArrayView1<F>,
    beta: ArrayView1<F>,
    running_mean: ArrayView1<F>,
    running_var: ArrayView1<F>,
) -> Array4<F> {
    let eps = c::<F>(BN_EPS);
    let mut out = x.to_owned();
    for ci in 0..out.dim().1 {
        let is = F::one() / (running_var[ci] + eps).sqrt();
        let (mu, g, b) = (running_mean[ci], gamma[ci], beta[ci]);
        out.index_axis_mut(Axis(1), ci)
            .mapv_inplace(|e| g * (e - mu) * is + b);
    }
    out
}

/// Returns `(d_input, d_gamma, d_beta)` for training-mode batch norm; the
/// gradient accounts for the batch statistics' dependence on the input.
pub fn bn_backward<F: Scalar>(cache: &BnCache<F>, d_out: ArrayView4<F>) -> (Array4<F>, Array1<F>, Array1<F>) {
    let (n, ch, h, w) = d_out.dim();
    let m = c::<F>((n * h * w) as f64);
    let mut d_gamma = Array1::<F>::zeros(ch);
    let mut d_beta = Array1::<F>::zeros(ch);
    let mut d_input = Array4::<F>::zeros(d_out.dim());
    for ci in 0..ch {
        let dy = d_out.index_axis(Axis(1), ci);
        let xh = cache.xhat.index_axis(Axis(1), ci);
        let sum_dy = dy.sum();
        let sum_dy_xhat = (&dy * &xh).sum();
        d_beta[ci] = sum_dy;
        d_gamma[ci] = sum_dy_xhat;
        let g_is = cache.gamma[ci] * cache.invstd[ci];
        let mut dx = d_input.index_axis_mut(Axis(1), ci);
        ndarray::Zip::from(&mut dx).and(&dy).and(&xh).for_each(|dxe, &dye, &xhe| {
            *dxe = g_is * (dye - sum_dy / m - xhe * sum_dy_xhat / m);
        });
    }
    (d_input, d_gamma, d_beta)
}

/// Exponentially averaged running statistics after observing this batch.
pub fn bn_updated_stats<F: Scalar>(
    cache: &BnCache<F>,
    running_mean: ArrayView1<F>,
    running_var: ArrayView1<F>,
) -> (Array1<F>, Array1<F>) {
    let mom = c::<F>(BN_MOMENTUM);
    let keep = F::one() - mom;
    let mean = running_mean
        .iter()
        .zip(cache.batch_mean.iter())
        .map(|(&r, &b)| keep * r + mom * b)
        .collect();
    let var = running_var
        .iter()
        .zip(cache.batch_var.iter())
        .map(|(&r, &b)| keep * r + mom * b)
        .collect();
    (mean, var)
}

/// ReLU; the output doubles as the backward cache.
pub fn relu_forward<F: Scalar>(x: &Array4<F>) -> Array4<F> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

pub fn relu_backward<F: Scalar>(y: &Array4<F>, d_out: ArrayView4<F>) -> Array4<F> {
    let mut dx = d_out.to_owned();
    ndarray::Zip::from(&mut dx).and(y).for_each(|d, &ye| {
        if ye <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

/// LeakyReLU with slope 0.2 on the negative side.
pub fn leaky_relu_forward<F: Scalar>(x: &Array4<F>) -> Array4<F> {
    let slope = c::<F>(0.2);
    x.mapv(|v| if v > F::zero() { v } else { slope * v })
}

pub fn leaky_relu_backward<F: Scalar>(y: &Array4<F>, d_out: ArrayView4<F>) -> Array4<F> {
    let slope = c::<F>(0.2);
    let mut dx = d_out.to_owned();
    ndarray::Zip::from(&mut dx).and(y).for_each(|d, &ye| {
        if ye <= F::zero() {
            *d = *d * slope;
        }
    });
    dx
}

/// Scaled tanh head mapping to `[0, 1]`: `y = (tanh(u) + 1) / 2`.
pub fn scaled_tanh_forward<F: Scalar>(u: &Array4<F>) -> Array4<F> {
    let half = c::<F>(0.5);
    u.mapv(|v| (v.tanh() + F::one()) * half)
}

pub fn scaled_tanh_backward<F: Scalar>(y: &Array4<F>, d_out: ArrayView4<F>) -> Array4<F> {
    // dy/du = (1 - tanh^2)/2 with tanh = 2y - 1.
    let half = c::<F>(0.5);
    let two = c::<F>(2.0);
    let mut dx = d_out.to_owned();
    ndarray::Zip::from(&mut dx).and(y).for_each(|d, &ye| {
        let t = two * ye - F::one();
        *d = *d * (F::one() - t * t) * half;
    });
    dx
}

pub fn sigmoid_forward<F: Scalar>(u: &Array4<F>) -> Array4<F> {
    u.mapv(|v| F::one() / (F::one() + (-v).exp()))
}

pub fn sigmoid_backward<F: Scalar>(s: &Array4<F>, d_out: ArrayView4<F>) -> Array4<F> {
    let mut dx = d_out.to_owned();
    ndarray::Zip::from(&mut dx).and(s).for_each(|d, &se| {
        *d = *d * se * (F::one() - se);
    });
    dx
}

/// Inverted dropout: surviving elements are scaled by `1/(1-rate)` so the
/// expectation is unchanged; the returned mask holds those scale factors and
/// is the entire backward state.
pub fn dropout_forward<F: Scalar>(
    x: &Array4<F>,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> (Array4<F>, Array4<F>) {
    debug_assert!((0.0..1.0).contains(&rate));
    let scale = c::<F>(1.0 / (1.0 - rate));
    let mut mask = Array4::<F>::zeros(x.dim());
    for m in mask.iter_mut() {
        if rng.random::<f64>() >= rate {
            *m = scale;
        }
    }
    (x * &mask, mask)
}

pub fn dropout_backward<F: Scalar>(mask: &Array4<F>, d_out: ArrayView4<F>) -> Array4<F> {
    &d_out * mask
}

/// Concatenate along the channel axis.
pub fn concat_channels<F: Scalar>(a: ArrayView4<F>, b: ArrayView4<F>) -> Array4<F> {
    ndarray::concatenate(Axis(1), &[a, b]).expect("matching non-channel dims")
}

/// Split a channel-gradient back into the two concatenated parts.
pub fn split_channels<F: Scalar>(d: ArrayView4<F>, first: usize) -> (Array4<F>, Array4<F>) {
    let a = d.slice(ndarray::s![.., ..first, .., ..]).to_owned();
    let b = d.slice(ndarray::s![.., first.., .., ..]).to_owned();
    (a, b)
}
