//! Forward and backward kernels. Tensors are NCHW; convolutions are 3×3,
//! stride 1, zero-padded by one pixel.

use crate::error::{ensure_shape, Error, Result};

use super::{map_items, Real, Tensor};

/// Layer kinds the engine implements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv3x3,
    BatchNorm,
    Relu,
    MaxPool2,
    Upsample2,
    Softmax,
}

impl LayerKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            LayerKind::Conv3x3 => 0,
            LayerKind::BatchNorm => 1,
            LayerKind::Relu => 2,
            LayerKind::MaxPool2 => 3,
            LayerKind::Upsample2 => 4,
            LayerKind::Softmax => 5,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => LayerKind::Conv3x3,
            1 => LayerKind::BatchNorm,
            2 => LayerKind::Relu,
            3 => LayerKind::MaxPool2,
            4 => LayerKind::Upsample2,
            5 => LayerKind::Softmax,
            _ => return None,
        })
    }
}

/// Whether batch normalization uses batch statistics (and updates its
/// running averages) or the stored running averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

// out[y][x] += Σ k[ky][kx] · inp[y+ky-1][x+kx-1], zero outside the plane
fn correlate_acc<T: Real>(out: &mut [T], inp: &[T], h: usize, w: usize, k: &[T]) {
    for ky in 0..3 {
        for y in 0..h {
            let sy = y + ky;
            if sy == 0 || sy > h {
                continue;
            }
            let sy = sy - 1;
            let orow = &mut out[y * w..(y + 1) * w];
            let irow = &inp[sy * w..(sy + 1) * w];
            let (k0, k1, k2) = (k[ky * 3], k[ky * 3 + 1], k[ky * 3 + 2]);
            for (o, &i) in orow[1..].iter_mut().zip(&irow[..w - 1]) {
                *o += k0 * i;
            }
            for (o, &i) in orow.iter_mut().zip(irow) {
                *o += k1 * i;
            }
            for (o, &i) in orow[..w - 1].iter_mut().zip(&irow[1..]) {
                *o += k2 * i;
            }
        }
    }
}

// taps[ky][kx] += Σ_{y,x} g[y][x] · inp[y+ky-1][x+kx-1]
fn tap_products_acc<T: Real>(taps: &mut [T], g: &[T], inp: &[T], h: usize, w: usize) {
    for ky in 0..3 {
        for y in 0..h {
            let sy = y + ky;
            if sy == 0 || sy > h {
                continue;
            }
            let sy = sy - 1;
            let grow = &g[y * w..(y + 1) * w];
            let irow = &inp[sy * w..(sy + 1) * w];
            let mut acc = [T::zero(); 3];
            for (&gv, &iv) in grow[1..].iter().zip(&irow[..w - 1]) {
                acc[0] += gv * iv;
            }
            for (&gv, &iv) in grow.iter().zip(irow) {
                acc[1] += gv * iv;
            }
            for (&gv, &iv) in grow[..w - 1].iter().zip(&irow[1..]) {
                acc[2] += gv * iv;
            }
            for kx in 0..3 {
                taps[ky * 3 + kx] += acc[kx];
            }
        }
    }
}

fn check_conv_shapes<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c_in, h, w) = x.dims4()?;
    let (c_out, k_in, kh, kw) = kernel.dims4()?;
    ensure_shape!(kh == 3 && kw == 3, "kernel must be 3x3, got {kh}x{kw}");
    ensure_shape!(k_in == c_in, "kernel expects {k_in} input channels, input has {c_in}");
    Ok((n, c_in, c_out, h, w))
}

/// 3×3 cross-correlation, stride 1, zero padding 1.
pub fn conv2d_forward<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c_in, c_out, h, w) = check_conv_shapes(x, kernel)?;
    ensure_shape!(bias.len() == c_out, "bias length {} != {c_out}", bias.len());
    let plane = h * w;
    let k = kernel.data();
    let items = map_items(n, |b| {
        let input = &x.data()[b * c_in * plane..(b + 1) * c_in * plane];
        let mut out = vec![T::zero(); c_out * plane];
        for (oc, oplane) in out.chunks_exact_mut(plane).enumerate() {
            oplane.iter_mut().for_each(|v| *v = bias.data()[oc]);
            for ic in 0..c_in {
                let taps = &k[(oc * c_in + ic) * 9..(oc * c_in + ic + 1) * 9];
                correlate_acc(oplane, &input[ic * plane..(ic + 1) * plane], h, w, taps);
            }
        }
        out
    });
    Tensor::from_vec(&[n, c_out, h, w], items.concat())
}

/// Gradients of [`conv2d_forward`] w.r.t. input, kernel and bias.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c_in, c_out, h, w) = check_conv_shapes(x, kernel)?;
    ensure_shape!(
        grad_out.shape() == [n, c_out, h, w],
        "grad_out {:?} != [{n}, {c_out}, {h}, {w}]",
        grad_out.shape()
    );
    let plane = h * w;
    let k = kernel.data();
    // the input gradient correlates grad_out with the 180°-rotated kernel
    let flipped: Vec<T> = k
        .chunks_exact(9)
        .flat_map(|taps| (0..9).rev().map(move |i| taps[i]))
        .collect();
    let items = map_items(n, |b| {
        let input = &x.data()[b * c_in * plane..(b + 1) * c_in * plane];
        let go = &grad_out.data()[b * c_out * plane..(b + 1) * c_out * plane];
        let mut gx = vec![T::zero(); c_in * plane];
        let mut gk = vec![T::zero(); k.len()];
        let mut gb = vec![T::zero(); c_out];
        for oc in 0..c_out {
            let gplane = &go[oc * plane..(oc + 1) * plane];
            gb[oc] = gplane.iter().copied().sum();
            for ic in 0..c_in {
                let idx = (oc * c_in + ic) * 9;
                correlate_acc(
                    &mut gx[ic * plane..(ic + 1) * plane],
                    gplane,
                    h,
                    w,
                    &flipped[idx..idx + 9],
                );
                tap_products_acc(&mut gk[idx..idx + 9], gplane, &input[ic * plane..(ic + 1) * plane], h, w);
            }
        }
        (gx, gk, gb)
    });
    let mut grad_x = Vec::with_capacity(x.len());
    let mut grad_k = vec![T::zero(); k.len()];
    let mut grad_b = vec![T::zero(); c_out];
    for (gx, gk, gb) in items {
        grad_x.extend(gx);
        grad_k.iter_mut().zip(gk).for_each(|(a, v)| *a += v);
        grad_b.iter_mut().zip(gb).for_each(|(a, v)| *a += v);
    }
    Ok((
        Tensor::from_vec(x.shape(), grad_x)?,
        Tensor::from_vec(kernel.shape(), grad_k)?,
        Tensor::from_vec(&[c_out], grad_b)?,
    ))
}

/// Running averages kept by a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Number of training batches folded in; zero means uninitialized.
    pub updates: u64,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            updates: 0,
        }
    }
}

/// Weight of the old running average in each update.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Saved normalized activations for the batch-norm backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
}

/// Batch normalization over (batch, height, width) per channel.
///
/// In training mode the population batch statistics normalize the input and
/// are folded into `stats` (the first update copies them outright). In
/// inference mode the running averages are used and no cache is returned.
pub fn batchnorm_forward<T: Real>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: Mode,
) -> Result<(Tensor<T>, Option<BatchNormCache<T>>)> {
    let (n, c, h, w) = x.dims4()?;
    ensure_shape!(
        scale.len() == c && shift.len() == c && stats.mean.len() == c && stats.var.len() == c,
        "batch-norm parameters do not match {c} channels"
    );
    let plane = h * w;
    let count = (n * plane) as f64;
    let eps = BN_EPS;
    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Infer => {
            if stats.updates == 0 {
                return Err(Error::UninitializedBatchNorm(
                    "inference requested before any training update".into(),
                ));
            }
            (
                stats.mean.iter().map(|v| v.f64()).collect(),
                stats.var.iter().map(|v| v.f64()).collect(),
            )
        }
        Mode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let samples = || (0..n).flat_map(|b| &x.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane]);
                let mu = samples().map(|v| v.f64()).sum::<f64>() / count;
                var[ch] = samples().map(|v| (v.f64() - mu).powi(2)).sum::<f64>() / count;
                mean[ch] = mu;
            }
            if stats.updates == 0 {
                stats.mean = mean.iter().map(|&v| T::of(v)).collect();
                stats.var = var.iter().map(|&v| T::of(v)).collect();
            } else {
                for ch in 0..c {
                    stats.mean[ch] = T::of(BN_MOMENTUM * stats.mean[ch].f64() + (1.0 - BN_MOMENTUM) * mean[ch]);
                    stats.var[ch] = T::of(BN_MOMENTUM * stats.var[ch].f64() + (1.0 - BN_MOMENTUM) * var[ch]);
                }
            }
            stats.updates += 1;
            (mean, var)
        }
    };
    let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + eps).sqrt())).collect();
    let mean: Vec<T> = mean.into_iter().map(T::of).collect();
    let mut x_hat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let range = (b * c + ch) * plane..(b * c + ch + 1) * plane;
            let (g, s, m, is) = (scale.data()[ch], shift.data()[ch], mean[ch], inv_std[ch]);
            for i in range {
                let xh = (x.data()[i] - m) * is;
                x_hat[i] = xh;
                out[i] = g * xh + s;
            }
        }
    }
    let cache = (mode == Mode::Train).then_some(BatchNormCache { x_hat, inv_std });
    Ok((Tensor::from_vec(x.shape(), out)?, cache))
}

/// Gradients of training-mode batch norm w.r.t. input, scale and shift.
pub fn batchnorm_backward<T: Real>(
    grad_out: &Tensor<T>,
    cache: &BatchNormCache<T>,
    scale: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = grad_out.dims4()?;
    ensure_shape!(cache.x_hat.len() == grad_out.len(), "batch-norm cache does not match grad_out");
    let plane = h * w;
    let count = T::of((n * plane) as f64);
    let go = grad_out.data();
    let mut g_scale = vec![T::zero(); c];
    let mut g_shift = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            for i in (b * c + ch) * plane..(b * c + ch + 1) * plane {
                g_shift[ch] += go[i];
                g_scale[ch] += go[i] * cache.x_hat[i];
            }
        }
    }
    let mut gx = vec![T::zero(); go.len()];
    for b in 0..n {
        for ch in 0..c {
            let k = scale.data()[ch] * cache.inv_std[ch] / count;
            for i in (b * c + ch) * plane..(b * c + ch + 1) * plane {
                gx[i] = k * (count * go[i] - g_shift[ch] - cache.x_hat[i] * g_scale[ch]);
            }
        }
    }
    Ok((
        Tensor::from_vec(grad_out.shape(), gx)?,
        Tensor::from_vec(&[c], g_scale)?,
        Tensor::from_vec(&[c], g_shift)?,
    ))
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Passes gradient where the forward input was positive.
pub fn relu_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    ensure_shape!(x.shape() == grad_out.shape(), "relu grad shape mismatch");
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// 2×2 stride-2 max pooling. Also returns, per output, the flat input index
/// of the winning sample (first in row-major order on ties).
pub fn maxpool2_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!("max-pool needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for p in 0..n * c {
        let base = p * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * xx + dx;
                    if x.data()[i] > x.data()[best] {
                        best = i;
                    }
                }
                out.push(x.data()[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, oh, ow], out)?, argmax))
}

/// Routes each pooled gradient to its argmax.
pub fn maxpool2_backward<T: Real>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    ensure_shape!(argmax.len() == grad_out.len(), "argmax does not match grad_out");
    let mut gx = Tensor::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        gx.data_mut()[i] += g;
    }
    Ok(gx)
}

/// Nearest-neighbor ×2 upsampling.
pub fn upsample2_forward<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            let row = &src[(y / 2) * w..(y / 2 + 1) * w];
            out.extend(row.iter().flat_map(|&v| [v, v]));
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

/// Sums each 2×2 block of the upsampled gradient.
pub fn upsample2_backward<T: Real>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, oh, ow) = grad_out.dims4()?;
    ensure_shape!(oh % 2 == 0 && ow % 2 == 0, "upsampled gradient has odd dims");
    let (h, w) = (oh / 2, ow / 2);
    let mut gx = vec![T::zero(); n * c * h * w];
    for p in 0..n * c {
        let g = &grad_out.data()[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut gx[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                dst[(y / 2) * w + x / 2] += g[y * ow + x];
            }
        }
    }
    Tensor::from_vec(&[n, c, h, w], gx)
}

/// Softmax across the channel axis at every pixel, max-subtracted.
pub fn softmax_channels_forward<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let mut out = vec![T::zero(); x.len()];
    let mut buf = vec![T::zero(); c];
    for b in 0..n {
        let base = b * c * plane;
        for p in 0..plane {
            let max = (0..c).map(|ch| x.data()[base + ch * plane + p]).fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (ch, e) in buf.iter_mut().enumerate() {
                *e = (x.data()[base + ch * plane + p] - max).exp();
                sum += *e;
            }
            for (ch, e) in buf.iter().enumerate() {
                out[base + ch * plane + p] = *e / sum;
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

/// Backward of the channel softmax given its output `y`:
/// `dx_c = y_c (g_c - Σ_k g_k y_k)`.
pub fn softmax_channels_backward<T: Real>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = y.dims4()?;
    ensure_shape!(y.shape() == grad_out.shape(), "softmax grad shape mismatch");
    let plane = h * w;
    let (yd, gd) = (y.data(), grad_out.data());
    let mut gx = vec![T::zero(); y.len()];
    for b in 0..n {
        let base = b * c * plane;
        for p in 0..plane {
            let dot: T = (0..c).map(|ch| yd[base + ch * plane + p] * gd[base + ch * plane + p]).sum();
            for ch in 0..c {
                let i = base + ch * plane + p;
                gx[i] = yd[i] * (gd[i] - dot);
            }
        }
    }
    Tensor::from_vec(y.shape(), gx)
}
