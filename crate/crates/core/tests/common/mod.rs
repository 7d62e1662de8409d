//! Independent reference implementations shared by the integration tests.
//! Everything here is written as plain loops over raw samples and does not
//! call into the library's numerical code.

#![allow(dead_code)]

use hdrfuse::{ExposurePair, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
    Image::from_fn(h, w, c, |_, _, _| rng.gen_range(0.0..1.0)).unwrap()
}

pub fn random_pair(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ExposurePair {
    let a = random_image(rng, h, w, c);
    let b = random_image(rng, h, w, c);
    ExposurePair::new(a, b).unwrap()
}

/// Weighted per-pixel sum, weights shared by all channels, clamped.
pub fn fuse_loop(images: &[&Image], weights: &[Vec<f64>]) -> Vec<f64> {
    let (h, w, c) = (images[0].height(), images[0].width(), images[0].channels());
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                let mut s = 0.0;
                for (n, img) in images.iter().enumerate() {
                    s += weights[n][y * w + x] * img.data()[(y * w + x) * c + k];
                }
                out.push(s.clamp(0.0, 1.0));
            }
        }
    }
    out
}

pub fn luma(img: &Image) -> Vec<f64> {
    if img.channels() == 1 {
        return img.data().to_vec();
    }
    img.data()
        .chunks(3)
        .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
        .collect()
}

/// Top-left corners of the windows of `size` at every stride multiple that
/// fits inside an `h×w` grid, row-major.
pub fn window_origins(h: usize, w: usize, size: usize, stride: usize) -> Vec<(usize, usize)> {
    let axis = |len: usize| -> Vec<usize> { (0..).map(|i| i * stride).take_while(|&o| o + size <= len).collect() };
    let (rows, cols) = (axis(h), axis(w));
    rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect()
}

pub fn window(data: &[f64], w: usize, (r, c): (usize, usize), size: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(size * size);
    for y in r..r + size {
        for x in c..c + size {
            out.push(data[y * w + x]);
        }
    }
    out
}

pub fn ssim_scalar(a: &[f64], b: &[f64], c1: f64, c2: f64) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut va = 0.0;
    let mut vb = 0.0;
    let mut cov = 0.0;
    for i in 0..a.len() {
        va += (a[i] - ma).powi(2) / n;
        vb += (b[i] - mb).powi(2) / n;
        cov += (a[i] - ma) * (b[i] - mb) / n;
    }
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// Mean MEF-SSIM over all windows, on luma.
pub fn mef_ssim_loop(stack: &[&Image], fused: &Image, size: usize, stride: usize, c2: f64) -> f64 {
    let (h, w) = (fused.height(), fused.width());
    let lumas: Vec<Vec<f64>> = stack.iter().map(|i| luma(i)).collect();
    let fl = luma(fused);
    let origins = window_origins(h, w, size, stride);
    let mut total = 0.0;
    for &o in &origins {
        let patches: Vec<Vec<f64>> = lumas.iter().map(|l| window(l, w, o, size)).collect();
        let n = (size * size) as f64;
        let mut c_hat: f64 = 0.0;
        let mut s_sum = vec![0.0; size * size];
        for p in &patches {
            let mu = p.iter().sum::<f64>() / n;
            let c = p.iter().map(|v| (v - mu).powi(2)).sum::<f64>().sqrt();
            c_hat = c_hat.max(c);
            if c > 0.0 {
                let wgt = c.powi(4);
                for (s, v) in s_sum.iter_mut().zip(p) {
                    *s += wgt * (v - mu) / c;
                }
            }
        }
        let norm = s_sum.iter().map(|v| v * v).sum::<f64>().sqrt();
        let x_hat: Vec<f64> = if norm > 0.0 {
            s_sum.iter().map(|v| c_hat * v / norm).collect()
        } else {
            vec![0.0; s_sum.len()]
        };
        let y = window(&fl, w, o, size);
        let my = y.iter().sum::<f64>() / n;
        let mut vx = 0.0;
        let mut vy = 0.0;
        let mut cov = 0.0;
        for i in 0..y.len() {
            vx += x_hat[i] * x_hat[i] / n;
            vy += (y[i] - my).powi(2) / n;
            cov += x_hat[i] * (y[i] - my) / n;
        }
        total += (2.0 * cov + c2) / (vx + vy + c2);
    }
    total / origins.len() as f64
}

/// Weighted-SSIM loss by direct summation; `gamma[i]` belongs to window `i`
/// in row-major order.
pub fn loss_loop(under: &Image, over: &Image, fused: &Image, gamma: &[f64], size: usize, stride: usize) -> f64 {
    let (h, w, ch) = (fused.height(), fused.width(), fused.channels());
    let origins = window_origins(h, w, size, stride);
    let plane = |img: &Image, k: usize| -> Vec<f64> { img.data().iter().skip(k).step_by(ch).copied().collect() };
    let mut total = 0.0;
    for k in 0..ch {
        let (u, o, f) = (plane(under, k), plane(over, k), plane(fused, k));
        for (i, &org) in origins.iter().enumerate() {
            let fy = window(&f, w, org, size);
            total += gamma[i] * ssim_scalar(&window(&u, w, org, size), &fy, 1e-4, 9e-4);
            total += (1.0 - gamma[i]) * ssim_scalar(&window(&o, w, org, size), &fy, 1e-4, 9e-4);
        }
    }
    1.0 - total / (ch * origins.len()) as f64
}

/// Channel-major feature maps of one image: `maps[c][y][x]`.
pub type Maps = Vec<Vec<Vec<f64>>>;

fn param(net: &hdrfuse::nn::Network<f64>, layer: usize, name: &str) -> Vec<f64> {
    net.param(&format!("layer{layer:02}.{name}")).unwrap().tensor.data().to_vec()
}

/// Inference-mode forward pass of `net` on one image, written with nested
/// loops (zero-padded 3×3 correlation, running-stat batch norm, first-max
/// pooling, nearest upsampling, channel softmax).
pub fn network_loop(net: &hdrfuse::nn::Network<f64>, input: Maps) -> Maps {
    use hdrfuse::nn::LayerKind;
    let mut x = input;
    for (i, spec) in net.layers().iter().enumerate() {
        let (h, w) = (x[0].len(), x[0][0].len());
        x = match spec.kind {
            LayerKind::Conv3x3 => {
                let k = param(net, i, "weight");
                let b = param(net, i, "bias");
                let cin = spec.in_channels;
                (0..spec.out_channels)
                    .map(|o| {
                        (0..h)
                            .map(|y| {
                                (0..w)
                                    .map(|xx| {
                                        let mut s = b[o];
                                        for ci in 0..cin {
                                            for dy in 0..3 {
                                                for dx in 0..3 {
                                                    let (sy, sx) = (y as i64 + dy as i64 - 1, xx as i64 + dx as i64 - 1);
                                                    if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                                                        continue;
                                                    }
                                                    s += k[((o * cin + ci) * 3 + dy) * 3 + dx] * x[ci][sy as usize][sx as usize];
                                                }
                                            }
                                        }
                                        s
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            }
            LayerKind::BatchNorm => {
                let (g, s) = (param(net, i, "scale"), param(net, i, "shift"));
                let (m, v) = (param(net, i, "running_mean"), param(net, i, "running_var"));
                x.iter()
                    .enumerate()
                    .map(|(c, map)| {
                        map.iter()
                            .map(|row| row.iter().map(|&a| g[c] * (a - m[c]) / (v[c] + 1e-5).sqrt() + s[c]).collect())
                            .collect()
                    })
                    .collect()
            }
            LayerKind::Relu => x
                .iter()
                .map(|m| m.iter().map(|r| r.iter().map(|&a| a.max(0.0)).collect()).collect())
                .collect(),
            LayerKind::MaxPool2 => x
                .iter()
                .map(|m| {
                    (0..h / 2)
                        .map(|y| {
                            (0..w / 2)
                                .map(|xx| {
                                    let mut best = m[2 * y][2 * xx];
                                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                        best = best.max(m[2 * y + dy][2 * xx + dx]);
                                    }
                                    best
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect(),
            LayerKind::Upsample2 => x
                .iter()
                .map(|m| (0..2 * h).map(|y| (0..2 * w).map(|xx| m[y / 2][xx / 2]).collect()).collect())
                .collect(),
            LayerKind::Softmax => {
                let c = x.len();
                let mut out = x.clone();
                for y in 0..h {
                    for xx in 0..w {
                        let max = (0..c).map(|k| x[k][y][xx]).fold(f64::NEG_INFINITY, f64::max);
                        let total: f64 = (0..c).map(|k| (x[k][y][xx] - max).exp()).sum();
                        for k in 0..c {
                            out[k][y][xx] = (x[k][y][xx] - max).exp() / total;
                        }
                    }
                }
                out
            }
        };
    }
    x
}

/// Grayscale exposures stacked as two maps, mirror-padded (without edge
/// repetition) at the bottom and right up to multiples of 16.
pub fn padded_input(pair: &ExposurePair) -> Maps {
    let (h, w) = (pair.height(), pair.width());
    let (ph, pw) = (h.div_ceil(16) * 16, w.div_ceil(16) * 16);
    let mirror = |i: usize, n: usize| {
        if n == 1 {
            return 0;
        }
        let m = i % (2 * (n - 1));
        if m < n {
            m
        } else {
            2 * (n - 1) - m
        }
    };
    [pair.under(), pair.over()]
        .iter()
        .map(|img| {
            let l = luma(img);
            (0..ph)
                .map(|y| (0..pw).map(|x| l[mirror(y, h) * w + mirror(x, w)]).collect())
                .collect()
        })
        .collect()
}
