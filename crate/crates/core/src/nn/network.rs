//! A sequential stack of layers with named parameters and a recorded
//! forward pass for backpropagation.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_shape, Error, Result};

use super::layers::{self, BatchNormCache, RunningStats};
pub use super::layers::{LayerKind, Mode};
use super::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv3x3,
            in_channels,
            out_channels,
        }
    }

    /// A channel-preserving layer (batch norm, activation, resampling).
    pub fn same(kind: LayerKind, channels: usize) -> Self {
        LayerSpec {
            kind,
            in_channels: channels,
            out_channels: channels,
        }
    }
}

/// A named tensor; non-trainable entries are batch-norm buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

enum Cache<T> {
    Conv(Tensor<T>),
    BatchNorm(BatchNormCache<T>),
    Relu(Tensor<T>),
    MaxPool { input_shape: Vec<usize>, argmax: Vec<usize> },
    Upsample,
    Softmax(Tensor<T>),
}

/// Everything the backward pass needs from one training-mode forward pass.
pub struct Tape<T> {
    caches: Vec<Cache<T>>,
}

impl<T: Real> Tape<T> {
    /// Hash of every ReLU on/off decision and max-pool winner. Two inputs
    /// with equal signatures lie in the same piecewise-smooth region.
    pub fn activation_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for c in &self.caches {
            match c {
                Cache::Relu(x) => {
                    for v in x.data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Cache::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }
}

/// Layers plus their parameters in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    width_multiplier: f64,
    layers: Vec<LayerSpec>,
    params: Vec<Param<T>>,
    /// Index of each layer's first parameter.
    offsets: Vec<usize>,
}

fn param_shapes(spec: &LayerSpec) -> Vec<(&'static str, Vec<usize>, bool)> {
    match spec.kind {
        LayerKind::Conv3x3 => vec![
            ("weight", vec![spec.out_channels, spec.in_channels, 3, 3], true),
            ("bias", vec![spec.out_channels], true),
        ],
        LayerKind::BatchNorm => vec![
            ("scale", vec![spec.out_channels], true),
            ("shift", vec![spec.out_channels], true),
            ("running_mean", vec![spec.out_channels], false),
            ("running_var", vec![spec.out_channels], false),
            ("updates", vec![1], false),
        ],
        _ => Vec::new(),
    }
}

impl<T: Real> Network<T> {
    /// Creates the network with zero kernels and biases, unit batch-norm
    /// scales and identity running statistics (not yet updated).
    pub fn new(layers: Vec<LayerSpec>, width_multiplier: f64) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if l.in_channels == 0 || l.out_channels == 0 {
                return Err(Error::InvalidArgument(format!("layer {i} has zero channels")));
            }
            if l.kind != LayerKind::Conv3x3 && l.in_channels != l.out_channels {
                return Err(Error::InvalidArgument(format!("layer {i} ({:?}) cannot change channel count", l.kind)));
            }
            if i > 0 && layers[i - 1].out_channels != l.in_channels {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} expects {} channels but receives {}",
                    l.in_channels,
                    layers[i - 1].out_channels
                )));
            }
        }
        let mut params = Vec::new();
        let mut offsets = Vec::with_capacity(layers.len());
        for (i, l) in layers.iter().enumerate() {
            offsets.push(params.len());
            for (name, shape, trainable) in param_shapes(l) {
                let init = if matches!(name, "scale" | "running_var") {
                    T::one()
                } else {
                    T::zero()
                };
                params.push(Param {
                    name: format!("layer{i:02}.{name}"),
                    tensor: Tensor::filled(&shape, init),
                    trainable,
                });
            }
        }
        Ok(Network {
            width_multiplier,
            layers,
            params,
            offsets,
        })
    }

    /// Kaiming-uniform (fan-in, ReLU gain) kernels from a seeded generator;
    /// biases zero, batch-norm scale one and shift zero.
    pub fn init_kaiming(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, &off) in self.layers.iter().zip(&self.offsets) {
            if l.kind == LayerKind::Conv3x3 {
                let bound = (6.0 / (l.in_channels * 9) as f64).sqrt();
                for v in self.params[off].tensor.data_mut() {
                    *v = T::of(rng.gen_range(-bound..bound));
                }
                self.params[off + 1].tensor.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn width_multiplier(&self) -> f64 {
        self.width_multiplier
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.params
            .iter_mut()
            .filter(|p| p.trainable)
            .map(|p| &mut p.tensor)
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// True once every batch-norm layer has seen a training batch.
    pub fn batch_norm_ready(&self) -> bool {
        self.layers
            .iter()
            .zip(&self.offsets)
            .filter(|(l, _)| l.kind == LayerKind::BatchNorm)
            .all(|(_, &off)| self.params[off + 4].tensor.data()[0] > T::zero())
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            width_multiplier: self.width_multiplier,
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            offsets: self.offsets.clone(),
        }
    }

    /// Replaces all parameter values (e.g. from a checkpoint). Names and
    /// shapes must match the architecture exactly.
    pub fn load_values(&mut self, values: Vec<(String, Vec<usize>, Vec<T>)>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors stored, architecture needs {}",
                values.len(),
                self.params.len()
            )));
        }
        for (p, (name, shape, data)) in self.params.iter_mut().zip(values) {
            if p.name != name || p.tensor.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} {shape:?} does not match {} {:?}",
                    p.name,
                    p.tensor.shape()
                )));
            }
            p.tensor = Tensor::from_vec(&shape, data)?;
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, _, _) = x.dims4()?;
        let want = self.layers.first().map_or(c, |l| l.in_channels);
        ensure_shape!(c == want, "network expects {want} input channels, got {c}");
        Ok(())
    }

    fn running_stats(&self, off: usize) -> RunningStats<T> {
        RunningStats {
            mean: self.params[off + 2].tensor.data().to_vec(),
            var: self.params[off + 3].tensor.data().to_vec(),
            updates: self.params[off + 4].tensor.data()[0].f64() as u64,
        }
    }

    fn store_running_stats(&mut self, off: usize, stats: RunningStats<T>) {
        self.params[off + 2].tensor.data_mut().copy_from_slice(&stats.mean);
        self.params[off + 3].tensor.data_mut().copy_from_slice(&stats.var);
        self.params[off + 4].tensor.data_mut()[0] = T::of(stats.updates as f64);
    }

    /// Inference pass (batch norm on running statistics).
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (i, (l, &off)) in self.layers.iter().zip(&self.offsets).enumerate() {
            h = match l.kind {
                LayerKind::Conv3x3 => {
                    layers::conv2d_forward(&h, &self.params[off].tensor, &self.params[off + 1].tensor)?
                }
                LayerKind::BatchNorm => {
                    let mut stats = self.running_stats(off);
                    let p = &self.params;
                    layers::batchnorm_forward(&h, &p[off].tensor, &p[off + 1].tensor, &mut stats, Mode::Infer)
                        .map_err(|e| match e {
                            Error::UninitializedBatchNorm(_) => {
                                Error::UninitializedBatchNorm(format!("layer {i}"))
                            }
                            other => other,
                        })?
                        .0
                }
                LayerKind::Relu => layers::relu_forward(&h),
                LayerKind::MaxPool2 => layers::maxpool2_forward(&h)?.0,
                LayerKind::Upsample2 => layers::upsample2_forward(&h)?,
                LayerKind::Softmax => layers::softmax_channels_forward(&h)?,
            };
        }
        Ok(h)
    }

    /// Training pass: batch statistics, running averages updated, and a
    /// tape recorded for [`Network::backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, Tape<T>)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for i in 0..self.layers.len() {
            let off = self.offsets[i];
            let (next, cache) = match self.layers[i].kind {
                LayerKind::Conv3x3 => {
                    let y = layers::conv2d_forward(&h, &self.params[off].tensor, &self.params[off + 1].tensor)?;
                    (y, Cache::Conv(h))
                }
                LayerKind::BatchNorm => {
                    let mut stats = self.running_stats(off);
                    let (y, cache) = layers::batchnorm_forward(
                        &h,
                        &self.params[off].tensor,
                        &self.params[off + 1].tensor,
                        &mut stats,
                        Mode::Train,
                    )?;
                    self.store_running_stats(off, stats);
                    (y, Cache::BatchNorm(cache.expect("training mode caches")))
                }
                LayerKind::Relu => (layers::relu_forward(&h), Cache::Relu(h)),
                LayerKind::MaxPool2 => {
                    let (y, argmax) = layers::maxpool2_forward(&h)?;
                    (
                        y,
                        Cache::MaxPool {
                            input_shape: h.shape().to_vec(),
                            argmax,
                        },
                    )
                }
                LayerKind::Upsample2 => (layers::upsample2_forward(&h)?, Cache::Upsample),
                LayerKind::Softmax => {
                    let y = layers::softmax_channels_forward(&h)?;
                    (y.clone(), Cache::Softmax(y))
                }
            };
            caches.push(cache);
            h = next;
        }
        Ok((h, Tape { caches }))
    }

    /// Backpropagates `grad_out` through the recorded pass, adding parameter
    /// gradients into their buffers. Returns the gradient w.r.t. the input.
    pub fn backward(&mut self, tape: Tape<T>, grad_out: Tensor<T>) -> Result<Tensor<T>> {
        ensure_shape!(tape.caches.len() == self.layers.len(), "tape from a different network");
        let mut g = grad_out;
        for (i, cache) in tape.caches.into_iter().enumerate().rev() {
            let off = self.offsets[i];
            g = match cache {
                Cache::Conv(input) => {
                    let (gx, gk, gb) = layers::conv2d_backward(&input, &self.params[off].tensor, &g)?;
                    self.params[off].tensor.accumulate_grad(gk.data())?;
                    self.params[off + 1].tensor.accumulate_grad(gb.data())?;
                    gx
                }
                Cache::BatchNorm(cache) => {
                    let (gx, gs, gb) = layers::batchnorm_backward(&g, &cache, &self.params[off].tensor)?;
                    self.params[off].tensor.accumulate_grad(gs.data())?;
                    self.params[off + 1].tensor.accumulate_grad(gb.data())?;
                    gx
                }
                Cache::Relu(input) => layers::relu_backward(&input, &g)?,
                Cache::MaxPool { input_shape, argmax } => layers::maxpool2_backward(&input_shape, &argmax, &g)?,
                Cache::Upsample => layers::upsample2_backward(&g)?,
                Cache::Softmax(y) => layers::softmax_channels_backward(&y, &g)?,
            };
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Network<f64> {
        let mut n = Network::new(
            vec![
                LayerSpec::conv(2, 3),
                LayerSpec::same(LayerKind::BatchNorm, 3),
                LayerSpec::same(LayerKind::Relu, 3),
                LayerSpec::same(LayerKind::MaxPool2, 3),
                LayerSpec::same(LayerKind::Upsample2, 3),
                LayerSpec::conv(3, 2),
                LayerSpec::same(LayerKind::Softmax, 2),
            ],
            1.0,
        )
        .unwrap();
        n.init_kaiming(1);
        n
    }

    #[test]
    fn rejects_broken_channel_chains() {
        assert!(Network::<f32>::new(vec![LayerSpec::conv(2, 3), LayerSpec::conv(4, 1)], 1.0).is_err());
        assert!(Network::<f32>::new(
            vec![LayerSpec {
                kind: LayerKind::Relu,
                in_channels: 2,
                out_channels: 3
            }],
            1.0
        )
        .is_err());
    }

    #[test]
    fn param_names_and_order() {
        let n = tiny();
        let names: Vec<&str> = n.params().iter().map(|p| p.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "layer00.weight",
                "layer00.bias",
                "layer01.scale",
                "layer01.shift",
                "layer01.running_mean",
                "layer01.running_var",
                "layer01.updates",
                "layer05.weight",
                "layer05.bias"
            ]
        );
    }

    #[test]
    fn inference_requires_trained_batch_norm() {
        let mut n = tiny();
        let x = Tensor::filled(&[1, 2, 4, 4], 0.3);
        assert!(matches!(n.infer(&x), Err(Error::UninitializedBatchNorm(_))));
        assert!(!n.batch_norm_ready());
        n.forward_train(&x).unwrap();
        assert!(n.batch_norm_ready());
        let y = n.infer(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4, 4]);
        assert!(n.infer(&Tensor::filled(&[1, 3, 4, 4], 0.3)).is_err());
    }

    #[test]
    fn backward_shapes() {
        let mut n = tiny();
        let x = Tensor::filled(&[2, 2, 4, 4], 0.1);
        let (y, tape) = n.forward_train(&x).unwrap();
        let gx = n.backward(tape, Tensor::filled(y.shape(), 1.0)).unwrap();
        assert_eq!(gx.shape(), x.shape());
        assert!(n.params()[0].tensor.grad().is_some());
    }
}
