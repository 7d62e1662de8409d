//! The weight-map network: a VGG16-style encoder over the stacked grayscale
//! exposures, a mirrored decoder with nearest-neighbor upsampling, and a
//! per-pixel softmax over the two exposures.

use std::path::Path;

use crate::classical::{self, WeightMap};
use crate::error::{Error, Result};
use crate::image::{ExposurePair, Image};
use crate::nn::{checkpoint, LayerKind, LayerSpec, Network, Real, Tensor};
use crate::plane::Plane;

/// Encoder convolution widths at full scale.
pub const ENCODER_CHANNELS: [usize; 10] = [64, 64, 128, 128, 256, 256, 256, 512, 512, 512];
/// Encoder layers (0-based) followed by a 2×2 max-pool.
const POOL_AFTER: [usize; 4] = [1, 3, 6, 9];
/// Spatial sides must be multiples of this (2^pools).
pub const SIZE_MULTIPLE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    /// Scales every channel count; 1.0 is the full-size network.
    pub width_multiplier: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width_multiplier: 1.0 / 16.0,
        }
    }
}

impl ModelConfig {
    pub const POOL_COUNT: usize = 4;
    pub const INPUT_CHANNELS: usize = 2;
    pub const OUTPUT_CHANNELS: usize = 2;

    pub fn validate(&self) -> Result<()> {
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "width multiplier {} outside (0, 1]",
                self.width_multiplier
            )));
        }
        Ok(())
    }

    /// Encoder widths after scaling and rounding (at least one channel).
    pub fn encoder_channels(&self) -> [usize; 10] {
        ENCODER_CHANNELS.map(|c| ((c as f64 * self.width_multiplier).round() as usize).max(1))
    }

    /// Decoder widths: the encoder sequence reversed.
    pub fn decoder_channels(&self) -> [usize; 10] {
        let mut d = self.encoder_channels();
        d.reverse();
        d
    }

    /// The full layer list, ending in a two-channel convolution and softmax.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let mut prev = Self::INPUT_CHANNELS;
        let conv_block = |layers: &mut Vec<LayerSpec>, prev: &mut usize, c: usize| {
            layers.push(LayerSpec::conv(*prev, c));
            layers.push(LayerSpec::same(LayerKind::BatchNorm, c));
            layers.push(LayerSpec::same(LayerKind::Relu, c));
            *prev = c;
        };
        for (i, c) in self.encoder_channels().into_iter().enumerate() {
            conv_block(&mut layers, &mut prev, c);
            if POOL_AFTER.contains(&i) {
                layers.push(LayerSpec::same(LayerKind::MaxPool2, c));
            }
        }
        // decoder blocks mirror the encoder's pooling blocks: 3, 3, 2, 2
        let dec = self.decoder_channels();
        let mut start = 0;
        for len in [3, 3, 2, 2] {
            layers.push(LayerSpec::same(LayerKind::Upsample2, prev));
            for &c in &dec[start..start + len] {
                conv_block(&mut layers, &mut prev, c);
            }
            start += len;
        }
        layers.push(LayerSpec::conv(prev, Self::OUTPUT_CHANNELS));
        layers.push(LayerSpec::same(LayerKind::Softmax, Self::OUTPUT_CHANNELS));
        layers
    }
}

/// Trained (or freshly initialized) weight-map network.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionModel<T = f32> {
    net: Network<T>,
}

impl<T: Real> FusionModel<T> {
    /// Deterministic initialization from `seed`.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut net = Network::new(cfg.layers(), cfg.width_multiplier)?;
        net.init_kaiming(seed);
        Ok(FusionModel { net })
    }

    pub fn from_network(net: Network<T>) -> Result<Self> {
        let cfg = ModelConfig {
            width_multiplier: net.width_multiplier(),
        };
        if net.layers() != cfg.layers().as_slice() {
            return Err(Error::Checkpoint("layer list is not the fusion architecture".into()));
        }
        Ok(FusionModel { net })
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            width_multiplier: self.net.width_multiplier(),
        }
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(&self.net, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_network(checkpoint::load(path)?)
    }

    /// Runs one training-mode pass over `input` so every batch-norm layer
    /// holds the batch statistics. Parameters are not changed.
    pub fn calibrate_batch_norm(&mut self, input: &Tensor<T>) -> Result<()> {
        self.net.forward_train(input).map(|_| ())
    }

    /// Per-pixel weights for the two exposures (inference mode). Inputs
    /// whose sides are not multiples of 16 are reflect-padded and the map is
    /// cropped back.
    pub fn predict_weights(&self, pair: &ExposurePair) -> Result<WeightMap> {
        let (h, w) = (pair.height(), pair.width());
        let input = pair_tensor::<T>(&[pair.clone()], padded_len(h), padded_len(w))?;
        let out = self.net.infer(&input)?;
        weight_map_from_output(&out, 0, h, w)
    }

    /// Fuses the color exposures with the predicted weights.
    pub fn fuse(&self, pair: &ExposurePair) -> Result<Image> {
        let wmap = self.predict_weights(pair)?;
        classical::fuse(&[pair.under().clone(), pair.over().clone()], &wmap)
    }
}

/// Smallest multiple of [`SIZE_MULTIPLE`] that is at least `len`.
pub fn padded_len(len: usize) -> usize {
    len.div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE
}

/// Mirror index into `0..n` without repeating the edge sample.
pub(crate) fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Stacks the grayscale exposures of each pair into an `N×2×H'×W'` tensor,
/// reflect-padding bottom and right edges up to `H'×W'`.
pub fn pair_tensor<T: Real>(pairs: &[ExposurePair], height: usize, width: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(pairs.len() * 2 * height * width);
    for pair in pairs {
        if pair.height() > height || pair.width() > width {
            return Err(Error::ShapeMismatch(format!(
                "pair {}x{} larger than tensor {height}x{width}",
                pair.height(),
                pair.width()
            )));
        }
        let gray = pair.to_grayscale();
        for img in [gray.under(), gray.over()] {
            for y in 0..height {
                let sy = reflect(y, img.height());
                for x in 0..width {
                    data.push(T::of(img.get(sy, reflect(x, img.width()), 0)));
                }
            }
        }
    }
    Tensor::from_vec(&[pairs.len(), 2, height, width], data)
}

/// Crops item `index` of a softmax output to `height × width` weight planes.
/// The weights are renormalized in f64 so that single-precision rounding
/// does not leak into the fusion.
pub fn weight_map_from_output<T: Real>(out: &Tensor<T>, index: usize, height: usize, width: usize) -> Result<WeightMap> {
    let (_, c, ph, pw) = out.dims4()?;
    let at = |ch: usize, y: usize, x: usize| out.data()[((index * c + ch) * ph + y) * pw + x].f64();
    let mut planes: Vec<Plane> = (0..c).map(|_| Plane::filled(height, width, 0.0)).collect();
    for y in 0..height {
        for x in 0..width {
            let total: f64 = (0..c).map(|ch| at(ch, y, x)).sum();
            for (ch, plane) in planes.iter_mut().enumerate() {
                plane.data[y * width + x] = at(ch, y, x) / total;
            }
        }
    }
    WeightMap::from_planes(&planes)
}
