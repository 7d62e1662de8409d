//! Patch-based unsupervised training of the weight-map network and the γ
//! comparison harness.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_shape, Error, Result};
use crate::gamma::GammaMap;
use crate::image::{extract_patches, ExposurePair, Image};
use crate::loss::{weighted_ssim_loss_with_gamma, LossConfig};
use crate::metrics::{mef_ssim_luma, SsimWindowSpec};
use crate::model::{pair_tensor, padded_len, FusionModel, ModelConfig};
use crate::nn::{map_items, network::Tape, AdamState, Network, Real, Tensor};
use crate::table::ScoreTable;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub patch_size: usize,
    /// Tiling stride; defaults to the patch size (non-overlapping).
    pub patch_stride: Option<usize>,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub epochs: u32,
    pub seed: u64,
    pub width_multiplier: f64,
    /// Sequential batch processing.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch_size: 250,
            patch_stride: None,
            batch_size: 64,
            lr0: 1e-4,
            lr_decay: 0.99,
            epochs: 1,
            seed: 0,
            width_multiplier: ModelConfig::default().width_multiplier,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.batch_size == 0 || self.patch_stride == Some(0) {
            return Err(Error::InvalidArgument("patch size, stride and batch size must be positive".into()));
        }
        if !(self.lr0 > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::InvalidArgument("learning rate and decay must be positive".into()));
        }
        ModelConfig {
            width_multiplier: self.width_multiplier,
        }
        .validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            width_multiplier: self.width_multiplier,
        }
    }
}

/// One training line: `epoch  mean_loss  lr  wall_ms`, tab-separated.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: u32,
    pub mean_loss: f64,
    pub lr: f64,
    pub wall_ms: u128,
}

impl EpochLog {
    pub fn to_line(&self) -> String {
        format!("{}\t{:.6}\t{:.6e}\t{}", self.epoch, self.mean_loss, self.lr, self.wall_ms)
    }
}

/// A training crop together with its (constant) γ map.
#[derive(Clone, Debug)]
pub struct TrainingPatch {
    pub pair: ExposurePair,
    pub gamma: GammaMap,
}

/// Cuts every pair into square patches and precomputes their γ maps.
pub fn make_patches(corpus: &[ExposurePair], tc: &TrainConfig, lc: &LossConfig) -> Result<Vec<TrainingPatch>> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty training corpus".into()));
    }
    if lc.window.window_size > tc.patch_size {
        return Err(Error::InvalidArgument(format!(
            "patch size {} is smaller than the {}-pixel loss window",
            tc.patch_size, lc.window.window_size
        )));
    }
    let stride = tc.patch_stride.unwrap_or(tc.patch_size);
    let mut patches = Vec::new();
    for pair in corpus {
        let grid = extract_patches(pair.height(), pair.width(), tc.patch_size, stride)?;
        for (r, c) in grid.anchors {
            let crop = pair.crop(r, c, tc.patch_size, tc.patch_size)?;
            let gamma = lc.gamma(&crop)?;
            patches.push(TrainingPatch { pair: crop, gamma });
        }
    }
    Ok(patches)
}

/// Per-item losses of a softmax output (`N×2×H'×W'`, padded) against
/// its patches, and the gradient of their mean w.r.t. that output.
pub fn loss_and_output_grad<T: Real>(
    out: &Tensor<T>,
    batch: &[&TrainingPatch],
    window: &SsimWindowSpec,
) -> Result<(Vec<f64>, Tensor<T>)> {
    let (n, c, ph, pw) = out.dims4()?;
    ensure_shape!(n == batch.len() && c == 2, "output {:?} does not match a batch of {}", out.shape(), batch.len());
    let inv_n = 1.0 / n as f64;
    let items = map_items(n, |b| -> Result<(f64, Vec<T>)> {
        let patch = batch[b];
        let (under, over) = (patch.pair.under(), patch.pair.over());
        let (h, w, ch) = (under.height(), under.width(), under.channels());
        let plane = ph * pw;
        let weight = |k: usize, y: usize, x: usize| out.data()[(b * 2 + k) * plane + y * pw + x].f64();
        let mut fused = Vec::with_capacity(h * w * ch);
        for y in 0..h {
            for x in 0..w {
                let (w0, w1) = (weight(0, y, x), weight(1, y, x));
                for k in 0..ch {
                    fused.push(w0 * under.get(y, x, k) + w1 * over.get(y, x, k));
                }
            }
        }
        let fused = Image::from_clamped(h, w, ch, fused)?;
        let value = weighted_ssim_loss_with_gamma(under, over, &fused, &patch.gamma, window)?;
        let mut grad = vec![T::zero(); 2 * plane];
        for y in 0..h {
            for x in 0..w {
                let base = (y * w + x) * ch;
                let (mut g0, mut g1) = (0.0, 0.0);
                for k in 0..ch {
                    let g = value.grad[base + k];
                    g0 += g * under.get(y, x, k);
                    g1 += g * over.get(y, x, k);
                }
                grad[y * pw + x] = T::of(g0 * inv_n);
                grad[plane + y * pw + x] = T::of(g1 * inv_n);
            }
        }
        Ok((value.loss, grad))
    });
    let mut losses = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(out.len());
    for item in items {
        let (l, g) = item?;
        losses.push(l);
        grad.extend(g);
    }
    Ok((losses, Tensor::from_vec(&[n, 2, ph, pw], grad)?))
}

/// Forward pass, loss and backward pass for one batch; parameter gradients
/// are left in the network's buffers. Returns the per-item losses.
pub fn batch_step<T: Real>(net: &mut Network<T>, batch: &[&TrainingPatch], lc: &LossConfig) -> Result<(Vec<f64>, Tensor<T>)> {
    let pairs: Vec<ExposurePair> = batch.iter().map(|p| p.pair.clone()).collect();
    let side = padded_len(pairs[0].height().max(pairs[0].width()));
    let input = pair_tensor::<T>(&pairs, side, side)?;
    net.zero_grad();
    let (out, tape): (Tensor<T>, Tape<T>) = net.forward_train(&input)?;
    let (losses, grad_out) = loss_and_output_grad(&out, batch, &lc.window)?;
    let grad_in = net.backward(tape, grad_out)?;
    Ok((losses, grad_in))
}

pub struct TrainOutcome<T> {
    pub model: FusionModel<T>,
    pub log: Vec<EpochLog>,
    /// Mean batch loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

impl<T> TrainOutcome<T> {
    pub fn final_mean_loss(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |l| l.mean_loss)
    }
}

/// Trains a fresh model. After each epoch `on_epoch` sees the log line and,
/// when `checkpoint` is given, the model is written there.
pub fn train<T: Real>(
    corpus: &[ExposurePair],
    tc: &TrainConfig,
    lc: &LossConfig,
    checkpoint: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    tc.validate()?;
    lc.validate()?;
    let patches = make_patches(corpus, tc, lc)?;
    let mut model = FusionModel::<T>::build(&tc.model_config(), tc.seed)?;
    let mut adam = AdamState::<T>::new(tc.lr0, tc.lr_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut log = Vec::new();
    let mut step_losses = Vec::new();
    let was_deterministic = crate::nn::is_deterministic();
    if tc.deterministic {
        crate::nn::set_deterministic(true);
    }
    let result = (|| -> Result<()> {
        for epoch in 0..tc.epochs {
            let start = Instant::now();
            order.shuffle(&mut rng);
            let lr = adam.lr();
            let mut epoch_total = 0.0;
            for chunk in order.chunks(tc.batch_size) {
                let batch: Vec<&TrainingPatch> = chunk.iter().map(|&i| &patches[i]).collect();
                let (losses, _) = batch_step(model.network_mut(), &batch, lc)?;
                let batch_sum: f64 = losses.iter().sum();
                if !batch_sum.is_finite() {
                    return Err(Error::InvalidArgument(format!("non-finite loss in epoch {epoch}")));
                }
                epoch_total += batch_sum;
                step_losses.push(batch_sum / losses.len() as f64);
                adam.step(&mut model.network_mut().trainable_mut())?;
            }
            adam.end_epoch();
            let entry = EpochLog {
                epoch,
                mean_loss: epoch_total / patches.len() as f64,
                lr,
                wall_ms: start.elapsed().as_millis(),
            };
            if let Some(path) = checkpoint {
                model.save(path)?;
            }
            on_epoch(&entry);
            log.push(entry);
        }
        Ok(())
    })();
    crate::nn::set_deterministic(was_deterministic);
    result?;
    Ok(TrainOutcome {
        model,
        log,
        step_losses,
    })
}

/// Trains one model per loss configuration and scores each on every pair of
/// `corpus` by MEF-SSIM of its learned fusion. Columns follow `configs`.
pub fn evaluate_gamma_table(
    corpus: &[(String, ExposurePair)],
    configs: &[LossConfig],
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&LossConfig, &EpochLog),
) -> Result<ScoreTable> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let pairs: Vec<ExposurePair> = corpus.iter().map(|(_, p)| p.clone()).collect();
    let metric = SsimWindowSpec::default();
    let mut columns = Vec::with_capacity(configs.len());
    for lc in configs {
        let outcome = train::<f32>(&pairs, tc, lc, None, |e| on_epoch(lc, e))?;
        let scores = pairs
            .iter()
            .map(|p| {
                let fused = outcome.model.fuse(p)?;
                Ok(mef_ssim_luma(&[p.under().clone(), p.over().clone()], &fused, &metric)?.global_score)
            })
            .collect::<Result<Vec<_>>>()?;
        columns.push(scores);
    }
    let mut table = ScoreTable::new(configs.iter().map(|c| c.gamma_kind.name().to_string()).collect());
    for (i, (name, _)) in corpus.iter().enumerate() {
        table.rows.push((name.clone(), columns.iter().map(|col| col[i]).collect()));
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn patches_and_gamma_maps() {
        let corpus = synthetic::corpus(1, 2, 40, 40).unwrap();
        let tc = TrainConfig {
            patch_size: 32,
            ..TrainConfig::default()
        };
        let patches = make_patches(&corpus, &tc, &LossConfig::default()).unwrap();
        assert_eq!(patches.len(), 8);
        assert_eq!(patches[0].gamma.len(), 16);
        let tiny = TrainConfig {
            patch_size: 5,
            ..TrainConfig::default()
        };
        assert!(make_patches(&corpus, &tiny, &LossConfig::default()).is_err());
        assert!(make_patches(&[], &tc, &LossConfig::default()).is_err());
    }

    #[test]
    fn log_line_format() {
        let e = EpochLog {
            epoch: 3,
            mean_loss: 0.25,
            lr: 1e-4,
            wall_ms: 12,
        };
        assert_eq!(e.to_line(), "3\t0.250000\t1.000000e-4\t12");
    }

    #[test]
    fn short_run_logs_decay() {
        let corpus = synthetic::corpus(5, 1, 32, 32).unwrap();
        let tc = TrainConfig {
            patch_size: 32,
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let out = train::<f32>(&corpus, &tc, &LossConfig::default(), None, |_| {}).unwrap();
        assert_eq!(out.log.len(), 3);
        assert!((out.log[2].lr - 1e-4 * 0.99f64.powi(2)).abs() < 1e-15);
        assert!(out.final_mean_loss().is_finite());
    }
}
