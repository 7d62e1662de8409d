//! Adam with bias correction and a per-epoch exponential learning-rate decay.

use crate::error::{ensure_shape, Result};

use super::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr0: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub decay: f64,
    pub epoch: u32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(lr0: f64, decay: f64) -> Self {
        AdamState {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr0,
            decay,
            epoch: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Learning rate after `epoch` completed epochs.
    pub fn lr_at_epoch(&self, epoch: u32) -> f64 {
        self.lr0 * self.decay.powi(epoch as i32)
    }

    pub fn lr(&self) -> f64 {
        self.lr_at_epoch(self.epoch)
    }

    pub fn end_epoch(&mut self) {
        self.epoch += 1;
    }

    /// One bias-corrected update of every parameter from its gradient
    /// buffer. Parameters without a gradient buffer are treated as having a
    /// zero gradient. The moment buffers are created on the first call and
    /// must keep matching shapes afterwards.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        ensure_shape!(
            self.m.len() == params.len(),
            "optimizer tracks {} tensors, got {}",
            self.m.len(),
            params.len()
        );
        for (i, p) in params.iter().enumerate() {
            ensure_shape!(self.m[i].len() == p.len(), "parameter {i} changed size");
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let correction1 = T::of(1.0 - self.beta1.powi(t));
        let correction2 = T::of(1.0 - self.beta2.powi(t));
        let lr = T::of(self.lr());
        let eps = T::of(self.eps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(grad) = p.grad().map(<[T]>::to_vec) else {
                for (mi, vi) in m.iter_mut().zip(v.iter_mut()) {
                    *mi *= b1;
                    *vi *= b2;
                }
                continue;
            };
            for (((w, g), mi), vi) in p.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                let m_hat = *mi / correction1;
                let v_hat = *vi / correction2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
