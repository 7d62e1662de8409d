//! A small tensor engine with hand-written forward and backward passes for
//! the layers the fusion network uses.

use std::fmt::Debug;
use std::iter::Sum;
use std::sync::atomic::{AtomicBool, Ordering};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rayon::prelude::*;

use crate::error::{ensure_shape, Error, Result};

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod network;

pub use adam::AdamState;
pub use layers::LayerKind;
pub use network::{LayerSpec, Mode, Network, Param};

/// Scalar type of the engine: `f32` at runtime, `f64` for gradient checks.
pub trait Real: Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Send + Sync + 'static {
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Disables (or re-enables) batch-level parallelism. Results are identical
/// either way because every reduction runs in batch order; sequential mode
/// exists for reproducible timing and debugging.
pub fn set_deterministic(deterministic: bool) {
    PARALLEL.store(!deterministic, Ordering::SeqCst);
}

pub fn is_deterministic() -> bool {
    !PARALLEL.load(Ordering::SeqCst)
}

/// Maps `f` over `0..n`, in parallel unless deterministic mode is on.
/// Output order always matches the index order.
pub(crate) fn map_items<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    if PARALLEL.load(Ordering::Relaxed) && n > 1 {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// An N-dimensional array with an optional same-shape gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
            grad: None,
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        ensure_shape!(
            data.len() == shape.iter().product::<usize>(),
            "{} values for shape {:?}",
            data.len(),
            shape
        );
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    /// `(batch, channels, height, width)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::ShapeMismatch(format!("expected NCHW, got {:?}", self.shape))),
        }
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// The gradient buffer, allocated (zeroed) on first use.
    pub fn grad_mut(&mut self) -> &mut [T] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Adds `delta` into the gradient buffer.
    pub fn accumulate_grad(&mut self, delta: &[T]) -> Result<()> {
        ensure_shape!(delta.len() == self.data.len(), "gradient length mismatch");
        for (g, d) in self.grad_mut().iter_mut().zip(delta) {
            *g += *d;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::of(v.f64())).collect()),
        }
    }
}
