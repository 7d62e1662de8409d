//! Multi-exposure fusion toolkit.
//!
//! * [`classical`]: adaptive-weight fusion with hand-crafted weights.
//! * [`model`] and [`train`]: an encoder–decoder that predicts per-pixel
//!   fusion weights, trained without ground truth through a γ-weighted
//!   SSIM loss ([`loss`], [`gamma`]).
//! * [`metrics`]: SSIM and MEF-SSIM scoring.
//! * [`nn`]: the small tensor engine the model runs on.

pub mod classical;
pub mod config;
pub mod error;
pub mod gamma;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod plane;
pub mod synthetic;
pub mod table;
pub mod train;

pub use crate::classical::{adaptive_mef, fuse, MefParams, WeightMap, WeightVariant};
pub use crate::error::{Error, Result};
pub use crate::gamma::{AttributeKind, GammaMap};
pub use crate::image::{ExposurePair, Image, PatchGrid};
pub use crate::metrics::{mef_ssim, MefSsimReport, SsimWindowSpec};
pub use crate::plane::Plane;
