//! Seeded synthetic exposure pairs for tests, smoke training and the γ
//! comparison harness.
//!
//! A textured color radiance map is captured twice: a short exposure that
//! crushes shadows, and a long exposure that clips highlights and carries
//! spatially varying veiling glare, which lifts regions toward mid-gray and
//! flattens their contrast.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::image::{ExposurePair, Image};

const UNDER_GAIN: f64 = 0.35;
const OVER_GAIN: f64 = 1.6;
const GLARE_LEVEL: f64 = 0.55;
const MAX_GLARE: f64 = 0.85;

struct Blob {
    cy: f64,
    cx: f64,
    radius: f64,
    amp: f64,
}

/// Generates one aligned color pair of size `height × width`.
pub fn exposure_pair(seed: u64, height: usize, width: usize) -> Result<ExposurePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);
    let blobs: Vec<Blob> = (0..6)
        .map(|_| Blob {
            cy: rng.gen_range(0.0..h),
            cx: rng.gen_range(0.0..w),
            radius: rng.gen_range(0.2..0.5) * h.max(w),
            amp: rng.gen_range(0.2..0.6),
        })
        .collect();
    let freq_y = rng.gen_range(0.3..0.9);
    let freq_x = rng.gen_range(0.3..0.9);
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let tint = [rng.gen_range(0.8..1.0), rng.gen_range(0.8..1.0), rng.gen_range(0.8..1.0)];
    let glare_c = (rng.gen_range(0.0..h), rng.gen_range(0.0..w));
    let glare_r = rng.gen_range(0.35..0.6) * h.max(w);

    let radiance = |y: f64, x: f64| {
        let base: f64 = 0.1
            + blobs
                .iter()
                .map(|b| b.amp * (-((y - b.cy).powi(2) + (x - b.cx).powi(2)) / (2.0 * b.radius * b.radius)).exp())
                .sum::<f64>();
        let texture = 1.0 + 0.45 * (freq_y * y + phase).sin() * (freq_x * x).cos();
        (base * texture).max(0.0)
    };
    let glare = |y: f64, x: f64| {
        let d2 = (y - glare_c.0).powi(2) + (x - glare_c.1).powi(2);
        MAX_GLARE * (-d2 / (2.0 * glare_r * glare_r)).exp()
    };

    let under = Image::from_fn(height, width, 3, |y, x, c| {
        UNDER_GAIN * radiance(y as f64, x as f64) * tint[c]
    })?;
    let over = Image::from_fn(height, width, 3, |y, x, c| {
        let clean = (OVER_GAIN * radiance(y as f64, x as f64) * tint[c]).min(1.0);
        let g = glare(y as f64, x as f64);
        (1.0 - g) * clean + g * GLARE_LEVEL
    })?;
    ExposurePair::new(under, over)
}

/// `count` pairs with consecutive seeds starting at `seed`.
pub fn corpus(seed: u64, count: usize, height: usize, width: usize) -> Result<Vec<ExposurePair>> {
    (0..count as u64).map(|i| exposure_pair(seed + i, height, width)).collect()
}
