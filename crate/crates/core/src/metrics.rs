//! Box-window SSIM and the MEF-SSIM score of a fused image against its
//! exposure stack.

use rayon::prelude::*;

use crate::error::{ensure_shape, Error, Result};
use crate::image::Image;
use crate::plane::Plane;

/// Window geometry and stabilization constants shared by SSIM, MEF-SSIM,
/// the per-window attribute maps and the training loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimWindowSpec {
    pub window_size: usize,
    pub stride: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimWindowSpec {
    fn default() -> Self {
        SsimWindowSpec {
            window_size: 7,
            stride: 1,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

impl SsimWindowSpec {
    /// Non-overlapping 7×7 windows, used by the training loss.
    pub fn loss_default() -> Self {
        SsimWindowSpec {
            stride: 7,
            ..Self::default()
        }
    }

    pub fn with_geometry(window_size: usize, stride: usize) -> Result<Self> {
        let spec = SsimWindowSpec {
            window_size,
            stride,
            ..Self::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 || self.window_size % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "window size must be odd and >= 3, got {}",
                self.window_size
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("window stride must be positive".into()));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::InvalidArgument("SSIM constants must be positive".into()));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.window_size * self.window_size
    }

    /// Window anchors over an `height × width` image: every multiple of the
    /// stride at which the window still fits.
    pub fn grid(&self, height: usize, width: usize) -> Result<WindowGrid> {
        self.validate()?;
        if self.window_size > height || self.window_size > width {
            return Err(Error::InvalidArgument(format!(
                "{0}x{0} window does not fit in {height}x{width}",
                self.window_size
            )));
        }
        let axis = |len: usize| (0..=len - self.window_size).step_by(self.stride).collect();
        Ok(WindowGrid {
            window_size: self.window_size,
            rows: axis(height),
            cols: axis(width),
            image_width: width,
        })
    }
}

/// The anchors of a window sweep; windows are indexed row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowGrid {
    pub window_size: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    image_width: usize,
}

impl WindowGrid {
    pub fn len(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn anchor(&self, index: usize) -> (usize, usize) {
        (self.rows[index / self.cols.len()], self.cols[index % self.cols.len()])
    }

    pub fn anchors(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .flat_map(move |&r| self.cols.iter().map(move |&c| (r, c)))
    }

    /// Flat pixel indices (into a single-channel `H × W` buffer) covered by
    /// window `index`, row-major.
    pub fn pixel_indices(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        let (r, c) = self.anchor(index);
        let k = self.window_size;
        let w = self.image_width;
        (r..r + k).flat_map(move |y| (c..c + k).map(move |x| y * w + x))
    }

    /// Gathers the window's samples from a single-channel buffer.
    pub fn gather(&self, data: &[f64], index: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.pixel_indices(index).map(|i| data[i]));
    }

    /// Lays per-window values out as a plane at window-grid resolution.
    pub fn to_plane(&self, values: Vec<f64>) -> Plane {
        Plane::new(self.rows.len(), self.cols.len(), values).expect("one value per window")
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population mean/variance/covariance of two equally sized windows.
pub(crate) struct PairStats {
    pub mu_a: f64,
    pub mu_b: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub cov: f64,
}

pub(crate) fn pair_stats(a: &[f64], b: &[f64]) -> PairStats {
    let mu_a = mean(a);
    let mu_b = mean(b);
    let n = a.len() as f64;
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - mu_a, y - mu_b);
        var_a += dx * dx;
        var_b += dy * dy;
        cov += dx * dy;
    }
    PairStats {
        mu_a,
        mu_b,
        var_a: var_a / n,
        var_b: var_b / n,
        cov: cov / n,
    }
}

/// SSIM of two same-size single-channel windows with uniform weighting.
pub fn ssim_window(a: &[f64], b: &[f64], spec: &SsimWindowSpec) -> Result<f64> {
    ensure_shape!(a.len() == b.len(), "SSIM windows differ: {} vs {}", a.len(), b.len());
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty SSIM window".into()));
    }
    let s = pair_stats(a, b);
    Ok(((2.0 * s.mu_a * s.mu_b + spec.c1) * (2.0 * s.cov + spec.c2))
        / ((s.mu_a * s.mu_a + s.mu_b * s.mu_b + spec.c1) * (s.var_a + s.var_b + spec.c2)))
}

/// Mean SSIM over all windows of two single-channel images.
pub fn ssim_image(a: &Image, b: &Image, spec: &SsimWindowSpec) -> Result<f64> {
    ensure_shape!(a.same_dims(b) && a.channels() == 1, "SSIM needs two same-size gray images");
    let grid = spec.grid(a.height(), a.width())?;
    let (mut wa, mut wb) = (Vec::new(), Vec::new());
    let mut total = 0.0;
    for i in 0..grid.len() {
        grid.gather(a.data(), i, &mut wa);
        grid.gather(b.data(), i, &mut wb);
        total += ssim_window(&wa, &wb, spec)?;
    }
    Ok(total / grid.len() as f64)
}

/// Exponent of the contrast weighting used to blend structures.
pub const MEF_SSIM_STRUCTURE_EXPONENT: f64 = 4.0;

/// Per-window MEF-SSIM scores and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct MefSsimReport {
    pub global_score: f64,
    pub grid: WindowGrid,
    /// One score per window of `grid`, row-major.
    pub scores: Vec<f64>,
}

impl MefSsimReport {
    pub fn per_patch_scores(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.grid.anchors().zip(self.scores.iter().copied())
    }

    /// Score map at window resolution, negatives clamped to black.
    pub fn heatmap(&self) -> Image {
        self.grid.to_plane(self.scores.clone()).to_image(1.0)
    }

    /// `anchor_row,anchor_col,score` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("anchor_row,anchor_col,score\n");
        for ((r, c), s) in self.per_patch_scores() {
            out.push_str(&format!("{r},{c},{s:.6}\n"));
        }
        out
    }
}

/// The structure-and-contrast reference patch for one window of the stack:
/// the largest input contrast times the normalized contrast-weighted mean
/// structure. Returned mean-free.
pub fn desired_patch(patches: &[Vec<f64>], exponent: f64) -> Vec<f64> {
    let n = patches[0].len();
    let mut max_contrast = 0.0f64;
    let mut blended = vec![0.0; n];
    for p in patches {
        let mu = mean(p);
        let contrast = p.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>().sqrt();
        max_contrast = max_contrast.max(contrast);
        if contrast > 0.0 {
            // w_k * s_k with w_k = c_k^p and s_k = (x_k - mu_k) / c_k
            let scale = contrast.powf(exponent) / contrast;
            for (b, v) in blended.iter_mut().zip(p) {
                *b += scale * (v - mu);
            }
        }
    }
    let norm = blended.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 && max_contrast > 0.0 {
        let k = max_contrast / norm;
        blended.iter_mut().for_each(|v| *v *= k);
    } else {
        blended.iter_mut().for_each(|v| *v = 0.0);
    }
    blended
}

/// Structure/contrast score of a fused window against a mean-free
/// reference patch.
pub(crate) fn mef_window_score(reference: &[f64], fused: &[f64], c2: f64) -> f64 {
    let n = fused.len() as f64;
    let mu_y = mean(fused);
    let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
    for (&x, &y) in reference.iter().zip(fused) {
        let dy = y - mu_y;
        var_x += x * x;
        var_y += dy * dy;
        cov += x * dy;
    }
    (2.0 * cov / n + c2) / (var_x / n + var_y / n + c2)
}

/// MEF-SSIM of `fused` against `stack` (all single-channel and the same size).
pub fn mef_ssim(stack: &[Image], fused: &Image, spec: &SsimWindowSpec) -> Result<MefSsimReport> {
    if stack.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "MEF-SSIM needs at least 2 exposures, got {}",
            stack.len()
        )));
    }
    for img in stack.iter().chain(std::iter::once(fused)) {
        ensure_shape!(
            img.channels() == 1 && img.height() == fused.height() && img.width() == fused.width(),
            "MEF-SSIM inputs must be same-size grayscale images"
        );
    }
    let grid = spec.grid(fused.height(), fused.width())?;
    let scores: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map_init(
            || (vec![Vec::new(); stack.len()], Vec::new()),
            |(patches, y), i| {
                for (p, img) in patches.iter_mut().zip(stack) {
                    grid.gather(img.data(), i, p);
                }
                grid.gather(fused.data(), i, y);
                let reference = desired_patch(patches, MEF_SSIM_STRUCTURE_EXPONENT);
                mef_window_score(&reference, y, spec.c2)
            },
        )
        .collect();
    let global_score = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(MefSsimReport {
        global_score,
        grid,
        scores,
    })
}

/// MEF-SSIM for color or gray inputs, scoring luma only.
pub fn mef_ssim_luma(stack: &[Image], fused: &Image, spec: &SsimWindowSpec) -> Result<MefSsimReport> {
    let gray: Vec<Image> = stack.iter().map(Image::to_grayscale).collect();
    mef_ssim(&gray, &fused.to_grayscale(), spec)
}
