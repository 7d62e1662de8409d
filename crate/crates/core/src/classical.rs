//! Adaptive-weight exposure fusion: a well-exposedness weight with an
//! exposure-dependent center, an inverse histogram-density weight, their
//! normalized product, and the per-pixel weighted sum.

use crate::error::{ensure_shape, Error, Result};
use crate::image::{ExposurePair, Image};
use crate::plane::Plane;

/// Per-pixel, per-exposure fusion weights; every pixel's weights sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    height: usize,
    width: usize,
    n_exposures: usize,
    /// Exposure-major: `weights[n * H * W + pixel]`.
    weights: Vec<f64>,
}

impl WeightMap {
    /// Wraps already-normalized weight planes. Fails when dimensions differ,
    /// a weight is negative, or some pixel does not sum to one within 1e-6.
    pub fn from_planes(planes: &[Plane]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidArgument("weight map needs at least one exposure".into()))?;
        for p in planes {
            ensure_shape!(p.same_dims(first), "weight planes differ in size");
        }
        let n_px = first.height * first.width;
        for i in 0..n_px {
            let sum: f64 = planes.iter().map(|p| p.data[i]).sum();
            if planes.iter().any(|p| p.data[i] < 0.0) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "weights at pixel {i} are not a convex combination (sum {sum})"
                )));
            }
        }
        Ok(WeightMap {
            height: first.height,
            width: first.width,
            n_exposures: planes.len(),
            weights: planes.iter().flat_map(|p| p.data.iter().copied()).collect(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_exposures(&self) -> usize {
        self.n_exposures
    }

    #[inline]
    pub fn weight(&self, exposure: usize, pixel: usize) -> f64 {
        self.weights[exposure * self.height * self.width + pixel]
    }

    pub fn plane(&self, exposure: usize) -> Plane {
        let n = self.height * self.width;
        Plane {
            height: self.height,
            width: self.width,
            data: self.weights[exposure * n..(exposure + 1) * n].to_vec(),
        }
    }

    /// Weight planes as grayscale images (weights are already in `[0, 1]`).
    pub fn to_images(&self) -> Vec<Image> {
        (0..self.n_exposures).map(|n| self.plane(n).to_image(1.0)).collect()
    }
}

/// Tunables of the adaptive-weight method.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MefParams {
    pub sigma_e: f64,
    pub n_bins: usize,
    pub eps_g: f64,
    pub eps_n: f64,
}

impl Default for MefParams {
    fn default() -> Self {
        MefParams {
            sigma_e: 0.2,
            n_bins: 256,
            eps_g: 1e-3,
            eps_n: 1e-12,
        }
    }
}

/// Which weights enter the product; the single-weight variants exist for
/// ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WeightVariant {
    Combined,
    WellExposedness,
    HistogramGradient,
}

impl WeightVariant {
    pub const ALL: [WeightVariant; 3] = [
        WeightVariant::Combined,
        WeightVariant::WellExposedness,
        WeightVariant::HistogramGradient,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeightVariant::Combined => "combined",
            WeightVariant::WellExposedness => "wellexp",
            WeightVariant::HistogramGradient => "histgrad",
        }
    }
}

fn require_gray(img: &Image) -> Result<()> {
    if img.channels() != 1 {
        return Err(Error::InvalidArgument("expected a single-channel image".into()));
    }
    Ok(())
}

/// Gaussian preference around `clamp(1 - mean, 0.25, 0.75)`: a dark exposure
/// favors its brighter pixels and vice versa.
pub fn wellexposedness_weight(img: &Image, sigma_e: f64) -> Result<Plane> {
    require_gray(img)?;
    if sigma_e <= 0.0 {
        return Err(Error::InvalidArgument("sigma_e must be positive".into()));
    }
    let center = (1.0 - img.mean()).clamp(0.25, 0.75);
    let denom = 2.0 * sigma_e * sigma_e;
    let data = img
        .data()
        .iter()
        .map(|&s| (-(s - center).powi(2) / denom).exp())
        .collect();
    Plane::new(img.height(), img.width(), data)
}

#[inline]
pub(crate) fn bin_of(sample: f64, n_bins: usize) -> usize {
    ((sample * n_bins as f64) as usize).min(n_bins - 1)
}

/// Inverse density of the pixel's intensity bin (the slope of the
/// cumulative histogram there), rescaled so the largest weight is one.
pub fn histogram_gradient_weight(img: &Image, n_bins: usize, eps_g: f64) -> Result<Plane> {
    require_gray(img)?;
    if n_bins < 2 {
        return Err(Error::InvalidArgument("n_bins must be at least 2".into()));
    }
    if eps_g <= 0.0 {
        return Err(Error::InvalidArgument("eps_g must be positive".into()));
    }
    let mut hist = vec![0usize; n_bins];
    for &s in img.data() {
        hist[bin_of(s, n_bins)] += 1;
    }
    let total = img.data().len() as f64;
    let inverse: Vec<f64> = hist.iter().map(|&c| 1.0 / (c as f64 / total + eps_g)).collect();
    let mut data: Vec<f64> = img.data().iter().map(|&s| inverse[bin_of(s, n_bins)]).collect();
    let max = data.iter().copied().fold(0.0, f64::max);
    for w in &mut data {
        *w /= max;
    }
    Plane::new(img.height(), img.width(), data)
}

/// Multiplies each exposure's weight maps together and normalizes across
/// exposures: `(W_n + eps) / Σ_m (W_m + eps)`.
///
/// `per_exposure[n]` holds the factor maps of exposure `n`.
pub fn combine_weights(per_exposure: &[Vec<Plane>], eps_n: f64) -> Result<WeightMap> {
    let reference = per_exposure
        .iter()
        .flat_map(|maps| maps.first())
        .next()
        .ok_or_else(|| Error::InvalidArgument("no weight maps to combine".into()))?;
    let (h, w) = (reference.height, reference.width);
    for maps in per_exposure {
        if maps.is_empty() {
            return Err(Error::InvalidArgument("exposure without weight maps".into()));
        }
        for m in maps {
            ensure_shape!(
                m.height == h && m.width == w,
                "weight map {}x{} != {h}x{w}",
                m.height,
                m.width
            );
        }
    }
    let n_px = h * w;
    let mut products: Vec<Vec<f64>> = per_exposure
        .iter()
        .map(|maps| {
            (0..n_px)
                .map(|i| maps.iter().map(|m| m.data[i]).product::<f64>() + eps_n)
                .collect()
        })
        .collect();
    for i in 0..n_px {
        let sum: f64 = products.iter().map(|p| p[i]).sum();
        for p in &mut products {
            p[i] /= sum;
        }
    }
    Ok(WeightMap {
        height: h,
        width: w,
        n_exposures: per_exposure.len(),
        weights: products.into_iter().flatten().collect(),
    })
}

/// Per-pixel weighted sum of the exposures, the same weight applied to
/// every color channel. The result is clamped to `[0, 1]`.
pub fn fuse(images: &[Image], wmap: &WeightMap) -> Result<Image> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to fuse".into()))?;
    ensure_shape!(
        images.len() == wmap.n_exposures,
        "{} images but {} weight planes",
        images.len(),
        wmap.n_exposures
    );
    for img in images {
        ensure_shape!(img.same_dims(first), "exposures differ in size");
    }
    ensure_shape!(
        first.height() == wmap.height && first.width() == wmap.width,
        "weight map {}x{} != image {}x{}",
        wmap.height,
        wmap.width,
        first.height(),
        first.width()
    );
    let ch = first.channels();
    let mut out = vec![0.0; first.data().len()];
    for (n, img) in images.iter().enumerate() {
        for (px, (dst, src)) in out.chunks_exact_mut(ch).zip(img.data().chunks_exact(ch)).enumerate() {
            let w = wmap.weight(n, px);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    Image::from_clamped(first.height(), first.width(), ch, out)
}

/// Weight maps and fused result for any number of aligned exposures.
pub fn adaptive_mef_stack(
    images: &[Image],
    params: &MefParams,
    variant: WeightVariant,
) -> Result<(Image, WeightMap)> {
    let factors = images
        .iter()
        .map(|img| {
            let gray = img.to_grayscale();
            let mut maps = Vec::with_capacity(2);
            if variant != WeightVariant::HistogramGradient {
                maps.push(wellexposedness_weight(&gray, params.sigma_e)?);
            }
            if variant != WeightVariant::WellExposedness {
                maps.push(histogram_gradient_weight(&gray, params.n_bins, params.eps_g)?);
            }
            Ok(maps)
        })
        .collect::<Result<Vec<_>>>()?;
    let wmap = combine_weights(&factors, params.eps_n)?;
    let fused = fuse(images, &wmap)?;
    Ok((fused, wmap))
}

/// Combined-weight fusion of an exposure pair.
pub fn adaptive_mef(pair: &ExposurePair, params: &MefParams) -> Result<(Image, WeightMap)> {
    adaptive_mef_stack(
        &[pair.under().clone(), pair.over().clone()],
        params,
        WeightVariant::Combined,
    )
}
