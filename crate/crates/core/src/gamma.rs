//! Per-window perceptual attributes (variance, gradient, well-exposedness),
//! their pairwise hybrids, and the γ maps that balance the two exposures in
//! the training loss.

use std::fmt;
use std::str::FromStr;

use crate::error::{ensure_shape, Error, Result};
use crate::image::{ExposurePair, Image};
use crate::metrics::{mean, SsimWindowSpec, WindowGrid};
use crate::plane::Plane;

/// Lower bound `g(x) = max(x, floor)` applied to attributes before the ratio.
pub const DEFAULT_GAMMA_FLOOR: f64 = 1e-4;

/// The attribute (or hybrid of two) that drives γ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttributeKind {
    Variance,
    Gradient,
    WellExposedness,
    VarGrad,
    GradWell,
    VarWell,
}

impl AttributeKind {
    pub const ALL: [AttributeKind; 6] = [
        AttributeKind::Variance,
        AttributeKind::Gradient,
        AttributeKind::WellExposedness,
        AttributeKind::VarGrad,
        AttributeKind::GradWell,
        AttributeKind::VarWell,
    ];

    /// The five configurations compared in the γ ablation table.
    pub const TABLE: [AttributeKind; 5] = [
        AttributeKind::Variance,
        AttributeKind::Gradient,
        AttributeKind::WellExposedness,
        AttributeKind::GradWell,
        AttributeKind::VarGrad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttributeKind::Variance => "variance",
            AttributeKind::Gradient => "gradient",
            AttributeKind::WellExposedness => "wellexp",
            AttributeKind::VarGrad => "var-grad",
            AttributeKind::GradWell => "grad-well",
            AttributeKind::VarWell => "var-well",
        }
    }
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttributeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttributeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown gamma kind '{s}' (expected variance|gradient|wellexp|var-grad|grad-well|var-well)"
                ))
            })
    }
}

fn require_gray(img: &Image) -> Result<()> {
    if img.channels() != 1 {
        return Err(Error::InvalidArgument("attribute maps need a single-channel image".into()));
    }
    Ok(())
}

fn pool_mean(values: &[f64], grid: &WindowGrid) -> Vec<f64> {
    let mut buf = Vec::with_capacity(grid.window_size * grid.window_size);
    (0..grid.len())
        .map(|i| {
            grid.gather(values, i, &mut buf);
            mean(&buf)
        })
        .collect()
}

/// Population variance of each window.
pub fn local_variance(img: &Image, window: &SsimWindowSpec) -> Result<Plane> {
    require_gray(img)?;
    let grid = window.grid(img.height(), img.width())?;
    let mut buf = Vec::with_capacity(window.pixels());
    let values = (0..grid.len())
        .map(|i| {
            grid.gather(img.data(), i, &mut buf);
            let mu = mean(&buf);
            buf.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / buf.len() as f64
        })
        .collect();
    Ok(grid.to_plane(values))
}

/// Per-pixel gradient magnitude from central differences with replicated
/// borders.
pub fn gradient_magnitude(img: &Image) -> Result<Plane> {
    require_gray(img)?;
    let (h, w) = (img.height(), img.width());
    let at = |y: usize, x: usize| img.get(y, x, 0);
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let gx = (at(y, (x + 1).min(w - 1)) - at(y, x.saturating_sub(1))) / 2.0;
            let gy = (at((y + 1).min(h - 1), x) - at(y.saturating_sub(1), x)) / 2.0;
            data.push((gx * gx + gy * gy).sqrt());
        }
    }
    Plane::new(h, w, data)
}

/// Window mean of the gradient magnitude.
pub fn local_gradient(img: &Image, window: &SsimWindowSpec) -> Result<Plane> {
    let grid = window.grid(img.height(), img.width())?;
    let mag = gradient_magnitude(img)?;
    Ok(grid.to_plane(pool_mean(&mag.data, &grid)))
}

/// Window mean of `exp(-(I - 0.5)^2 / (2 sigma_e^2))`.
pub fn local_wellexposedness(img: &Image, window: &SsimWindowSpec, sigma_e: f64) -> Result<Plane> {
    require_gray(img)?;
    if sigma_e <= 0.0 {
        return Err(Error::InvalidArgument("sigma_e must be positive".into()));
    }
    let grid = window.grid(img.height(), img.width())?;
    let denom = 2.0 * sigma_e * sigma_e;
    let per_pixel: Vec<f64> = img
        .data()
        .iter()
        .map(|&s| (-(s - 0.5) * (s - 0.5) / denom).exp())
        .collect();
    Ok(grid.to_plane(pool_mean(&per_pixel, &grid)))
}

/// `a·b / sqrt(a² + b²)`, zero where both vanish.
pub fn hybrid_attribute(a: &Plane, b: &Plane) -> Result<Plane> {
    ensure_shape!(a.same_dims(b), "hybrid of maps on different window grids");
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let norm = (x * x + y * y).sqrt();
            if norm == 0.0 {
                0.0
            } else {
                x * y / norm
            }
        })
        .collect();
    Plane::new(a.height, a.width, data)
}

/// Attribute map of one exposure for the given kind.
pub fn attribute_map(img: &Image, kind: AttributeKind, window: &SsimWindowSpec, sigma_e: f64) -> Result<Plane> {
    let var = || local_variance(img, window);
    let grad = || local_gradient(img, window);
    let well = || local_wellexposedness(img, window, sigma_e);
    match kind {
        AttributeKind::Variance => var(),
        AttributeKind::Gradient => grad(),
        AttributeKind::WellExposedness => well(),
        AttributeKind::VarGrad => hybrid_attribute(&var()?, &grad()?),
        AttributeKind::GradWell => hybrid_attribute(&well()?, &grad()?),
        AttributeKind::VarWell => hybrid_attribute(&var()?, &well()?),
    }
}

/// Per-window share of the under-exposed image; the over-exposed share is
/// `1 - γ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaMap {
    pub height: usize,
    pub width: usize,
    under: Vec<f64>,
}

impl GammaMap {
    /// A map with the same γ in every window.
    pub fn uniform(height: usize, width: usize, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma {gamma} outside [0, 1]")));
        }
        Ok(GammaMap {
            height,
            width,
            under: vec![gamma; height * width],
        })
    }

    pub fn len(&self) -> usize {
        self.under.len()
    }

    pub fn is_empty(&self) -> bool {
        self.under.is_empty()
    }

    #[inline]
    pub fn under(&self, window: usize) -> f64 {
        self.under[window]
    }

    #[inline]
    pub fn over(&self, window: usize) -> f64 {
        1.0 - self.under[window]
    }

    pub fn under_values(&self) -> &[f64] {
        &self.under
    }

    pub fn under_plane(&self) -> Plane {
        Plane::new(self.height, self.width, self.under.clone()).expect("consistent dims")
    }
}

/// `γ = g(a_under) / (g(a_under) + g(a_over))` with `g(x) = max(x, floor)`.
pub fn gamma_from_attributes(attr_under: &Plane, attr_over: &Plane, floor: f64) -> Result<GammaMap> {
    ensure_shape!(attr_under.same_dims(attr_over), "gamma from maps on different window grids");
    if floor <= 0.0 {
        return Err(Error::InvalidArgument("gamma floor must be positive".into()));
    }
    let under = attr_under
        .data
        .iter()
        .zip(&attr_over.data)
        .map(|(&u, &o)| {
            let (gu, go) = (u.max(floor), o.max(floor));
            gu / (gu + go)
        })
        .collect();
    Ok(GammaMap {
        height: attr_under.height,
        width: attr_under.width,
        under,
    })
}

/// γ map of a (grayscale) exposure pair.
pub fn gamma_map(
    pair: &ExposurePair,
    kind: AttributeKind,
    window: &SsimWindowSpec,
    sigma_e: f64,
    floor: f64,
) -> Result<GammaMap> {
    let gray = pair.to_grayscale();
    let a = attribute_map(gray.under(), kind, window, sigma_e)?;
    let b = attribute_map(gray.over(), kind, window, sigma_e)?;
    gamma_from_attributes(&a, &b, floor)
}

/// Attribute maps of both exposures, scaled by their joint maximum, at
/// window-grid resolution.
pub fn render_attribute_maps(
    pair: &ExposurePair,
    kind: AttributeKind,
    window: &SsimWindowSpec,
    sigma_e: f64,
) -> Result<(Image, Image)> {
    let gray = pair.to_grayscale();
    let a = attribute_map(gray.under(), kind, window, sigma_e)?;
    let b = attribute_map(gray.over(), kind, window, sigma_e)?;
    // rounding residue of flat windows should render black, not white
    let scale = a.max().max(b.max());
    let scale = if scale > 1e-12 { scale } else { 0.0 };
    Ok((a.to_image(scale), b.to_image(scale)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn win(size: usize) -> SsimWindowSpec {
        SsimWindowSpec::with_geometry(size, size).unwrap()
    }

    fn random_gray(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, 1, |_, _, _| rng.gen()).unwrap()
    }

    #[test]
    fn variance_examples() {
        let c = local_variance(&Image::constant(6, 6, 1, 0.3).unwrap(), &win(3)).unwrap();
        assert!(c.data.iter().all(|&v| v == 0.0));

        let board = Image::from_fn(5, 5, 1, |y, x, _| ((y + x) % 2) as f64).unwrap();
        let spec = SsimWindowSpec::with_geometry(5, 5).unwrap();
        let v = local_variance(&board, &spec).unwrap();
        // 13 ones and 12 zeros in a 5x5 checkerboard
        let p = 13.0 / 25.0;
        assert!((v.data[0] - p * (1.0 - p)).abs() < 1e-12);

        // brute force over non-overlapping 3x3 windows
        let img = random_gray(4, 9, 9);
        let v = local_variance(&img, &win(3)).unwrap();
        for (i, &got) in v.data.iter().enumerate() {
            let (r, c) = ((i / 3) * 3, (i % 3) * 3);
            let vals: Vec<f64> = (r..r + 3).flat_map(|y| (c..c + 3).map(move |x| (y, x))).map(|(y, x)| img.get(y, x, 0)).collect();
            let m = vals.iter().sum::<f64>() / 9.0;
            let want = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 9.0;
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn two_point_variance_is_quarter() {
        let v: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let m = mean(&v);
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
        assert_eq!(var, 0.25);
    }

    #[test]
    fn gradient_examples() {
        let flat = local_gradient(&Image::constant(9, 9, 1, 0.4).unwrap(), &win(3)).unwrap();
        assert!(flat.data.iter().all(|&v| v == 0.0));

        let delta = 0.05;
        let ramp = Image::from_fn(12, 12, 1, |y, _, _| y as f64 * delta).unwrap();
        let spec = SsimWindowSpec::with_geometry(3, 1).unwrap();
        let g = local_gradient(&ramp, &spec).unwrap();
        // windows away from the top and bottom rows see only interior pixels
        for r in 1..g.height - 1 {
            for c in 0..g.width {
                assert!((g.get(r, c) - delta).abs() < 1e-12);
            }
        }

        let img = random_gray(8, 7, 7);
        let g = local_gradient(&img, &SsimWindowSpec::with_geometry(3, 2).unwrap()).unwrap();
        let px = |y: isize, x: isize| img.get(y.clamp(0, 6) as usize, x.clamp(0, 6) as usize, 0);
        for (i, &got) in g.data.iter().enumerate() {
            let (r, c) = ((i / g.width) as isize * 2, (i % g.width) as isize * 2);
            let mut total = 0.0;
            for y in r..r + 3 {
                for x in c..c + 3 {
                    let gx = (px(y, x + 1) - px(y, x - 1)) / 2.0;
                    let gy = (px(y + 1, x) - px(y - 1, x)) / 2.0;
                    total += (gx * gx + gy * gy).sqrt();
                }
            }
            assert!((got - total / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wellexposedness_examples() {
        let w = local_wellexposedness(&Image::constant(7, 7, 1, 0.5).unwrap(), &win(7), 0.2).unwrap();
        assert_eq!(w.data, vec![1.0]);
        let w = local_wellexposedness(&Image::constant(7, 7, 1, 0.0).unwrap(), &win(7), 0.2).unwrap();
        assert!((w.data[0] - (-3.125f64).exp()).abs() < 1e-12);
        assert!((w.data[0] - 0.0439).abs() < 1e-4);

        let img = random_gray(2, 6, 6);
        let w = local_wellexposedness(&img, &win(3), 0.2).unwrap();
        for (i, &got) in w.data.iter().enumerate() {
            let (r, c) = ((i / 2) * 3, (i % 2) * 3);
            let mut total = 0.0;
            for y in r..r + 3 {
                for x in c..c + 3 {
                    total += (-(img.get(y, x, 0) - 0.5).powi(2) / 0.08).exp();
                }
            }
            assert!((got - total / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hybrid_examples() {
        let p = |v: f64| Plane::filled(1, 1, v);
        let t = 0.37;
        assert!((hybrid_attribute(&p(t), &p(t)).unwrap().data[0] - t / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(hybrid_attribute(&p(0.0), &p(0.8)).unwrap().data[0], 0.0);
        assert_eq!(hybrid_attribute(&p(0.0), &p(0.0)).unwrap().data[0], 0.0);
        assert!((hybrid_attribute(&p(0.3), &p(0.4)).unwrap().data[0] - 0.24).abs() < 1e-15);
        assert!(hybrid_attribute(&p(0.3), &Plane::filled(1, 2, 0.4)).is_err());
    }

    #[test]
    fn gamma_examples() {
        let p = |v: f64| Plane::filled(1, 1, v);
        assert_eq!(gamma_from_attributes(&p(0.3), &p(0.3), 1e-4).unwrap().under(0), 0.5);
        assert_eq!(gamma_from_attributes(&p(0.0), &p(0.0), 1e-4).unwrap().under(0), 0.5);
        assert_eq!(gamma_from_attributes(&p(5e-5), &p(1e-6), 1e-4).unwrap().under(0), 0.5);
        assert!((gamma_from_attributes(&p(0.01), &p(0.04), 1e-4).unwrap().under(0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn rendered_maps() {
        let flat = Image::constant(14, 14, 3, 0.4).unwrap();
        let pair = ExposurePair::new(flat.clone(), flat).unwrap();
        let (a, b) = render_attribute_maps(&pair, AttributeKind::Variance, &win(7), 0.2).unwrap();
        assert!(a.data().iter().chain(b.data()).all(|&v| v == 0.0));

        // vertical edge at column 10
        let edge = Image::from_fn(21, 21, 1, |_, x, _| if x < 10 { 0.2 } else { 0.8 }).unwrap();
        let pair = ExposurePair::new(edge.clone(), edge).unwrap();
        let spec = SsimWindowSpec::with_geometry(3, 3).unwrap();
        for kind in AttributeKind::ALL {
            let (a, b) = render_attribute_maps(&pair, kind, &spec, 0.2).unwrap();
            assert_eq!(a, b);
        }
        let (a, _) = render_attribute_maps(&pair, AttributeKind::Gradient, &spec, 0.2).unwrap();
        // windows starting at column 9 contain the edge
        for r in 0..a.height() {
            assert_eq!(a.get(r, 3, 0), 1.0);
            assert_eq!(a.get(r, 0, 0), 0.0);
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in AttributeKind::ALL {
            assert_eq!(k.name().parse::<AttributeKind>().unwrap(), k);
        }
        assert!("nope".parse::<AttributeKind>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gamma_shares_sum_to_one(u in proptest::collection::vec(0.0..1.0f64, 16), o in proptest::collection::vec(0.0..1.0f64, 16)) {
                let g = gamma_from_attributes(&Plane::new(4, 4, u).unwrap(), &Plane::new(4, 4, o).unwrap(), 1e-4).unwrap();
                for i in 0..16 {
                    prop_assert_eq!(g.under(i) + g.over(i), 1.0);
                    prop_assert!((0.0..=1.0).contains(&g.under(i)));
                }
            }

            #[test]
            fn gamma_monotone_in_under(a in 1e-4..1.0f64, d in 0.0..1.0f64, b in 0.0..1.0f64) {
                let g = |x: f64| gamma_from_attributes(&Plane::filled(1, 1, x), &Plane::filled(1, 1, b), 1e-4).unwrap().under(0);
                prop_assert!(g(a + d) >= g(a));
            }

            #[test]
            fn hybrid_bounded_by_min(a in 0.0..10.0f64, b in 0.0..10.0f64) {
                let h = hybrid_attribute(&Plane::filled(1, 1, a), &Plane::filled(1, 1, b)).unwrap().data[0];
                prop_assert!(h >= 0.0 && h <= a.min(b) + 1e-15);
            }

            #[test]
            fn attributes_nonnegative(seed in 0u64..500) {
                let img = random_gray(seed, 14, 14);
                let spec = SsimWindowSpec::loss_default();
                for kind in AttributeKind::ALL {
                    let m = attribute_map(&img, kind, &spec, 0.2).unwrap();
                    prop_assert!(m.data.iter().all(|&v| v >= 0.0));
                    if kind == AttributeKind::WellExposedness {
                        prop_assert!(m.data.iter().all(|&v| v <= 1.0));
                    }
                }
            }
        }
    }
}
