use crate::error::{ensure_shape, Result};
use crate::image::Image;

/// A single real-valued 2-D map (per-pixel weights, per-window attributes).
/// Unlike [`Image`] the values are not range-restricted.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        ensure_shape!(
            data.len() == height * width,
            "plane data length {} != {height}x{width}",
            data.len()
        );
        Ok(Plane { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Plane {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_image(img: &Image) -> Self {
        assert_eq!(img.channels(), 1, "plane from a multi-channel image");
        Plane {
            height: img.height(),
            width: img.width(),
            data: img.data().to_vec(),
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn same_dims(&self, other: &Plane) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Renders as a grayscale image after dividing by `scale`; values are
    /// clamped to `[0, 1]`. A non-positive scale yields black.
    pub fn to_image(&self, scale: f64) -> Image {
        let data = self
            .data
            .iter()
            .map(|&v| if scale > 0.0 { v / scale } else { 0.0 })
            .collect();
        Image::from_clamped(self.height, self.width, 1, data).expect("plane dims are valid")
    }
}
