//! Raster images with samples normalized to `[0, 1]`, plus PNG/PPM I/O.

use std::path::Path;

use image::{ColorType, DynamicImage, ImageFormat};

use crate::error::{ensure_shape, Error, Result};

/// Floor applied to the minimum intensity before taking the dynamic-range
/// log ratio: one 8-bit quantization step.
pub const DYNAMIC_RANGE_FLOOR: f64 = 1.0 / 255.0;

/// BT.601 luma coefficients.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// An `height × width × channels` raster stored row-major with interleaved
/// channels. Samples always lie in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from raw samples, validating length, channel count
    /// and the `[0, 1]` range.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("zero-dimension image".into()));
        }
        ensure_shape!(
            data.len() == height * width * channels,
            "data length {} != {height}x{width}x{channels}",
            data.len()
        );
        if let Some(bad) = data.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidArgument(format!("sample {bad} outside [0, 1]")));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    /// Like [`Image::new`] but clamps every sample into `[0, 1]` first.
    /// NaN samples become 0.
    pub fn from_clamped(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        for s in &mut data {
            *s = if s.is_nan() { 0.0 } else { s.clamp(0.0, 1.0) };
        }
        Self::new(height, width, channels, data)
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image by evaluating `f(row, col, channel)`; results are clamped.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::from_clamped(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, channel: usize) -> Image {
        assert!(channel < self.channels, "channel {channel} out of range");
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px[channel])
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Converts to single-channel luma. Grayscale input is returned unchanged.
    pub fn to_grayscale(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| {
                let g = LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2];
                // the weights sum to 1 only up to rounding
                g.clamp(0.0, 1.0)
            })
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Replicates a grayscale image into three identical channels.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&s| [s, s, s]).collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 3,
            data,
        }
    }

    /// Copies out the `height × width` window whose top-left corner is at
    /// `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Image> {
        ensure_shape!(
            row + height <= self.height && col + width <= self.width && height > 0 && width > 0,
            "crop {height}x{width}@({row},{col}) outside {}x{}",
            self.height,
            self.width
        );
        let mut data = Vec::with_capacity(height * width * self.channels);
        for y in row..row + height {
            let start = (y * self.width + col) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Ok(Image {
            height,
            width,
            channels: self.channels,
            data,
        })
    }

    /// Log10 ratio of the largest to the smallest sample, with the smallest
    /// clamped up to [`DYNAMIC_RANGE_FLOOR`].
    pub fn dynamic_range(&self) -> f64 {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
                (lo.min(s), hi.max(s))
            });
        let lo = lo.max(DYNAMIC_RANGE_FLOOR);
        let hi = hi.max(lo);
        (hi / lo).log10()
    }

    /// Quantizes to 8 bits: `round(s * 255)` with halves rounded away from zero.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&s| quantize(s)).collect()
    }

    pub fn from_bytes(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Image> {
        let data = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Image::new(height, width, channels, data)
    }

    /// Loads an 8-bit PNG or binary PNM file.
    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let reader = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?;
        match reader.format() {
            Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
            Some(other) => return Err(Error::UnsupportedFormat(format!("{other:?} ({})", path.display()))),
            None => return Err(Error::UnsupportedFormat(format!("unrecognized ({})", path.display()))),
        }
        let decoded = reader.decode().map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let (w, h) = (decoded.width() as usize, decoded.height() as usize);
        if w == 0 || h == 0 {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                message: "zero-dimension image".into(),
            });
        }
        match decoded.color() {
            ColorType::L8 => Image::from_bytes(h, w, 1, decoded.as_bytes()),
            ColorType::La8 => Image::from_bytes(h, w, 1, decoded.to_luma8().as_raw()),
            ColorType::Rgb8 => Image::from_bytes(h, w, 3, decoded.as_bytes()),
            ColorType::Rgba8 => Image::from_bytes(h, w, 3, decoded.to_rgb8().as_raw()),
            other => Err(Error::UnsupportedFormat(format!(
                "{other:?} samples in {}; only 8-bit gray/RGB is accepted",
                path.display()
            ))),
        }
    }

    /// Writes an 8-bit file; the format follows the extension (`.png`,
    /// `.ppm`, `.pgm`). Grayscale images saved as `.ppm` are expanded to RGB.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        let (img, format) = match ext.as_str() {
            "png" => (self.clone(), ImageFormat::Png),
            "ppm" => (self.to_rgb(), ImageFormat::Pnm),
            "pgm" => (self.to_grayscale(), ImageFormat::Pnm),
            _ => {
                return Err(Error::UnsupportedFormat(format!(
                    "cannot write {}: expected .png, .ppm or .pgm",
                    path.display()
                )))
            }
        };
        let color = if img.channels == 3 {
            ColorType::Rgb8
        } else {
            ColorType::L8
        };
        let bytes = img.to_bytes();
        let dynamic = match color {
            ColorType::Rgb8 => image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
                .map(DynamicImage::ImageRgb8),
            _ => image::GrayImage::from_raw(img.width as u32, img.height as u32, bytes)
                .map(DynamicImage::ImageLuma8),
        }
        .expect("buffer length matches dimensions");
        dynamic.save_with_format(path, format).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::io(path, std::io::Error::other(other.to_string())),
        })
    }
}

#[inline]
pub fn quantize(sample: f64) -> u8 {
    (sample * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Aligned under- and over-exposed captures of one static scene.
#[derive(Clone, Debug)]
pub struct ExposurePair {
    under: Image,
    over: Image,
}

impl ExposurePair {
    /// Pairs two exposures, swapping them if needed so the darker image is
    /// `under`.
    pub fn new(a: Image, b: Image) -> Result<Self> {
        ensure_shape!(
            a.same_dims(&b),
            "exposures differ: {}x{}x{} vs {}x{}x{}",
            a.height,
            a.width,
            a.channels,
            b.height,
            b.width,
            b.channels
        );
        if a.mean() <= b.mean() {
            Ok(ExposurePair { under: a, over: b })
        } else {
            Ok(ExposurePair { under: b, over: a })
        }
    }

    pub fn load(under: impl AsRef<Path>, over: impl AsRef<Path>) -> Result<Self> {
        Self::new(Image::load(under)?, Image::load(over)?)
    }

    pub fn under(&self) -> &Image {
        &self.under
    }

    pub fn over(&self) -> &Image {
        &self.over
    }

    pub fn height(&self) -> usize {
        self.under.height
    }

    pub fn width(&self) -> usize {
        self.under.width
    }

    pub fn to_grayscale(&self) -> ExposurePair {
        ExposurePair {
            under: self.under.to_grayscale(),
            over: self.over.to_grayscale(),
        }
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<ExposurePair> {
        Ok(ExposurePair {
            under: self.under.crop(row, col, height, width)?,
            over: self.over.crop(row, col, height, width)?,
        })
    }
}

/// Square patch anchors covering an image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_size: usize,
    /// `(row, col)` of each patch's top-left corner, row-major.
    pub anchors: Vec<(usize, usize)>,
}

/// Tiles the image with `patch_size` squares at multiples of `stride`; when
/// the last stride leaves a strip uncovered, one more patch flush with the
/// far edge is added.
pub fn extract_patches(height: usize, width: usize, patch_size: usize, stride: usize) -> Result<PatchGrid> {
    if stride == 0 || patch_size == 0 {
        return Err(Error::InvalidArgument("patch size and stride must be positive".into()));
    }
    if patch_size > height.min(width) {
        return Err(Error::InvalidArgument(format!(
            "patch size {patch_size} exceeds image {height}x{width}"
        )));
    }
    let rows = axis_offsets(height, patch_size, stride);
    let cols = axis_offsets(width, patch_size, stride);
    let anchors = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    Ok(PatchGrid { patch_size, anchors })
}

pub(crate) fn axis_offsets(len: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut offsets: Vec<usize> = (0..).map(|i| i * stride).take_while(|o| o + size <= len).collect();
    if let Some(&last) = offsets.last() {
        if last + size < len {
            offsets.push(len - size);
        }
    }
    offsets
}
