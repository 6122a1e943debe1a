//! Vegetation cover from RGB images via the excess green index
//! (2G - R - B), thresholding, and per-pixel comparison against manual
//! annotation masks.

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

/// Default vegetation threshold on the index.
pub const DEFAULT_THRESHOLD: i16 = 20;

/// Index range: a pure-green pixel scores 510, pure magenta -510.
pub const EXGI_MIN: i16 = -510;
pub const EXGI_MAX: i16 = 510;

#[derive(Debug, Error)]
pub enum VegError {
    #[error("image is empty")]
    EmptyImage,
    #[error("mask dimensions {mask_w}x{mask_h} do not match image {img_w}x{img_h}")]
    DimensionMismatch {
        img_w: u32,
        img_h: u32,
        mask_w: u32,
        mask_h: u32,
    },
    #[error("threshold {0} outside [{EXGI_MIN}, {EXGI_MAX}]")]
    ThresholdRange(i32),
    #[error("no image/mask pairs given")]
    EmptyCalibrationSet,
    #[error("image decode ({path}): {source}")]
    Decode {
        path: String,
        source: image::ImageError,
    },
    #[error("image '{0}' has an alpha channel; 8-bit RGB input is required")]
    AlphaChannel(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    /// Interleaved R, G, B; length = 3 * width * height.
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, VegError> {
        if width == 0 || height == 0 {
            return Err(VegError::EmptyImage);
        }
        assert_eq!(pixels.len(), (3 * width * height) as usize);
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    pub fn pixel(&self, x: u32, y: u32) -> (u8, u8, u8) {
        let i = 3 * (y * self.width + x) as usize;
        (self.pixels[i], self.pixels[i + 1], self.pixels[i + 2])
    }

    pub fn total_pixels(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    /// Load a PNG/PPM image. Alpha channels are rejected; 16-bit input is
    /// downscaled to 8-bit (the index is defined on 8-bit semantics).
    pub fn load(path: &Path) -> Result<Self, VegError> {
        let dynimg = image::open(path).map_err(|e| VegError::Decode {
            path: path.display().to_string(),
            source: e,
        })?;
        use image::DynamicImage::*;
        match &dynimg {
            ImageRgba8(_) | ImageRgba16(_) | ImageLumaA8(_) | ImageLumaA16(_) => {
                return Err(VegError::AlphaChannel(path.display().to_string()));
            }
            _ => {}
        }
        let rgb = dynimg.to_rgb8();
        RgbImage::new(rgb.width(), rgb.height(), rgb.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), VegError> {
        let buf: image::RgbImage =
            image::ImageBuffer::from_raw(self.width, self.height, self.pixels.clone())
                .expect("buffer length matches dimensions");
        buf.save(path).map_err(|e| VegError::Decode {
            path: path.display().to_string(),
            source: e,
        })
    }
}

/// Binary annotation mask; true = vegetation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub vegetation: Vec<bool>,
}

impl Mask {
    /// Load from PNG/PGM: 0 = background, any nonzero = vegetation.
    pub fn load(path: &Path) -> Result<Self, VegError> {
        let dynimg = image::open(path).map_err(|e| VegError::Decode {
            path: path.display().to_string(),
            source: e,
        })?;
        let gray = dynimg.to_luma8();
        Ok(Mask {
            width: gray.width(),
            height: gray.height(),
            vegetation: gray.into_raw().into_iter().map(|v| v != 0).collect(),
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<(), VegError> {
        let raw: Vec<u8> = self
            .vegetation
            .iter()
            .map(|&v| if v { 255 } else { 0 })
            .collect();
        let buf: image::GrayImage = image::ImageBuffer::from_raw(self.width, self.height, raw)
            .expect("buffer length matches dimensions");
        buf.save(path).map_err(|e| VegError::Decode {
            path: path.display().to_string(),
            source: e,
        })
    }
}

/// Per-pixel excess green index, exact integer arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct ExgiMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<i16>,
}

/// Cover estimate of one image at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverReport {
    pub cover_fraction: f64,
    pub threshold: i16,
    pub vegetation_pixels: u64,
    pub total_pixels: u64,
}

/// Per-pixel classification of one estimate against a manual mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PixelClass {
    TruePositive,
    TrueNegative,
    FalsePositive,
    FalseNegative,
}

/// Pixel-level confusion of an index estimate against a manual mask.
#[derive(Debug, Clone, Serialize)]
pub struct ConfusionMap {
    #[serde(skip)]
    pub classes: Vec<PixelClass>,
    #[serde(skip)]
    pub width: u32,
    #[serde(skip)]
    pub height: u32,
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub estimated_cover: f64,
    pub manual_cover: f64,
    /// |estimated - manual| in percentage points.
    pub cover_error_points: f64,
}

/// Overlay legend colors, RGB: green TP, brown TN, orange FP, cyan FN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayColors {
    pub tp: [u8; 3],
    pub tn: [u8; 3],
    pub fp: [u8; 3],
    pub fn_: [u8; 3],
}

impl Default for OverlayColors {
    fn default() -> Self {
        OverlayColors {
            tp: [0x46, 0xa0, 0x35],
            tn: [0x8b, 0x5a, 0x2b],
            fp: [0xff, 0x8c, 0x00],
            fn_: [0x00, 0xbc, 0xd4],
        }
    }
}

/// Compute the excess green index of every pixel.
pub fn exgi(image: &RgbImage) -> ExgiMap {
    let values = image
        .pixels
        .chunks_exact(3)
        .map(|px| 2 * px[1] as i16 - (px[0] as i16 + px[2] as i16))
        .collect();
    ExgiMap {
        width: image.width,
        height: image.height,
        values,
    }
}

/// Fraction of pixels whose index strictly exceeds the threshold.
pub fn cover_fraction(image: &RgbImage, threshold: i16) -> CoverReport {
    let map = exgi(image);
    let vegetation_pixels = map.values.iter().filter(|&&v| v > threshold).count() as u64;
    let total_pixels = image.total_pixels();
    CoverReport {
        cover_fraction: vegetation_pixels as f64 / total_pixels as f64,
        threshold,
        vegetation_pixels,
        total_pixels,
    }
}

/// Classify each pixel of the thresholded index against a manual mask.
pub fn compare_with_mask(
    image: &RgbImage,
    threshold: i16,
    mask: &Mask,
) -> Result<ConfusionMap, VegError> {
    if mask.width != image.width || mask.height != image.height {
        return Err(VegError::DimensionMismatch {
            img_w: image.width,
            img_h: image.height,
            mask_w: mask.width,
            mask_h: mask.height,
        });
    }
    let map = exgi(image);
    let mut classes = Vec::with_capacity(map.values.len());
    let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (&v, &manual) in map.values.iter().zip(&mask.vegetation) {
        let estimated = v > threshold;
        let class = match (estimated, manual) {
            (true, true) => {
                tp += 1;
                PixelClass::TruePositive
            }
            (false, false) => {
                tn += 1;
                PixelClass::TrueNegative
            }
            (true, false) => {
                fp += 1;
                PixelClass::FalsePositive
            }
            (false, true) => {
                fn_ += 1;
                PixelClass::FalseNegative
            }
        };
        classes.push(class);
    }
    let total = image.total_pixels() as f64;
    let estimated_cover = (tp + fp) as f64 / total;
    let manual_cover = (tp + fn_) as f64 / total;
    Ok(ConfusionMap {
        classes,
        width: image.width,
        height: image.height,
        tp,
        tn,
        fp,
        fn_,
        estimated_cover,
        manual_cover,
        cover_error_points: 100.0 * (estimated_cover - manual_cover).abs(),
    })
}

/// Render a confusion map with the legend colors.
pub fn render_overlay(map: &ConfusionMap, colors: &OverlayColors) -> RgbImage {
    let mut pixels = Vec::with_capacity(3 * map.classes.len());
    for class in &map.classes {
        let c = match class {
            PixelClass::TruePositive => colors.tp,
            PixelClass::TrueNegative => colors.tn,
            PixelClass::FalsePositive => colors.fp,
            PixelClass::FalseNegative => colors.fn_,
        };
        pixels.extend_from_slice(&c);
    }
    RgbImage {
        width: map.width,
        height: map.height,
        pixels,
    }
}

/// Exhaustive threshold search minimizing the mean absolute cover error
/// over (image, mask) pairs. Ties break toward smaller |t|, then toward
/// the smaller t.
pub fn calibrate_threshold(pairs: &[(RgbImage, Mask)]) -> Result<i16, VegError> {
    if pairs.is_empty() {
        return Err(VegError::EmptyCalibrationSet);
    }
    // Histogram the index once per image; the vegetation count at
    // threshold t is then a suffix sum.
    let mut suffix_counts = Vec::with_capacity(pairs.len());
    let mut manual_covers = Vec::with_capacity(pairs.len());
    for (image, mask) in pairs {
        if mask.width != image.width || mask.height != image.height {
            return Err(VegError::DimensionMismatch {
                img_w: image.width,
                img_h: image.height,
                mask_w: mask.width,
                mask_h: mask.height,
            });
        }
        let map = exgi(image);
        let mut hist = vec![0u64; 1021];
        for &v in &map.values {
            hist[(v as i32 + 510) as usize] += 1;
        }
        // suffix[k] = pixels with index > k - 511, so count_above(t) is
        // suffix[t + 511].
        let mut suffix = vec![0u64; 1022];
        for k in (0..1021).rev() {
            suffix[k] = suffix[k + 1] + hist[k];
        }
        suffix_counts.push((suffix, image.total_pixels()));
        manual_covers.push(
            mask.vegetation.iter().filter(|&&v| v).count() as f64 / image.total_pixels() as f64,
        );
    }

    let mean_error = |t: i16| -> f64 {
        let mut acc = 0.0;
        for ((suffix, total), manual) in suffix_counts.iter().zip(&manual_covers) {
            let veg = suffix[(t as i32 + 511) as usize];
            let est = veg as f64 / *total as f64;
            acc += (est - manual).abs();
        }
        acc / pairs.len() as f64
    };

    let mut best_t = EXGI_MIN;
    let mut best_err = f64::INFINITY;
    for t in EXGI_MIN..=EXGI_MAX {
        let err = mean_error(t);
        let better = err < best_err
            || (err == best_err
                && (t.unsigned_abs() < best_t.unsigned_abs()
                    || (t.unsigned_abs() == best_t.unsigned_abs() && t < best_t)));
        if better {
            best_err = err;
            best_t = t;
        }
    }
    Ok(best_t)
}
