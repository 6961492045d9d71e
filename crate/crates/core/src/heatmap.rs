//! Attention heatmap rasterized from anatomical RoI keypoints.
//!
//! Each keypoint contributes a Gaussian peak `exp(-||p - k||^2 / (2 sigma^2))`
//! and pixels take the maximum over keypoints, so the value at a keypoint
//! center is exactly 1 and duplicate keypoints are idempotent.

use std::path::Path;

use thiserror::Error;

use crate::tensor::Element;

#[derive(Debug, Error)]
pub enum HeatmapError {
    #[error("keypoint {index} at ({x}, {y}) outside {width}x{height} raster")]
    OutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("dimension mismatch: image {image_w}x{image_h} vs heatmap {map_w}x{map_h}")]
    DimensionMismatch {
        image_w: usize,
        image_h: usize,
        map_w: usize,
        map_h: usize,
    },
    #[error("failed to write {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: image::ImageError,
    },
}

/// Single-channel attention raster with values in [0, 1], pixel centers at
/// integer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayRaster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayRaster {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width * height);
        GrayRaster {
            width,
            height,
            pixels,
        }
    }
}

/// Two-channel network input: channel 0 is the image normalized to [0, 1],
/// channel 1 the heatmap. CHW layout, no resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct InputStack<T> {
    pub width: usize,
    pub height: usize,
    /// `2 * height * width` values, channel-major.
    pub data: Vec<T>,
}

impl<T: Element> InputStack<T> {
    pub fn convert<U: Element>(&self) -> InputStack<U> {
        InputStack {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| U::of_f64(v.as_f64())).collect(),
        }
    }
}

/// H(p) = max over keypoints k of exp(-||p - k||^2 / (2 sigma^2)).
pub fn render_heatmap(
    keypoints: &[[f64; 2]],
    width: usize,
    height: usize,
    sigma: f64,
) -> Result<Heatmap, HeatmapError> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(HeatmapError::NonPositiveSigma(sigma));
    }
    for (index, kp) in keypoints.iter().enumerate() {
        let (x, y) = (kp[0], kp[1]);
        if !(x.is_finite() && y.is_finite())
            || x < 0.0
            || y < 0.0
            || x >= width as f64
            || y >= height as f64
        {
            return Err(HeatmapError::OutOfBounds {
                index,
                x,
                y,
                width,
                height,
            });
        }
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut values = vec![0.0f64; width * height];
    for kp in keypoints {
        let (kx, ky) = (kp[0], kp[1]);
        for y in 0..height {
            let dy = y as f64 - ky;
            let row = &mut values[y * width..(y + 1) * width];
            for (x, v) in row.iter_mut().enumerate() {
                let dx = x as f64 - kx;
                let g = (-(dx * dx + dy * dy) * inv).exp();
                if g > *v {
                    *v = g;
                }
            }
        }
    }
    Ok(Heatmap {
        width,
        height,
        values,
    })
}

/// Stacks an image with its heatmap into the two-channel network input.
pub fn attach_heatmap<T: Element>(
    image: &GrayRaster,
    heatmap: &Heatmap,
) -> Result<InputStack<T>, HeatmapError> {
    if image.width != heatmap.width || image.height != heatmap.height {
        return Err(HeatmapError::DimensionMismatch {
            image_w: image.width,
            image_h: image.height,
            map_w: heatmap.width,
            map_h: heatmap.height,
        });
    }
    let plane = image.width * image.height;
    let mut data = Vec::with_capacity(2 * plane);
    data.extend(
        image
            .pixels
            .iter()
            .map(|&p| T::of_f64(f64::from(p) / 255.0)),
    );
    data.extend(heatmap.values.iter().map(|&v| T::of_f64(v)));
    Ok(InputStack {
        width: image.width,
        height: image.height,
        data,
    })
}

/// Debug export: value * 255, rounded half-up, as an 8-bit PNG.
pub fn export_heatmap_png(heatmap: &Heatmap, path: &Path) -> Result<(), HeatmapError> {
    let pixels: Vec<u8> = heatmap
        .values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(heatmap.width as u32, heatmap.height as u32, pixels)
        .expect("buffer length matches dimensions");
    img.save(path).map_err(|source| HeatmapError::Io {
        path: path.to_path_buf(),
        source,
    })
}
