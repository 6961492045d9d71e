//! Materializes a manifest into memory: decoded rasters stacked with their
//! rendered heatmaps, ready for batched forward passes.

use crate::dataset::Manifest;
use crate::heatmap::{attach_heatmap, render_heatmap, GrayRaster, InputStack};
use crate::train::TrainError;

#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub id: String,
    pub input: InputStack<f32>,
    /// 0 = male, 1 = female.
    pub gender: u8,
    pub chronological_months: f64,
    pub bone_age_months: Option<f64>,
}

/// An in-memory dataset, sorted by record id.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub image_size: usize,
    pub samples: Vec<LoadedSample>,
}

impl LoadedDataset {
    /// Decodes every referenced PNG (must be 8-bit single-channel at the
    /// manifest's image size) and renders its keypoint heatmap with `sigma`.
    pub fn from_manifest(manifest: &Manifest, sigma: f64) -> Result<Self, TrainError> {
        manifest.validate()?;
        let mut samples = Vec::with_capacity(manifest.len());
        for record in &manifest.records {
            let path = manifest.image_path(record);
            let decoded = image::open(&path).map_err(|e| TrainError::Image {
                path: path.clone(),
                detail: e.to_string(),
            })?;
            let gray = match decoded {
                image::DynamicImage::ImageLuma8(img) => img,
                other => {
                    return Err(TrainError::Image {
                        path,
                        detail: format!(
                            "expected 8-bit single-channel PNG, got {:?}",
                            other.color()
                        ),
                    })
                }
            };
            if gray.width() as usize != manifest.image_size
                || gray.height() as usize != manifest.image_size
            {
                return Err(TrainError::Image {
                    path,
                    detail: format!(
                        "expected {0}x{0} pixels, got {1}x{2}",
                        manifest.image_size,
                        gray.width(),
                        gray.height()
                    ),
                });
            }
            let raster = GrayRaster::new(
                manifest.image_size,
                manifest.image_size,
                gray.into_raw(),
            );
            let heatmap = render_heatmap(
                &record.keypoints,
                manifest.image_size,
                manifest.image_size,
                sigma,
            )?;
            let input = attach_heatmap::<f32>(&raster, &heatmap)?;
            samples.push(LoadedSample {
                id: record.id.clone(),
                input,
                gender: record.gender,
                chronological_months: record.chronological_age_months,
                bone_age_months: record.bone_age_months,
            });
        }
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(LoadedDataset {
            image_size: manifest.image_size,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Errors with the first record lacking ground-truth bone age.
    pub fn require_ground_truth(&self) -> Result<(), TrainError> {
        for s in &self.samples {
            if s.bone_age_months.is_none() {
                return Err(TrainError::MissingGroundTruth { id: s.id.clone() });
            }
        }
        Ok(())
    }
}
