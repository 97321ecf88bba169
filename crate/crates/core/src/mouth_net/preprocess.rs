use image::imageops::{self, FilterType};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::network::FeatureMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeFilter {
    Nearest,
    Bilinear,
}

impl ResizeFilter {
    fn filter(self) -> FilterType {
        match self {
            ResizeFilter::Nearest => FilterType::Nearest,
            ResizeFilter::Bilinear => FilterType::Triangle,
        }
    }
}

/// How a crop becomes a network input. Stored in every model artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocessing {
    pub input_width: u32,
    pub input_height: u32,
    pub resize: ResizeFilter,
    /// Per-channel mean subtracted after scaling to [0, 1].
    pub mean: [f32; 3],
    pub std: [f32; 3],
    /// Single-channel inputs are replicated to three channels.
    pub grayscale: String,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Self {
            input_width: 64,
            input_height: 64,
            resize: ResizeFilter::Bilinear,
            mean: [0.5; 3],
            std: [0.5; 3],
            grayscale: "replicate_to_rgb".into(),
        }
    }
}

impl Preprocessing {
    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.input_height == 0 {
            return Err(Error::Config("input size must be positive".into()));
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        Ok(())
    }

    pub fn resize(&self, crop: &RgbImage) -> Result<RgbImage> {
        if crop.width() == 0 || crop.height() == 0 {
            return Err(Error::InvalidInput("zero-area crop".into()));
        }
        if crop.dimensions() == (self.input_width, self.input_height) {
            return Ok(crop.clone());
        }
        Ok(imageops::resize(crop, self.input_width, self.input_height, self.resize.filter()))
    }

    /// Normalize an image that already has the input size.
    pub fn to_tensor(&self, image: &RgbImage) -> FeatureMap {
        let (w, h) = image.dimensions();
        let plane = (w * h) as usize;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in image.pixels().enumerate() {
            for c in 0..3 {
                data[c * plane + i] = (px[c] as f32 / 255.0 - self.mean[c]) / self.std[c];
            }
        }
        FeatureMap::new(3, h as usize, w as usize, data)
    }

    pub fn apply(&self, crop: &RgbImage) -> Result<FeatureMap> {
        Ok(self.to_tensor(&self.resize(crop)?))
    }
}
