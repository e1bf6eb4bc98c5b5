//! Dense multi-channel images with a separate coverage/mask channel.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major H×W×C grid of latent features (C = 4) or colors (C = 3), plus one
/// alpha value per pixel (coverage for mesh renders, Ω̂ for field renders).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl FeatureImage {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        FeatureImage {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
            alpha: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: &[f64], alpha: f64) -> Self {
        let mut img = FeatureImage::new(width, height, value.len());
        for px in img.data.chunks_mut(value.len()) {
            px.copy_from_slice(value);
        }
        img.alpha.fill(alpha);
        img
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::param(alloc::format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(FeatureImage {
            width,
            height,
            channels,
            data,
            alpha: vec![1.0; width * height],
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &FeatureImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Mirror image about the vertical axis (alpha included).
    pub fn flip_horizontal(&self) -> FeatureImage {
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                let src = self.width - 1 - c;
                out.pixel_mut(r, c).copy_from_slice(self.pixel(r, src));
                out.alpha[r * self.width + c] = self.alpha[r * self.width + src];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().chain(&self.alpha).all(|v| v.is_finite())
    }

    /// A single-channel image holding this image's alpha.
    pub fn alpha_image(&self) -> FeatureImage {
        FeatureImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.alpha.clone(),
            alpha: vec![1.0; self.pixel_count()],
        }
    }

    /// Average-pools by an integer factor in both directions.
    pub fn downsample(&self, factor: usize) -> Result<FeatureImage> {
        if factor == 0 || !self.width.is_multiple_of(factor) || !self.height.is_multiple_of(factor)
        {
            return Err(Error::param(alloc::format!(
                "{}x{} is not divisible by {factor}",
                self.width,
                self.height
            )));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let mut out = FeatureImage::new(w, h, self.channels);
        let norm = 1.0 / (factor * factor) as f64;
        for r in 0..self.height {
            for c in 0..self.width {
                let (or, oc) = (r / factor, c / factor);
                let src = self.pixel(r, c).to_vec();
                for (o, s) in out.pixel_mut(or, oc).iter_mut().zip(src) {
                    *o += s * norm;
                }
                out.alpha[or * w + oc] += self.alpha[r * self.width + c] * norm;
            }
        }
        Ok(out)
    }

    /// Nearest-neighbor upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> FeatureImage {
        let (w, h) = (self.width * factor, self.height * factor);
        let mut out = FeatureImage::new(w, h, self.channels);
        for r in 0..h {
            for c in 0..w {
                out.pixel_mut(r, c)
                    .copy_from_slice(self.pixel(r / factor, c / factor));
                out.alpha[r * w + c] = self.alpha[(r / factor) * self.width + c / factor];
            }
        }
        out
    }
}
