//! A learned style component: its field, the canonical-frame constants it was
//! trained against, and where it came from.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::canonical::CanonicalFrame;
use super::field::{Field, NerfMlp, RgbAdapter};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Provenance {
    pub prompt: String,
    pub keyword: String,
    pub seed: u64,
    pub iterations: usize,
    pub refined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadianceComponent {
    pub id: String,
    pub field: NerfMlp,
    pub frame: CanonicalFrame,
    pub provenance: Provenance,
}

impl RadianceComponent {
    pub fn channels(&self) -> usize {
        self.field.channels()
    }
}

/// One latent feature and the color it should map to.
pub type CalibrationPair = ([f64; 4], [f64; 3]);

impl RgbAdapter {
    /// Minimum-norm least-squares affine map from latent features to colors.
    /// Latents confined to a lower-dimensional affine subspace are fitted
    /// exactly on that subspace; directions off it map to zero.
    pub fn fit(pairs: &[CalibrationPair]) -> Result<RgbAdapter> {
        if pairs.len() < 5 {
            return Err(Error::config(alloc::format!(
                "adapter fit needs at least 5 calibration pairs, got {}",
                pairs.len()
            )));
        }
        let design = DMatrix::from_fn(
            pairs.len(),
            5,
            |r, c| if c < 4 { pairs[r].0[c] } else { 1.0 },
        );
        let rhs = DMatrix::from_fn(pairs.len(), 3, |r, c| pairs[r].1[c]);
        let svd = design.svd(true, true);
        let max = svd.singular_values.max();
        let cutoff = 1e-10 * max;
        let rank = svd.singular_values.iter().filter(|s| **s > cutoff).count();
        if !(max > 0.0) || rank < 2 {
            return Err(Error::config("calibration latents are all identical"));
        }
        let x = svd
            .solve(&rhs, cutoff)
            .map_err(|e| Error::config(alloc::format!("adapter least squares failed: {e}")))?;
        let mut weight = [0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                weight[r * 4 + c] = x[(c, r)];
            }
        }
        Ok(RgbAdapter {
            weight,
            bias: [x[(4, 0)], x[(4, 1)], x[(4, 2)]],
        })
    }
}

/// Calibration pairs from corresponding latent and RGB images of equal size.
pub fn calibration_pairs(
    latent: &crate::image::FeatureImage,
    rgb: &crate::image::FeatureImage,
) -> Result<Vec<CalibrationPair>> {
    if latent.channels != 4
        || rgb.channels != 3
        || latent.width != rgb.width
        || latent.height != rgb.height
    {
        return Err(Error::config(
            "calibration images must be 4- and 3-channel of equal size",
        ));
    }
    Ok(latent
        .data
        .chunks(4)
        .zip(rgb.data.chunks(3))
        .map(|(z, c)| ([z[0], z[1], z[2], z[3]], [c[0], c[1], c[2]]))
        .collect())
}
