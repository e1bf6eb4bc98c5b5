//! Painting progress (`.pnts`): texture, validity mask and the generated
//! images of completed views at full precision, so a resumed run continues
//! exactly where an interrupted one stopped.

use std::path::Path;

use compavatar_core::image::FeatureImage;
use compavatar_core::texture_paint::{PaintState, TextureMap};
use serde::{Deserialize, Serialize};

use super::container::{self, BlockSpec, BlockWriter};
use crate::error::{CliError, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"PNTS";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    /// Input hash of the paint run this progress belongs to.
    pub input_hash: String,
    pub completed: usize,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    /// (width, height) of each generated image, `None` for views not painted.
    pub generated: Vec<Option<(usize, usize)>>,
    pub losses: Vec<f64>,
    pub blocks: Vec<BlockSpec>,
}

pub fn encode_state(state: &PaintState, input_hash: &str) -> Vec<u8> {
    let t = &state.texture;
    let mut w = BlockWriter::default();
    w.f64s("texture.colors", vec![t.height, t.width, 3], &t.colors);
    let valid: Vec<u32> = t.valid.iter().map(|&v| v as u32).collect();
    w.u32s("texture.valid", vec![t.height, t.width], &valid);
    for (i, g) in state.generated.iter().enumerate() {
        if let Some(img) = g {
            w.f64s(
                &format!("generated{i}.data"),
                vec![img.height, img.width, img.channels],
                &img.data,
            );
            w.f64s(
                &format!("generated{i}.alpha"),
                vec![img.height, img.width],
                &img.alpha,
            );
        }
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        input_hash: input_hash.to_string(),
        completed: state.completed,
        views: state.generated.len(),
        width: t.width,
        height: t.height,
        generated: state
            .generated
            .iter()
            .map(|g| g.as_ref().map(|i| (i.width, i.height)))
            .collect(),
        losses: state.losses.clone(),
        blocks: w.specs.clone(),
    };
    w.finish(MAGIC, &manifest)
}

/// The state and the input hash it was saved under.
pub fn decode_state(path: &Path, bytes: &[u8]) -> Result<(PaintState, String)> {
    let (m, blocks) = container::decode::<Manifest>(path, bytes, MAGIC)?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(CliError::format(
            path,
            format!("schema_version {} is not supported", m.schema_version),
        ));
    }
    let get = |name: &str| container::find(path, &m.blocks, name);
    let (w, h) = (m.width, m.height);
    let colors = blocks.f64s(get("texture.colors")?, &[h, w, 3])?;
    let valid = blocks
        .u32s(get("texture.valid")?, &[h, w])?
        .into_iter()
        .map(|v| v != 0)
        .collect();
    let mut generated = Vec::with_capacity(m.views);
    for (i, dims) in m.generated.iter().enumerate() {
        generated.push(match dims {
            Some((gw, gh)) => {
                let data = blocks.f64s(get(&format!("generated{i}.data"))?, &[*gh, *gw, 3])?;
                let alpha = blocks.f64s(get(&format!("generated{i}.alpha"))?, &[*gh, *gw])?;
                let mut img = FeatureImage::from_data(*gw, *gh, 3, data)
                    .map_err(|e| CliError::format(path, e.to_string()))?;
                img.alpha = alpha;
                Some(img)
            }
            None => None,
        });
    }
    let state = PaintState {
        texture: TextureMap {
            width: w,
            height: h,
            colors,
            valid,
        },
        completed: m.completed,
        generated,
        losses: m.losses,
    };
    Ok((state, m.input_hash))
}

pub fn save_state(state: &PaintState, input_hash: &str, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &encode_state(state, input_hash))
}

pub fn load_state(path: &Path) -> Result<(PaintState, String)> {
    decode_state(path, &fsutil::read(path)?)
}
