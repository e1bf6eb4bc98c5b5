//! Radiance component checkpoints (`.rfc`): JSON manifest with the network
//! architecture, channel mode, canonical-frame constants and provenance,
//! followed by float32 parameter blocks (one weight and one bias block per
//! layer, then the RGB adapter if present). Parameters are stored at single
//! precision, so a loaded component saves back to identical bytes.

use std::path::Path;

use compavatar_core::radiance_component::canonical::CanonicalFrame;
use compavatar_core::radiance_component::component::{Provenance, RadianceComponent};
use compavatar_core::radiance_component::field::{MlpConfig, NerfMlp, RgbAdapter};
use serde::{Deserialize, Serialize};

use super::container::{self, BlockSpec, BlockWriter};
use crate::error::{CliError, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"RFC\0";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub id: String,
    pub architecture: MlpConfig,
    pub has_adapter: bool,
    pub frame: CanonicalFrame,
    pub provenance: Provenance,
    pub blocks: Vec<BlockSpec>,
}

/// (fan_in, fan_out) of each layer in parameter order.
pub fn layer_shapes(config: &MlpConfig) -> Vec<(usize, usize)> {
    let mut shapes = Vec::new();
    let mut fan_in = config.input_width();
    for _ in 0..config.hidden_layers {
        shapes.push((fan_in, config.hidden_width));
        fan_in = config.hidden_width;
    }
    shapes.push((fan_in, 1 + config.mode.channels()));
    shapes
}

pub fn encode_component(component: &RadianceComponent) -> Vec<u8> {
    let field = &component.field;
    let mut w = BlockWriter::default();
    let mut offset = 0;
    for (l, (fan_in, fan_out)) in layer_shapes(&field.config).into_iter().enumerate() {
        w.f32s(
            &format!("layer{l}.weight"),
            vec![fan_out, fan_in],
            &field.params[offset..offset + fan_in * fan_out],
        );
        offset += fan_in * fan_out;
        w.f32s(
            &format!("layer{l}.bias"),
            vec![fan_out],
            &field.params[offset..offset + fan_out],
        );
        offset += fan_out;
    }
    if field.has_adapter {
        w.f32s(
            "adapter.weight",
            vec![3, 4],
            &field.params[offset..offset + 12],
        );
        w.f32s(
            "adapter.bias",
            vec![3],
            &field.params[offset + 12..offset + RgbAdapter::PARAMS],
        );
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        id: component.id.clone(),
        architecture: field.config.clone(),
        has_adapter: field.has_adapter,
        frame: component.frame.clone(),
        provenance: component.provenance.clone(),
        blocks: w.specs.clone(),
    };
    w.finish(MAGIC, &manifest)
}

pub fn decode_component(path: &Path, bytes: &[u8]) -> Result<RadianceComponent> {
    let (m, blocks) = container::decode::<Manifest>(path, bytes, MAGIC)?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(CliError::format(
            path,
            format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                m.schema_version
            ),
        ));
    }
    let get = |name: &str| container::find(path, &m.blocks, name);
    let mut params = Vec::new();
    for (l, (fan_in, fan_out)) in layer_shapes(&m.architecture).into_iter().enumerate() {
        params.extend(blocks.f32s(get(&format!("layer{l}.weight"))?, &[fan_out, fan_in])?);
        params.extend(blocks.f32s(get(&format!("layer{l}.bias"))?, &[fan_out])?);
    }
    if m.has_adapter {
        params.extend(blocks.f32s(get("adapter.weight")?, &[3, 4])?);
        params.extend(blocks.f32s(get("adapter.bias")?, &[3])?);
    }
    let field = NerfMlp::from_params(m.architecture, params, m.has_adapter)
        .map_err(|e| CliError::format(path, e.to_string()))?;
    Ok(RadianceComponent {
        id: m.id,
        field,
        frame: m.frame,
        provenance: m.provenance,
    })
}

pub fn save_component(component: &RadianceComponent, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &encode_component(component))
}

pub fn load_component(path: &Path) -> Result<RadianceComponent> {
    decode_component(path, &fsutil::read(path)?)
}
