//! Avatar bundle directory:
//!
//! ```text
//! rig.json             versioned manifest
//! model.bmdl           the body model the rig was fitted with
//! texture.png          16-bit texture, texture.json its sidecar
//! components/*.rfc     one checkpoint per attached component
//! ```

use std::path::Path;
use std::sync::Arc;

use compavatar_core::avatar_compose::{AvatarRig, ComponentAttachment, RigProvenance};
use compavatar_core::body_model::AvatarParams;
use compavatar_core::radiance_component::canonical::CanonicalFrame;
use serde::{Deserialize, Serialize};

use super::{bmdl, rfc, texture};
use crate::error::{CliError, Result};
use crate::fsutil;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "rig.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentEntry {
    pub id: String,
    pub blend_order: i32,
    pub enabled: bool,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigManifest {
    pub schema_version: u32,
    pub model: FileRef,
    pub params: AvatarParams,
    pub frame: CanonicalFrame,
    pub texture: String,
    pub provenance: RigProvenance,
    pub components: Vec<ComponentEntry>,
}

/// File stem for a component id: ASCII alphanumerics, `-` and `_` kept,
/// anything else replaced, prefixed by the compositing position.
fn component_file(position: usize, id: &str) -> String {
    let stem: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("components/{position:02}-{stem}.rfc")
}

pub fn save_avatar(rig: &AvatarRig, dir: &Path) -> Result<()> {
    let model_bytes = bmdl::encode_model(&rig.model);
    fsutil::write_atomic(&dir.join("model.bmdl"), &model_bytes)?;
    texture::save_texture(&rig.texture, &dir.join("texture.png"), None)?;
    let mut components = Vec::new();
    for (i, c) in rig.components().iter().enumerate() {
        let file = component_file(i, &c.attachment.id);
        rfc::save_component(&c.component, &dir.join(&file))?;
        components.push(ComponentEntry {
            id: c.attachment.id.clone(),
            blend_order: c.attachment.blend_order,
            enabled: c.attachment.enabled,
            file,
        });
    }
    let manifest = RigManifest {
        schema_version: SCHEMA_VERSION,
        model: FileRef {
            file: "model.bmdl".into(),
            sha256: fsutil::sha256_hex(&model_bytes),
        },
        params: rig.params.clone(),
        frame: rig.frame.clone(),
        texture: "texture.png".into(),
        provenance: rig.provenance.clone(),
        components,
    };
    fsutil::write_json(&dir.join(MANIFEST), &manifest)
}

fn check_version(path: &Path, raw: &serde_json::Value) -> Result<()> {
    let version = raw.get("schema_version").and_then(|v| v.as_u64());
    match version {
        Some(v) if v == SCHEMA_VERSION as u64 => Ok(()),
        Some(v) if v > SCHEMA_VERSION as u64 => Err(CliError::format(
            path,
            format!(
                "schema_version {v} is newer than this build reads ({SCHEMA_VERSION}); \
                 upgrade compavatar or re-export the bundle with a matching version"
            ),
        )),
        Some(v) => Err(CliError::format(
            path,
            format!("schema_version {v} predates {SCHEMA_VERSION}; migrate the bundle by re-running `compavatar compose`"),
        )),
        None => Err(CliError::format(path, "missing schema_version")),
    }
}

pub fn load_avatar(dir: &Path) -> Result<AvatarRig> {
    let path = dir.join(MANIFEST);
    let raw: serde_json::Value = fsutil::read_json(&path)?;
    check_version(&path, &raw)?;
    let manifest: RigManifest =
        serde_json::from_value(raw).map_err(|e| CliError::format(&path, e.to_string()))?;

    let missing: Vec<&str> = manifest
        .components
        .iter()
        .filter(|c| !dir.join(&c.file).is_file())
        .map(|c| c.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::format(
            &path,
            format!("missing component files for ids: {}", missing.join(", ")),
        ));
    }

    let model_path = dir.join(&manifest.model.file);
    let model_bytes = fsutil::read(&model_path)?;
    if fsutil::sha256_hex(&model_bytes) != manifest.model.sha256 {
        return Err(CliError::format(
            &model_path,
            "body model does not match the hash in rig.json",
        ));
    }
    let model = Arc::new(bmdl::decode_model(&model_path, &model_bytes)?);
    let (texture, _) = texture::load_texture(&dir.join(&manifest.texture))?;
    let mut rig =
        AvatarRig::new(model, &manifest.params.beta, texture)?.with_frame(manifest.frame)?;
    manifest.params.validate(&rig.model)?;
    rig.params = manifest.params;
    rig.provenance = manifest.provenance;
    for entry in manifest.components {
        let component = rfc::load_component(&dir.join(&entry.file))?;
        let attachment = ComponentAttachment {
            id: entry.id,
            blend_order: entry.blend_order,
            enabled: entry.enabled,
        };
        rig = rig.attach(attachment, Arc::new(component))?;
    }
    Ok(rig)
}
