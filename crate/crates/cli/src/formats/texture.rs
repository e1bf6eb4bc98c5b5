//! Texture persistence: 16-bit RGB PNG plus a JSON sidecar carrying the
//! validity mask and the hash of the view schedule that painted it. Colors are
//! quantized to round(c · 65535) on save, so a loaded texture saves back to
//! identical bytes.

use std::path::{Path, PathBuf};

use base64::Engine as _;
use compavatar_core::image::FeatureImage;
use compavatar_core::texture_paint::TextureMap;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::fsutil;

pub const SCHEMA_VERSION: u32 = 1;
const B64: base64::engine::GeneralPurpose = base64::engine::general_purpose::STANDARD;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub schema_version: u32,
    pub width: usize,
    pub height: usize,
    /// SHA-256 of the PNG bytes the sidecar describes.
    pub png_sha256: String,
    /// Row-major validity bits, least significant bit first, base64.
    pub valid: String,
    #[serde(default)]
    pub schedule_hash: Option<String>,
}

pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

fn pack_bits(bits: &[bool]) -> String {
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
        bytes[i / 8] |= 1 << (i % 8);
    }
    B64.encode(bytes)
}

fn unpack_bits(path: &Path, text: &str, n: usize) -> Result<Vec<bool>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| CliError::format(path, format!("validity mask: {e}")))?;
    if bytes.len() != n.div_ceil(8) {
        return Err(CliError::format(
            path,
            format!("validity mask has {} bytes for {n} texels", bytes.len()),
        ));
    }
    Ok((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

fn encode_png(
    width: usize,
    height: usize,
    channels: usize,
    depth: png::BitDepth,
    data: &[u8],
) -> Vec<u8> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(match channels {
        1 => png::ColorType::Grayscale,
        _ => png::ColorType::Rgb,
    });
    enc.set_depth(depth);
    let mut writer = enc.write_header().expect("in-memory PNG header");
    writer.write_image_data(data).expect("in-memory PNG data");
    writer.finish().expect("in-memory PNG end");
    out
}

pub fn quantize(c: f64) -> u16 {
    (c.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// PNG bytes and sidecar for a texture.
pub fn encode_texture(texture: &TextureMap, schedule_hash: Option<&str>) -> (Vec<u8>, Sidecar) {
    let data: Vec<u8> = texture
        .colors
        .iter()
        .flat_map(|&c| quantize(c).to_be_bytes())
        .collect();
    let png = encode_png(
        texture.width,
        texture.height,
        3,
        png::BitDepth::Sixteen,
        &data,
    );
    let sidecar = Sidecar {
        schema_version: SCHEMA_VERSION,
        width: texture.width,
        height: texture.height,
        png_sha256: fsutil::sha256_hex(&png),
        valid: pack_bits(&texture.valid),
        schedule_hash: schedule_hash.map(String::from),
    };
    (png, sidecar)
}

pub fn decode_texture(path: &Path, png_bytes: &[u8], sidecar: &Sidecar) -> Result<TextureMap> {
    if sidecar.schema_version != SCHEMA_VERSION {
        return Err(CliError::format(
            path,
            format!(
                "sidecar schema_version {} is not supported",
                sidecar.schema_version
            ),
        ));
    }
    if fsutil::sha256_hex(png_bytes) != sidecar.png_sha256 {
        return Err(CliError::format(
            path,
            "PNG content does not match its sidecar hash",
        ));
    }
    let mut decoder = png::Decoder::new(png_bytes);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| CliError::format(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| CliError::format(path, e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Sixteen {
        return Err(CliError::format(path, "texture must be 16-bit RGB"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    if (w, h) != (sidecar.width, sidecar.height) {
        return Err(CliError::format(
            path,
            format!(
                "PNG is {w}x{h}, sidecar says {}x{}",
                sidecar.width, sidecar.height
            ),
        ));
    }
    let colors = buf[..w * h * 6]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
        .collect();
    let texture = TextureMap {
        width: w,
        height: h,
        colors,
        valid: unpack_bits(path, &sidecar.valid, w * h)?,
    };
    texture
        .validate()
        .map_err(|e| CliError::format(path, e.to_string()))?;
    Ok(texture)
}

pub fn save_texture(texture: &TextureMap, path: &Path, schedule_hash: Option<&str>) -> Result<()> {
    let (png, sidecar) = encode_texture(texture, schedule_hash);
    fsutil::write_atomic(path, &png)?;
    fsutil::write_json(&sidecar_path(path), &sidecar)
}

/// The texture and the schedule hash recorded with it.
pub fn load_texture(path: &Path) -> Result<(TextureMap, Option<String>)> {
    let sidecar: Sidecar = fsutil::read_json(&sidecar_path(path))?;
    let texture = decode_texture(path, &fsutil::read(path)?, &sidecar)?;
    Ok((texture, sidecar.schedule_hash))
}

/// 8-bit preview of the first three channels (or one) of an image.
pub fn encode_preview(image: &FeatureImage) -> Vec<u8> {
    let channels = if image.channels >= 3 { 3 } else { 1 };
    let data: Vec<u8> = image
        .data
        .chunks(image.channels)
        .flat_map(|px| px[..channels].to_vec())
        .map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    encode_png(
        image.width,
        image.height,
        channels,
        png::BitDepth::Eight,
        &data,
    )
}

pub fn save_preview(image: &FeatureImage, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &encode_preview(image))
}
