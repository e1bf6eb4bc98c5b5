//! Radiance fields: the trait the renderer consumes, a few analytic fields,
//! and the trainable MLP with positional encoding.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus, Vec3};

/// Point + direction → (σ ≥ 0, feature). `color` has `channels()` entries.
pub trait Field {
    fn channels(&self) -> usize;
    fn query(&self, x: &Vec3, direction: &Vec3, color: &mut [f64]) -> f64;
}

/// A field with a flat parameter vector and a per-sample backward pass.
pub trait TrainableField: Field {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Adds ∂L/∂Φ at one sample to `grad`, given ∂L/∂σ and ∂L/∂c there.
    fn backward(&self, x: &Vec3, direction: &Vec3, d_sigma: f64, d_color: &[f64], grad: &mut [f64]);
}

/// σ and c independent of position.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantField {
    pub sigma: f64,
    pub color: Vec<f64>,
}

impl Field for ConstantField {
    fn channels(&self) -> usize {
        self.color.len()
    }
    fn query(&self, _x: &Vec3, _d: &Vec3, color: &mut [f64]) -> f64 {
        color.copy_from_slice(&self.color);
        self.sigma
    }
}

/// Constant σ and c inside a ball, empty outside.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereField {
    pub center: Vec3,
    pub radius: f64,
    pub sigma: f64,
    pub color: Vec<f64>,
}

impl Field for SphereField {
    fn channels(&self) -> usize {
        self.color.len()
    }
    fn query(&self, x: &Vec3, _d: &Vec3, color: &mut [f64]) -> f64 {
        if (x - self.center).norm() <= self.radius {
            color.copy_from_slice(&self.color);
            self.sigma
        } else {
            color.fill(0.0);
            0.0
        }
    }
}

/// Spherical shell between two radii, cut to the half-space y ≥ `min_y`:
/// a cap of hair above the scalp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellField {
    pub center: Vec3,
    pub inner: f64,
    pub outer: f64,
    pub min_y: f64,
    pub sigma: f64,
    pub color: Vec<f64>,
}

impl ShellField {
    pub fn contains(&self, x: &Vec3) -> bool {
        let r = (x - self.center).norm();
        r >= self.inner && r <= self.outer && x.y >= self.min_y
    }
}

impl Field for ShellField {
    fn channels(&self) -> usize {
        self.color.len()
    }
    fn query(&self, x: &Vec3, _d: &Vec3, color: &mut [f64]) -> f64 {
        if self.contains(x) {
            color.copy_from_slice(&self.color);
            self.sigma
        } else {
            color.fill(0.0);
            0.0
        }
    }
}

/// σ ≡ 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmptyField {
    pub channels: usize,
}

impl Field for EmptyField {
    fn channels(&self) -> usize {
        self.channels
    }
    fn query(&self, _x: &Vec3, _d: &Vec3, color: &mut [f64]) -> f64 {
        color.fill(0.0);
        0.0
    }
}

/// Channel mode of a field's feature output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// Four unbounded latent features.
    Latent,
    /// Three colors squashed by a sigmoid.
    Rgb,
}

impl ChannelMode {
    pub fn channels(&self) -> usize {
        match self {
            ChannelMode::Latent => 4,
            ChannelMode::Rgb => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub position_bands: usize,
    pub direction_bands: usize,
    pub mode: ChannelMode,
    /// Added to the raw density output before the softplus.
    pub density_shift: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_width: 64,
            hidden_layers: 3,
            position_bands: 10,
            direction_bands: 4,
            mode: ChannelMode::Latent,
            density_shift: -3.0,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn input_width(&self) -> usize {
        3 * (1 + 2 * self.position_bands) + 2 * (1 + 2 * self.direction_bands)
    }

    fn raw_channels(&self) -> usize {
        self.mode.channels()
    }

    fn layer_sizes(&self) -> Vec<(usize, usize)> {
        let mut sizes = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_width();
        for _ in 0..self.hidden_layers {
            sizes.push((fan_in, self.hidden_width));
            fan_in = self.hidden_width;
        }
        sizes.push((fan_in, 1 + self.raw_channels()));
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.hidden_layers == 0 {
            return Err(Error::config(
                "MLP needs at least one hidden layer of positive width",
            ));
        }
        Ok(())
    }
}

/// Affine 4 → 3 map from latent features to colors: rgb = W·z + b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgbAdapter {
    /// Row-major 3×4.
    pub weight: [f64; 12],
    pub bias: [f64; 3],
}

impl RgbAdapter {
    pub const PARAMS: usize = 15;

    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        for r in 0..3 {
            out[r] = self.bias[r] + (0..4).map(|c| self.weight[r * 4 + c] * z[c]).sum::<f64>();
        }
    }

    fn to_params(&self) -> [f64; 15] {
        let mut p = [0.0; 15];
        p[..12].copy_from_slice(&self.weight);
        p[12..].copy_from_slice(&self.bias);
        p
    }

    fn from_params(p: &[f64]) -> Self {
        let mut weight = [0.0; 12];
        weight.copy_from_slice(&p[..12]);
        RgbAdapter {
            weight,
            bias: [p[12], p[13], p[14]],
        }
    }
}

/// Positional encoding [v, sin(2^k π v), cos(2^k π v)]_{k < bands} per coordinate.
pub fn encode(values: &[f64], bands: usize, out: &mut Vec<f64>) {
    for &v in values {
        out.push(v);
        let mut f = PI;
        for _ in 0..bands {
            out.push((f * v).sin());
            out.push((f * v).cos());
            f *= 2.0;
        }
    }
}

/// Direction as (polar, azimuth) rescaled to [−1, 1]².
pub fn direction_angles(d: &Vec3) -> [f64; 2] {
    let n = d.norm();
    if n == 0.0 {
        return [0.0, 0.0];
    }
    let polar = (d.y / n).clamp(-1.0, 1.0).acos();
    [2.0 * polar / PI - 1.0, d.x.atan2(d.z) / PI]
}

/// Fully connected ReLU network on encoded (x, p) producing (σ, c). In latent
/// mode with an adapter attached, c is the adapter applied to the latent head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerfMlp {
    pub config: MlpConfig,
    pub params: Vec<f64>,
    pub has_adapter: bool,
}

struct Trace {
    /// Post-activation values of the input and each hidden layer.
    activations: Vec<Vec<f64>>,
    /// Raw outputs of the last layer.
    raw: Vec<f64>,
}

impl NerfMlp {
    pub fn new(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::new();
        let sizes = config.layer_sizes();
        let last = sizes.len() - 1;
        for (l, &(fan_in, fan_out)) in sizes.iter().enumerate() {
            let std = if l == last {
                0.5 * (1.0 / fan_in as f64).sqrt()
            } else {
                (2.0 / fan_in as f64).sqrt()
            };
            let normal = Normal::new(0.0, std).expect("finite std");
            for _ in 0..fan_in * fan_out {
                params.push(normal.sample(&mut rng));
            }
            params.extend(core::iter::repeat_n(0.0, fan_out));
        }
        Ok(NerfMlp {
            config,
            params,
            has_adapter: false,
        })
    }

    /// Rebuilds from stored parameters, checking their count.
    pub fn from_params(config: MlpConfig, params: Vec<f64>, has_adapter: bool) -> Result<Self> {
        config.validate()?;
        let expect =
            Self::base_param_count(&config) + if has_adapter { RgbAdapter::PARAMS } else { 0 };
        if params.len() != expect {
            return Err(Error::config(alloc::format!(
                "field expects {expect} parameters, got {}",
                params.len()
            )));
        }
        if has_adapter && config.mode != ChannelMode::Latent {
            return Err(Error::config("an RGB adapter only follows a latent head"));
        }
        Ok(NerfMlp {
            config,
            params,
            has_adapter,
        })
    }

    pub fn base_param_count(config: &MlpConfig) -> usize {
        config.layer_sizes().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Appends the adapter as a final linear layer on the latent features.
    pub fn attach_adapter(&mut self, adapter: &RgbAdapter) -> Result<()> {
        if self.config.mode != ChannelMode::Latent {
            return Err(Error::config("an RGB adapter only follows a latent head"));
        }
        let base = Self::base_param_count(&self.config);
        self.params.truncate(base);
        self.params.extend_from_slice(&adapter.to_params());
        self.has_adapter = true;
        Ok(())
    }

    pub fn adapter(&self) -> Option<RgbAdapter> {
        self.has_adapter
            .then(|| RgbAdapter::from_params(&self.params[Self::base_param_count(&self.config)..]))
    }

    /// Drops the adapter, returning to latent output.
    pub fn detach_adapter(&mut self) {
        self.params.truncate(Self::base_param_count(&self.config));
        self.has_adapter = false;
    }

    fn input(&self, x: &Vec3, d: &Vec3) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.config.input_width());
        encode(x.as_slice(), self.config.position_bands, &mut v);
        encode(&direction_angles(d), self.config.direction_bands, &mut v);
        v
    }

    fn forward(&self, x: &Vec3, d: &Vec3) -> Trace {
        let sizes = self.config.layer_sizes();
        let last = sizes.len() - 1;
        let mut activations = vec![self.input(x, d)];
        let mut offset = 0;
        let mut raw = Vec::new();
        for (l, &(fan_in, fan_out)) in sizes.iter().enumerate() {
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let input = activations.last().expect("input layer");
            let mut out = b.to_vec();
            for (o, row) in out.iter_mut().zip(w.chunks_exact(fan_in)) {
                *o += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            }
            if l == last {
                raw = out;
            } else {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
                activations.push(out);
            }
        }
        Trace { activations, raw }
    }
}

impl Field for NerfMlp {
    fn channels(&self) -> usize {
        if self.has_adapter {
            3
        } else {
            self.config.mode.channels()
        }
    }

    fn query(&self, x: &Vec3, d: &Vec3, color: &mut [f64]) -> f64 {
        let t = self.forward(x, d);
        let sigma = softplus(t.raw[0] + self.config.density_shift);
        match (self.config.mode, self.has_adapter) {
            (ChannelMode::Latent, false) => color.copy_from_slice(&t.raw[1..5]),
            (ChannelMode::Latent, true) => {
                let base = Self::base_param_count(&self.config);
                RgbAdapter::from_params(&self.params[base..]).apply(&t.raw[1..5], color)
            }
            (ChannelMode::Rgb, _) => {
                for k in 0..3 {
                    color[k] = sigmoid(t.raw[1 + k]);
                }
            }
        }
        sigma
    }
}

impl TrainableField for NerfMlp {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn backward(&self, x: &Vec3, d: &Vec3, d_sigma: f64, d_color: &[f64], grad: &mut [f64]) {
        let t = self.forward(x, d);
        let raw_ch = self.config.raw_channels();
        let mut d_raw = vec![0.0; 1 + raw_ch];
        d_raw[0] = d_sigma * sigmoid(t.raw[0] + self.config.density_shift);
        match (self.config.mode, self.has_adapter) {
            (ChannelMode::Latent, false) => d_raw[1..].copy_from_slice(&d_color[..4]),
            (ChannelMode::Latent, true) => {
                let base = Self::base_param_count(&self.config);
                let a = RgbAdapter::from_params(&self.params[base..]);
                let z = &t.raw[1..5];
                for r in 0..3 {
                    for c in 0..4 {
                        grad[base + r * 4 + c] += d_color[r] * z[c];
                        d_raw[1 + c] += d_color[r] * a.weight[r * 4 + c];
                    }
                    grad[base + 12 + r] += d_color[r];
                }
            }
            (ChannelMode::Rgb, _) => {
                for k in 0..3 {
                    let s = sigmoid(t.raw[1 + k]);
                    d_raw[1 + k] = d_color[k] * s * (1.0 - s);
                }
            }
        }

        let sizes = self.config.layer_sizes();
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut off = 0;
        for &(i, o) in &sizes {
            offsets.push(off);
            off += i * o + o;
        }
        let mut delta = d_raw;
        for l in (0..sizes.len()).rev() {
            let (fan_in, fan_out) = sizes[l];
            let off = offsets[l];
            let input = &t.activations[l];
            for o in 0..fan_out {
                let g = delta[o];
                if g == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                for (gw, a) in row.iter_mut().zip(input) {
                    *gw += g * a;
                }
                grad[off + fan_in * fan_out + o] += g;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let g = delta[o];
                if g == 0.0 {
                    continue;
                }
                for (p, wv) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *p += g * wv;
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
}
