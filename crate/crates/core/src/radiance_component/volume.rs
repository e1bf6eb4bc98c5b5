//! Alpha compositing of field samples, optionally over a surface feature.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use super::field::Field;
use super::sampling::RaySamples;
use crate::math::Vec3;

/// Composited feature, accumulated opacity Σα and final transmittance.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub color: Vec<f64>,
    pub mask: f64,
    pub transmittance: f64,
}

/// α_i = T_i (1 − e^{−σ_i Δ_i}) with T_i = exp(−Σ_{j<i} σ_j Δ_j); also returns
/// the transmittance left after the last sample.
pub fn alphas(sigmas: &[f64], deltas: &[f64]) -> (Vec<f64>, f64) {
    let mut t = 1.0;
    let a = sigmas
        .iter()
        .zip(deltas)
        .map(|(s, d)| {
            let e = (-s * d).exp();
            let a = t * (1.0 - e);
            t *= e;
            a
        })
        .collect();
    (a, t)
}

/// Σ α_i c_i + T_end · behind, where `colors` holds n rows of `channels`.
pub fn composite(
    sigmas: &[f64],
    colors: &[f64],
    deltas: &[f64],
    channels: usize,
    behind: Option<&[f64]>,
) -> Composite {
    let (a, t) = alphas(sigmas, deltas);
    let mut color = vec![0.0; channels];
    for (i, ai) in a.iter().enumerate() {
        for k in 0..channels {
            color[k] += ai * colors[i * channels + k];
        }
    }
    if let Some(b) = behind {
        for k in 0..channels {
            color[k] += t * b[k];
        }
    }
    Composite {
        color,
        mask: a.iter().sum(),
        transmittance: t,
    }
}

/// Gradients of L w.r.t. σ_i and c_i given dL/dC and dL/d(Σα).
pub fn composite_backward(
    sigmas: &[f64],
    colors: &[f64],
    deltas: &[f64],
    channels: usize,
    behind: Option<&[f64]>,
    d_color: &[f64],
    d_mask: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = sigmas.len();
    // after[k] = T_{k+1}, the transmittance past sample k.
    let mut after = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut t = 1.0;
    for (s, d) in sigmas.iter().zip(deltas) {
        let e = (-s * d).exp();
        a.push(t * (1.0 - e));
        t *= e;
        after.push(t);
    }
    let t_end = t;
    let mut d_sigma = vec![0.0; n];
    let mut d_colors = vec![0.0; n * channels];
    // Σ_{i>k} α_i ⟨c_i, dC⟩ + T_end ⟨behind, dC⟩, accumulated back to front.
    let mut suffix = behind.map_or(0.0, |b| t_end * dot(b, d_color));
    for k in (0..n).rev() {
        let own = dot(&colors[k * channels..(k + 1) * channels], d_color);
        d_sigma[k] = deltas[k] * (after[k] * own - suffix + d_mask * t_end);
        for c in 0..channels {
            d_colors[k * channels + c] = a[k] * d_color[c];
        }
        suffix += a[k] * own;
    }
    (d_sigma, d_colors)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn query_samples(field: &dyn Field, samples: &RaySamples, count: usize) -> (Vec<f64>, Vec<f64>) {
    let ch = field.channels();
    let mut sigmas = Vec::with_capacity(count);
    let mut colors = vec![0.0; count * ch];
    let dir: Vec3 = samples.direction;
    for i in 0..count {
        sigmas.push(field.query(&samples.point(i), &dir, &mut colors[i * ch..(i + 1) * ch]));
    }
    (sigmas, colors)
}

/// Pure volume rendering over every sample.
pub fn render_ray(field: &dyn Field, samples: &RaySamples) -> Composite {
    let (s, c) = query_samples(field, samples, samples.len());
    composite(&s, &c, &samples.deltas, field.channels(), None)
}

/// Volume rendering terminated at a surface: `samples` must span
/// [near, ℓ_hit] (n_ℓ − 1 bins) and the remaining transmittance lands on
/// `surface`. A degenerate hit (ℓ_hit ≤ near) returns the surface feature.
pub fn render_ray_hybrid(field: &dyn Field, samples: &RaySamples, surface: &[f64]) -> Composite {
    if samples.far <= samples.near || samples.is_empty() {
        return Composite {
            color: surface.to_vec(),
            mask: 0.0,
            transmittance: 1.0,
        };
    }
    let (s, c) = query_samples(field, samples, samples.len());
    composite(&s, &c, &samples.deltas, field.channels(), Some(surface))
}

/// Σα over the samples.
pub fn render_mask(field: &dyn Field, samples: &RaySamples) -> f64 {
    let (s, _) = query_samples(field, samples, samples.len());
    alphas(&s, &samples.deltas).0.iter().sum()
}
