//! Mapping observation-space points into the body model's canonical space by
//! blending the inverse skinning transforms of nearby vertices.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::body_model::{AvatarParams, BodyModel};
use crate::error::{Error, Result};
use crate::math::{affine_inverse, linear_part, Mat3, Mat4, Vec3};

pub const DEFAULT_NEIGHBORS: usize = 6;
pub const DEFAULT_TAU: f64 = 0.1;
/// Alternative bandwidth selectable through configuration.
pub const ALTERNATE_TAU: f64 = 0.2;
pub const DEFAULT_CUTOFF: f64 = 0.5;

/// Constants shared by every component rendered against one body model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CanonicalFrame {
    pub neighbors: usize,
    pub tau: f64,
    /// Points farther than this from every posed vertex are empty space.
    pub cutoff: f64,
    pub canonical_pose: Vec<f64>,
}

impl Default for CanonicalFrame {
    fn default() -> Self {
        CanonicalFrame {
            neighbors: DEFAULT_NEIGHBORS,
            tau: DEFAULT_TAU,
            cutoff: DEFAULT_CUTOFF,
            canonical_pose: Vec::new(),
        }
    }
}

impl CanonicalFrame {
    pub fn for_model(model: &BodyModel) -> Self {
        CanonicalFrame {
            canonical_pose: model.canonical_pose().to_vec(),
            ..Default::default()
        }
    }

    pub fn validate(&self, model: &BodyModel) -> Result<()> {
        if self.neighbors == 0 || !(self.tau > 0.0) || !(self.cutoff > 0.0) {
            return Err(Error::config(
                "canonical frame needs neighbors ≥ 1, τ > 0 and cutoff > 0",
            ));
        }
        if self.canonical_pose != model.canonical_pose() {
            return Err(Error::config(
                "canonical frame pose differs from the body model's",
            ));
        }
        Ok(())
    }
}

/// Static kd-tree over points for exact k-nearest queries.
#[derive(Debug, Clone)]
struct KdTree {
    /// Point indices, permuted so every node owns a contiguous range.
    order: Vec<u32>,
    nodes: Vec<KdNode>,
}

#[derive(Debug, Clone, Copy)]
struct KdNode {
    start: u32,
    end: u32,
    /// Split axis and value, or `None` for a leaf.
    split: Option<(usize, f64)>,
    /// Children indices, valid for inner nodes.
    left: u32,
    right: u32,
}

const KD_LEAF: usize = 8;

impl KdTree {
    fn new(points: &[Vec3]) -> Self {
        let mut tree = KdTree {
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
        };
        tree.build(points, 0, points.len());
        tree
    }

    fn build(&mut self, points: &[Vec3], start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(KdNode {
            start: start as u32,
            end: end as u32,
            split: None,
            left: 0,
            right: 0,
        });
        if end - start <= KD_LEAF {
            return id;
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&points[i as usize]);
            hi = hi.sup(&points[i as usize]);
        }
        let axis = (hi - lo).imax();
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |a, b| {
            points[*a as usize][axis].total_cmp(&points[*b as usize][axis])
        });
        let value = points[self.order[mid] as usize][axis];
        let left = self.build(points, start, mid);
        let right = self.build(points, mid, end);
        let node = &mut self.nodes[id as usize];
        node.split = Some((axis, value));
        node.left = left;
        node.right = right;
        id
    }

    /// The k nearest points by (distance², index).
    fn nearest(&self, points: &[Vec3], p: &Vec3, k: usize, out: &mut Vec<(f64, u32)>) {
        out.clear();
        if !self.nodes.is_empty() && k > 0 {
            self.search(0, points, p, k, out);
        }
    }

    fn search(&self, node: u32, points: &[Vec3], p: &Vec3, k: usize, out: &mut Vec<(f64, u32)>) {
        let n = self.nodes[node as usize];
        match n.split {
            None => {
                for &i in &self.order[n.start as usize..n.end as usize] {
                    insert_sorted(out, ((points[i as usize] - p).norm_squared(), i), k);
                }
            }
            Some((axis, value)) => {
                let diff = p[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (n.left, n.right)
                } else {
                    (n.right, n.left)
                };
                self.search(near, points, p, k, out);
                // A tie with the current worst could still win on index.
                if out.len() < k || diff * diff <= out[k - 1].0 {
                    self.search(far, points, p, k, out);
                }
            }
        }
    }
}

fn insert_sorted(list: &mut Vec<(f64, u32)>, item: (f64, u32), k: usize) {
    let pos = list
        .iter()
        .position(|e| e.0 > item.0 || (e.0 == item.0 && e.1 > item.1))
        .unwrap_or(list.len());
    if pos < k {
        list.insert(pos, item);
        list.truncate(k);
    }
}

/// Brute-force k nearest points by (distance², index).
pub fn nearest_brute_force(points: &[Vec3], p: &Vec3, k: usize) -> Vec<(f64, u32)> {
    let mut out = Vec::with_capacity(k + 1);
    for (i, q) in points.iter().enumerate() {
        insert_sorted(&mut out, ((q - p).norm_squared(), i as u32), k);
    }
    out
}

/// Canonicalization precomputed for one avatar pose: posed vertices, the
/// per-vertex maps K_i = M_i(0, θ^c, 0) · M_i(β, θ, ψ)⁻¹ and skin columns.
#[derive(Debug, Clone)]
pub struct CanonicalMap {
    pub frame: CanonicalFrame,
    posed: Vec<Vec3>,
    maps: Vec<Mat4>,
    skin: Vec<Vec<f64>>,
    tree: KdTree,
}

/// Canonicalized point with the rotation block of its nearest vertex's map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalPoint {
    pub position: Vec3,
    pub rotation: Mat3,
}

impl CanonicalMap {
    pub fn new(model: &BodyModel, params: &AvatarParams, frame: &CanonicalFrame) -> Result<Self> {
        frame.validate(model)?;
        let posed_t = model.vertex_transforms(params)?;
        let rest = AvatarParams::rest(model);
        let rest_t = model.vertex_transforms(&rest)?;
        let maps = posed_t
            .matrices
            .iter()
            .zip(&rest_t.matrices)
            .enumerate()
            .map(|(i, (m, r))| {
                affine_inverse(m)
                    .map(|inv| r * inv)
                    .ok_or_else(|| Error::param(alloc::format!("vertex {i} transform is singular")))
            })
            .collect::<Result<Vec<_>>>()?;
        let posed = posed_t.apply(model.template());
        let skin = (0..model.vertex_count())
            .map(|v| model.skin_weight_column(v))
            .collect();
        Ok(Self::from_parts(frame.clone(), posed, maps, skin))
    }

    /// Assembles a map from explicit vertices, per-vertex maps and skin columns.
    pub fn from_parts(
        frame: CanonicalFrame,
        posed: Vec<Vec3>,
        maps: Vec<Mat4>,
        skin: Vec<Vec<f64>>,
    ) -> Self {
        let tree = KdTree::new(&posed);
        CanonicalMap {
            frame,
            posed,
            maps,
            skin,
            tree,
        }
    }

    pub fn posed_vertices(&self) -> &[Vec3] {
        &self.posed
    }

    /// The k nearest posed vertices, nearest first.
    pub fn neighbors(&self, x: &Vec3) -> Vec<(f64, u32)> {
        let mut out = Vec::with_capacity(self.frame.neighbors + 1);
        self.tree
            .nearest(&self.posed, x, self.frame.neighbors, &mut out);
        out
    }

    /// x^c = Σ_i (ω_i / Σω) K_i x over the nearest vertices, with
    /// ω_i = exp(−‖x − v_i‖ ‖w_ξ − w_i‖ / (2τ²)) and ξ the nearest vertex.
    /// `None` when the nearest vertex is beyond the cutoff.
    pub fn canonicalize(&self, x: &Vec3) -> Option<CanonicalPoint> {
        let nn = self.neighbors(x);
        self.blend(x, &nn)
    }

    fn blend(&self, x: &Vec3, nn: &[(f64, u32)]) -> Option<CanonicalPoint> {
        let &(d0, xi) = nn.first()?;
        if d0.sqrt() > self.frame.cutoff {
            return None;
        }
        let w_xi = &self.skin[xi as usize];
        let two_tau2 = 2.0 * self.frame.tau * self.frame.tau;
        let mut total = 0.0;
        let mut acc = Vec3::zeros();
        let xh = nalgebra::Vector4::new(x.x, x.y, x.z, 1.0);
        for &(d2, i) in nn {
            let i = i as usize;
            let skin_dist = w_xi
                .iter()
                .zip(&self.skin[i])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let w = (-(d2.sqrt() * skin_dist) / two_tau2).exp();
            let y = self.maps[i] * xh;
            acc += Vec3::new(y.x, y.y, y.z) * w;
            total += w;
        }
        Some(CanonicalPoint {
            position: acc / total,
            rotation: linear_part(&self.maps[xi as usize]),
        })
    }

    /// Same as [`CanonicalMap::canonicalize`] with exhaustive neighbor search.
    pub fn canonicalize_brute_force(&self, x: &Vec3) -> Option<CanonicalPoint> {
        let nn = nearest_brute_force(&self.posed, x, self.frame.neighbors);
        self.blend(x, &nn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn tree_neighbors_match_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec3> = (0..400)
            .map(|_| Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5)))
            .collect();
        let tree = KdTree::new(&pts);
        let mut out = Vec::new();
        for _ in 0..200 {
            let p = Vec3::from_fn(|_, _| rng.random_range(-0.8..0.8));
            tree.nearest(&pts, &p, 6, &mut out);
            assert_eq!(out, nearest_brute_force(&pts, &p, 6));
        }
    }
}
