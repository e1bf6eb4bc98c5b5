//! Bounding volume hierarchy over mesh triangles for first-hit ray queries.

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::Ray;
use crate::math::Vec3;
use crate::mesh::Mesh;

const LEAF_SIZE: usize = 4;
const MIN_T: f64 = 1e-9;

/// First intersection along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Distance along the (unit) ray direction.
    pub t: f64,
    pub face: usize,
    /// Weights of the face's three vertices.
    pub bary: [f64; 3],
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    /// Entry distance of the slab test, or `None` when the box is missed or
    /// lies entirely beyond `t_max`.
    fn entry(&self, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for a in 0..3 {
            let mut near = (self.lo[a] - origin[a]) * inv_dir[a];
            let mut far = (self.hi[a] - origin[a]) * inv_dir[a];
            if near > far {
                core::mem::swap(&mut near, &mut far);
            }
            // NaN from 0 * inf means the ray runs inside this slab.
            if !near.is_nan() {
                t0 = t0.max(near);
            }
            if !far.is_nan() {
                t1 = t1.min(far);
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: range into `order`. Inner: `start` is the right child, left is next.
    start: u32,
    count: u32,
}

/// Static BVH; rebuild after the mesh deforms.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
    triangles: Vec<[Vec3; 3]>,
}

impl Bvh {
    pub fn build(mesh: &Mesh) -> Self {
        let triangles: Vec<[Vec3; 3]> = (0..mesh.faces.len()).map(|f| mesh.triangle(f)).collect();
        let centroids: Vec<Vec3> = triangles
            .iter()
            .map(|t| (t[0] + t[1] + t[2]) / 3.0)
            .collect();
        let mut order: Vec<u32> = (0..triangles.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * triangles.len() / LEAF_SIZE + 1);
        if !triangles.is_empty() {
            build_node(
                &triangles,
                &centroids,
                &mut order,
                0,
                triangles.len(),
                &mut nodes,
            );
        }
        Bvh {
            nodes,
            order,
            triangles,
        }
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Nearest intersection with t > 0. Equal distances resolve to the lowest
    /// face index; rays parallel to a triangle's plane never hit it.
    pub fn intersect_first(&self, ray: &Ray) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = ray.direction.map(|d| 1.0 / d);
        let mut best: Option<Hit> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let limit = best.map_or(f64::INFINITY, |h| h.t);
            if node.bounds.entry(&ray.origin, &inv, limit).is_none() {
                continue;
            }
            if node.count > 0 {
                let s = node.start as usize;
                for &f in &self.order[s..s + node.count as usize] {
                    let f = f as usize;
                    if let Some((t, bary)) = intersect_triangle(ray, &self.triangles[f]) {
                        let better = match best {
                            None => true,
                            Some(b) => t < b.t || (t == b.t && f < b.face),
                        };
                        if better {
                            best = Some(Hit { t, face: f, bary });
                        }
                    }
                }
            } else {
                stack.push(node.start as usize);
                stack.push(n + 1);
            }
        }
        best
    }
}

fn build_node(
    tris: &[[Vec3; 3]],
    centroids: &[Vec3],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &f in &order[start..end] {
        for p in &tris[f as usize] {
            bounds.grow(p);
        }
        cbounds.grow(&centroids[f as usize]);
    }
    let index = nodes.len();
    nodes.push(Node {
        bounds,
        start: start as u32,
        count: (end - start) as u32,
    });
    let extent = cbounds.hi - cbounds.lo;
    if end - start <= LEAF_SIZE || extent.max() <= 0.0 {
        return index;
    }
    let axis = extent.imax();
    let mid = (start + end) / 2;
    order[start..end].sort_by(|&a, &b| {
        centroids[a as usize][axis]
            .partial_cmp(&centroids[b as usize][axis])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    build_node(tris, centroids, order, start, mid, nodes);
    let right = build_node(tris, centroids, order, mid, end, nodes);
    nodes[index].start = right as u32;
    nodes[index].count = 0;
    index
}

/// Möller–Trumbore intersection returning (t, barycentrics).
pub fn intersect_triangle(ray: &Ray, tri: &[Vec3; 3]) -> Option<(f64, [f64; 3])> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pvec = ray.direction.cross(&e2);
    let det = e1.dot(&pvec);
    let scale = e1.norm() * e2.norm();
    if det.abs() <= 1e-12 * scale || scale == 0.0 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = ray.origin - tri[0];
    let u = tvec.dot(&pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = ray.direction.dot(&qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    if t <= MIN_T {
        return None;
    }
    Some((t, [1.0 - u - v, u, v]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centroid_ray_hits_with_equal_weights() {
        let mesh = Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        let bvh = Bvh::build(&mesh);
        let c = Vec3::new(1.0 / 3.0, 1.0 / 3.0, 0.0);
        let hit = bvh
            .intersect_first(&Ray {
                origin: c + Vec3::new(0.0, 0.0, 2.0),
                direction: -Vec3::z(),
            })
            .unwrap();
        assert!((hit.t - 2.0).abs() < 1e-12);
        for w in hit.bary {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_ray_misses() {
        let mesh = Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        let ray = Ray {
            origin: Vec3::new(-1.0, 0.2, 0.0),
            direction: Vec3::x(),
        };
        assert!(Bvh::build(&mesh).intersect_first(&ray).is_none());
    }
}
