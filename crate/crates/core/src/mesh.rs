use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Triangle mesh with optional per-vertex texture coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    /// (u, v) in [0,1]^2, v = 1 at the top row of the texture image.
    pub uvs: Option<Vec<[f64; 2]>>,
}

impl Mesh {
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[u32; 3]>,
        uvs: Option<Vec<[f64; 2]>>,
    ) -> Result<Self> {
        let mesh = Mesh {
            vertices,
            faces,
            uvs,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (f, face) in self.faces.iter().enumerate() {
            if face.iter().any(|&i| i as usize >= n) {
                return Err(Error::model(
                    "faces",
                    alloc::format!("face {f} indexes past {n} vertices"),
                ));
            }
        }
        if let Some(uvs) = &self.uvs {
            if uvs.len() != n {
                return Err(Error::model(
                    "uvs",
                    alloc::format!("{} uvs for {} vertices", uvs.len(), n),
                ));
            }
        }
        Ok(())
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Interpolated UV at barycentric coordinates (w0, w1, w2) of a face.
    pub fn uv_at(&self, face: usize, bary: [f64; 3]) -> Option<[f64; 2]> {
        let uvs = self.uvs.as_ref()?;
        let [a, b, c] = self.faces[face];
        let (ua, ub, uc) = (uvs[a as usize], uvs[b as usize], uvs[c as usize]);
        Some([
            bary[0] * ua[0] + bary[1] * ub[0] + bary[2] * uc[0],
            bary[0] * ua[1] + bary[1] * ub[1] + bary[2] * uc[1],
        ])
    }

    /// Axis-aligned bounds as (min, max).
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }
}
