//! Small fixed-size linear algebra helpers shared by the kinematics and
//! rendering code.

use core::ops::{Add, Mul, Neg, Sub};
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{Matrix3, Matrix4, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat4 = Matrix4<f64>;

/// Builds a 4x4 affine matrix from a rotation/linear block and a translation.
pub fn affine(linear: &Mat3, translation: &Vec3) -> Mat4 {
    let mut m = Mat4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(linear);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(translation);
    m
}

pub fn linear_part(m: &Mat4) -> Mat3 {
    m.fixed_view::<3, 3>(0, 0).into_owned()
}

pub fn translation_part(m: &Mat4) -> Vec3 {
    m.fixed_view::<3, 1>(0, 3).into_owned()
}

pub fn transform_point(m: &Mat4, p: &Vec3) -> Vec3 {
    linear_part(m) * p + translation_part(m)
}

/// Inverse of an affine matrix with bottom row (0,0,0,1). `None` when the
/// linear block is singular.
pub fn affine_inverse(m: &Mat4) -> Option<Mat4> {
    let inv = linear_part(m).try_inverse()?;
    let t = -(inv * translation_part(m));
    Some(affine(&inv, &t))
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Scalar carrying its value and three partial derivatives. Only used to
/// differentiate the axis-angle map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dual3 {
    pub v: f64,
    pub d: [f64; 3],
}

impl Dual3 {
    pub fn constant(v: f64) -> Self {
        Dual3 { v, d: [0.0; 3] }
    }

    pub fn variable(v: f64, i: usize) -> Self {
        let mut d = [0.0; 3];
        d[i] = 1.0;
        Dual3 { v, d }
    }

    fn chain(self, v: f64, dv: f64) -> Self {
        Dual3 {
            v,
            d: [self.d[0] * dv, self.d[1] * dv, self.d[2] * dv],
        }
    }

    pub fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }

    pub fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }

    pub fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }

    pub fn recip(self) -> Self {
        self.chain(1.0 / self.v, -1.0 / (self.v * self.v))
    }
}

impl Add for Dual3 {
    type Output = Dual3;
    fn add(self, o: Dual3) -> Dual3 {
        Dual3 {
            v: self.v + o.v,
            d: [self.d[0] + o.d[0], self.d[1] + o.d[1], self.d[2] + o.d[2]],
        }
    }
}

impl Sub for Dual3 {
    type Output = Dual3;
    fn sub(self, o: Dual3) -> Dual3 {
        self + (-o)
    }
}

impl Neg for Dual3 {
    type Output = Dual3;
    fn neg(self) -> Dual3 {
        Dual3 {
            v: -self.v,
            d: [-self.d[0], -self.d[1], -self.d[2]],
        }
    }
}

impl Mul for Dual3 {
    type Output = Dual3;
    fn mul(self, o: Dual3) -> Dual3 {
        let mut d = [0.0; 3];
        for (i, di) in d.iter_mut().enumerate() {
            *di = self.d[i] * o.v + self.v * o.d[i];
        }
        Dual3 { v: self.v * o.v, d }
    }
}

impl Mul<f64> for Dual3 {
    type Output = Dual3;
    fn mul(self, s: f64) -> Dual3 {
        Dual3 {
            v: self.v * s,
            d: [self.d[0] * s, self.d[1] * s, self.d[2] * s],
        }
    }
}

const SMALL_ANGLE_SQ: f64 = 1e-12;

/// Rodrigues formula generic over the dual type: R = I + A K + B K^2.
fn rodrigues_dual(w: [Dual3; 3]) -> [[Dual3; 3]; 3] {
    let theta_sq = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let (a, b) = if theta_sq.v < SMALL_ANGLE_SQ {
        // Taylor series; first-order exact around zero.
        (
            Dual3::constant(1.0) - theta_sq * (1.0 / 6.0),
            Dual3::constant(0.5) - theta_sq * (1.0 / 24.0),
        )
    } else {
        let theta = theta_sq.sqrt();
        let inv = theta.recip();
        let inv_sq = theta_sq.recip();
        (
            theta.sin() * inv,
            (Dual3::constant(1.0) - theta.cos()) * inv_sq,
        )
    };
    let zero = Dual3::constant(0.0);
    let k = [
        [zero, -w[2], w[1]],
        [w[2], zero, -w[0]],
        [-w[1], w[0], zero],
    ];
    let mut r = [[zero; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut k2 = zero;
            for m in 0..3 {
                k2 = k2 + k[i][m] * k[m][j];
            }
            let id = if i == j { 1.0 } else { 0.0 };
            r[i][j] = Dual3::constant(id) + a * k[i][j] + b * k2;
        }
    }
    r
}

/// Rotation matrix of an axis-angle vector.
pub fn rodrigues(w: &Vec3) -> Mat3 {
    let r = rodrigues_dual([
        Dual3::constant(w.x),
        Dual3::constant(w.y),
        Dual3::constant(w.z),
    ]);
    Mat3::from_fn(|i, j| r[i][j].v)
}

/// Rotation matrix and its three partial derivatives w.r.t. the axis-angle
/// components.
pub fn rodrigues_with_jacobian(w: &Vec3) -> (Mat3, [Mat3; 3]) {
    let r = rodrigues_dual([
        Dual3::variable(w.x, 0),
        Dual3::variable(w.y, 1),
        Dual3::variable(w.z, 2),
    ]);
    let value = Mat3::from_fn(|i, j| r[i][j].v);
    let d = [
        Mat3::from_fn(|i, j| r[i][j].d[0]),
        Mat3::from_fn(|i, j| r[i][j].d[1]),
        Mat3::from_fn(|i, j| r[i][j].d[2]),
    ];
    (value, d)
}

/// Frobenius inner product.
pub fn frobenius(a: &Mat3, b: &Mat3) -> f64 {
    a.component_mul(b).sum()
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}
