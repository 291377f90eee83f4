//! Small fixed-size 3-D geometry kernel.
//!
//! Rotations are kept as full 3×3 matrices. All types are `Copy` value types
//! and every function here is pure.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::GeomError;

/// Orthogonality and determinant tolerance for [`Rotation`].
pub const TOL_ORTH: f64 = 1e-9;
/// Minimum length for vectors that must define a direction.
pub const EPS_LEN: f64 = 1e-9;
/// Below this angle `exp_so3` switches to Taylor coefficients.
pub const SMALL_ANGLE: f64 = 1e-8;

const TOL_SKEW: f64 = 1e-9;
const TOL_UNIT: f64 = 1e-12;
const MIN_DET: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };
    pub const X: Vec3 = Vec3 {
        x: 1.0,
        y: 0.0,
        z: 0.0,
    };
    pub const Y: Vec3 = Vec3 {
        x: 0.0,
        y: 1.0,
        z: 0.0,
    };
    pub const Z: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 1.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        self.into()
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        self.scale(s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v.scale(self)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Mat3 {
    pub m: [[f64; 3]; 3],
}

impl From<[[f64; 3]; 3]> for Mat3 {
    fn from(m: [[f64; 3]; 3]) -> Self {
        Mat3 { m }
    }
}

impl From<Mat3> for [[f64; 3]; 3] {
    fn from(a: Mat3) -> Self {
        a.m
    }
}

impl Mat3 {
    pub const ZERO: Mat3 = Mat3 { m: [[0.0; 3]; 3] };
    pub const IDENTITY: Mat3 = Mat3 {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub const fn from_rows(m: [[f64; 3]; 3]) -> Self {
        Mat3 { m }
    }

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        Mat3::from_rows([[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]])
    }

    pub fn diag(d0: f64, d1: f64, d2: f64) -> Self {
        Mat3::from_rows([[d0, 0.0, 0.0], [0.0, d1, 0.0], [0.0, 0.0, d2]])
    }

    /// `a bᵀ`
    pub fn outer(a: Vec3, b: Vec3) -> Self {
        Mat3::from_rows([
            [a.x * b.x, a.x * b.y, a.x * b.z],
            [a.y * b.x, a.y * b.y, a.y * b.z],
            [a.z * b.x, a.z * b.y, a.z * b.z],
        ])
    }

    pub fn col(&self, j: usize) -> Vec3 {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn row(&self, i: usize) -> Vec3 {
        Vec3::from(self.m[i])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.m;
        Mat3::from_rows([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn trace(&self) -> f64 {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut out = *self;
        out.m.iter_mut().flatten().for_each(|v| *v *= s);
        out
    }

    /// Transposed cofactor matrix; `A · adj(A) = det(A) I`.
    pub fn adjugate(&self) -> Mat3 {
        let m = &self.m;
        let c = |r0: usize, r1: usize, c0: usize, c1: usize| {
            m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
        };
        Mat3::from_rows([
            [c(1, 2, 1, 2), -c(0, 2, 1, 2), c(0, 1, 1, 2)],
            [-c(1, 2, 0, 2), c(0, 2, 0, 2), -c(0, 1, 0, 2)],
            [c(1, 2, 0, 1), -c(0, 2, 0, 1), c(0, 1, 0, 1)],
        ])
    }

    /// Inverse via the adjugate. `None` when `|det| <= min_det`.
    pub fn inverse(&self, min_det: f64) -> Option<Mat3> {
        let d = self.det();
        if d.abs() <= min_det || !d.is_finite() {
            return None;
        }
        Some(self.adjugate().scale(1.0 / d))
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }

    /// Eigen-decomposition of the symmetric part, eigenvalues ascending.
    ///
    /// The eigenvector matrix is forced into SO(3) by flipping the sign of the
    /// last column when needed.
    pub fn symmetric_eigen(&self) -> SymmetricEigen {
        let sym = (*self + self.transpose()).scale(0.5);
        let na = nalgebra::Matrix3::from_fn(|i, j| sym.m[i][j]);
        let eig = na.symmetric_eigen();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.map(|k| eig.eigenvalues[k]);
        let cols = order.map(|k| {
            let c = eig.eigenvectors.column(k);
            Vec3::new(c[0], c[1], c[2])
        });
        let mut vectors = Mat3::from_cols(cols[0], cols[1], cols[2]);
        if vectors.det() < 0.0 {
            vectors = Mat3::from_cols(cols[0], cols[1], -cols[2]);
        }
        SymmetricEigen { values, vectors }
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(self, o: Mat3) -> Mat3 {
        let mut out = self;
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] += o.m[i][j];
            }
        }
        out
    }
}

impl AddAssign for Mat3 {
    fn add_assign(&mut self, o: Mat3) {
        *self = *self + o;
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(self, o: Mat3) -> Mat3 {
        self + o.scale(-1.0)
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let mut out = Mat3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = (0..3).map(|k| self.m[i][k] * o.m[k][j]).sum();
            }
        }
        out
    }
}

impl Mul<Vec3> for Mat3 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }
}

impl Mul<f64> for Mat3 {
    type Output = Mat3;
    fn mul(self, s: f64) -> Mat3 {
        self.scale(s)
    }
}

/// Ascending eigenvalues and matching unit eigenvectors (as columns).
#[derive(Clone, Copy, Debug)]
pub struct SymmetricEigen {
    pub values: [f64; 3],
    pub vectors: Mat3,
}

impl SymmetricEigen {
    /// Smallest pairwise distance between eigenvalues.
    pub fn min_gap(&self) -> f64 {
        let v = self.values;
        (v[1] - v[0]).min(v[2] - v[1])
    }
}

/// An element of SO(3).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Mat3", into = "Mat3")]
pub struct Rotation(Mat3);

impl TryFrom<Mat3> for Rotation {
    type Error = GeomError;
    fn try_from(m: Mat3) -> Result<Self, GeomError> {
        Rotation::new(m)
    }
}

impl From<Rotation> for Mat3 {
    fn from(r: Rotation) -> Self {
        r.0
    }
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation(Mat3::IDENTITY);

    /// Checks `R Rᵀ = I` and `det R = 1` to [`TOL_ORTH`].
    pub fn new(m: Mat3) -> Result<Self, GeomError> {
        let drift = orthogonality_drift(&m);
        let det = m.det();
        if !m.is_finite() || drift > TOL_ORTH || (det - 1.0).abs() > TOL_ORTH {
            return Err(GeomError::NotARotation { drift, det });
        }
        Ok(Rotation(m))
    }

    /// Wraps a matrix without checking it. Used for intermediate integrator
    /// stages, where orthogonality only holds to truncation order.
    pub(crate) fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    /// `‖R Rᵀ − I‖_F`
    pub fn orthogonality_drift(&self) -> f64 {
        orthogonality_drift(&self.0)
    }
}

fn orthogonality_drift(m: &Mat3) -> f64 {
    (*m * m.transpose() - Mat3::IDENTITY).frobenius_norm()
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, o: Rotation) -> Rotation {
        Rotation(self.0 * o.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        self.0 * v
    }
}

impl Mul<UnitVec3> for Rotation {
    type Output = Vec3;
    fn mul(self, v: UnitVec3) -> Vec3 {
        self.0 * v.0
    }
}

/// A vector of unit length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitVec3(Vec3);

impl UnitVec3 {
    /// Accepts a vector that is already unit length to within 1e-12.
    pub fn new(v: Vec3) -> Result<Self, GeomError> {
        let n = v.norm();
        if !v.is_finite() || (n - 1.0).abs() > TOL_UNIT {
            return Err(GeomError::NotUnit { norm: n });
        }
        Ok(UnitVec3(v))
    }

    pub fn normalize(v: Vec3) -> Result<Self, GeomError> {
        let n = v.norm();
        if !(n > EPS_LEN) || !v.is_finite() {
            return Err(GeomError::DegenerateVector { norm: n });
        }
        Ok(UnitVec3(v.scale(1.0 / n)))
    }

    pub fn get(self) -> Vec3 {
        self.0
    }
}

impl Neg for UnitVec3 {
    type Output = UnitVec3;
    fn neg(self) -> UnitVec3 {
        UnitVec3(-self.0)
    }
}

pub fn hat(v: Vec3) -> Mat3 {
    Mat3::from_rows([[0.0, -v.z, v.y], [v.z, 0.0, -v.x], [-v.y, v.x, 0.0]])
}

pub fn vee(m: &Mat3) -> Result<Vec3, GeomError> {
    let asym = (*m + m.transpose()).frobenius_norm();
    if !(asym <= TOL_SKEW) {
        return Err(GeomError::NotSkewSymmetric { asymmetry: asym });
    }
    let a = &m.m;
    Ok(Vec3::new(
        0.5 * (a[2][1] - a[1][2]),
        0.5 * (a[0][2] - a[2][0]),
        0.5 * (a[1][0] - a[0][1]),
    ))
}

/// Rodrigues' formula.
pub fn exp_so3(v: Vec3) -> Rotation {
    let theta_sq = v.norm_squared();
    let theta = theta_sq.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta_sq / 6.0, 0.5 - theta_sq / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta_sq)
    };
    let k = hat(v);
    Rotation(Mat3::IDENTITY + k.scale(a) + (k * k).scale(b))
}

/// `P_x = I − x xᵀ / ‖x‖²`
pub fn projection_matrix(x: Vec3) -> Result<Mat3, GeomError> {
    let n2 = x.norm_squared();
    if !(n2.sqrt() > EPS_LEN) {
        return Err(GeomError::DegenerateVector { norm: n2.sqrt() });
    }
    Ok(Mat3::IDENTITY - Mat3::outer(x, x).scale(1.0 / n2))
}

/// Nearest rotation in Frobenius norm (orthogonal polar factor).
///
/// Uses the scaled Newton iteration `X ← ½(γX + X⁻ᵀ/γ)`, which converges
/// quadratically to the polar factor for any `det > 0` input.
pub fn project_to_so3(m: &Mat3) -> Result<Rotation, GeomError> {
    let det = m.det();
    if !(det > MIN_DET) {
        return Err(GeomError::SingularMatrix { det });
    }
    let mut x = *m;
    for _ in 0..100 {
        let inv = x
            .inverse(0.0)
            .ok_or(GeomError::SingularMatrix { det: x.det() })?;
        let gamma = (inv.frobenius_norm() / x.frobenius_norm()).sqrt();
        let next = (x.scale(gamma) + inv.transpose().scale(1.0 / gamma)).scale(0.5);
        let delta = (next - x).frobenius_norm();
        x = next;
        if delta < 1e-15 {
            break;
        }
    }
    Ok(Rotation(x))
}

/// `‖I − a bᵀ‖_F`; ranges over `[0, 2√2]`.
pub fn geodesic_error(a: &Rotation, b: &Rotation) -> f64 {
    (Mat3::IDENTITY - a.0 * b.0.transpose()).frobenius_norm()
}

/// Haar-uniform rotation from a uniform unit quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (x, y) = (a * (2.0 * PI * u2).sin(), a * (2.0 * PI * u2).cos());
    let (z, w) = (b * (2.0 * PI * u3).sin(), b * (2.0 * PI * u3).cos());
    Rotation(quaternion_matrix(w, x, y, z))
}

fn quaternion_matrix(w: f64, x: f64, y: f64, z: f64) -> Mat3 {
    Mat3::from_rows([
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ])
}

/// Uniformly distributed point on the unit sphere.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> UnitVec3 {
    let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
    let phi = 2.0 * PI * rng.random::<f64>();
    let r = (1.0 - z * z).max(0.0).sqrt();
    UnitVec3(Vec3::new(r * phi.cos(), r * phi.sin(), z))
}
