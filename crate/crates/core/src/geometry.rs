//! 3D primitives shared by every other module: points, rotations, rigid
//! transforms, correspondences and seeded randomness.
//!
//! Rotations are stored as 3×3 matrices. Quaternions appear only inside
//! [`random_rotation`] for uniform sampling.

use std::f64::consts::PI;
use std::ops::Index;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A point or displacement in R³ (meters where physical).
pub type Vec3 = Vector3<f64>;

/// A plain 3×3 matrix.
pub type Mat3 = Matrix3<f64>;

/// Tolerance of the SO(3) membership check, on both the Frobenius
/// orthogonality residual and the determinant.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Frobenius residual ‖MᵀM − I‖_F and determinant of `m`.
pub fn rotation_residuals(m: &Mat3) -> (f64, f64) {
    (
        (m.transpose() * m - Mat3::identity()).norm(),
        m.determinant(),
    )
}

/// Whether `m` lies in SO(3) within [`ROTATION_TOLERANCE`].
pub fn is_rotation(m: &Mat3) -> bool {
    let (ortho, det) = rotation_residuals(m);
    m.iter().all(|v| v.is_finite())
        && ortho <= ROTATION_TOLERANCE
        && (det - 1.0).abs() <= ROTATION_TOLERANCE
}

/// A matrix known to lie in SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Mat3);

impl RotationMatrix {
    /// Checked constructor.
    pub fn new(m: Mat3) -> Result<Self> {
        if is_rotation(&m) {
            Ok(Self(m))
        } else {
            let (orthogonality, det) = rotation_residuals(&m);
            Err(Error::NotARotation { orthogonality, det })
        }
    }

    /// Wraps `m` without checking. Callers must guarantee membership in SO(3).
    pub fn new_unchecked(m: Mat3) -> Self {
        Self(m)
    }

    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Row-major construction, checked.
    pub fn from_row_slice(rows: &[f64; 9]) -> Result<Self> {
        Self::new(Mat3::from_row_slice(rows))
    }

    /// Rodrigues' formula. `axis` need not be normalized but must be nonzero.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let k = axis.normalize();
        let kx = k.cross_matrix();
        Self(Mat3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos()))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn rotate(&self, p: &Vec3) -> Vec3 {
        self.0 * p
    }

    /// Matrix product `self · other`.
    pub fn then_after(&self, other: &RotationMatrix) -> Self {
        Self(self.0 * other.0)
    }

    /// Entries in row-major order.
    pub fn to_row_array(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    /// Orthogonality residual and determinant, for diagnostics.
    pub fn residuals(&self) -> (f64, f64) {
        rotation_residuals(&self.0)
    }

    pub fn is_valid(&self) -> bool {
        is_rotation(&self.0)
    }
}

/// A rigid motion p ↦ R·p + t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: RotationMatrix,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: RotationMatrix, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(RotationMatrix::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(RotationMatrix::identity(), t)
    }

    /// R·p + t.
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    /// The transform p ↦ self(other(p)).
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation.then_after(&other.rotation),
            self.rotation.rotate(&other.translation) + self.translation,
        )
    }

    /// (Rᵀ, −Rᵀt).
    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform::new(rt, -rt.rotate(&self.translation))
    }

    /// Residual b − (R·a + t).
    pub fn residual(&self, c: &Correspondence) -> Vec3 {
        c.b - self.apply(&c.a)
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// Rotation angle separating `r1` and `r2`, in `[0, π]`.
///
/// Equal to `arccos((tr(R1ᵀR2) − 1)/2)` with the argument clamped to
/// `[−1, 1]`. It is evaluated as `atan2(sin θ, cos θ)` with `sin θ` taken
/// from the skew part of `R1ᵀR2`, which keeps full precision near zero where
/// the plain arccos loses half of the significant digits.
pub fn geodesic_distance(r1: &RotationMatrix, r2: &RotationMatrix) -> Result<f64> {
    for r in [r1, r2] {
        if !r.is_valid() {
            let (orthogonality, det) = r.residuals();
            return Err(Error::NotARotation { orthogonality, det });
        }
    }
    let d = r1.matrix().transpose() * r2.matrix();
    let cos = ((d.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let skew = Vec3::new(
        d[(2, 1)] - d[(1, 2)],
        d[(0, 2)] - d[(2, 0)],
        d[(1, 0)] - d[(0, 1)],
    );
    let sin = (skew.norm() / 2.0).min(1.0);
    Ok(sin.atan2(cos).clamp(0.0, PI))
}

/// A paired observation: `a` in the first cloud maps to `b` in the second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub a: Vec3,
    pub b: Vec3,
}

impl Correspondence {
    pub fn new(a: Vec3, b: Vec3) -> Self {
        Self { a, b }
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }
}

/// Ordered correspondences. Indices are stable for the lifetime of the set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    items: Vec<Correspondence>,
}

impl CorrespondenceSet {
    /// Rejects non-finite coordinates.
    pub fn new(items: Vec<Correspondence>) -> Result<Self> {
        if let Some(i) = items.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "correspondence {i} has non-finite coordinates"
            )));
        }
        Ok(Self { items })
    }

    pub fn from_pairs(a: &[Vec3], b: &[Vec3]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::LengthMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        Self::new(
            a.iter()
                .zip(b)
                .map(|(a, b)| Correspondence::new(*a, *b))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Correspondence] {
        &self.items
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Correspondence> {
        self.items.iter()
    }

    pub fn a_points(&self) -> Vec<Vec3> {
        self.items.iter().map(|c| c.a).collect()
    }

    pub fn b_points(&self) -> Vec<Vec3> {
        self.items.iter().map(|c| c.b).collect()
    }

    /// Copies of the correspondences at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> CorrespondenceSet {
        CorrespondenceSet {
            items: indices.iter().map(|&i| self.items[i]).collect(),
        }
    }
}

impl Index<usize> for CorrespondenceSet {
    type Output = Correspondence;

    fn index(&self, i: usize) -> &Correspondence {
        &self.items[i]
    }
}

impl<'a> IntoIterator for &'a CorrespondenceSet {
    type Item = &'a Correspondence;
    type IntoIter = std::slice::Iter<'a, Correspondence>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

/// Seed of every randomized operation. Same seed and parameters give
/// bit-identical outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RngSeed(pub u64);

/// The generator behind every randomized operation. ChaCha output is
/// platform independent.
pub type SeededRng = ChaCha8Rng;

impl RngSeed {
    pub fn rng(self) -> SeededRng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// An independent generator for sub-task `stream` under this seed.
    pub fn stream(self, stream: u64) -> SeededRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(stream);
        rng
    }
}

impl From<u64> for RngSeed {
    fn from(v: u64) -> Self {
        RngSeed(v)
    }
}

/// Uniform rotation from a unit quaternion drawn by Shoemake's method.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> RotationMatrix {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let (s1, s2) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (t2, t3) = (2.0 * PI * u2, 2.0 * PI * u3);
    let (x, y, z, w) = (s1 * t2.sin(), s1 * t2.cos(), s2 * t3.sin(), s2 * t3.cos());
    RotationMatrix::new_unchecked(Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - z * w),
        2.0 * (x * z + y * w),
        2.0 * (x * y + z * w),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - x * w),
        2.0 * (x * z - y * w),
        2.0 * (y * z + x * w),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Uniform rotation for a seed.
pub fn random_rotation_from_seed(seed: RngSeed) -> RotationMatrix {
    random_rotation(&mut seed.rng())
}

/// Uniform direction on the unit sphere.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Uniform point in the closed ball of radius `radius` about the origin.
pub fn random_in_ball<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Vec3 {
    let u: f64 = rng.random();
    random_unit_vector(rng) * (radius * u.cbrt())
}

/// Uniform point in the cube `[-half_width, half_width]³`.
pub fn random_in_cube<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> Vec3 {
    if half_width == 0.0 {
        return Vec3::zeros();
    }
    Vec3::new(
        rng.random_range(-half_width..=half_width),
        rng.random_range(-half_width..=half_width),
        rng.random_range(-half_width..=half_width),
    )
}

/// A uniform rotation with a translation uniform in the ball of radius
/// `translation_radius`.
pub fn random_transform<R: Rng + ?Sized>(rng: &mut R, translation_radius: f64) -> RigidTransform {
    let rotation = random_rotation(rng);
    RigidTransform::new(rotation, random_in_ball(rng, translation_radius))
}
