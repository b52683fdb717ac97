//! Closed-form single-model rigid registration (Horn's method) and the
//! per-cluster noise estimate used by the EM engine.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::geometry::{
    Correspondence, CorrespondenceSet, Mat3, RigidTransform, RotationMatrix, Vec3,
};

/// Lower bound on every estimated noise standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// Output of [`horn_register`].
#[derive(Debug, Clone, PartialEq)]
pub struct HornEstimate {
    pub transform: RigidTransform,
    /// Estimated per-axis noise standard deviation, at least [`SIGMA_FLOOR`].
    pub sigma_hat: f64,
    /// `b_i − R̂a_i − t̂` in input order.
    pub residuals: Vec<Vec3>,
    /// Smallest eigenvalue of the centered second-moment matrix of the a-points.
    pub lambda_min: f64,
}

/// Both point clouds with their means removed.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredData {
    pub a_centered: Vec<Vec3>,
    pub b_centered: Vec<Vec3>,
    pub a_mean: Vec3,
    pub b_mean: Vec3,
}

impl CenteredData {
    pub fn from_points(a: &[Vec3], b: &[Vec3]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::LengthMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        let (a_centered, a_mean) = center(a)?;
        let (b_centered, b_mean) = center(b)?;
        Ok(Self {
            a_centered,
            b_centered,
            a_mean,
            b_mean,
        })
    }

    pub fn from_correspondences<'a, I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Correspondence>,
    {
        let (a, b): (Vec<Vec3>, Vec<Vec3>) = items.into_iter().map(|c| (c.a, c.b)).unzip();
        Self::from_points(&a, &b)
    }

    /// (1/m) Σ a′a′ᵀ.
    pub fn second_moment(&self) -> Mat3 {
        let m = self.a_centered.len() as f64;
        self.a_centered
            .iter()
            .fold(Mat3::zeros(), |acc, p| acc + p * p.transpose())
            / m
    }
}

/// Subtracts the mean from every point.
pub fn center(points: &[Vec3]) -> Result<(Vec<Vec3>, Vec3)> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let mean = points.iter().sum::<Vec3>() / points.len() as f64;
    Ok((points.iter().map(|p| p - mean).collect(), mean))
}

/// H = (1/m) Σ b′ a′ᵀ, so that argmax over X ∈ SO(3) of ⟨X, H⟩ aligns b ≈ X·a.
pub fn cross_covariance(cd: &CenteredData) -> Result<Mat3> {
    let m = cd.a_centered.len();
    if m != cd.b_centered.len() {
        return Err(Error::LengthMismatch {
            left: m,
            right: cd.b_centered.len(),
        });
    }
    if m == 0 {
        return Err(Error::EmptyPointSet);
    }
    let h = cd
        .a_centered
        .iter()
        .zip(&cd.b_centered)
        .fold(Mat3::zeros(), |acc, (a, b)| acc + b * a.transpose());
    Ok(h / m as f64)
}

/// Maximizer of ⟨X, H⟩ over SO(3): U·diag(1, 1, det(UVᵀ))·Vᵀ with the sign
/// correction applied to the smallest singular direction. `H = 0` maps to
/// the identity.
pub fn solve_rotation(h: &Mat3) -> RotationMatrix {
    if h.iter().all(|&v| v == 0.0) || !h.iter().all(|v| v.is_finite()) {
        return RotationMatrix::identity();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return RotationMatrix::identity(),
    };
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        let smallest = svd.singular_values.imin();
        d[(smallest, smallest)] = -1.0;
    }
    RotationMatrix::new_unchecked(u * d * v_t)
}

/// t̂ = b̄ − R̂·ā.
pub fn estimate_translation(r_hat: &RotationMatrix, a_mean: &Vec3, b_mean: &Vec3) -> Vec3 {
    b_mean - r_hat.rotate(a_mean)
}

/// Square root of the average over the three axes of the per-axis
/// population variance of the residuals, floored at [`SIGMA_FLOOR`].
pub fn estimate_noise_std(residuals: &[Vec3]) -> Result<f64> {
    if residuals.len() < 2 {
        return Err(Error::InsufficientResiduals(residuals.len()));
    }
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<Vec3>() / n;
    let sum_sq: f64 = residuals.iter().map(|r| (r - mean).norm_squared()).sum();
    Ok((sum_sq / (3.0 * n)).sqrt().max(SIGMA_FLOOR))
}

/// Smallest eigenvalue of a symmetric 3×3 matrix, clamped at zero.
pub fn smallest_eigenvalue(sym: &Mat3) -> f64 {
    SymmetricEigen::new(*sym).eigenvalues.min().max(0.0)
}

/// Full registration: center, cross-covariance, rotation, translation,
/// residuals and noise estimate.
pub fn horn_register(cs: &CorrespondenceSet) -> Result<HornEstimate> {
    horn_register_items(cs.items())
}

/// [`horn_register`] restricted to the correspondences at `indices`.
pub fn horn_register_subset(cs: &CorrespondenceSet, indices: &[usize]) -> Result<HornEstimate> {
    let items: Vec<Correspondence> = indices.iter().map(|&i| cs[i]).collect();
    horn_register_items(&items)
}

pub fn horn_register_items(items: &[Correspondence]) -> Result<HornEstimate> {
    if items.len() < 3 {
        return Err(Error::Underdetermined(items.len()));
    }
    let cd = CenteredData::from_correspondences(items)?;
    let h = cross_covariance(&cd)?;
    let rotation = solve_rotation(&h);
    let translation = estimate_translation(&rotation, &cd.a_mean, &cd.b_mean);
    let transform = RigidTransform::new(rotation, translation);
    let residuals: Vec<Vec3> = items.iter().map(|c| transform.residual(c)).collect();
    let sigma_hat = estimate_noise_std(&residuals)?;
    Ok(HornEstimate {
        transform,
        sigma_hat,
        residuals,
        lambda_min: smallest_eigenvalue(&cd.second_moment()),
    })
}
