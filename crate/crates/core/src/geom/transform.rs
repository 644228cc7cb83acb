use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{PointCloud, Vec3};
use crate::error::{Error, Result};

/// Orthonormality tolerance for [`RigidTransform`] rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Proper rigid motion `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("rigid transform has non-finite entries"));
        }
        let gram = rotation.transpose() * rotation;
        let off = (gram - Matrix3::identity()).amax();
        if off > ROTATION_TOLERANCE {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {off:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::invalid(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: &Vec3, angle: f64, translation: Vec3) -> Self {
        let rotation = if angle == 0.0 || axis.norm() == 0.0 {
            Matrix3::identity()
        } else {
            *Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).matrix()
        };
        Self {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Geodesic rotation distance in radians.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        // acos is ill-conditioned near 0; use the skew part for small angles.
        let s = Vec3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        )
        .norm()
            * 0.5;
        s.atan2(c)
    }

    pub fn translation_distance_to(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Row-major rotation followed by translation.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.x,
            t.y,
            t.z,
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
        Self::new(rotation, Vec3::new(v[9], v[10], v[11]))
    }
}

/// Maps every point by `R x + t` and every normal by `R n`, preserving order.
pub fn apply_transform(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    let points = cloud.points().iter().map(|p| t.apply_point(p)).collect();
    let normals = cloud
        .normals()
        .map(|ns| ns.iter().map(|n| t.apply_vector(n)).collect());
    PointCloud::from_parts_unchecked(points, normals)
}

/// Seeded random motion: uniform axis on the sphere, angle uniform in
/// `[0, max_angle]`, translation components uniform in `[-max_t, max_t]`.
pub fn random_rigid(seed: u64, max_angle: f64, max_translation: f64) -> Result<RigidTransform> {
    if !(0.0..=PI).contains(&max_angle) {
        return Err(Error::invalid(format!("max_angle {max_angle} outside [0, π]")));
    }
    if !(max_translation >= 0.0 && max_translation.is_finite()) {
        return Err(Error::invalid("max_translation must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let s = (1.0 - z * z).max(0.0).sqrt();
    let axis = Vec3::new(s * phi.cos(), s * phi.sin(), z);
    let angle = if max_angle > 0.0 {
        rng.random_range(0.0..=max_angle)
    } else {
        0.0
    };
    let mut coord = || {
        if max_translation > 0.0 {
            rng.random_range(-max_translation..=max_translation)
        } else {
            0.0
        }
    };
    let t = Vec3::new(coord(), coord(), coord());
    Ok(RigidTransform::from_axis_angle(&axis, angle, t))
}
