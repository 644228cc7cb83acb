//! Point-cloud container, ASCII PLY I/O and neighbor queries.

mod index;
mod ply;

pub use index::SpatialIndex;
pub use ply::{load_ply, read_ply, save_ply, save_ply_colored, write_ply, write_ply_colored};

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Unit-norm tolerance for stored normals.
pub const NORMAL_TOLERANCE: f64 = 1e-6;

/// Ordered point positions (meters) with optional per-point unit normals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        check_finite(&points)?;
        Ok(Self {
            points,
            normals: None,
        })
    }

    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        check_finite(&points)?;
        check_normals(&points, &normals)?;
        Ok(Self {
            points,
            normals: Some(normals),
        })
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_parts_unchecked(points: Vec<Vec3>, normals: Option<Vec<Vec3>>) -> Self {
        debug_assert!(normals.as_ref().is_none_or(|n| n.len() == points.len()));
        Self { points, normals }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    /// Replaces (or installs) the normals.
    pub fn set_normals(&mut self, normals: Vec<Vec3>) -> Result<()> {
        check_normals(&self.points, &normals)?;
        self.normals = Some(normals);
        Ok(())
    }

    pub fn clear_normals(&mut self) {
        self.normals = None;
    }

    /// Subset in the order given by `indices`.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let normals = self
            .normals
            .as_ref()
            .map(|n| indices.iter().map(|&i| n[i]).collect());
        PointCloud { points, normals }
    }

    pub fn into_parts(self) -> (Vec<Vec3>, Option<Vec<Vec3>>) {
        (self.points, self.normals)
    }
}

fn check_finite(points: &[Vec3]) -> Result<()> {
    if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
    }
    Ok(())
}

fn check_normals(points: &[Vec3], normals: &[Vec3]) -> Result<()> {
    if normals.len() != points.len() {
        return Err(Error::shape(format!(
            "{} normals for {} points",
            normals.len(),
            points.len()
        )));
    }
    if let Some(i) = normals
        .iter()
        .position(|n| !n.iter().all(|c| c.is_finite()) || (n.norm() - 1.0).abs() > NORMAL_TOLERANCE)
    {
        return Err(Error::invalid(format!("normal {i} is not unit length")));
    }
    Ok(())
}

/// Diagonal of the axis-aligned bounding box, used as the scale reference
/// for relative sampling thresholds.
pub fn diameter(cloud: &PointCloud) -> Result<f64> {
    bbox_diagonal(cloud.points())
}

pub(crate) fn bbox_diagonal(points: &[Vec3]) -> Result<f64> {
    let first = points
        .first()
        .ok_or_else(|| Error::invalid("diameter of an empty cloud"))?;
    let (lo, hi) = points.iter().fold((*first, *first), |(lo, hi), p| {
        (lo.inf(p), hi.sup(p))
    });
    Ok((hi - lo).norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_corners() -> Vec<Vec3> {
        let mut out = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    out.push(Vec3::new(x, y, z));
                }
            }
        }
        out
    }

    #[test]
    fn diameter_examples() {
        let one = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0)]).unwrap();
        assert_eq!(diameter(&one).unwrap(), 0.0);

        let two = PointCloud::new(vec![Vec3::zeros(), Vec3::new(0.0, 5.0, 0.0)]).unwrap();
        assert_eq!(diameter(&two).unwrap(), 5.0);

        let cube = PointCloud::new(cube_corners()).unwrap();
        assert!((diameter(&cube).unwrap() - 3f64.sqrt()).abs() < 1e-15);

        assert!(diameter(&PointCloud::default()).is_err());
    }

    #[test]
    fn diameter_ignores_order_and_translation() {
        let mut pts = cube_corners();
        pts.push(Vec3::new(0.3, -2.0, 0.7));
        let d0 = diameter(&PointCloud::new(pts.clone()).unwrap()).unwrap();
        pts.reverse();
        let shift = Vec3::new(10.0, -4.0, 2.5);
        let moved: Vec<_> = pts.iter().map(|p| p + shift).collect();
        let d1 = diameter(&PointCloud::new(moved).unwrap()).unwrap();
        assert!((d0 - d1).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_normals() {
        let pts = vec![Vec3::zeros(), Vec3::x()];
        assert!(PointCloud::with_normals(pts.clone(), vec![Vec3::z()]).is_err());
        assert!(PointCloud::with_normals(pts.clone(), vec![Vec3::z(), Vec3::new(0.0, 0.0, 2.0)]).is_err());
        assert!(PointCloud::with_normals(pts, vec![Vec3::z(), Vec3::y()]).is_ok());
        assert!(PointCloud::new(vec![Vec3::new(f64::NAN, 0.0, 0.0)]).is_err());
    }
}
