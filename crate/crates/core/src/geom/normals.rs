use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;

use crate::cloud::{PointCloud, SpatialIndex, Vec3};
use crate::error::{Error, Result};

/// Neighborhood size for normal estimation, self included.
pub const DEFAULT_NORMAL_K: usize = 17;

/// A spectrum whose second eigenvalue falls below this fraction of the first
/// has rank < 2 and yields no plane.
const RANK_TOLERANCE: f64 = 1e-12;

/// Normal placeholder for points whose neighborhood spans no plane.
pub const DEGENERATE_NORMAL: Vec3 = Vec3::new(0.0, 0.0, 1.0);

#[derive(Debug, Clone)]
pub struct NormalEstimate {
    /// Input points with normals installed.
    pub cloud: PointCloud,
    /// `true` where the neighborhood was collinear or coincident.
    pub degenerate: Vec<bool>,
}

impl NormalEstimate {
    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }
}

/// Eigen-decomposition of the centered neighborhood covariance, sorted by
/// ascending eigenvalue.
pub(crate) fn sorted_eigen(cov: Matrix3<f64>) -> ([f64; 3], [Vec3; 3]) {
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.map(|i| eig.eigenvalues[i]);
    let vectors = order.map(|i| eig.eigenvectors.column(i).into_owned());
    (values, vectors)
}

pub(crate) fn covariance<'a>(points: impl Iterator<Item = &'a Vec3> + Clone) -> (Vec3, Matrix3<f64>) {
    let mut count = 0usize;
    let mut mean = Vec3::zeros();
    for p in points.clone() {
        mean += p;
        count += 1;
    }
    if count == 0 {
        return (mean, Matrix3::zeros());
    }
    mean /= count as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    (mean, cov / count as f64)
}

/// Per-point plane normals from the covariance of the `k` nearest neighbors
/// (the point itself included), oriented so that `n · (viewpoint - x) >= 0`.
pub fn estimate_normals(cloud: &PointCloud, k: usize, viewpoint: &Vec3) -> Result<NormalEstimate> {
    if cloud.len() < 3 {
        return Err(Error::invalid(format!(
            "normal estimation needs at least 3 points, got {}",
            cloud.len()
        )));
    }
    if k < 3 {
        return Err(Error::invalid(format!("neighborhood size k = {k} is below 3")));
    }
    let index = SpatialIndex::build(cloud)?;
    let points = cloud.points();
    let results: Vec<(Vec3, bool)> = points
        .par_iter()
        .map(|x| {
            let nbrs = index.knn(x, k);
            let (_, cov) = covariance(nbrs.iter().map(|&i| &points[i]));
            let (values, vectors) = sorted_eigen(cov);
            let degenerate = !(values[2] > 0.0) || values[1] <= RANK_TOLERANCE * values[2];
            let mut n = if degenerate {
                DEGENERATE_NORMAL
            } else {
                vectors[0].normalize()
            };
            if n.dot(&(viewpoint - x)) < 0.0 {
                n = -n;
            }
            (n, degenerate)
        })
        .collect();
    let (normals, degenerate): (Vec<Vec3>, Vec<bool>) = results.into_iter().unzip();
    let mut out = cloud.clone();
    out.set_normals(normals)?;
    Ok(NormalEstimate {
        cloud: out,
        degenerate,
    })
}
