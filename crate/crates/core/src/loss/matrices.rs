use rayon::prelude::*;

use crate::cloud::{SpatialIndex, Vec3};
use crate::error::{Error, Result};
use crate::geom::RigidTransform;
use crate::net::FeatureMatrix;

/// Binary `N × N` matrix, `m_ij = 1` when keypoint `i` of X and keypoint `j`
/// of Y are within the correspondence radius.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrespondenceMatrix {
    n: usize,
    data: Vec<bool>,
}

impl CorrespondenceMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..n * n).map(|k| f(k / n, k % n)).collect();
        Self { n, data }
    }

    pub fn new(n: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::shape(format!("{} entries for a {n}x{n} matrix", data.len())));
        }
        Ok(Self { n, data })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| i == j)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    /// `‖M‖²`, the number of one entries.
    pub fn match_count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    pub fn matches(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(move |(k, _)| (k / self.n, k % self.n))
    }
}

/// Nonnegative `N × N` matrix of descriptor distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::shape(format!("{} entries for a {n}x{n} matrix", data.len())));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!("distance entry {v} is not a finite nonnegative number")));
        }
        Ok(Self { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// `m_ij = 1(‖x_i − T(y_j)‖ < τ)`, with `T` mapping Y into the frame of X.
pub fn correspondence_matrix(x: &[Vec3], y: &[Vec3], t_gt: &RigidTransform, tau: f64) -> Result<CorrespondenceMatrix> {
    if x.len() != y.len() {
        return Err(Error::shape(format!("{} X keypoints and {} Y keypoints", x.len(), y.len())));
    }
    if !(tau >= 0.0) {
        return Err(Error::invalid(format!("correspondence radius {tau} is negative")));
    }
    let n = x.len();
    let mut data = vec![false; n * n];
    if n == 0 || tau == 0.0 {
        return Ok(CorrespondenceMatrix { n, data });
    }
    let moved: Vec<Vec3> = y.iter().map(|p| t_gt.apply_point(p)).collect();
    let index = SpatialIndex::from_points(moved)?;
    let rows: Vec<Vec<usize>> = x
        .par_iter()
        .map(|xi| {
            index
                .radius_search_with_dist2(xi, tau)
                .into_iter()
                .filter(|&(_, d2)| d2.sqrt() < tau)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    for (i, row) in rows.into_iter().enumerate() {
        for j in row {
            data[i * n + j] = true;
        }
    }
    Ok(CorrespondenceMatrix { n, data })
}

#[inline]
fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `d_ij = ‖fx_i − fy_j‖`.
pub fn distance_matrix(fx: &FeatureMatrix, fy: &FeatureMatrix) -> Result<DistanceMatrix> {
    if fx.rows != fy.rows || fx.dim != fy.dim {
        return Err(Error::shape(format!(
            "descriptor sets are {}x{} and {}x{}",
            fx.rows, fx.dim, fy.rows, fy.dim
        )));
    }
    let n = fx.rows;
    let data: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| (0..n).map(move |j| euclidean(fx.row(i), fy.row(j))))
        .collect();
    DistanceMatrix::new(n, data)
}

/// Chain rule from `∂L/∂D` to both descriptor sets. A zero distance has
/// no direction and contributes nothing.
pub fn distance_backward(
    fx: &FeatureMatrix,
    fy: &FeatureMatrix,
    d: &DistanceMatrix,
    grad_d: &[f64],
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let n = d.size();
    if fx.rows != n || fy.rows != n || fx.dim != fy.dim || grad_d.len() != n * n {
        return Err(Error::shape("distance gradient does not match the descriptor sets"));
    }
    let dim = fx.dim;
    let coef = |i: usize, j: usize| {
        let dij = d.get(i, j);
        let g = grad_d[i * n + j];
        if g == 0.0 || dij == 0.0 {
            0.0
        } else {
            g / dij
        }
    };
    let gx: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut row = vec![0.0; dim];
            for j in 0..n {
                let c = coef(i, j);
                if c != 0.0 {
                    for ((r, a), b) in row.iter_mut().zip(fx.row(i)).zip(fy.row(j)) {
                        *r += c * (a - b);
                    }
                }
            }
            row
        })
        .collect();
    let gy: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|j| {
            let mut row = vec![0.0; dim];
            for i in 0..n {
                let c = coef(i, j);
                if c != 0.0 {
                    for ((r, a), b) in row.iter_mut().zip(fx.row(i)).zip(fy.row(j)) {
                        *r -= c * (a - b);
                    }
                }
            }
            row
        })
        .collect();
    Ok((FeatureMatrix::new(n, dim, gx)?, FeatureMatrix::new(n, dim, gy)?))
}
