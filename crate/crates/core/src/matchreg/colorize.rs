use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::net::FeatureMatrix;

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOLERANCE: f64 = 1e-9;

/// Projects descriptors onto their top three principal components and
/// rescales each channel to [0, 1]. Channels without variance are 0.5.
pub fn pca_colorize(features: &FeatureMatrix) -> Result<Vec<[f64; 3]>> {
    let (n, dim) = (features.rows, features.dim);
    if n < 3 {
        return Err(Error::invalid(format!("PCA colorization needs at least 3 descriptors, got {n}")));
    }
    let mut mean = vec![0.0; dim];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(features.row(i)) {
            *m += v / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, dim, |i, k| features.row(i)[k] - mean[k]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);

    let mut colors = vec![[0.5; 3]; n];
    for (channel, &c) in order.iter().take(3).enumerate() {
        let lambda = eig.eigenvalues[c];
        if !(top > 0.0 && lambda > RANK_TOLERANCE * top) {
            continue;
        }
        let mut axis = eig.eigenvectors.column(c).into_owned();
        let lead = axis.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            axis = -axis;
        }
        let proj = &centered * axis;
        let (lo, hi) = proj.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        if hi > lo {
            for (color, v) in colors.iter_mut().zip(proj.iter()) {
                color[channel] = (v - lo) / (hi - lo);
            }
        }
    }
    Ok(colors)
}
