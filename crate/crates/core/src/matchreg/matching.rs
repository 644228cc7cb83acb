use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::{DescriptorSet, FeatureMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Row in the X descriptor set.
    pub i: usize,
    /// Row in the Y descriptor set.
    pub j: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    /// Checks index ranges against keypoint counts and that distances are finite and nonnegative.
    pub fn new(pairs: Vec<Correspondence>, x_len: usize, y_len: usize) -> Result<Self> {
        for c in &pairs {
            if c.i >= x_len || c.j >= y_len {
                return Err(Error::invalid(format!(
                    "correspondence ({}, {}) outside {x_len} x {y_len} keypoints",
                    c.i, c.j
                )));
            }
            if !(c.distance.is_finite() && c.distance >= 0.0) {
                return Err(Error::invalid(format!("correspondence distance {} is invalid", c.distance)));
            }
        }
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest row of `b` for each row of `a`, lowest index on ties.
fn nearest_rows(a: &FeatureMatrix, b: &FeatureMatrix) -> Vec<(usize, f64)> {
    (0..a.rows)
        .into_par_iter()
        .map(|i| {
            let q = a.row(i);
            let mut best = (0, f64::INFINITY);
            for j in 0..b.rows {
                let d = dist2(q, b.row(j));
                if d < best.1 {
                    best = (j, d);
                }
            }
            (best.0, best.1.sqrt())
        })
        .collect()
}

/// Euclidean nearest neighbor in Y for every X descriptor. With `mutual`,
/// only pairs that are also nearest from Y back to X survive.
pub fn match_descriptors(fx: &DescriptorSet, fy: &DescriptorSet, mutual: bool) -> Result<CorrespondenceSet> {
    match_features(&fx.features, &fy.features, mutual)
}

pub fn match_features(fx: &FeatureMatrix, fy: &FeatureMatrix, mutual: bool) -> Result<CorrespondenceSet> {
    if fx.rows == 0 || fy.rows == 0 {
        return Err(Error::invalid("cannot match an empty descriptor set"));
    }
    if fx.dim != fy.dim {
        return Err(Error::shape(format!("descriptor widths {} and {}", fx.dim, fy.dim)));
    }
    let forward = nearest_rows(fx, fy);
    let back = if mutual { Some(nearest_rows(fy, fx)) } else { None };
    let pairs = forward
        .into_iter()
        .enumerate()
        .filter(|&(i, (j, _))| back.as_ref().is_none_or(|b| b[j].0 == i))
        .map(|(i, (j, distance))| Correspondence { i, j, distance })
        .collect();
    Ok(CorrespondenceSet { pairs })
}
