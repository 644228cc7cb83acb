//! Greedy distance-constrained keypoint sampling.

use std::collections::HashMap;

use crate::cloud::{bbox_diagonal, PointCloud, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// Minimum spacing between samples as a fraction of the cloud diameter.
    pub tau_rel: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { tau_rel: 0.05 }
    }
}

impl SamplingConfig {
    pub fn new(tau_rel: f64) -> Result<Self> {
        let cfg = Self { tau_rel };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_rel > 0.0 && self.tau_rel.is_finite()) {
            return Err(Error::invalid(format!("tau_rel must be positive, got {}", self.tau_rel)));
        }
        Ok(())
    }
}

/// Visits points in stored order and accepts a point iff it lies farther than
/// `tau_rel * diameter` from every point accepted so far.
pub fn distance_constrained_sample(cloud: &PointCloud, cfg: &SamplingConfig) -> Result<Vec<usize>> {
    distance_constrained_sample_masked(cloud, cfg, None)
}

/// As [`distance_constrained_sample`], skipping points whose `excluded` flag
/// is set. The diameter is still measured over the whole cloud.
pub fn distance_constrained_sample_masked(
    cloud: &PointCloud,
    cfg: &SamplingConfig,
    excluded: Option<&[bool]>,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    if cloud.is_empty() {
        return Err(Error::invalid("cannot sample an empty cloud"));
    }
    if !cloud.has_normals() {
        return Err(Error::invalid("sampling requires normals"));
    }
    if let Some(mask) = excluded {
        if mask.len() != cloud.len() {
            return Err(Error::shape(format!(
                "exclusion mask has {} entries for {} points",
                mask.len(),
                cloud.len()
            )));
        }
    }
    let diameter = bbox_diagonal(cloud.points())?;
    let threshold = cfg.tau_rel * diameter;
    let candidates = cloud
        .points()
        .iter()
        .enumerate()
        .filter(|(i, _)| !excluded.is_some_and(|m| m[*i]));
    Ok(greedy(candidates, threshold, diameter))
}

fn greedy<'a>(candidates: impl Iterator<Item = (usize, &'a Vec3)>, threshold: f64, diameter: f64) -> Vec<usize> {
    let t2 = threshold * threshold;
    let mut accepted = Vec::new();

    // A voxel grid with cell = threshold only needs the 27 surrounding cells.
    // Tiny thresholds relative to the extent would make cell keys overflow.
    if threshold <= 0.0 || diameter / threshold > 1e6 {
        let mut kept: Vec<Vec3> = Vec::new();
        for (i, p) in candidates {
            if kept.iter().all(|q| (p - q).norm_squared() > t2) {
                kept.push(*p);
                accepted.push(i);
            }
        }
        return accepted;
    }

    let cell = |p: &Vec3| -> [i64; 3] { [0, 1, 2].map(|a| (p[a] / threshold).floor() as i64) };
    let mut grid: HashMap<[i64; 3], Vec<Vec3>> = HashMap::new();
    for (i, p) in candidates {
        let c = cell(p);
        let mut clear = true;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        if bucket.iter().any(|q| (p - q).norm_squared() <= t2) {
                            clear = false;
                            break 'search;
                        }
                    }
                }
            }
        }
        if clear {
            grid.entry(c).or_default().push(*p);
            accepted.push(i);
        }
    }
    accepted
}
