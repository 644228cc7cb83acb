use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::matching::CorrespondenceSet;
use crate::cloud::Vec3;
use crate::error::{Error, Result};
use crate::geom::{kabsch, RigidTransform};

const MAX_REFITS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub max_iters: usize,
    /// Residual below which a correspondence counts as an inlier (meters).
    pub inlier_tau: f64,
    /// Stop as soon as the inlier ratio exceeds this.
    pub early_exit_ratio: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iters: 50_000,
            inlier_tau: 0.10,
            early_exit_ratio: 0.9,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("RANSAC needs at least one iteration".into()));
        }
        if !(self.inlier_tau > 0.0 && self.inlier_tau.is_finite()) {
            return Err(Error::Config(format!("inlier threshold {} must be positive", self.inlier_tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Maps Y into the frame of X.
    pub transform: RigidTransform,
    pub inlier_count: usize,
    pub inlier_ratio: f64,
    pub iterations_used: usize,
}

fn inliers(t: &RigidTransform, x: &[Vec3], y: &[Vec3], tau: f64) -> Vec<usize> {
    let tau2 = tau * tau;
    (0..x.len())
        .filter(|&k| (x[k] - t.apply_point(&y[k])).norm_squared() < tau2)
        .collect()
}

/// Inlier count and summed squared inlier residual.
fn score(t: &RigidTransform, x: &[Vec3], y: &[Vec3], tau: f64) -> (usize, f64) {
    let tau2 = tau * tau;
    x.iter().zip(y).fold((0, 0.0), |(n, sse), (p, q)| {
        let r2 = (p - t.apply_point(q)).norm_squared();
        if r2 < tau2 {
            (n + 1, sse + r2)
        } else {
            (n, sse)
        }
    })
}

/// Three-point RANSAC over the correspondences. The best hypothesis is refit
/// by least squares on its inliers, repeatedly, until the inlier set is
/// stable. Hypotheses with equal inlier counts are ranked by their summed
/// squared inlier residual.
pub fn ransac_register(
    corrs: &CorrespondenceSet,
    x_pts: &[Vec3],
    y_pts: &[Vec3],
    cfg: &RansacConfig,
    seed: u64,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    let n = corrs.len();
    if n < 3 {
        return Err(Error::degenerate(format!("RANSAC needs at least 3 correspondences, got {n}")));
    }
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for c in &corrs.pairs {
        match (x_pts.get(c.i), y_pts.get(c.j)) {
            (Some(p), Some(q)) => {
                x.push(*p);
                y.push(*q);
            }
            _ => {
                return Err(Error::invalid(format!(
                    "correspondence ({}, {}) outside {} x {} keypoints",
                    c.i,
                    c.j,
                    x_pts.len(),
                    y_pts.len()
                )))
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(RigidTransform, (usize, f64))> = None;
    let mut iterations_used = 0;
    for _ in 0..cfg.max_iters {
        iterations_used += 1;
        let triple = sample(&mut rng, n, 3);
        let src: Vec<Vec3> = triple.iter().map(|k| y[k]).collect();
        let dst: Vec<Vec3> = triple.iter().map(|k| x[k]).collect();
        let Ok(t) = kabsch(&src, &dst) else { continue };
        let (count, sse) = score(&t, &x, &y, cfg.inlier_tau);
        if best.as_ref().is_none_or(|(_, (c, e))| count > *c || (count == *c && sse < *e)) {
            best = Some((t, (count, sse)));
        }
        if count as f64 / n as f64 > cfg.early_exit_ratio {
            break;
        }
    }
    let Some((model, _)) = best else {
        return Err(Error::degenerate(format!("all {iterations_used} sampled triples were degenerate")));
    };

    let mut transform = model;
    let mut support = inliers(&transform, &x, &y, cfg.inlier_tau);
    for _ in 0..MAX_REFITS {
        let src: Vec<Vec3> = support.iter().map(|&k| y[k]).collect();
        let dst: Vec<Vec3> = support.iter().map(|&k| x[k]).collect();
        let Ok(refit) = kabsch(&src, &dst) else { break };
        transform = refit;
        let next = inliers(&transform, &x, &y, cfg.inlier_tau);
        if next == support {
            break;
        }
        support = next;
    }
    let inlier_count = support.len();
    Ok(RegistrationResult {
        transform,
        inlier_count,
        inlier_ratio: inlier_count as f64 / n as f64,
        iterations_used,
    })
}
