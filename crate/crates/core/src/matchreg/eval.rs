use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::matching::{match_descriptors, match_features, CorrespondenceSet};
use crate::cloud::{PointCloud, Vec3};
use crate::encode::patch_seed;
use crate::error::{Error, Result};
use crate::geom::{apply_transform, RigidTransform};
use crate::net::PpfNetParams;
use crate::pipeline::{describe_prepared, prepare_at_keypoints, prepare_fragment, ExtractConfig};
use crate::train::FragmentPair;

pub const DEFAULT_SWEEP_ANGLES: [f64; 7] = [0.0, 30.0, 60.0, 90.0, 120.0, 150.0, 180.0];
pub const DEFAULT_KEEP_FRACTIONS: [f64; 5] = [1.0, 0.5, 0.25, 0.125, 0.0625];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallConfig {
    /// Residual under the true pose for a correspondence to count (meters).
    pub tau1: f64,
    /// A pair is matched when its inlier ratio strictly exceeds this.
    pub tau2: f64,
}

impl Default for RecallConfig {
    fn default() -> Self {
        Self { tau1: 0.10, tau2: 0.05 }
    }
}

/// Correspondences found for one fragment pair plus what is needed to score them.
#[derive(Debug, Clone)]
pub struct PairEvaluation {
    pub corrs: CorrespondenceSet,
    pub t_gt: RigidTransform,
    pub x_keypoints: Vec<Vec3>,
    pub y_keypoints: Vec<Vec3>,
}

impl PairEvaluation {
    /// A pair whose descriptors could not be computed; scores as unmatched.
    pub fn failed(t_gt: RigidTransform) -> Self {
        Self {
            corrs: CorrespondenceSet::default(),
            t_gt,
            x_keypoints: Vec::new(),
            y_keypoints: Vec::new(),
        }
    }

    /// Fraction of correspondences within `tau1` under the true pose; 0 for an empty set.
    pub fn inlier_ratio(&self, tau1: f64) -> f64 {
        if self.corrs.is_empty() {
            return 0.0;
        }
        let hits = self
            .corrs
            .pairs
            .iter()
            .filter(|c| (self.x_keypoints[c.i] - self.t_gt.apply_point(&self.y_keypoints[c.j])).norm() < tau1)
            .count();
        hits as f64 / self.corrs.len() as f64
    }

    pub fn is_matched(&self, cfg: &RecallConfig) -> bool {
        self.inlier_ratio(cfg.tau1) > cfg.tau2
    }
}

/// Share of pairs whose inlier ratio is strictly above `tau2`.
pub fn fragment_recall(results: &[PairEvaluation], cfg: &RecallConfig) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::invalid("recall needs at least one fragment pair"));
    }
    let matched = results.iter().filter(|r| r.is_matched(cfg)).count();
    Ok(matched as f64 / results.len() as f64)
}

/// Extracts descriptors for both fragments and matches X to Y.
pub fn evaluate_pair(
    params: &PpfNetParams,
    pair: &FragmentPair,
    cfg: &ExtractConfig,
    mutual: bool,
    seed: u64,
) -> Result<PairEvaluation> {
    let x = prepare_fragment(&pair.x, cfg, patch_seed(seed, 0))?;
    let y = prepare_fragment(&pair.y, cfg, patch_seed(seed, 1))?;
    let (fx, _) = describe_prepared(params, &x)?;
    let (fy, _) = describe_prepared(params, &y)?;
    Ok(PairEvaluation {
        corrs: match_descriptors(&fx, &fy, mutual)?,
        t_gt: pair.t_gt,
        x_keypoints: x.keypoints,
        y_keypoints: y.keypoints,
    })
}

/// Like [`evaluate_pair`], but a fragment too sparse to describe yields an
/// unmatched pair instead of an error.
pub fn evaluate_pair_lenient(
    params: &PpfNetParams,
    pair: &FragmentPair,
    cfg: &ExtractConfig,
    mutual: bool,
    seed: u64,
) -> Result<PairEvaluation> {
    match evaluate_pair(params, pair, cfg, mutual, seed) {
        Err(Error::Degenerate(_) | Error::InvalidInput(_)) => Ok(PairEvaluation::failed(pair.t_gt)),
        other => other,
    }
}

/// Rotates the fragment about the z axis, re-describes it at the same
/// keypoints and reports, per angle in degrees, the share of keypoints whose
/// nearest unrotated descriptor is their own.
pub fn rotation_sweep(
    fragment: &PointCloud,
    params: &PpfNetParams,
    cfg: &ExtractConfig,
    angles_deg: &[f64],
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let base = prepare_fragment(fragment, cfg, seed)?;
    let (reference, _) = describe_prepared(params, &base)?;
    angles_deg
        .iter()
        .map(|&deg| {
            let t = RigidTransform::from_axis_angle(&Vec3::z(), deg.to_radians(), Vec3::zeros());
            let moved = apply_transform(&t, &base.cloud);
            let again = prepare_at_keypoints(&moved, base.keypoint_indices.clone(), cfg, seed)?;
            let (rotated, _) = describe_prepared(params, &again)?;
            let corrs = match_features(&rotated.features, &reference.features, false)?;
            let hits = corrs.pairs.iter().filter(|c| c.i == c.j).count();
            Ok((deg, hits as f64 / corrs.len() as f64))
        })
        .collect()
}

/// Keeps each point independently with probability `fraction`.
pub fn random_subsample(cloud: &PointCloud, fraction: f64, seed: u64) -> Result<PointCloud> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("keep fraction {fraction} outside (0, 1]")));
    }
    if fraction == 1.0 {
        return Ok(cloud.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep: Vec<usize> = (0..cloud.len()).filter(|_| rng.random::<f64>() < fraction).collect();
    Ok(cloud.select(&keep))
}

/// Recall on randomly thinned copies of the pairs, one entry per keep fraction.
/// Pairs left too sparse to describe count as unmatched.
pub fn sparsity_sweep(
    pairs: &[FragmentPair],
    params: &PpfNetParams,
    cfg: &ExtractConfig,
    recall: &RecallConfig,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if pairs.is_empty() {
        return Err(Error::invalid("sparsity sweep needs at least one fragment pair"));
    }
    fractions
        .iter()
        .map(|&fraction| {
            let evals = pairs
                .par_iter()
                .enumerate()
                .map(|(k, pair)| {
                    let thinned = FragmentPair {
                        x: random_subsample(&pair.x, fraction, patch_seed(seed ^ 0x7415, 2 * k))?,
                        y: random_subsample(&pair.y, fraction, patch_seed(seed ^ 0x7415, 2 * k + 1))?,
                        ..pair.clone()
                    };
                    if thinned.x.is_empty() || thinned.y.is_empty() {
                        return Ok(PairEvaluation::failed(pair.t_gt));
                    }
                    evaluate_pair_lenient(params, &thinned, cfg, false, patch_seed(seed, k))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((fraction, fragment_recall(&evals, recall)?))
        })
        .collect()
}
