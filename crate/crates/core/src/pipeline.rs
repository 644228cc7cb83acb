//! Cloud to descriptors: normals, keypoints, patches, network.

use rayon::prelude::*;

use crate::cloud::{PointCloud, SpatialIndex, Vec3};
use crate::encode::{encode_patch, extract_patch, patch_seed, EncoderConfig, PatchEncoding};
use crate::error::{Error, Result};
use crate::geom::{distance_constrained_sample_masked, estimate_normals, SamplingConfig, DEFAULT_NORMAL_K};
use crate::net::{forward, DescriptorSet, ForwardCache, PpfNetParams};

/// Threshold relaxation applied while fewer than the requested keypoints are accepted.
pub const TAU_RELAX: f64 = 0.7;
const MAX_RELAXATIONS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractConfig {
    pub encoder: EncoderConfig,
    pub sampling: SamplingConfig,
    /// Keypoints per fragment.
    pub keypoints: usize,
    pub normal_k: usize,
    /// Sensor position for orienting estimated normals.
    pub viewpoint: Vec3,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            sampling: SamplingConfig::default(),
            keypoints: 2048,
            normal_k: DEFAULT_NORMAL_K,
            viewpoint: Vec3::zeros(),
        }
    }
}

impl ExtractConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.sampling.validate()?;
        if self.keypoints == 0 {
            return Err(Error::Config("keypoint count must be at least 1".into()));
        }
        if self.normal_k < 3 {
            return Err(Error::Config(format!("normal neighborhood k = {} is below 3", self.normal_k)));
        }
        Ok(())
    }
}

/// A fragment ready for the network: oriented cloud, keypoints and encoded patches.
#[derive(Debug, Clone)]
pub struct PreparedFragment {
    pub cloud: PointCloud,
    pub keypoint_indices: Vec<usize>,
    pub keypoints: Vec<Vec3>,
    pub encodings: Vec<PatchEncoding>,
}

/// Estimated normals, plus a mask of points that cannot anchor a patch:
/// degenerate normal or no other point within the patch radius.
fn oriented_cloud(cloud: &PointCloud, index: &SpatialIndex, cfg: &ExtractConfig) -> Result<(PointCloud, Vec<bool>)> {
    let (oriented, degenerate) = if cloud.has_normals() {
        (cloud.clone(), vec![false; cloud.len()])
    } else {
        let est = estimate_normals(cloud, cfg.normal_k, &cfg.viewpoint)?;
        (est.cloud, est.degenerate)
    };
    let radius = cfg.encoder.patch_radius;
    let eligible = oriented
        .points()
        .par_iter()
        .zip(degenerate.par_iter())
        .map(|(p, &deg)| !deg && index.knn_with_dist2(p, 2).get(1).is_some_and(|&(_, d2)| d2 <= radius * radius))
        .collect();
    Ok((oriented, eligible))
}

/// The first `count` keypoints in acceptance order, shrinking the spacing
/// threshold by [`TAU_RELAX`] until enough points are accepted.
pub fn select_keypoints(cloud: &PointCloud, eligible: &[bool], count: usize, sampling: &SamplingConfig) -> Result<Vec<usize>> {
    let available = eligible.iter().filter(|&&e| e).count();
    if available < count {
        return Err(Error::degenerate(format!(
            "{available} points can anchor a patch, {count} keypoints requested"
        )));
    }
    let excluded: Vec<bool> = eligible.iter().map(|&e| !e).collect();
    let mut cfg = *sampling;
    for _ in 0..MAX_RELAXATIONS {
        let mut accepted = distance_constrained_sample_masked(cloud, &cfg, Some(&excluded))?;
        if accepted.len() >= count {
            accepted.truncate(count);
            return Ok(accepted);
        }
        cfg.tau_rel *= TAU_RELAX;
    }
    Err(Error::degenerate(format!(
        "distance-constrained sampling could not reach {count} keypoints (duplicate points?)"
    )))
}

/// Normals (unless present), keypoints and patch encodings of one fragment.
/// Patch `k` is subsampled with `patch_seed(seed, k)`.
pub fn prepare_fragment(cloud: &PointCloud, cfg: &ExtractConfig, seed: u64) -> Result<PreparedFragment> {
    cfg.validate()?;
    let index = SpatialIndex::build(cloud)?;
    let (oriented, eligible) = oriented_cloud(cloud, &index, cfg)?;
    let keypoint_indices = select_keypoints(&oriented, &eligible, cfg.keypoints, &cfg.sampling)?;
    prepare_with_keypoints(oriented, &index, keypoint_indices, cfg, seed)
}

/// Like [`prepare_fragment`] with the keypoints fixed by the caller. The
/// cloud must carry normals.
pub fn prepare_with_keypoints(
    cloud: PointCloud,
    index: &SpatialIndex,
    keypoint_indices: Vec<usize>,
    cfg: &ExtractConfig,
    seed: u64,
) -> Result<PreparedFragment> {
    if !cloud.has_normals() {
        return Err(Error::invalid("patch encoding needs normals"));
    }
    if keypoint_indices.is_empty() {
        return Err(Error::invalid("no keypoints to encode"));
    }
    let encodings = keypoint_indices
        .par_iter()
        .enumerate()
        .map(|(slot, &k)| {
            let patch = extract_patch(&cloud, index, k, &cfg.encoder, patch_seed(seed, slot))?;
            Ok(encode_patch(&patch, &cfg.encoder))
        })
        .collect::<Result<Vec<_>>>()?;
    let keypoints = keypoint_indices.iter().map(|&i| cloud.points()[i]).collect();
    Ok(PreparedFragment {
        cloud,
        keypoint_indices,
        keypoints,
        encodings,
    })
}

/// Prepares a cloud with normals already installed at fixed keypoints,
/// building the neighbor index internally.
pub fn prepare_at_keypoints(cloud: &PointCloud, keypoint_indices: Vec<usize>, cfg: &ExtractConfig, seed: u64) -> Result<PreparedFragment> {
    let index = SpatialIndex::build(cloud)?;
    prepare_with_keypoints(cloud.clone(), &index, keypoint_indices, cfg, seed)
}

pub fn describe_prepared(params: &PpfNetParams, prepared: &PreparedFragment) -> Result<(DescriptorSet, ForwardCache)> {
    let (features, cache) = forward(params, &prepared.encodings)?;
    let set = DescriptorSet::new(features, prepared.keypoints.clone(), prepared.keypoint_indices.clone())?;
    Ok((set, cache))
}

/// Full extraction: cloud in, one descriptor per keypoint out.
pub fn extract_descriptors(params: &PpfNetParams, cloud: &PointCloud, cfg: &ExtractConfig, seed: u64) -> Result<DescriptorSet> {
    if params.input_dim() != cfg.encoder.mode.dim() {
        return Err(Error::Config(format!(
            "network expects {}-channel input, encoding mode {} gives {}",
            params.input_dim(),
            cfg.encoder.mode,
            cfg.encoder.mode.dim()
        )));
    }
    let prepared = prepare_fragment(cloud, cfg, seed)?;
    Ok(describe_prepared(params, &prepared)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::EncodingMode;
    use crate::geom::apply_transform;
    use crate::train::{synth_fragment_pair, SceneSpec};

    fn small_cfg(mode: EncodingMode) -> ExtractConfig {
        ExtractConfig {
            encoder: EncoderConfig {
                patch_size: 64,
                mode,
                ..EncoderConfig::default()
            },
            keypoints: 32,
            ..ExtractConfig::default()
        }
    }

    #[test]
    fn keypoints_are_spread_eligible_and_truncated() {
        let pair = synth_fragment_pair(2, &SceneSpec::room()).unwrap();
        let cfg = small_cfg(EncodingMode::PnPpf);
        let prepared = prepare_fragment(&pair.x, &cfg, 7).unwrap();
        assert_eq!(prepared.keypoint_indices.len(), 32);
        assert_eq!(prepared.encodings.len(), 32);
        assert!(prepared.encodings.iter().all(|e| e.rows == 64 && e.dim() == 10));
        let mut sorted = prepared.keypoint_indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 32);
    }

    #[test]
    fn relaxation_reaches_the_requested_count() {
        let pts: Vec<Vec3> = (0..400)
            .map(|i| Vec3::new((i % 20) as f64 * 0.05, (i / 20) as f64 * 0.05, 0.0))
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let cfg = ExtractConfig {
            sampling: SamplingConfig::new(0.5).unwrap(),
            ..small_cfg(EncodingMode::Pn)
        };
        let prepared = prepare_fragment(&cloud, &cfg, 1).unwrap();
        assert_eq!(prepared.keypoints.len(), 32);

        let too_many = ExtractConfig {
            keypoints: 401,
            ..cfg
        };
        assert!(matches!(prepare_fragment(&cloud, &too_many, 1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn ppf_only_descriptors_are_rigidly_invariant() {
        let pair = synth_fragment_pair(4, &SceneSpec::room()).unwrap();
        let cfg = small_cfg(EncodingMode::PpfOnly);
        let params = PpfNetParams::init(3, 4).unwrap();
        let prepared = prepare_fragment(&pair.x, &cfg, 9).unwrap();
        let (base, _) = describe_prepared(&params, &prepared).unwrap();

        let t = crate::geom::random_rigid(8, std::f64::consts::PI, 3.0).unwrap();
        let moved = apply_transform(&t, &prepared.cloud);
        let again = prepare_at_keypoints(&moved, prepared.keypoint_indices.clone(), &cfg, 9).unwrap();
        let (rotated, _) = describe_prepared(&params, &again).unwrap();
        let dev = base
            .features
            .data
            .iter()
            .zip(&rotated.features.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(dev < 1e-5, "max deviation {dev}");
    }

    #[test]
    fn mode_mismatch_is_a_config_error() {
        let pair = synth_fragment_pair(4, &SceneSpec::room()).unwrap();
        let params = PpfNetParams::init(3, 6).unwrap();
        let err = extract_descriptors(&params, &pair.x, &small_cfg(EncodingMode::PnPpf), 0);
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
