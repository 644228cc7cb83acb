use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ppf::ppf_unchecked;
use crate::cloud::{PointCloud, SpatialIndex, Vec3};
use crate::error::{Error, Result};
use crate::geom::{covariance, sorted_eigen};

/// Which channels each patch row carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncodingMode {
    /// Centered position and normal, 6 channels.
    Pn,
    /// Position, normal and the PPF to the reference point, 10 channels.
    PnPpf,
    /// PPF only, 4 channels; fully rigid invariant.
    PpfOnly,
}

impl EncodingMode {
    pub const ALL: [EncodingMode; 3] = [EncodingMode::Pn, EncodingMode::PnPpf, EncodingMode::PpfOnly];

    pub fn dim(self) -> usize {
        match self {
            EncodingMode::Pn => 6,
            EncodingMode::PnPpf => 10,
            EncodingMode::PpfOnly => 4,
        }
    }

    pub fn from_dim(dim: usize) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.dim() == dim)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EncodingMode::Pn => "pn",
            EncodingMode::PnPpf => "pn-ppf",
            EncodingMode::PpfOnly => "ppf-only",
        }
    }

    fn has_pn(self) -> bool {
        !matches!(self, EncodingMode::PpfOnly)
    }

    fn has_ppf(self) -> bool {
        !matches!(self, EncodingMode::Pn)
    }
}

impl fmt::Display for EncodingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncodingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "pn" => Ok(EncodingMode::Pn),
            "pn-ppf" => Ok(EncodingMode::PnPpf),
            "ppf-only" | "ppf" => Ok(EncodingMode::PpfOnly),
            other => Err(Error::Config(format!(
                "unknown encoding mode `{other}` (expected pn, pn-ppf or ppf-only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    /// Neighborhood radius in meters.
    pub patch_radius: f64,
    /// Rows per patch after subsampling or padding.
    pub patch_size: usize,
    pub mode: EncodingMode,
    /// Express positions and normals in the patch's local reference frame.
    pub use_lrf: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            patch_radius: 0.30,
            patch_size: 1024,
            mode: EncodingMode::PnPpf,
            use_lrf: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.patch_radius > 0.0 && self.patch_radius.is_finite()) {
            return Err(Error::invalid(format!("patch radius must be positive, got {}", self.patch_radius)));
        }
        if self.patch_size == 0 {
            return Err(Error::invalid("patch size must be at least 1"));
        }
        Ok(())
    }
}

/// Fixed-size neighborhood of a keypoint. Row 0 is always the keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPatch {
    pub reference_index: usize,
    pub center: Vec3,
    pub center_normal: Vec3,
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    /// Cloud index of every row; repeats mark padding.
    pub source_indices: Vec<usize>,
}

impl LocalPatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Seed for the patch anchored at keypoint slot `slot`, derived from a base seed.
pub fn patch_seed(base: u64, slot: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ (slot as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Gathers the points within `patch_radius` of `keypoint` and brings the
/// patch to exactly `patch_size` rows: seeded subsampling without
/// replacement when there are too many, seeded repetition when too few.
///
/// Neighbors are considered in ascending cloud-index order so that the draw
/// does not depend on floating-point distance ties.
pub fn extract_patch(
    cloud: &PointCloud,
    index: &SpatialIndex,
    keypoint: usize,
    cfg: &EncoderConfig,
    seed: u64,
) -> Result<LocalPatch> {
    cfg.validate()?;
    let normals = cloud
        .normals()
        .ok_or_else(|| Error::invalid("patch extraction requires normals"))?;
    if keypoint >= cloud.len() {
        return Err(Error::invalid(format!(
            "keypoint {keypoint} out of range for {} points",
            cloud.len()
        )));
    }
    if index.len() != cloud.len() {
        return Err(Error::shape("spatial index was built over a different cloud"));
    }
    let center = cloud.points()[keypoint];
    let mut neighbors: Vec<usize> = index
        .radius_search(&center, cfg.patch_radius)
        .into_iter()
        .filter(|&i| i != keypoint)
        .collect();
    if neighbors.is_empty() {
        return Err(Error::invalid(format!(
            "keypoint {keypoint} has no neighbors within {} m",
            cfg.patch_radius
        )));
    }
    neighbors.sort_unstable();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let others = cfg.patch_size - 1;
    let mut rows = Vec::with_capacity(cfg.patch_size);
    rows.push(keypoint);
    if neighbors.len() >= others {
        let mut picked: Vec<usize> = sample(&mut rng, neighbors.len(), others)
            .into_iter()
            .map(|k| neighbors[k])
            .collect();
        picked.sort_unstable();
        rows.extend(picked);
    } else {
        rows.extend(&neighbors);
        let pool = neighbors.len() + 1;
        for _ in rows.len()..cfg.patch_size {
            let k = rng.random_range(0..pool);
            rows.push(if k == 0 { keypoint } else { neighbors[k - 1] });
        }
    }

    Ok(LocalPatch {
        reference_index: keypoint,
        center,
        center_normal: normals[keypoint],
        points: rows.iter().map(|&i| cloud.points()[i]).collect(),
        normals: rows.iter().map(|&i| normals[i]).collect(),
        source_indices: rows,
    })
}

/// Local reference frame of a patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    /// Rows are the frame axes; multiplying a world vector gives frame coordinates.
    pub rotation: Matrix3<f64>,
    /// The covariance had rank < 2 and the identity was returned.
    pub degenerate: bool,
}

/// Relative eigenvalue floor for a usable frame.
const LRF_RANK_TOLERANCE: f64 = 1e-12;

/// Covariance frame of the patch's distinct points: axes by descending
/// eigenvalue, axis 3 turned toward the center normal, axis 1 toward the mean
/// offset from the center, axis 2 = axis 3 × axis 1.
pub fn compute_lrf(patch: &LocalPatch) -> LocalFrame {
    let mut distinct: Vec<usize> = (0..patch.len()).collect();
    distinct.sort_by_key(|&r| patch.source_indices[r]);
    distinct.dedup_by_key(|r| patch.source_indices[*r]);
    let (mean, cov) = covariance(distinct.iter().map(|&r| &patch.points[r]));
    let (values, vectors) = sorted_eigen(cov);
    if !(values[2] > 0.0) || values[1] <= LRF_RANK_TOLERANCE * values[2] {
        return LocalFrame {
            rotation: Matrix3::identity(),
            degenerate: true,
        };
    }
    let mut e1 = vectors[2].normalize();
    let mut e3 = vectors[0].normalize();
    if e3.dot(&patch.center_normal) < 0.0 {
        e3 = -e3;
    }
    if e1.dot(&(mean - patch.center)) < 0.0 {
        e1 = -e1;
    }
    let e2 = e3.cross(&e1);
    LocalFrame {
        rotation: Matrix3::from_rows(&[e1.transpose(), e2.transpose(), e3.transpose()]),
        degenerate: false,
    }
}

/// Per-patch network input: `rows × mode.dim()` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEncoding {
    pub mode: EncodingMode,
    pub rows: usize,
    pub data: Vec<f64>,
}

impl PatchEncoding {
    pub fn new(mode: EncodingMode, rows: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * mode.dim() {
            return Err(Error::shape(format!(
                "{} values for {rows} rows of width {}",
                data.len(),
                mode.dim()
            )));
        }
        Ok(Self { mode, rows, data })
    }

    pub fn dim(&self) -> usize {
        self.mode.dim()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.data[i * d..(i + 1) * d]
    }

    /// Copy with rows reordered: row `k` of the result is row `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> PatchEncoding {
        let data = perm.iter().flat_map(|&r| self.row(r).iter().copied()).collect();
        PatchEncoding {
            mode: self.mode,
            rows: perm.len(),
            data,
        }
    }
}

/// Builds the rows `[p_i | n_i | ψ(center, n_center, x_i, n_i)]` restricted
/// to the configured channels, with `p_i = x_i − center`.
pub fn encode_patch(patch: &LocalPatch, cfg: &EncoderConfig) -> PatchEncoding {
    let frame = if cfg.use_lrf && cfg.mode.has_pn() {
        Some(compute_lrf(patch).rotation)
    } else {
        None
    };
    let mode = cfg.mode;
    let mut data = Vec::with_capacity(patch.len() * mode.dim());
    for (row, (x, n)) in patch.points.iter().zip(&patch.normals).enumerate() {
        if mode.has_pn() {
            let mut p = x - patch.center;
            let mut nn = *n;
            if let Some(r) = &frame {
                p = r * p;
                nn = r * nn;
            }
            data.extend_from_slice(&[p.x, p.y, p.z, nn.x, nn.y, nn.z]);
        }
        if mode.has_ppf() {
            let psi = if row == 0 {
                [0.0; 4]
            } else {
                ppf_unchecked(&patch.center, &patch.center_normal, x, n)
            };
            data.extend_from_slice(&psi);
        }
    }
    PatchEncoding {
        mode,
        rows: patch.len(),
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::ppf;
    use crate::geom::{apply_transform, random_rigid, RigidTransform};
    use rand::Rng;
    use std::f64::consts::PI;

    fn bumpy_cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        let mut normals = Vec::new();
        for _ in 0..n {
            let (x, y): (f64, f64) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let z = 0.2 * (3.0 * x).sin() * (2.0 * y).cos() + 0.1 * x * x;
            let dzdx = 0.6 * (3.0 * x).cos() * (2.0 * y).cos() + 0.2 * x;
            let dzdy = -0.4 * (3.0 * x).sin() * (2.0 * y).sin();
            pts.push(Vec3::new(x, y, z));
            normals.push(Vec3::new(-dzdx, -dzdy, 1.0).normalize());
        }
        PointCloud::with_normals(pts, normals).unwrap()
    }

    #[test]
    fn exact_neighborhood_is_taken_whole() {
        let pts: Vec<Vec3> = (0..6).map(|i| Vec3::new(i as f64 * 0.01, 0.0, 0.0)).collect();
        let cloud = PointCloud::with_normals(pts, vec![Vec3::z(); 6]).unwrap();
        let index = SpatialIndex::build(&cloud).unwrap();
        let cfg = EncoderConfig {
            patch_size: 6,
            ..Default::default()
        };
        let patch = extract_patch(&cloud, &index, 3, &cfg, 1).unwrap();
        assert_eq!(patch.source_indices[0], 3);
        let mut rows = patch.source_indices.clone();
        rows.sort_unstable();
        assert_eq!(rows, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn small_neighborhood_is_padded() {
        let pts = vec![
            Vec3::zeros(),
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::new(0.0, 0.1, 0.0),
            Vec3::new(5.0, 0.0, 0.0),
        ];
        let cloud = PointCloud::with_normals(pts, vec![Vec3::z(); 4]).unwrap();
        let index = SpatialIndex::build(&cloud).unwrap();
        let cfg = EncoderConfig {
            patch_size: 8,
            ..Default::default()
        };
        let patch = extract_patch(&cloud, &index, 0, &cfg, 42).unwrap();
        assert_eq!(patch.len(), 8);
        assert_eq!(patch.source_indices[0], 0);
        assert!(patch.source_indices.iter().all(|i| [0, 1, 2].contains(i)));
        assert_eq!(patch, extract_patch(&cloud, &index, 0, &cfg, 42).unwrap());
        // Isolated keypoint.
        assert!(extract_patch(&cloud, &index, 3, &cfg, 42).is_err());
    }

    #[test]
    fn subsampling_is_seeded_and_within_radius() {
        let cloud = bumpy_cloud(3, 3000);
        let index = SpatialIndex::build(&cloud).unwrap();
        let cfg = EncoderConfig {
            patch_size: 64,
            patch_radius: 0.2,
            ..Default::default()
        };
        let a = extract_patch(&cloud, &index, 10, &cfg, 5).unwrap();
        let b = extract_patch(&cloud, &index, 10, &cfg, 5).unwrap();
        let c = extract_patch(&cloud, &index, 10, &cfg, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
        for p in &a.points {
            assert!((p - a.center).norm() <= 0.2);
        }
        let mut distinct = a.source_indices.clone();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct.len(), 64);
    }

    #[test]
    fn pn_rows_are_centered() {
        let pts = vec![
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(1.1, 1.0, 1.0),
            Vec3::new(1.0, 1.1, 1.0),
            Vec3::new(1.0, 1.0, 1.1),
        ];
        let cloud = PointCloud::with_normals(pts, vec![Vec3::z(); 4]).unwrap();
        let index = SpatialIndex::build(&cloud).unwrap();
        let cfg = EncoderConfig {
            patch_size: 4,
            mode: EncodingMode::Pn,
            ..Default::default()
        };
        let enc = encode_patch(&extract_patch(&cloud, &index, 0, &cfg, 0).unwrap(), &cfg);
        assert_eq!((enc.rows, enc.dim()), (4, 6));
        assert_eq!(&enc.row(0)[..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn pn_ppf_columns_are_the_reference_ppf() {
        let cloud = bumpy_cloud(4, 800);
        let index = SpatialIndex::build(&cloud).unwrap();
        let cfg = EncoderConfig {
            patch_size: 32,
            ..Default::default()
        };
        let patch = extract_patch(&cloud, &index, 7, &cfg, 9).unwrap();
        let enc = encode_patch(&patch, &cfg);
        assert_eq!(&enc.row(0)[6..], &[0.0; 4]);
        for r in 1..enc.rows {
            let expect = ppf(&patch.center, &patch.center_normal, &patch.points[r], &patch.normals[r]).unwrap();
            assert_eq!(&enc.row(r)[6..], &expect);
            assert!(enc.row(r)[6] >= 0.0);
            assert!(enc.row(r)[7..].iter().all(|a| (0.0..=PI).contains(a)));
        }
    }

    #[test]
    fn ppf_only_encoding_is_rigid_invariant() {
        let cloud = bumpy_cloud(5, 2000);
        let cfg = EncoderConfig {
            patch_size: 48,
            patch_radius: 0.15,
            mode: EncodingMode::PpfOnly,
            use_lrf: false,
        };
        for seed in 0..10 {
            let t = random_rigid(seed, PI, 3.0).unwrap();
            let moved = apply_transform(&t, &cloud);
            let (ia, ib) = (SpatialIndex::build(&cloud).unwrap(), SpatialIndex::build(&moved).unwrap());
            for kp in [0, 17, 400] {
                let pa = extract_patch(&cloud, &ia, kp, &cfg, seed).unwrap();
                let pb = extract_patch(&moved, &ib, kp, &cfg, seed).unwrap();
                assert_eq!(pa.source_indices, pb.source_indices);
                let (ea, eb) = (encode_patch(&pa, &cfg), encode_patch(&pb, &cfg));
                let dev = ea.data.iter().zip(&eb.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(dev < 1e-6, "deviation {dev}");
            }
        }
    }

    #[test]
    fn pn_positions_are_translation_invariant() {
        let cloud = bumpy_cloud(6, 1000);
        let moved = apply_transform(&RigidTransform::from_translation(Vec3::new(3.0, -7.0, 0.5)), &cloud);
        let cfg = EncoderConfig {
            patch_size: 40,
            patch_radius: 0.2,
            mode: EncodingMode::Pn,
            use_lrf: false,
        };
        let pa = extract_patch(&cloud, &SpatialIndex::build(&cloud).unwrap(), 3, &cfg, 1).unwrap();
        let pb = extract_patch(&moved, &SpatialIndex::build(&moved).unwrap(), 3, &cfg, 1).unwrap();
        let (ea, eb) = (encode_patch(&pa, &cfg), encode_patch(&pb, &cfg));
        for (a, b) in ea.data.iter().zip(&eb.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn spread_patch(rot: &RigidTransform) -> LocalPatch {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut points = vec![Vec3::zeros()];
        for _ in 0..200 {
            let p = Vec3::new(
                rng.random_range(-0.05..0.25),
                rng.random_range(-0.08..0.08),
                rng.random_range(-0.02..0.02),
            );
            points.push(p);
        }
        let points: Vec<Vec3> = points.iter().map(|p| rot.apply_point(p)).collect();
        let normal = rot.apply_vector(&Vec3::z());
        LocalPatch {
            reference_index: 0,
            center: points[0],
            center_normal: normal,
            normals: vec![normal; points.len()],
            source_indices: (0..points.len()).collect(),
            points,
        }
    }

    #[test]
    fn lrf_of_axis_aligned_patch_is_identity() {
        // Box corners around (0.1, 0, 0) plus the center at the origin: the
        // covariance is diagonal with x > y > z spreads, so its descending
        // eigenbasis is the canonical one.
        let mut points = vec![Vec3::zeros()];
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    points.push(Vec3::new(0.1 + 0.2 * sx, 0.1 * sy, 0.02 * sz));
                }
            }
        }
        let (_, cov) = covariance(points.iter());
        assert!(cov[(0, 1)].abs() < 1e-15 && cov[(0, 2)].abs() < 1e-15 && cov[(1, 2)].abs() < 1e-15);
        assert!(cov[(0, 0)] > cov[(1, 1)] && cov[(1, 1)] > cov[(2, 2)]);
        let patch = LocalPatch {
            reference_index: 0,
            center: Vec3::zeros(),
            center_normal: Vec3::z(),
            normals: vec![Vec3::z(); points.len()],
            source_indices: (0..points.len()).collect(),
            points,
        };
        let frame = compute_lrf(&patch);
        assert!(!frame.degenerate);
        assert!((frame.rotation - Matrix3::identity()).amax() < 1e-12);
    }

    #[test]
    fn lrf_aligned_coordinates_are_rotation_invariant() {
        let base = spread_patch(&RigidTransform::identity());
        let fb = compute_lrf(&base).rotation;
        for seed in 0..20 {
            let t = random_rigid(seed, PI, 2.0).unwrap();
            let moved = spread_patch(&t);
            let fm = compute_lrf(&moved).rotation;
            for (a, b) in base.points.iter().zip(&moved.points) {
                let ca = fb * (a - base.center);
                let cb = fm * (b - moved.center);
                assert!((ca - cb).norm() < 1e-5);
            }
        }
    }

    #[test]
    fn lrf_of_coincident_points_is_flagged() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        let patch = LocalPatch {
            reference_index: 0,
            center: p,
            center_normal: Vec3::z(),
            points: vec![p; 5],
            normals: vec![Vec3::z(); 5],
            source_indices: (0..5).collect(),
        };
        let frame = compute_lrf(&patch);
        assert!(frame.degenerate);
        assert_eq!(frame.rotation, Matrix3::identity());
    }

    #[test]
    fn mode_parsing() {
        for m in EncodingMode::ALL {
            assert_eq!(m.as_str().parse::<EncodingMode>().unwrap(), m);
            assert_eq!(EncodingMode::from_dim(m.dim()), Some(m));
        }
        assert!("xyz".parse::<EncodingMode>().is_err());
    }
}
