use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::{PointCloud, SpatialIndex, Vec3};
use crate::error::{Error, Result};
use crate::geom::RigidTransform;

/// Attempts at drawing a camera pair before giving up on the overlap bound.
const VIEW_RETRIES: usize = 10;
const MIN_FRAGMENT_POINTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SceneKind {
    /// Floor, two walls, boxes, cylinders and a bumpy height field.
    Room,
    /// One square plane seen in full by both cameras.
    SinglePlane,
}

/// Scene and sensor parameters for [`synth_fragment_pair`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    /// Surface samples per square meter.
    pub density: f64,
    /// Per-coordinate Gaussian noise of each view, meters.
    pub noise_sigma: f64,
    /// Probability that a visible surface sample is kept by a view.
    pub keep_prob: f64,
    /// Largest azimuth difference between the two cameras, degrees.
    pub max_baseline_deg: f64,
    /// Half-angle of the camera viewing cone, degrees.
    pub fov_half_deg: f64,
    pub max_range: f64,
    /// Radius for counting a point of X as overlapping Y.
    pub overlap_tau: f64,
    pub min_overlap: f64,
}

impl SceneSpec {
    pub fn room() -> Self {
        Self {
            kind: SceneKind::Room,
            density: 400.0,
            noise_sigma: 0.002,
            keep_prob: 0.85,
            max_baseline_deg: 35.0,
            fov_half_deg: 32.0,
            max_range: 5.0,
            overlap_tau: 0.10,
            min_overlap: 0.3,
        }
    }

    pub fn single_plane() -> Self {
        Self {
            kind: SceneKind::SinglePlane,
            density: 400.0,
            noise_sigma: 0.0,
            keep_prob: 1.0,
            max_baseline_deg: 20.0,
            fov_half_deg: 60.0,
            max_range: 10.0,
            overlap_tau: 0.10,
            min_overlap: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.density > 0.0 && self.density.is_finite()) {
            return bad(format!("scene density {} must be positive", self.density));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {} must be >= 0", self.noise_sigma));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return bad(format!("keep probability {} must lie in (0, 1]", self.keep_prob));
        }
        if !(0.0..=180.0).contains(&self.max_baseline_deg) {
            return bad(format!("baseline {} deg must lie in [0, 180]", self.max_baseline_deg));
        }
        if !(self.fov_half_deg > 0.0 && self.fov_half_deg < 90.0) {
            return bad(format!("field of view half-angle {} deg must lie in (0, 90)", self.fov_half_deg));
        }
        if !(self.max_range > 0.0) || !(self.overlap_tau > 0.0) || !(0.0..=1.0).contains(&self.min_overlap) {
            return bad("range, overlap radius and minimum overlap must be positive".into());
        }
        Ok(())
    }
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::room()
    }
}

impl fmt::Display for SceneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            SceneKind::Room => "room",
            SceneKind::SinglePlane => "plane",
        };
        write!(
            f,
            "{name},density={},noise={},keep={},baseline={},fov={},range={},overlap_tau={},min_overlap={}",
            self.density,
            self.noise_sigma,
            self.keep_prob,
            self.max_baseline_deg,
            self.fov_half_deg,
            self.max_range,
            self.overlap_tau,
            self.min_overlap
        )
    }
}

/// `room` or `plane`, optionally followed by `,key=value` overrides, e.g.
/// `room,noise=0.001,keep=0.7`.
impl FromStr for SceneSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(',').map(str::trim);
        let mut spec = match parts.next().unwrap_or("") {
            "room" => SceneSpec::room(),
            "plane" => SceneSpec::single_plane(),
            other => return Err(Error::Config(format!("unknown scene {other:?} (expected room or plane)"))),
        };
        for part in parts.filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("scene option {part:?} is not key=value")))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("scene option {key} has non-numeric value {value:?}")))?;
            match key.trim() {
                "density" => spec.density = v,
                "noise" => spec.noise_sigma = v,
                "keep" => spec.keep_prob = v,
                "baseline" => spec.max_baseline_deg = v,
                "fov" => spec.fov_half_deg = v,
                "range" => spec.max_range = v,
                "overlap_tau" => spec.overlap_tau = v,
                "min_overlap" => spec.min_overlap = v,
                other => return Err(Error::Config(format!("unknown scene option {other:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Two partial views of one synthetic scene, each in its own camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FragmentPair {
    pub x: PointCloud,
    pub y: PointCloud,
    /// Maps Y into the frame of X.
    pub t_gt: RigidTransform,
    /// Fraction of X points with a Y point closer than the spec's overlap radius.
    pub overlap_fraction: f64,
    /// Scene sample behind every point of X.
    pub x_ids: Vec<usize>,
    pub y_ids: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Surfel {
    p: Vec3,
    n: Vec3,
}

/// Uniform samples on the parallelogram `origin + s·u + t·v`, `s, t ∈ [0, 1]`.
fn sample_quad(out: &mut Vec<Surfel>, rng: &mut ChaCha8Rng, density: f64, origin: Vec3, u: Vec3, v: Vec3, normal: Vec3, keep: impl Fn(&Vec3) -> bool) {
    let area = u.cross(&v).norm();
    let count = (area * density).round() as usize;
    for _ in 0..count {
        let p = origin + u * rng.random::<f64>() + v * rng.random::<f64>();
        if keep(&p) {
            out.push(Surfel { p, n: normal });
        }
    }
}

struct Footprint {
    center: Vec3,
    yaw: f64,
    half: [f64; 2],
    round: bool,
}

impl Footprint {
    fn contains(&self, p: &Vec3) -> bool {
        let d = p - self.center;
        if self.round {
            return d.x * d.x + d.y * d.y <= self.half[0] * self.half[0];
        }
        let (s, c) = self.yaw.sin_cos();
        let lx = c * d.x + s * d.y;
        let ly = -s * d.x + c * d.y;
        lx.abs() <= self.half[0] && ly.abs() <= self.half[1]
    }
}

fn build_room(rng: &mut ChaCha8Rng, density: f64) -> Vec<Surfel> {
    let mut out = Vec::new();
    let extent = 1.6;
    let mut footprints: Vec<Footprint> = Vec::new();
    let up = Vec3::z();

    // Boxes: five faces each, random yaw.
    let boxes = rng.random_range(3..=5);
    for _ in 0..boxes {
        let center = Vec3::new(rng.random_range(-1.1..1.1), rng.random_range(-1.1..1.1), 0.0);
        let half = [rng.random_range(0.1..0.3), rng.random_range(0.1..0.3)];
        let height = rng.random_range(0.2..0.7);
        let yaw = rng.random_range(0.0..PI);
        let (s, c) = yaw.sin_cos();
        let ax = Vec3::new(c, s, 0.0);
        let ay = Vec3::new(-s, c, 0.0);
        let corner = center - ax * half[0] - ay * half[1];
        let (ex, ey, ez) = (ax * 2.0 * half[0], ay * 2.0 * half[1], up * height);
        sample_quad(&mut out, rng, density, corner + ez, ex, ey, up, |_| true);
        sample_quad(&mut out, rng, density, corner, ex, ez, -ay, |_| true);
        sample_quad(&mut out, rng, density, corner + ey, ex, ez, ay, |_| true);
        sample_quad(&mut out, rng, density, corner, ey, ez, -ax, |_| true);
        sample_quad(&mut out, rng, density, corner + ex, ey, ez, ax, |_| true);
        footprints.push(Footprint {
            center,
            yaw,
            half,
            round: false,
        });
    }

    // Cylinders: side wall and top cap.
    let cylinders = rng.random_range(1..=3);
    for _ in 0..cylinders {
        let center = Vec3::new(rng.random_range(-1.1..1.1), rng.random_range(-1.1..1.1), 0.0);
        let radius: f64 = rng.random_range(0.1..0.25);
        let height = rng.random_range(0.3..0.9);
        let side = (TAU * radius * height * density).round() as usize;
        for _ in 0..side {
            let a = rng.random_range(0.0..TAU);
            let n = Vec3::new(a.cos(), a.sin(), 0.0);
            out.push(Surfel {
                p: center + n * radius + up * rng.random_range(0.0..height),
                n,
            });
        }
        let cap = (PI * radius * radius * density).round() as usize;
        for _ in 0..cap {
            let a = rng.random_range(0.0..TAU);
            let r = radius * rng.random::<f64>().sqrt();
            out.push(Surfel {
                p: center + Vec3::new(r * a.cos(), r * a.sin(), height),
                n: up,
            });
        }
        footprints.push(Footprint {
            center,
            yaw: 0.0,
            half: [radius, radius],
            round: true,
        });
    }

    // Height field: a sum of Gaussian bumps over a square.
    let hf_center = Vec3::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), 0.0);
    let hf_half = 0.45;
    let bumps: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(-hf_half..hf_half),
                rng.random_range(-hf_half..hf_half),
                rng.random_range(0.04..0.15),
                rng.random_range(0.08..0.2),
            )
        })
        .collect();
    let hf_count = ((2.0 * hf_half) * (2.0 * hf_half) * density * 1.2).round() as usize;
    for _ in 0..hf_count {
        let (u, v) = (rng.random_range(-hf_half..hf_half), rng.random_range(-hf_half..hf_half));
        let (mut z, mut dzdu, mut dzdv) = (0.02, 0.0, 0.0);
        for &(bu, bv, amp, width) in &bumps {
            let e = amp * (-((u - bu).powi(2) + (v - bv).powi(2)) / (2.0 * width * width)).exp();
            z += e;
            dzdu -= e * (u - bu) / (width * width);
            dzdv -= e * (v - bv) / (width * width);
        }
        out.push(Surfel {
            p: hf_center + Vec3::new(u, v, z),
            n: Vec3::new(-dzdu, -dzdv, 1.0).normalize(),
        });
    }
    footprints.push(Footprint {
        center: hf_center,
        yaw: 0.0,
        half: [hf_half, hf_half],
        round: false,
    });

    // Floor, minus whatever stands on it, and two walls.
    let floor_keep = |p: &Vec3| !footprints.iter().any(|f| f.contains(p));
    let span = 2.0 * extent;
    sample_quad(
        &mut out,
        rng,
        density,
        Vec3::new(-extent, -extent, 0.0),
        Vec3::x() * span,
        Vec3::y() * span,
        up,
        floor_keep,
    );
    let wall_h = 1.0;
    sample_quad(
        &mut out,
        rng,
        density,
        Vec3::new(-extent, -extent, 0.0),
        Vec3::y() * span,
        up * wall_h,
        Vec3::x(),
        |_| true,
    );
    sample_quad(
        &mut out,
        rng,
        density,
        Vec3::new(-extent, extent, 0.0),
        Vec3::x() * span,
        up * wall_h,
        -Vec3::y(),
        |_| true,
    );
    out
}

fn build_plane(rng: &mut ChaCha8Rng, density: f64) -> Vec<Surfel> {
    let mut out = Vec::new();
    sample_quad(
        &mut out,
        rng,
        density,
        Vec3::new(-1.0, -1.0, 0.0),
        Vec3::x() * 2.0,
        Vec3::y() * 2.0,
        Vec3::z(),
        |_| true,
    );
    out
}

/// Camera-to-world pose looking from `eye` at `target`. The camera looks
/// down its +z axis with +y pointing towards the floor.
fn look_at(eye: Vec3, target: Vec3) -> RigidTransform {
    let forward = (target - eye).normalize();
    let mut right = forward.cross(&Vec3::z());
    if right.norm() < 1e-9 {
        right = Vec3::x();
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    let r = Matrix3::from_columns(&[right, down, forward]);
    RigidTransform::from_parts_unchecked(r, eye)
}

struct View {
    cloud: PointCloud,
    ids: Vec<usize>,
}

fn render(scene: &[Surfel], cam: &RigidTransform, spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<View> {
    let to_cam = cam.inverse();
    let cos_fov = spec.fov_half_deg.to_radians().cos();
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let eye = *cam.translation();
    let mut points = Vec::new();
    let mut ids = Vec::new();
    for (id, s) in scene.iter().enumerate() {
        let q = to_cam.apply_point(&s.p);
        let range = q.norm();
        let visible = q.z > 0.0
            && q.z >= cos_fov * range
            && range <= spec.max_range
            && s.n.dot(&(eye - s.p)) > 0.0;
        // Dropout draws happen for every visible sample so the stream stays aligned.
        if !visible || rng.random::<f64>() >= spec.keep_prob {
            continue;
        }
        let jitter = if spec.noise_sigma > 0.0 {
            Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
        } else {
            Vec3::zeros()
        };
        points.push(q + jitter);
        ids.push(id);
    }
    Ok(View {
        cloud: PointCloud::new(points)?,
        ids,
    })
}

/// Fraction of `x` with a point of `y_in_x` closer than `tau`.
pub fn overlap_fraction(x: &PointCloud, y_in_x: &PointCloud, tau: f64) -> Result<f64> {
    if x.is_empty() {
        return Ok(0.0);
    }
    if y_in_x.is_empty() {
        return Ok(0.0);
    }
    let index = SpatialIndex::build(y_in_x)?;
    let hits = x
        .points()
        .iter()
        .filter(|p| {
            index
                .knn_with_dist2(p, 1)
                .first()
                .is_some_and(|&(_, d2)| d2.sqrt() < tau)
        })
        .count();
    Ok(hits as f64 / x.len() as f64)
}

/// Samples a scene once, then renders it from two cameras aimed at the same
/// target. Fragments keep the shuffled scene sample order, so both start
/// from a common random ordering of the surface.
pub fn synth_fragment_pair(seed: u64, spec: &SceneSpec) -> Result<FragmentPair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = match spec.kind {
        SceneKind::Room => build_room(&mut rng, spec.density),
        SceneKind::SinglePlane => build_plane(&mut rng, spec.density),
    };
    scene.shuffle(&mut rng);

    let mut best_overlap = 0.0f64;
    for _ in 0..VIEW_RETRIES {
        let (cam_a, cam_b) = match spec.kind {
            SceneKind::Room => {
                let target = Vec3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), 0.25);
                let azimuth = rng.random_range(-0.25 * PI..0.75 * PI);
                let baseline = spec.max_baseline_deg.to_radians()
                    * rng.random_range(0.4..1.0)
                    * if rng.random::<bool>() { 1.0 } else { -1.0 };
                let eye = |az: f64, h: f64, dist: f64| target + Vec3::new(dist * az.cos(), -dist * az.sin(), h);
                let a = look_at(eye(azimuth, rng.random_range(1.3..1.8), rng.random_range(1.6..2.2)), target);
                let b = look_at(
                    eye(azimuth + baseline, rng.random_range(1.3..1.8), rng.random_range(1.6..2.2)),
                    target,
                );
                (a, b)
            }
            SceneKind::SinglePlane => {
                let target = Vec3::zeros();
                let tilt = spec.max_baseline_deg.to_radians() * rng.random_range(0.0..1.0);
                let az = rng.random_range(0.0..TAU);
                let height = 2.5;
                let a = look_at(Vec3::new(0.0, 1e-3, height), target);
                let offset = Vec3::new(az.cos(), az.sin(), 0.0) * height * tilt.tan();
                let b = look_at(Vec3::new(0.0, 1e-3, height) + offset, target);
                (a, b)
            }
        };
        let va = render(&scene, &cam_a, spec, &mut rng)?;
        let vb = render(&scene, &cam_b, spec, &mut rng)?;
        if va.cloud.len() < MIN_FRAGMENT_POINTS || vb.cloud.len() < MIN_FRAGMENT_POINTS {
            continue;
        }
        let t_gt = cam_a.inverse().compose(&cam_b);
        let y_in_x = crate::geom::apply_transform(&t_gt, &vb.cloud);
        let overlap = overlap_fraction(&va.cloud, &y_in_x, spec.overlap_tau)?;
        best_overlap = best_overlap.max(overlap);
        if overlap >= spec.min_overlap {
            return Ok(FragmentPair {
                x: va.cloud,
                y: vb.cloud,
                t_gt,
                overlap_fraction: overlap,
                x_ids: va.ids,
                y_ids: vb.ids,
            });
        }
    }
    Err(Error::degenerate(format!(
        "no camera pair reached {:.2} overlap in {VIEW_RETRIES} attempts (best {best_overlap:.3})",
        spec.min_overlap
    )))
}
