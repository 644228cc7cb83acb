use nalgebra::Matrix3;

use super::RigidTransform;
use crate::cloud::{PointCloud, Vec3};
use crate::error::{Error, Result};

/// Relative singular-value floor below which the cross-covariance is treated
/// as rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// Mean squared residual `(1/n) Σ ‖x_i − R y_i − t‖²` under index-wise
/// correspondence.
pub fn registration_error(x: &PointCloud, y: &PointCloud, t: &RigidTransform) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(format!(
            "registration error needs equal cardinality, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::invalid("registration error of empty sets"));
    }
    let sum: f64 = x
        .points()
        .iter()
        .zip(y.points())
        .map(|(a, b)| (a - t.apply_point(b)).norm_squared())
        .sum();
    Ok(sum / x.len() as f64)
}

/// Least-squares rigid transform taking `src` onto `dst`.
///
/// Centered cross-covariance, SVD, and a reflection fix that forces
/// `det(R) = +1`.
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::shape(format!(
            "kabsch needs paired points, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::invalid(format!("kabsch needs at least 3 pairs, got {}", src.len())));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= RANK_TOLERANCE * sv[0] {
        return Err(Error::degenerate("correspondences are collinear or coincident"));
    }
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested Vᵀ").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let r = v * fix * u.transpose();
    let t = cd - r * cs;
    Ok(RigidTransform::from_parts_unchecked(r, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{apply_transform, random_rigid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()) * 2.0)
            .collect()
    }

    #[test]
    fn registration_error_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = PointCloud::new(random_points(&mut rng, 20)).unwrap();
        assert_eq!(registration_error(&x, &x, &RigidTransform::identity()).unwrap(), 0.0);

        let shifted: Vec<Vec3> = x.points().iter().map(|p| p - Vec3::x()).collect();
        let y = PointCloud::new(shifted).unwrap();
        let t = RigidTransform::from_translation(Vec3::x());
        assert!(registration_error(&x, &y, &t).unwrap() < 1e-28);

        for seed in 0..20 {
            let t = random_rigid(seed, PI, 3.0).unwrap();
            let y = apply_transform(&t.inverse(), &x);
            assert!(registration_error(&x, &y, &t).unwrap() < 1e-10);
        }

        let short = PointCloud::new(vec![Vec3::zeros()]).unwrap();
        assert!(registration_error(&x, &short, &t_id()).is_err());
    }

    fn t_id() -> RigidTransform {
        RigidTransform::identity()
    }

    fn pose_error(a: &RigidTransform, b: &RigidTransform) -> f64 {
        a.rotation_angle_to(b).max(a.translation_distance_to(b))
    }

    #[test]
    fn exact_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = random_points(&mut rng, 4);
        assert!(pose_error(&kabsch(&src, &src).unwrap(), &t_id()) < 1e-12);
        for seed in 0..100 {
            let truth = random_rigid(seed, PI, 5.0).unwrap();
            let src = random_points(&mut rng, 4);
            let dst: Vec<Vec3> = src.iter().map(|p| truth.apply_point(p)).collect();
            let est = kabsch(&src, &dst).unwrap();
            assert!(pose_error(&est, &truth) < 1e-9, "seed {seed}");
            assert!((est.rotation().determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn three_points_suffice_and_planar_is_fine() {
        let truth = random_rigid(3, 2.0, 1.0).unwrap();
        let src = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        let dst: Vec<Vec3> = src.iter().map(|p| truth.apply_point(p)).collect();
        assert!(pose_error(&kabsch(&src, &dst).unwrap(), &truth) < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let two = vec![Vec3::zeros(), Vec3::x()];
        assert!(matches!(kabsch(&two, &two), Err(Error::InvalidInput(_))));
        let line: Vec<Vec3> = (0..5).map(|i| Vec3::x() * i as f64).collect();
        assert!(matches!(kabsch(&line, &line), Err(Error::Degenerate(_))));
        let same = vec![Vec3::new(1.0, 2.0, 3.0); 4];
        assert!(matches!(kabsch(&same, &same), Err(Error::Degenerate(_))));
    }

    fn rms_residual(src: &[Vec3], dst: &[Vec3], r: &Matrix3<f64>) -> f64 {
        // Optimal translation for a fixed rotation is the centroid difference.
        let n = src.len() as f64;
        let cs = src.iter().sum::<Vec3>() / n;
        let cd = dst.iter().sum::<Vec3>() / n;
        let t = cd - r * cs;
        (src.iter()
            .zip(dst)
            .map(|(s, d)| (d - (r * s + t)).norm_squared())
            .sum::<f64>()
            / n)
            .sqrt()
    }

    #[test]
    fn noisy_fit_is_optimal_and_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sigma = 0.01;
        let noise = Normal::new(0.0, sigma).unwrap();
        let truth = random_rigid(17, 1.5, 2.0).unwrap();
        let src = random_points(&mut rng, 100);
        let dst: Vec<Vec3> = src
            .iter()
            .map(|p| {
                truth.apply_point(p)
                    + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
            })
            .collect();
        let est = kabsch(&src, &dst).unwrap();
        let best = rms_residual(&src, &dst, est.rotation());
        assert!(best <= 2.0 * sigma, "rms {best}");

        // Brute-force grid of small rotation perturbations around the fit.
        let steps = [-2e-3, -5e-4, 0.0, 5e-4, 2e-3];
        for &a in &steps {
            for &b in &steps {
                for &c in &steps {
                    let perturb = RigidTransform::from_axis_angle(&Vec3::new(a, b, c), Vec3::new(a, b, c).norm(), Vec3::zeros());
                    let r = perturb.rotation() * est.rotation();
                    assert!(rms_residual(&src, &dst, &r) >= best - 1e-12);
                }
            }
        }
    }
}
