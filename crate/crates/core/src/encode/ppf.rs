use crate::cloud::Vec3;
use crate::error::{Error, Result};

/// Unit-norm tolerance accepted for PPF normals.
pub const PPF_NORMAL_TOLERANCE: f64 = 1e-4;

/// Angle between two vectors as `atan2(‖v1 × v2‖, v1 · v2)`, in `[0, π]`.
///
/// Stable near 0 and π where `acos` of the normalized dot product is not.
pub fn angle(v1: &Vec3, v2: &Vec3) -> Result<f64> {
    if v1.norm_squared() == 0.0 || v2.norm_squared() == 0.0 {
        return Err(Error::invalid("angle of a zero-length vector"));
    }
    Ok(angle_unchecked(v1, v2))
}

#[inline]
pub(crate) fn angle_unchecked(v1: &Vec3, v2: &Vec3) -> f64 {
    v1.cross(v2).norm().atan2(v1.dot(v2))
}

/// Point pair feature `(‖d‖, ∠(n1, d), ∠(n2, d), ∠(n1, n2))` with `d = x2 − x1`.
///
/// Coincident points give `(0, 0, 0, ∠(n1, n2))`.
pub fn ppf(x1: &Vec3, n1: &Vec3, x2: &Vec3, n2: &Vec3) -> Result<[f64; 4]> {
    for (name, n) in [("n1", n1), ("n2", n2)] {
        if !((n.norm() - 1.0).abs() <= PPF_NORMAL_TOLERANCE) {
            return Err(Error::invalid(format!("{name} is not a unit normal (norm {})", n.norm())));
        }
    }
    Ok(ppf_unchecked(x1, n1, x2, n2))
}

#[inline]
pub(crate) fn ppf_unchecked(x1: &Vec3, n1: &Vec3, x2: &Vec3, n2: &Vec3) -> [f64; 4] {
    let d = x2 - x1;
    let dist = d.norm();
    let nn = angle_unchecked(n1, n2);
    if dist == 0.0 {
        return [0.0, 0.0, 0.0, nn];
    }
    [dist, angle_unchecked(n1, &d), angle_unchecked(n2, &d), nn]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::random_rigid;
    use nalgebra::Matrix3;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn tabulated_angles() {
        let v = Vec3::new(0.3, -2.0, 5.0);
        assert_eq!(angle(&v, &v).unwrap(), 0.0);
        assert!((angle(&Vec3::x(), &Vec3::y()).unwrap() - FRAC_PI_2).abs() < 1e-12);
        assert!((angle(&Vec3::x(), &-Vec3::x()).unwrap() - PI).abs() < 1e-12);
        assert!(angle(&Vec3::zeros(), &Vec3::x()).is_err());
    }

    #[test]
    fn ppf_examples() {
        let f = ppf(&Vec3::zeros(), &Vec3::z(), &Vec3::new(2.0, 0.0, 0.0), &Vec3::z()).unwrap();
        assert_eq!(f[0], 2.0);
        assert!((f[1] - FRAC_PI_2).abs() < 1e-15);
        assert!((f[2] - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(f[3], 0.0);

        let x = Vec3::new(1.0, 2.0, 3.0);
        let n = Vec3::new(0.0, 0.6, 0.8);
        assert_eq!(ppf(&x, &n, &x, &n).unwrap(), [0.0; 4]);

        assert!(ppf(&x, &(n * 1.01), &Vec3::zeros(), &n).is_err());
    }

    fn unit(v: (f64, f64, f64)) -> Vec3 {
        let v = Vec3::new(v.0, v.1, v.2);
        if v.norm() < 1e-3 {
            Vec3::z()
        } else {
            v.normalize()
        }
    }

    fn coords() -> impl Strategy<Value = (f64, f64, f64)> {
        (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64)
    }

    proptest! {
        #[test]
        fn angle_range_and_symmetry(a in coords(), b in coords()) {
            let (a, b) = (Vec3::new(a.0, a.1, a.2), Vec3::new(b.0, b.1, b.2));
            prop_assume!(a.norm() > 0.0 && b.norm() > 0.0);
            let t = angle(&a, &b).unwrap();
            prop_assert!((0.0..=PI).contains(&t));
            prop_assert_eq!(t, angle(&b, &a).unwrap());
        }

        #[test]
        fn ppf_swap_structure(x1 in coords(), n1 in coords(), x2 in coords(), n2 in coords()) {
            let (x1, x2) = (Vec3::new(x1.0, x1.1, x1.2), Vec3::new(x2.0, x2.1, x2.2));
            let (n1, n2) = (unit(n1), unit(n2));
            let f = ppf(&x1, &n1, &x2, &n2).unwrap();
            let g = ppf(&x2, &n2, &x1, &n1).unwrap();
            prop_assert_eq!(f[0], g[0]);
            prop_assert_eq!(f[3], g[3]);
            // Reversing d turns ∠(n, d) into π − ∠(n, -d).
            prop_assert!((f[1] - (PI - g[2])).abs() < 1e-9);
            prop_assert!((f[2] - (PI - g[1])).abs() < 1e-9);
        }

        #[test]
        fn ppf_rigid_and_reflection_invariance(
            x1 in coords(), n1 in coords(), x2 in coords(), n2 in coords(),
            seed in any::<u64>(), reflect in any::<bool>(),
        ) {
            let (x1, x2) = (Vec3::new(x1.0, x1.1, x1.2), Vec3::new(x2.0, x2.1, x2.2));
            let (n1, n2) = (unit(n1), unit(n2));
            let t = random_rigid(seed, PI, 10.0).unwrap();
            let mut r = *t.rotation();
            if reflect {
                r *= Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
            }
            let map = |p: &Vec3| r * p + t.translation();
            let f = ppf(&x1, &n1, &x2, &n2).unwrap();
            let g = ppf(&map(&x1), &(r * n1), &map(&x2), &(r * n2)).unwrap();
            for k in 0..4 {
                prop_assert!((f[k] - g[k]).abs() < 1e-6);
            }
        }
    }
}
