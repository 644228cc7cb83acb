//! Shared inputs for the benchmarks.

use ppfnet_core::encode::{EncodingMode, PatchEncoding};
use ppfnet_core::matchreg::{Correspondence, CorrespondenceSet};
use ppfnet_core::train::{synth_fragment_pair, SceneSpec};
use ppfnet_core::{FragmentPair, RigidTransform, Vec3};

/// Deterministic pseudo-random values in [-1, 1) without pulling in an RNG.
fn lcg(seed: &mut u64) -> f64 {
    *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (*seed >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

pub fn room_pair(seed: u64) -> FragmentPair {
    synth_fragment_pair(seed, &SceneSpec::room()).expect("room scene")
}

pub fn random_patches(count: usize, rows: usize, mode: EncodingMode, seed: u64) -> Vec<PatchEncoding> {
    let mut s = seed;
    (0..count)
        .map(|_| {
            let data = (0..rows * mode.dim()).map(|_| lcg(&mut s)).collect();
            PatchEncoding::new(mode, rows, data).expect("patch shape")
        })
        .collect()
}

/// `n` correspondences under `t`, every second one replaced by a random pairing.
pub fn planted_correspondences(n: usize, t: &RigidTransform, seed: u64) -> (Vec<Vec3>, Vec<Vec3>, CorrespondenceSet) {
    let mut s = seed;
    let y: Vec<Vec3> = (0..n).map(|_| Vec3::new(lcg(&mut s), lcg(&mut s), lcg(&mut s)) * 2.0).collect();
    let x: Vec<Vec3> = y.iter().map(|p| t.apply_point(p)).collect();
    let pairs = (0..n)
        .map(|i| {
            let j = if i % 2 == 0 { i } else { ((lcg(&mut s) + 1.0) / 2.0 * n as f64) as usize % n };
            Correspondence { i, j, distance: 0.0 }
        })
        .collect();
    (x, y, CorrespondenceSet { pairs })
}
