//! Rigid transforms, normal estimation, keypoint sampling and rigid fitting.

mod kabsch;
mod normals;
mod sampling;
mod transform;

pub use kabsch::{kabsch, registration_error};
pub use normals::{estimate_normals, NormalEstimate, DEFAULT_NORMAL_K, DEGENERATE_NORMAL};
pub(crate) use normals::{covariance, sorted_eigen};
pub use sampling::{distance_constrained_sample, distance_constrained_sample_masked, SamplingConfig};
pub use transform::{apply_transform, random_rigid, RigidTransform, ROTATION_TOLERANCE};
