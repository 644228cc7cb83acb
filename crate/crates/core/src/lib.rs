//! Learned local descriptors for unorganized point clouds.
//!
//! Patches around distance-constrained keypoints are encoded as points,
//! normals and point pair features, passed through shared per-point MLPs with
//! max pooling, fused with a fragment-wide max-pooled context vector, and
//! trained with an N-to-N correspondence loss. Descriptors are matched by
//! nearest neighbor and registered with RANSAC.

pub mod artifacts;
pub mod cloud;
pub mod encode;
pub mod error;
pub mod geom;
pub mod loss;
pub mod matchreg;
pub mod net;
pub mod pipeline;
pub mod train;

pub use cloud::{PointCloud, SpatialIndex, Vec3};
pub use error::{Error, Result};
pub use geom::RigidTransform;
pub use loss::{LossConfig, LossKind};
pub use matchreg::{CorrespondenceSet, RegistrationResult};
pub use net::{DescriptorSet, PpfNetParams};
pub use train::{FragmentPair, TrainConfig};
