//! Descriptor network: shared per-point MLP with patch max-pooling, a
//! fragment-wide context vector and a fusion MLP.

mod checkpoint;
mod model;
mod params;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use model::{backward, forward, DescriptorSet, FeatureMatrix, ForwardCache};
pub use params::{
    Architecture, DenseLayer, PpfNetParams, DESCRIPTOR_DIM, FUSION_WIDTH, POINT_WIDTH, SUPPORTED_INPUT_DIMS,
};
