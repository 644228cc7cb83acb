//! Optimizer, synthetic fragment pairs and the training loop.

mod adam;
mod synth;
mod trainer;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use synth::{overlap_fraction, synth_fragment_pair, FragmentPair, SceneKind, SceneSpec};
pub use trainer::{
    checkpoint_name, lr_schedule, metrics_csv, pair_gradient, prepare_pair, train, train_prepared, train_step, train_step_on_pair, MetricsRow,
    PreparedPair, StepDiagnostics, TrainConfig, TrainOutcome, METRICS_HEADER,
};
