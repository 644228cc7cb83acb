//! Descriptor matching, RANSAC registration and evaluation harnesses.

mod colorize;
mod eval;
mod matching;
mod ransac;

pub use colorize::pca_colorize;
pub use eval::{
    evaluate_pair, evaluate_pair_lenient, fragment_recall, random_subsample, rotation_sweep, sparsity_sweep, PairEvaluation,
    RecallConfig, DEFAULT_KEEP_FRACTIONS, DEFAULT_SWEEP_ANGLES,
};
pub use matching::{match_descriptors, match_features, Correspondence, CorrespondenceSet};
pub use ransac::{ransac_register, RansacConfig, RegistrationResult};
