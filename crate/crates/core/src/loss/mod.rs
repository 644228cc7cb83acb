//! Correspondence and feature-distance matrices and the metric-learning losses.

mod matrices;
mod objectives;

pub use matrices::{correspondence_matrix, distance_backward, distance_matrix, CorrespondenceMatrix, DistanceMatrix};
pub use objectives::{
    contrastive_loss, ntuple_loss, ntuple_loss_literal, pair_loss, triplet_loss, LossConfig, LossKind, LossOutput,
};
