//! Multimodal trajectory prediction with diverse Gaussian-mixture modes
//! and calibrated mode probabilities.

// Range checks are written `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod domain;
pub mod error;
pub mod frame;
pub mod gaussian;
pub mod metrics;
pub mod model;
pub mod par;
pub mod synth;
pub mod training;

pub use domain::{
    AgentState, AgentTrack, AgentType, GaussianModeStep, Hyperparameters, Instance, Mat2,
    ModeDistribution, MultiModalPrediction, Vec2,
};
pub use error::{DipaError, Result};
pub use frame::{preprocess_instance, unproject_prediction, RigidTransform};
pub use model::{DipaModel, ModelConfig};
pub use par::Execution;
