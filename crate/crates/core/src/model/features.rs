//! Network inputs derived from a preprocessed instance.

use dipa_autodiff::Tensor;

use crate::domain::{AgentTrack, AgentType};
use crate::model::ModelConfig;

pub const SEQ_CHANNELS: usize = 5;
pub const STATIC_FEATURES: usize = 2 + AgentType::COUNT;

/// `[T_obs, 5]`: position (scaled), heading as cos/sin, speed (scaled).
pub fn sequence_features(track: &AgentTrack, cfg: &ModelConfig) -> Tensor {
    let mut data = Vec::with_capacity(track.states.len() * SEQ_CHANNELS);
    for s in &track.states {
        let (sn, c) = s.yaw.sin_cos();
        data.extend_from_slice(&[
            s.position[0] / cfg.position_scale,
            s.position[1] / cfg.position_scale,
            c,
            sn,
            s.speed / cfg.speed_scale,
        ]);
    }
    Tensor::new(vec![track.states.len(), SEQ_CHANNELS], data).expect("shape")
}

/// Dimensions (scaled to typical car size) and one-hot type.
pub fn static_features(track: &AgentTrack) -> Vec<f64> {
    let mut v = vec![track.length / 5.0, track.width / 2.0];
    let mut onehot = [0.0; AgentType::COUNT];
    onehot[track.agent_type.index()] = 1.0;
    v.extend_from_slice(&onehot);
    v
}
