//! Rigid transforms between the world frame and the prediction agent's
//! local frame.

use serde::{Deserialize, Serialize};

use crate::domain::{
    wrap_angle, AgentState, AgentTrack, GaussianModeStep, Instance, Mat2, MultiModalPrediction,
    Vec2,
};
use crate::error::{DipaError, Result};

/// `world = R(rotation) · local + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub translation: Vec2,
    pub rotation: f64,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

fn rotate(p: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            translation: [0.0, 0.0],
            rotation: 0.0,
        }
    }

    pub fn new(translation: Vec2, rotation: f64) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.translation == [0.0, 0.0] && self.rotation == 0.0
    }

    pub fn to_world(&self, p: Vec2) -> Vec2 {
        let r = rotate(p, self.rotation);
        [r[0] + self.translation[0], r[1] + self.translation[1]]
    }

    pub fn to_local(&self, p: Vec2) -> Vec2 {
        rotate(
            [p[0] - self.translation[0], p[1] - self.translation[1]],
            -self.rotation,
        )
    }

    pub fn yaw_to_world(&self, yaw: f64) -> f64 {
        wrap_angle(yaw + self.rotation)
    }

    pub fn yaw_to_local(&self, yaw: f64) -> f64 {
        wrap_angle(yaw - self.rotation)
    }

    /// `R Σ Rᵀ`.
    pub fn cov_to_world(&self, sigma: &Mat2) -> Mat2 {
        crate::gaussian::rotate_cov(sigma, self.rotation)
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn then_inner(&self, inner: &RigidTransform) -> RigidTransform {
        RigidTransform {
            translation: self.to_world(inner.translation),
            rotation: wrap_angle(self.rotation + inner.rotation),
        }
    }
}

fn map_track(track: &AgentTrack, to_local: &RigidTransform) -> AgentTrack {
    AgentTrack {
        states: track
            .states
            .iter()
            .map(|s| AgentState {
                position: to_local.to_local(s.position),
                yaw: to_local.yaw_to_local(s.yaw),
                speed: s.speed,
            })
            .collect(),
        ..track.clone()
    }
}

/// Centers the scene on the prediction agent's last observed position,
/// rotated so its last observed yaw is zero. Neighbours and the future
/// are mapped by the same transform; `frame` accumulates the inverse.
pub fn preprocess_instance(raw: &Instance) -> Result<Instance> {
    let last = raw.prediction_agent.last().ok_or_else(|| {
        DipaError::MalformedInstance(format!(
            "instance {} has no observed prediction-agent states",
            raw.id
        ))
    })?;
    let step = RigidTransform::new(last.position, last.yaw);
    let mut out = Instance {
        id: raw.id.clone(),
        prediction_agent: map_track(&raw.prediction_agent, &step),
        neighbours: raw.neighbours.iter().map(|n| map_track(n, &step)).collect(),
        future: raw.future.iter().map(|p| step.to_local(*p)).collect(),
        frame: raw.frame.then_inner(&step),
    };
    // Pin the anchor exactly; rotation of a zero vector is already exact but
    // the yaw difference can pick up rounding after wrapping.
    if let Some(s) = out.prediction_agent.states.last_mut() {
        s.position = [0.0, 0.0];
        s.yaw = 0.0;
    }
    Ok(out)
}

/// Maps a prediction made in the local frame back through `frame`.
pub fn unproject_prediction(
    pred: &MultiModalPrediction,
    frame: &RigidTransform,
) -> MultiModalPrediction {
    let modes = pred
        .modes
        .iter()
        .map(|steps| {
            steps
                .iter()
                .map(|s| GaussianModeStep {
                    mu: frame.to_world(s.mu),
                    sigma: frame.cov_to_world(&s.sigma),
                })
                .collect()
        })
        .collect();
    MultiModalPrediction {
        modes,
        ..pred.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AgentType, ModeDistribution};
    use std::f64::consts::FRAC_PI_2;

    fn track(id: &str, pos: Vec2, yaw: f64) -> AgentTrack {
        AgentTrack {
            agent_id: id.into(),
            states: vec![AgentState {
                position: pos,
                yaw,
                speed: 1.0,
            }],
            length: 4.5,
            width: 1.8,
            agent_type: AgentType::Car,
        }
    }

    fn instance(ego: AgentTrack, neighbours: Vec<AgentTrack>, future: Vec<Vec2>) -> Instance {
        Instance {
            id: "t".into(),
            prediction_agent: ego,
            neighbours,
            future,
            frame: RigidTransform::identity(),
        }
    }

    #[test]
    fn origin_instance_is_unchanged() {
        let raw = instance(
            track("a", [0.0, 0.0], 0.0),
            vec![track("b", [3.0, -1.0], 0.4)],
            vec![[1.0, 0.0]],
        );
        let out = preprocess_instance(&raw).unwrap();
        assert_eq!(out.neighbours, raw.neighbours);
        assert_eq!(out.future, raw.future);
        assert!(out.frame.is_identity());
    }

    #[test]
    fn rotated_anchor_maps_neighbour_ahead() {
        let raw = instance(
            track("a", [5.0, 3.0], FRAC_PI_2),
            vec![track("b", [5.0, 4.0], 0.0)],
            vec![[5.0, 6.0]],
        );
        let out = preprocess_instance(&raw).unwrap();
        let ego = out.prediction_agent.last().unwrap();
        assert_eq!(ego.position, [0.0, 0.0]);
        assert_eq!(ego.yaw, 0.0);
        let nb = out.neighbours[0].states[0];
        assert!((nb.position[0] - 1.0).abs() < 1e-12 && nb.position[1].abs() < 1e-12);
        assert!((nb.yaw + FRAC_PI_2).abs() < 1e-12);
        assert!((out.future[0][0] - 3.0).abs() < 1e-12 && out.future[0][1].abs() < 1e-12);
    }

    #[test]
    fn missing_states_is_malformed() {
        let mut ego = track("a", [0.0, 0.0], 0.0);
        ego.states.clear();
        let raw = instance(ego, vec![], vec![]);
        assert!(matches!(
            preprocess_instance(&raw),
            Err(DipaError::MalformedInstance(_))
        ));
    }

    fn pred_with(sigma: Mat2, mu: Vec2) -> MultiModalPrediction {
        let step = GaussianModeStep { mu, sigma };
        MultiModalPrediction::new(
            vec![vec![step]],
            ModeDistribution::uniform(1),
            ModeDistribution::uniform(1),
            0.9,
        )
        .unwrap()
    }

    #[test]
    fn unproject_identity_and_translation() {
        let p = pred_with([[2.0, 0.3], [0.3, 1.0]], [1.0, 2.0]);
        assert_eq!(unproject_prediction(&p, &RigidTransform::identity()), p);
        let q = unproject_prediction(&p, &RigidTransform::new([10.0, -4.0], 0.0));
        assert_eq!(q.modes[0][0].mu, [11.0, -2.0]);
        assert_eq!(q.modes[0][0].sigma, p.modes[0][0].sigma);
    }

    #[test]
    fn quarter_turn_swaps_diagonal_covariance() {
        let p = pred_with([[4.0, 0.0], [0.0, 1.0]], [0.0, 0.0]);
        let q = unproject_prediction(&p, &RigidTransform::new([0.0, 0.0], FRAC_PI_2));
        let s = q.modes[0][0].sigma;
        assert!((s[0][0] - 1.0).abs() < 1e-12);
        assert!((s[1][1] - 4.0).abs() < 1e-12);
        assert!(s[0][1].abs() < 1e-12 && s[1][0].abs() < 1e-12);
    }
}
