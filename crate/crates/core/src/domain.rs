//! Scene, trajectory and prediction types shared by every module.

use serde::{Deserialize, Serialize};

use crate::error::{DipaError, Result};
use crate::frame::RigidTransform;

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec2,
    pub yaw: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AgentType {
    #[default]
    Car,
    Truck,
    Motorcycle,
    Bicycle,
    Pedestrian,
}

impl AgentType {
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "car" | "vehicle" | "1" => Some(Self::Car),
            "truck" | "bus" | "3" => Some(Self::Truck),
            "motorcycle" | "2" => Some(Self::Motorcycle),
            "bicycle" | "cyclist" => Some(Self::Bicycle),
            "pedestrian" => Some(Self::Pedestrian),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: String,
    pub states: Vec<AgentState>,
    pub length: f64,
    pub width: f64,
    pub agent_type: AgentType,
}

impl AgentTrack {
    pub fn last(&self) -> Option<&AgentState> {
        self.states.last()
    }

    pub fn validate(&self, obs_steps: usize) -> Result<()> {
        if self.states.len() != obs_steps {
            return Err(DipaError::MalformedInstance(format!(
                "agent {} has {} observed states, expected {obs_steps}",
                self.agent_id,
                self.states.len()
            )));
        }
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(DipaError::MalformedInstance(format!(
                "agent {} has non-positive dimensions",
                self.agent_id
            )));
        }
        for s in &self.states {
            if !(s.position[0].is_finite()
                && s.position[1].is_finite()
                && s.yaw.is_finite()
                && s.speed.is_finite())
            {
                return Err(DipaError::MalformedInstance(format!(
                    "agent {} has a non-finite state",
                    self.agent_id
                )));
            }
        }
        Ok(())
    }
}

/// One prediction problem: an agent to predict, its neighbours, and the
/// ground-truth future of the prediction agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub prediction_agent: AgentTrack,
    pub neighbours: Vec<AgentTrack>,
    pub future: Vec<Vec2>,
    /// Maps local coordinates back to the world frame. Identity for raw instances.
    pub frame: RigidTransform,
}

impl Instance {
    pub fn num_agents(&self) -> usize {
        1 + self.neighbours.len()
    }

    /// Prediction agent first, then neighbours in stored order.
    pub fn agents(&self) -> impl Iterator<Item = &AgentTrack> {
        std::iter::once(&self.prediction_agent).chain(self.neighbours.iter())
    }

    pub fn validate(&self, obs_steps: usize, future_steps: usize) -> Result<()> {
        for a in self.agents() {
            a.validate(obs_steps)?;
        }
        if self.future.len() != future_steps {
            return Err(DipaError::MalformedInstance(format!(
                "instance {} has {} future steps, expected {future_steps}",
                self.id,
                self.future.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianModeStep {
    pub mu: Vec2,
    pub sigma: Mat2,
}

impl GaussianModeStep {
    /// Symmetric with both eigenvalues strictly positive.
    pub fn is_spd(&self) -> bool {
        let s = self.sigma;
        if (s[0][1] - s[1][0]).abs() > 1e-12 * (1.0 + s[0][1].abs()) {
            return false;
        }
        let (lo, _) = crate::gaussian::eigenvalues(&s);
        lo > 0.0
    }
}

/// Probability vector over modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ModeDistribution(Vec<f64>);

impl ModeDistribution {
    pub const TOLERANCE: f64 = 1e-6;

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(DipaError::Config("mode distribution with no modes".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(DipaError::Config(format!(
                "invalid mode weights {weights:?}"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > Self::TOLERANCE {
            return Err(DipaError::Config(format!("mode weights sum to {sum}")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn one_hot(m: usize, index: usize) -> Self {
        let mut w = vec![0.0; m];
        w[index] = 1.0;
        Self(w)
    }

    /// `(1 - k)·a + k·b`.
    pub fn blend(a: &Self, b: &Self, k: f64) -> Self {
        debug_assert_eq!(a.len(), b.len());
        Self(
            a.0.iter()
                .zip(&b.0)
                .map(|(x, y)| (1.0 - k) * x + k * y)
                .collect(),
        )
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most probable mode; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.0.iter().enumerate() {
            if w > self.0[best] {
                best = i;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for ModeDistribution {
    type Error = DipaError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ModeDistribution> for Vec<f64> {
    fn from(d: ModeDistribution) -> Self {
        d.0
    }
}

/// Per-mode, per-timestep Gaussians with the two predicted weight heads
/// and their blended output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiModalPrediction {
    /// `modes[m][t]`
    pub modes: Vec<Vec<GaussianModeStep>>,
    pub w_s: ModeDistribution,
    pub w_n: ModeDistribution,
    pub w_o: ModeDistribution,
    pub k_n: f64,
}

impl MultiModalPrediction {
    pub fn new(
        modes: Vec<Vec<GaussianModeStep>>,
        w_s: ModeDistribution,
        w_n: ModeDistribution,
        k_n: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&k_n) {
            return Err(DipaError::Config(format!("k_n = {k_n} outside [0, 1]")));
        }
        if modes.len() != w_s.len() || modes.len() != w_n.len() {
            return Err(DipaError::Config(
                "mode count does not match weight heads".into(),
            ));
        }
        let steps = modes.first().map_or(0, Vec::len);
        if modes.iter().any(|m| m.len() != steps) {
            return Err(DipaError::Config("ragged mode timesteps".into()));
        }
        let w_o = ModeDistribution::blend(&w_s, &w_n, k_n);
        Ok(Self {
            modes,
            w_s,
            w_n,
            w_o,
            k_n,
        })
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn num_steps(&self) -> usize {
        self.modes.first().map_or(0, Vec::len)
    }

    /// Same spatial prediction with the output weights re-blended at `k_n`.
    pub fn with_k_n(&self, k_n: f64) -> Result<Self> {
        Self::new(self.modes.clone(), self.w_s.clone(), self.w_n.clone(), k_n)
    }

    pub fn mean(&self, m: usize, t: usize) -> Vec2 {
        self.modes[m][t].mu
    }
}

/// Training/evaluation settings shared across modules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub modes: usize,
    pub obs_steps: usize,
    pub future_steps: usize,
    /// Seconds per timestep.
    pub dt: f64,
    pub k_r: f64,
    pub k_n: f64,
    /// Minimum evaluation std-dev in meters, defining the NLL density cap.
    pub sigma_min: f64,
    /// Miss-rate threshold in meters.
    pub miss_threshold: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            modes: 2,
            obs_steps: 10,
            future_steps: 30,
            dt: 0.1,
            k_r: 0.5,
            k_n: 0.9,
            sigma_min: 0.1,
            miss_threshold: 2.0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DipaError::Config(msg));
        if self.modes == 0 || self.obs_steps == 0 || self.future_steps == 0 {
            return bad("modes and horizons must be positive".into());
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt = {}", self.dt));
        }
        if !(0.0..=1.0).contains(&self.k_r) || !(0.0..=1.0).contains(&self.k_n) {
            return bad(format!(
                "k_r = {}, k_n = {} must lie in [0, 1]",
                self.k_r, self.k_n
            ));
        }
        if !(self.sigma_min > 0.0) || !(self.miss_threshold > 0.0) {
            return bad("sigma_min and miss_threshold must be positive".into());
        }
        Ok(())
    }
}
