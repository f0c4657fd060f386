//! Kinematic scenario templates with a latent behaviour per instance.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{wrap_angle, AgentState, AgentTrack, AgentType, Instance, Vec2};
use crate::error::{DipaError, Result};
use crate::frame::{preprocess_instance, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Behaviour 0 enters the intersection, behaviour 1 yields to crossing traffic.
    IntersectionYieldGo,
    /// Behaviour 0 merges ahead of the main-lane vehicle, behaviour 1 behind it.
    MergeAheadBehind,
    StraightUnimodal,
}

impl ScenarioKind {
    pub fn behaviours(self) -> &'static [&'static str] {
        match self {
            Self::IntersectionYieldGo => &["go", "yield"],
            Self::MergeAheadBehind => &["merge_ahead", "merge_behind"],
            Self::StraightUnimodal => &["straight"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Probability of each latent behaviour.
    pub mode_probs: Vec<f64>,
    /// Std-dev of position noise in meters. Yaw noise is `0.2·noise_sigma`
    /// radians and speed noise `2·noise_sigma` m/s.
    pub noise_sigma: f64,
    /// Prediction-agent speed range, m/s.
    pub ego_speed: [f64; 2],
    /// Speed range of the interacting vehicle, m/s.
    pub other_speed: [f64; 2],
    /// Inclusive range of background neighbours added on top of the interacting one.
    pub background_agents: [usize; 2],
    /// Probability that the interacting vehicle's configuration points at the sampled behaviour.
    pub cue_reliability: f64,
    /// Acceleration range of the intersection `go` behaviour, m/s².
    pub go_accel: [f64; 2],
    /// Multiplier range on the braking needed to stop before the conflict point.
    pub brake_scale: [f64; 2],
    pub obs_steps: usize,
    pub future_steps: usize,
    /// Seconds per timestep.
    pub dt: f64,
    /// Place each scene at a random world pose before preprocessing.
    pub random_world_frame: bool,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::IntersectionYieldGo,
            mode_probs: vec![0.7, 0.3],
            noise_sigma: 0.05,
            ego_speed: [8.0, 12.0],
            other_speed: [6.0, 12.0],
            background_agents: [0, 2],
            cue_reliability: 0.8,
            go_accel: [0.0, 0.5],
            brake_scale: [1.0, 1.0],
            obs_steps: 10,
            future_steps: 30,
            dt: 0.1,
            random_world_frame: true,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DipaError::Config(m));
        let n = self.kind.behaviours().len();
        if self.mode_probs.len() != n {
            return bad(format!(
                "{:?} has {n} behaviours, mode_probs has {}",
                self.kind,
                self.mode_probs.len()
            ));
        }
        if self.mode_probs.iter().any(|p| !(*p >= 0.0))
            || (self.mode_probs.iter().sum::<f64>() - 1.0).abs() > 1e-6
        {
            return bad(format!(
                "mode_probs {:?} not on the simplex",
                self.mode_probs
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative".into());
        }
        for (name, r) in [
            ("ego_speed", self.ego_speed),
            ("other_speed", self.other_speed),
        ] {
            if !(r[0] > 0.0 && r[0] <= r[1]) {
                return bad(format!("{name} range {r:?} invalid"));
            }
        }
        if !(self.go_accel[0] <= self.go_accel[1]) {
            return bad(format!("go_accel range {:?} invalid", self.go_accel));
        }
        if !(self.brake_scale[0] > 0.0 && self.brake_scale[0] <= self.brake_scale[1]) {
            return bad(format!("brake_scale range {:?} invalid", self.brake_scale));
        }
        if self.background_agents[0] > self.background_agents[1] {
            return bad("background_agents range reversed".into());
        }
        if !(0.0..=1.0).contains(&self.cue_reliability) {
            return bad("cue_reliability outside [0, 1]".into());
        }
        if self.obs_steps < 1 || self.future_steps < 1 || !(self.dt > 0.0) {
            return bad("horizons and dt must be positive".into());
        }
        Ok(())
    }
}

/// Longitudinal profile: constant speed until `t = 0`, then constant
/// acceleration, holding at standstill once speed reaches zero.
#[derive(Debug, Clone, Copy)]
struct Profile {
    v0: f64,
    accel: f64,
}

impl Profile {
    fn at(&self, t: f64) -> (f64, f64) {
        if t <= 0.0 || self.accel == 0.0 {
            return (self.v0 * t, self.v0);
        }
        let t_stop = if self.accel < 0.0 {
            self.v0 / -self.accel
        } else {
            f64::INFINITY
        };
        let tt = t.min(t_stop);
        (
            self.v0 * tt + 0.5 * self.accel * tt * tt,
            (self.v0 + self.accel * tt).max(0.0),
        )
    }
}

/// Smooth lateral shift starting at `t = 0`.
#[derive(Debug, Clone, Copy)]
struct LaneChange {
    offset: f64,
    duration: f64,
}

impl LaneChange {
    fn at(&self, t: f64) -> (f64, f64) {
        if t <= 0.0 {
            return (0.0, 0.0);
        }
        if t >= self.duration {
            return (self.offset, 0.0);
        }
        let w = PI / self.duration;
        (
            0.5 * self.offset * (1.0 - (w * t).cos()),
            0.5 * self.offset * w * (w * t).sin(),
        )
    }
}

/// Constant-curvature path with a speed profile and optional lateral shift,
/// anchored at `origin` with `heading` at `t = 0`.
#[derive(Debug, Clone, Copy)]
struct Motion {
    origin: Vec2,
    heading: f64,
    curvature: f64,
    profile: Profile,
    lane_change: Option<LaneChange>,
}

impl Motion {
    fn straight(origin: Vec2, heading: f64, v0: f64, accel: f64) -> Self {
        Self {
            origin,
            heading,
            curvature: 0.0,
            profile: Profile { v0, accel },
            lane_change: None,
        }
    }

    fn state(&self, t: f64) -> AgentState {
        let (s, sd) = self.profile.at(t);
        let (l, ld) = self.lane_change.map_or((0.0, 0.0), |lc| lc.at(t));
        let k = self.curvature;
        let (px, py, phi) = if k.abs() < 1e-12 {
            (s, 0.0, 0.0)
        } else {
            ((k * s).sin() / k, (1.0 - (k * s).cos()) / k, k * s)
        };
        let (sp, cp) = phi.sin_cos();
        let local = [px - l * sp, py + l * cp];
        // velocity = ṡ(1 − κℓ)·T + ℓ̇·N
        let vt = sd * (1.0 - k * l);
        let vel_local = [vt * cp - ld * sp, vt * sp + ld * cp];
        let (sh, ch) = self.heading.sin_cos();
        let rot = |p: Vec2| [ch * p[0] - sh * p[1], sh * p[0] + ch * p[1]];
        let p = rot(local);
        let v = rot(vel_local);
        let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
        let yaw = if speed > 1e-9 {
            v[1].atan2(v[0])
        } else {
            self.heading + phi
        };
        AgentState {
            position: [p[0] + self.origin[0], p[1] + self.origin[1]],
            yaw: wrap_angle(yaw),
            speed,
        }
    }
}

struct Actor {
    id: &'static str,
    motion: Motion,
    length: f64,
    width: f64,
    agent_type: AgentType,
}

/// One generated scene in its own frame (prediction agent at the origin
/// heading along +x at the last observation).
struct Scene {
    ego: Actor,
    others: Vec<Actor>,
    /// Noiseless ego motion under each behaviour.
    alternatives: Vec<Motion>,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn car(rng: &mut ChaCha8Rng, id: &'static str, motion: Motion) -> Actor {
    Actor {
        id,
        motion,
        length: uniform(rng, [4.0, 5.0]),
        width: uniform(rng, [1.7, 2.0]),
        agent_type: AgentType::Car,
    }
}

fn background(rng: &mut ChaCha8Rng, spec: &ScenarioSpec, index: usize) -> Actor {
    const IDS: [&str; 6] = ["bg0", "bg1", "bg2", "bg3", "bg4", "bg5"];
    let id = IDS[index % IDS.len()];
    let v = uniform(rng, spec.ego_speed);
    let motion = if rng.random_bool(0.5) {
        Motion::straight([-uniform(rng, [10.0, 30.0]), 0.0], 0.0, v, 0.0)
    } else {
        Motion::straight([uniform(rng, [-10.0, 40.0]), -3.5], PI, v, 0.0)
    };
    match rng.random_range(0..4) {
        0 => Actor {
            id,
            motion,
            length: uniform(rng, [8.0, 12.0]),
            width: 2.5,
            agent_type: AgentType::Truck,
        },
        _ => car(rng, id, motion),
    }
}

fn sample_behaviour(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Behaviour suggested by the interacting vehicle's configuration.
fn cue(rng: &mut ChaCha8Rng, behaviour: usize, n: usize, reliability: f64) -> usize {
    if n < 2 || rng.random_bool(reliability) {
        behaviour
    } else {
        (behaviour + 1) % n
    }
}

fn intersection(rng: &mut ChaCha8Rng, spec: &ScenarioSpec, b: usize) -> Scene {
    let v0 = uniform(rng, spec.ego_speed);
    let d = uniform(rng, [15.0, 25.0]);
    let go_accel = uniform(rng, spec.go_accel);
    let yield_accel = -(v0 * v0 / (2.0 * (d - 3.0))).max(2.5) * uniform(rng, spec.brake_scale);
    let go = Motion::straight([0.0, 0.0], 0.0, v0, go_accel);
    let stop = Motion::straight([0.0, 0.0], 0.0, v0, yield_accel);
    let c = cue(rng, b, 2, spec.cue_reliability);
    let vc = uniform(rng, spec.other_speed);
    let arrival = if c == 1 {
        uniform(rng, [0.8, 2.0])
    } else {
        uniform(rng, [3.5, 6.0])
    };
    let crossing = Motion::straight([d, -vc * arrival], FRAC_PI_2, vc, 0.0);
    let alternatives = vec![go, stop];
    Scene {
        ego: car(rng, "ego", alternatives[b]),
        others: vec![car(rng, "crossing", crossing)],
        alternatives,
    }
}

fn merge(rng: &mut ChaCha8Rng, spec: &ScenarioSpec, b: usize) -> Scene {
    let v0 = uniform(rng, spec.ego_speed);
    let lc = Some(LaneChange {
        offset: 3.5,
        duration: uniform(rng, [2.5, 3.5]),
    });
    let mk = |a: f64| Motion {
        lane_change: lc,
        ..Motion::straight([0.0, 0.0], 0.0, v0, a)
    };
    let alternatives = vec![mk(uniform(rng, [0.8, 1.6])), mk(-uniform(rng, [0.8, 1.6]))];
    let c = cue(rng, b, 2, spec.cue_reliability);
    let (x_rel, v) = if c == 0 {
        (uniform(rng, [-14.0, -6.0]), v0 - uniform(rng, [0.0, 2.0]))
    } else {
        (uniform(rng, [-2.0, 8.0]), v0 + uniform(rng, [0.0, 2.0]))
    };
    let main_lane = Motion::straight([x_rel, 3.5], 0.0, v.max(0.5), 0.0);
    Scene {
        ego: car(rng, "ego", alternatives[b]),
        others: vec![car(rng, "main_lane", main_lane)],
        alternatives,
    }
}

fn straight(rng: &mut ChaCha8Rng, spec: &ScenarioSpec) -> Scene {
    let v0 = uniform(rng, spec.ego_speed);
    let m = Motion {
        curvature: uniform(rng, [-0.02, 0.02]),
        ..Motion::straight([0.0, 0.0], 0.0, v0, uniform(rng, [-0.5, 0.5]))
    };
    Scene {
        ego: car(rng, "ego", m),
        others: Vec::new(),
        alternatives: vec![m],
    }
}

/// A generated instance together with its hidden behaviour.
pub(crate) struct Sample {
    pub instance: Instance,
    pub label: usize,
    pub prototypes: Vec<Vec<Vec2>>,
}

pub(crate) fn sample(rng: &mut ChaCha8Rng, spec: &ScenarioSpec, index: usize) -> Sample {
    let b = sample_behaviour(rng, &spec.mode_probs);
    let mut scene = match spec.kind {
        ScenarioKind::IntersectionYieldGo => intersection(rng, spec, b),
        ScenarioKind::MergeAheadBehind => merge(rng, spec, b),
        ScenarioKind::StraightUnimodal => straight(rng, spec),
    };
    let extra = rng.random_range(spec.background_agents[0]..=spec.background_agents[1]);
    for i in 0..extra {
        let a = background(rng, spec, i);
        scene.others.push(a);
    }

    let world = if spec.random_world_frame {
        RigidTransform::new(
            [uniform(rng, [-200.0, 200.0]), uniform(rng, [-200.0, 200.0])],
            uniform(rng, [-PI, PI]),
        )
    } else {
        RigidTransform::identity()
    };
    let pos_noise = Normal::new(0.0, spec.noise_sigma).expect("non-negative sigma");
    let yaw_noise = Normal::new(0.0, 0.2 * spec.noise_sigma).expect("non-negative sigma");
    let speed_noise = Normal::new(0.0, 2.0 * spec.noise_sigma).expect("non-negative sigma");
    let obs_times: Vec<f64> = (0..spec.obs_steps)
        .map(|k| (k as f64 - (spec.obs_steps - 1) as f64) * spec.dt)
        .collect();

    let observe = |rng: &mut ChaCha8Rng, a: &Actor| -> AgentTrack {
        let states = obs_times
            .iter()
            .map(|&t| {
                let s = a.motion.state(t);
                let p = world.to_world(s.position);
                AgentState {
                    position: [p[0] + pos_noise.sample(rng), p[1] + pos_noise.sample(rng)],
                    yaw: wrap_angle(world.yaw_to_world(s.yaw) + yaw_noise.sample(rng)),
                    speed: (s.speed + speed_noise.sample(rng)).max(0.0),
                }
            })
            .collect();
        AgentTrack {
            agent_id: a.id.to_string(),
            states,
            length: a.length,
            width: a.width,
            agent_type: a.agent_type,
        }
    };
    let ego = observe(rng, &scene.ego);
    let neighbours = scene.others.iter().map(|a| observe(rng, a)).collect();
    let future_at = |m: &Motion, j: usize| world.to_world(m.state(j as f64 * spec.dt).position);
    let future = (1..=spec.future_steps)
        .map(|j| {
            let p = future_at(&scene.ego.motion, j);
            [p[0] + pos_noise.sample(rng), p[1] + pos_noise.sample(rng)]
        })
        .collect();

    let raw = Instance {
        id: format!("{:?}-{index:06}", spec.kind).to_lowercase(),
        prediction_agent: ego,
        neighbours,
        future,
        frame: RigidTransform::identity(),
    };
    let instance = preprocess_instance(&raw).expect("generated tracks are non-empty");
    let prototypes = scene
        .alternatives
        .iter()
        .map(|m| {
            (1..=spec.future_steps)
                .map(|j| instance.frame.to_local(future_at(m, j)))
                .collect()
        })
        .collect();
    Sample {
        instance,
        label: b,
        prototypes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_holds_at_standstill() {
        let p = Profile {
            v0: 10.0,
            accel: -5.0,
        };
        assert_eq!(p.at(2.0), (10.0, 0.0));
        assert_eq!(p.at(3.0), (10.0, 0.0));
    }

    #[test]
    fn lane_change_reaches_offset_smoothly() {
        let lc = LaneChange {
            offset: 3.5,
            duration: 3.0,
        };
        assert_eq!(lc.at(0.0), (0.0, 0.0));
        assert!((lc.at(1.5).0 - 1.75).abs() < 1e-12);
        assert_eq!(lc.at(3.0), (3.5, 0.0));
    }

    #[test]
    fn arc_motion_heading_tracks_curvature() {
        let m = Motion {
            curvature: 0.05,
            ..Motion::straight([0.0, 0.0], 0.0, 10.0, 0.0)
        };
        let s = m.state(1.0);
        assert!((s.yaw - 0.5).abs() < 1e-12);
        let r = 20.0;
        assert!((s.position[0] - r * 0.5f64.sin()).abs() < 1e-9);
        assert!((s.position[1] - r * (1.0 - 0.5f64.cos())).abs() < 1e-9);
    }
}
