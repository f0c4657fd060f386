//! Sliding-window import of generic trajectory tables.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{AgentState, AgentTrack, AgentType, Instance, Vec2};
use crate::error::{DipaError, Result};
use crate::frame::{preprocess_instance, RigidTransform};
use crate::gaussian::squared_distance;
use crate::synth::DatasetSplit;

/// Header names of the input columns. Optional columns fall back to
/// finite differences (yaw, speed) or configured defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub frame: String,
    pub agent_id: String,
    pub x: String,
    pub y: String,
    pub yaw: Option<String>,
    pub speed: Option<String>,
    pub length: Option<String>,
    pub width: Option<String>,
    pub agent_type: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            frame: "frame".into(),
            agent_id: "agent_id".into(),
            x: "x".into(),
            y: "y".into(),
            yaw: None,
            speed: None,
            length: None,
            width: None,
            agent_type: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImportConfig {
    pub columns: ColumnMap,
    pub obs_steps: usize,
    pub future_steps: usize,
    /// Seconds between consecutive frames.
    pub dt: f64,
    pub stride: usize,
    pub neighbour_cap: usize,
    /// Restrict windows to these agents; all agents when empty.
    pub prediction_agents: Vec<String>,
    pub default_length: f64,
    pub default_width: f64,
}

impl Default for ImportConfig {
    fn default() -> Self {
        Self::interaction()
    }
}

impl ImportConfig {
    /// 1 s observed, 3 s predicted at 10 Hz.
    pub fn interaction() -> Self {
        Self {
            columns: ColumnMap::default(),
            obs_steps: 10,
            future_steps: 30,
            dt: 0.1,
            stride: 1,
            neighbour_cap: 20,
            prediction_agents: Vec::new(),
            default_length: 4.5,
            default_width: 1.8,
        }
    }

    /// 3 s observed, 5 s predicted at 10 Hz.
    pub fn ngsim() -> Self {
        Self {
            obs_steps: 30,
            future_steps: 50,
            ..Self::interaction()
        }
    }

    pub fn window(&self) -> usize {
        self.obs_steps + self.future_steps
    }
}

struct Row {
    frame: i64,
    position: Vec2,
    yaw: Option<f64>,
    speed: Option<f64>,
}

struct Track {
    id: String,
    rows: Vec<Row>,
    length: f64,
    width: f64,
    agent_type: AgentType,
    by_frame: HashMap<i64, usize>,
}

/// Derivative of evenly spaced samples: central differences inside,
/// second-order one-sided stencils at the ends.
fn derivative(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        2 => vec![(v[1] - v[0]) / h; 2],
        _ => (0..n)
            .map(|i| {
                if i == 0 {
                    (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
                } else if i == n - 1 {
                    (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h)
                } else {
                    (v[i + 1] - v[i - 1]) / (2.0 * h)
                }
            })
            .collect(),
    }
}

/// Maximal runs of consecutive frames as index ranges.
fn segments(rows: &[Row]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=rows.len() {
        if i == rows.len() || rows[i].frame != rows[i - 1].frame + 1 {
            out.push(start..i);
            start = i;
        }
    }
    out
}

fn fill_kinematics(rows: &[Row], dt: f64) -> Vec<AgentState> {
    let mut out: Vec<AgentState> = Vec::with_capacity(rows.len());
    for seg in segments(rows) {
        let xs: Vec<f64> = rows[seg.clone()].iter().map(|r| r.position[0]).collect();
        let ys: Vec<f64> = rows[seg.clone()].iter().map(|r| r.position[1]).collect();
        let (vx, vy) = (derivative(&xs, dt), derivative(&ys, dt));
        for (k, r) in rows[seg].iter().enumerate() {
            let speed = vx[k].hypot(vy[k]);
            let yaw = r.yaw.unwrap_or_else(|| {
                if speed > 1e-6 {
                    vy[k].atan2(vx[k])
                } else {
                    out.last().map_or(0.0, |s| s.yaw)
                }
            });
            out.push(AgentState {
                position: r.position,
                yaw: crate::domain::wrap_angle(yaw),
                speed: r.speed.unwrap_or(speed),
            });
        }
    }
    out
}

/// Reads a trajectory table and cuts every fully observed window of
/// `obs_steps + future_steps` consecutive frames into a preprocessed
/// instance. Neighbours must be present over the whole observed period;
/// the nearest `neighbour_cap` by last observed position are kept.
pub fn import_generic_csv(path: impl AsRef<Path>, cfg: &ImportConfig) -> Result<DatasetSplit> {
    if cfg.obs_steps == 0 || cfg.future_steps == 0 || cfg.stride == 0 || !(cfg.dt > 0.0) {
        return Err(DipaError::Config(
            "import horizons, stride and dt must be positive".into(),
        ));
    }
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DipaError::Data(format!("{shown}: missing column `{name}`")))
    };
    let opt_col = |name: &Option<String>| name.as_deref().map(col).transpose();
    let c = &cfg.columns;
    let (ci_frame, ci_id, ci_x, ci_y) = (col(&c.frame)?, col(&c.agent_id)?, col(&c.x)?, col(&c.y)?);
    let (ci_yaw, ci_speed) = (opt_col(&c.yaw)?, opt_col(&c.speed)?);
    let (ci_len, ci_wid, ci_type) = (
        opt_col(&c.length)?,
        opt_col(&c.width)?,
        opt_col(&c.agent_type)?,
    );

    let mut tracks: Vec<Track> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let perr = |detail: String| DipaError::Parse {
            path: shown.clone(),
            line,
            detail,
        };
        let field = |i: usize| {
            rec.get(i)
                .map(str::trim)
                .ok_or_else(|| perr(format!("missing field {i}")))
        };
        let num = |i: usize| -> Result<f64> {
            let s = field(i)?;
            s.parse::<f64>()
                .map_err(|_| perr(format!("`{s}` is not a number")))
        };
        let opt_num = |i: Option<usize>| i.map(num).transpose();
        let frame_s = field(ci_frame)?;
        let frame: i64 = frame_s
            .parse()
            .map_err(|_| perr(format!("frame `{frame_s}` is not an integer")))?;
        let id = field(ci_id)?.to_string();
        let row = Row {
            frame,
            position: [num(ci_x)?, num(ci_y)?],
            yaw: opt_num(ci_yaw)?,
            speed: opt_num(ci_speed)?,
        };
        let ti = *index.entry(id.clone()).or_insert_with(|| {
            tracks.push(Track {
                id: id.clone(),
                rows: Vec::new(),
                length: cfg.default_length,
                width: cfg.default_width,
                agent_type: AgentType::Car,
                by_frame: HashMap::new(),
            });
            tracks.len() - 1
        });
        let t = &mut tracks[ti];
        if let Some(prev) = t.rows.last() {
            if frame <= prev.frame {
                return Err(perr(format!(
                    "agent {id}: frame {frame} after {} is not increasing",
                    prev.frame
                )));
            }
        }
        if let Some(v) = opt_num(ci_len)? {
            t.length = v;
        }
        if let Some(v) = opt_num(ci_wid)? {
            t.width = v;
        }
        if let Some(i) = ci_type {
            let s = field(i)?;
            t.agent_type =
                AgentType::parse(s).ok_or_else(|| perr(format!("unknown agent type `{s}`")))?;
        }
        t.by_frame.insert(frame, t.rows.len());
        t.rows.push(row);
    }

    let states: Vec<Vec<AgentState>> = tracks
        .iter()
        .map(|t| fill_kinematics(&t.rows, cfg.dt))
        .collect();
    let obs = cfg.obs_steps;
    let window = cfg.window();
    // Start index of an observed run `[f, f + obs)` for track `ti`, if present.
    let obs_run = |ti: usize, f: i64| -> Option<usize> {
        let t = &tracks[ti];
        let a = *t.by_frame.get(&f)?;
        let b = *t.by_frame.get(&(f + obs as i64 - 1))?;
        (b - a == obs - 1).then_some(a)
    };
    let agent_track = |ti: usize, start: usize| AgentTrack {
        agent_id: tracks[ti].id.clone(),
        states: states[ti][start..start + obs].to_vec(),
        length: tracks[ti].length,
        width: tracks[ti].width,
        agent_type: tracks[ti].agent_type,
    };

    let mut split = DatasetSplit::default();
    for (ti, t) in tracks.iter().enumerate() {
        if !cfg.prediction_agents.is_empty() && !cfg.prediction_agents.contains(&t.id) {
            continue;
        }
        for seg in segments(&t.rows) {
            if seg.len() < window {
                continue;
            }
            for start in (seg.start..=seg.end - window).step_by(cfg.stride) {
                let f0 = t.rows[start].frame;
                let last = states[ti][start + obs - 1].position;
                let mut cands: Vec<(f64, usize, usize)> = (0..tracks.len())
                    .filter(|&o| o != ti)
                    .filter_map(|o| {
                        obs_run(o, f0).map(|s| {
                            (
                                squared_distance(states[o][s + obs - 1].position, last),
                                o,
                                s,
                            )
                        })
                    })
                    .collect();
                cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                cands.truncate(cfg.neighbour_cap);
                let raw = Instance {
                    id: format!("{}@{f0}", t.id),
                    prediction_agent: agent_track(ti, start),
                    neighbours: cands.iter().map(|&(_, o, s)| agent_track(o, s)).collect(),
                    future: t.rows[start + obs..start + window]
                        .iter()
                        .map(|r| r.position)
                        .collect(),
                    frame: RigidTransform::identity(),
                };
                let inst = preprocess_instance(&raw)?;
                inst.validate(cfg.obs_steps, cfg.future_steps)?;
                split.instances.push(inst);
                split.labels.push(None);
                split.prototypes.push(Vec::new());
            }
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_is_exact_on_quadratics() {
        let v: Vec<f64> = (0..6).map(|i| (i as f64 * 0.1).powi(2)).collect();
        let d = derivative(&v, 0.1);
        for (i, x) in d.iter().enumerate() {
            assert!((x - 2.0 * i as f64 * 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn segments_split_on_gaps() {
        let rows: Vec<Row> = [1, 2, 3, 7, 8]
            .iter()
            .map(|&f| Row {
                frame: f,
                position: [0.0; 2],
                yaw: None,
                speed: None,
            })
            .collect();
        assert_eq!(segments(&rows), vec![0..3, 3..5]);
    }
}
