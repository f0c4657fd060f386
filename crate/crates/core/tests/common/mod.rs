//! Helpers shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use dipa::model::{PredictionVars, RawHeads};
use dipa::training::{
    frozen, kl_mode_loss, log_density_grid, mse_mode_loss, nll_mode_loss, spatial_loss,
    standard_nll_loss,
};
use dipa::{
    AgentState, AgentTrack, AgentType, Instance, ModeDistribution, ModelConfig, RigidTransform,
    Vec2,
};
use dipa_autodiff::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SIGMA_FLOOR: f64 = 1e-3;

/// Raw head values for one instance plus a ground-truth future.
#[derive(Debug, Clone)]
pub struct HeadValues {
    pub mean: Tensor,
    pub cov: Tensor,
    pub ws_logits: Tensor,
    pub wn_logits: Tensor,
    pub future: Vec<Vec2>,
}

pub fn random_heads(seed: u64, m: usize, t: usize) -> HeadValues {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |n: usize, lo: f64, hi: f64| -> Vec<f64> {
        (0..n).map(|_| rng.random_range(lo..hi)).collect()
    };
    let mean = Tensor::new(vec![m, t, 2], fill(m * t * 2, -2.0, 2.0)).unwrap();
    let cov = Tensor::new(vec![m, t, 3], fill(m * t * 3, -0.5, 1.0)).unwrap();
    let ws_logits = Tensor::vector(fill(m, -1.0, 1.0));
    let wn_logits = Tensor::vector(fill(m, -1.0, 1.0));
    let future = fill(2 * t, -2.0, 2.0)
        .chunks(2)
        .map(|c| [c[0], c[1]])
        .collect();
    HeadValues {
        mean,
        cov,
        ws_logits,
        wn_logits,
        future,
    }
}

/// Which heads a loss expression reads as differentiable inputs; the rest
/// enter as constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Mean,
    Cov,
    Ws,
    Wn,
}

pub fn head_tensor(h: &HeadValues, head: Head) -> Tensor {
    match head {
        Head::Mean => h.mean.clone(),
        Head::Cov => h.cov.clone(),
        Head::Ws => h.ws_logits.clone(),
        Head::Wn => h.wn_logits.clone(),
    }
}

/// Places the heads on `g`, taking `inputs[i]` for `live[i]` and constants otherwise.
pub fn place_heads(g: &mut Graph, h: &HeadValues, live: &[Head], inputs: &[Var]) -> PredictionVars {
    let mut pick = |head: Head| -> Var {
        match live.iter().position(|&l| l == head) {
            Some(i) => inputs[i],
            None => g.constant(head_tensor(h, head)),
        }
    };
    let raw = RawHeads {
        mean: pick(Head::Mean),
        cov: pick(Head::Cov),
        ws_logits: pick(Head::Ws),
        wn_logits: pick(Head::Wn),
    };
    PredictionVars::assemble(g, &raw, SIGMA_FLOOR).unwrap()
}

pub type LossExpr = Box<dyn Fn(&mut Graph, &[Var]) -> dipa_autodiff::Result<Var>>;

/// A loss written as a function of the heads that receive its gradient.
pub struct LossCase {
    pub name: &'static str,
    pub live: Vec<Head>,
    pub inputs: Vec<Tensor>,
    pub expr: LossExpr,
}

fn case(
    name: &'static str,
    h: &HeadValues,
    live: Vec<Head>,
    f: impl Fn(&mut Graph, &PredictionVars, &[Vec2]) -> dipa_autodiff::Result<Var> + 'static,
) -> LossCase {
    let inputs = live.iter().map(|&l| head_tensor(h, l)).collect();
    let (hh, ll) = (h.clone(), live.clone());
    LossCase {
        name,
        live,
        inputs,
        expr: Box::new(move |g, v| {
            let pv = place_heads(g, &hh, &ll, v);
            f(g, &pv, &hh.future)
        }),
    }
}

/// The four training losses and the standard NLL baseline, each as a function
/// of exactly the heads it trains. `w_r` is a fixed draw on the simplex.
pub fn loss_cases(seed: u64, m: usize, t: usize) -> Vec<LossCase> {
    let h = random_heads(seed, m, t);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let w_r = ModeDistribution::new(raw.iter().map(|x| x / s).collect()).unwrap();
    let (w1, w2) = (w_r.clone(), w_r);
    vec![
        case(
            "spatial",
            &h,
            vec![Head::Mean, Head::Cov],
            move |g, pv, fut| {
                let l = log_density_grid(g, pv, fut)?;
                spatial_loss(g, l, &w1)
            },
        ),
        case("mse_mode", &h, vec![Head::Ws], |g, pv, fut| {
            mse_mode_loss(g, pv, fut)
        }),
        case("nll_mode", &h, vec![Head::Wn], |g, pv, fut| {
            let fz = frozen(g, pv);
            let l = log_density_grid(g, &fz, fut)?;
            nll_mode_loss(g, l, pv)
        }),
        case("kl_mode", &h, vec![Head::Wn], move |g, pv, _| {
            kl_mode_loss(g, &w2, pv.wn)
        }),
        case(
            "standard_nll",
            &h,
            vec![Head::Mean, Head::Cov, Head::Ws, Head::Wn],
            |g, pv, fut| {
                let l = log_density_grid(g, pv, fut)?;
                standard_nll_loss(g, l, pv, 0.9)
            },
        ),
    ]
}

pub fn track(id: &str, states: Vec<AgentState>) -> AgentTrack {
    AgentTrack {
        agent_id: id.into(),
        states,
        length: 4.5,
        width: 1.8,
        agent_type: AgentType::Car,
    }
}

/// Constant-velocity track along `yaw` ending at `end`.
pub fn straight_track(
    id: &str,
    end: Vec2,
    yaw: f64,
    speed: f64,
    steps: usize,
    dt: f64,
) -> AgentTrack {
    let (c, s) = (yaw.cos(), yaw.sin());
    let states = (0..steps)
        .map(|k| {
            let back = (steps - 1 - k) as f64 * dt * speed;
            AgentState {
                position: [end[0] - c * back, end[1] - s * back],
                yaw,
                speed,
            }
        })
        .collect();
    track(id, states)
}

/// Random scene in the local frame of the prediction agent.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    id: usize,
    neighbours: usize,
    obs: usize,
    fut: usize,
) -> Instance {
    let speed = rng.random_range(2.0..12.0);
    let ego = straight_track("ego", [0.0, 0.0], 0.0, speed, obs, 0.1);
    let neighbours = (0..neighbours)
        .map(|k| {
            let end = [rng.random_range(-30.0..30.0), rng.random_range(-15.0..15.0)];
            let yaw = rng.random_range(-3.0..3.0);
            let mut t = straight_track(
                &format!("n{k}"),
                end,
                yaw,
                rng.random_range(0.0..12.0),
                obs,
                0.1,
            );
            t.length = rng.random_range(3.5..12.0);
            t
        })
        .collect();
    let future = (1..=fut)
        .map(|k| [speed * 0.1 * k as f64, rng.random_range(-0.2..0.2)])
        .collect();
    Instance {
        id: format!("r{id}"),
        prediction_agent: ego,
        neighbours,
        future,
        frame: RigidTransform::identity(),
    }
}

/// Small network for fast tests.
pub fn tiny_model_config(modes: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        hidden: 8,
        modes,
        seed,
        ..ModelConfig::default()
    }
}

/// Three hand-built scenes with three-mode predictions over 30 steps.
/// Modes are straight lines with chosen speeds and lateral offsets, so every
/// metric can be recomputed by hand.
pub fn metric_fixture() -> (Vec<Instance>, Vec<dipa::MultiModalPrediction>) {
    use dipa::{GaussianModeStep, MultiModalPrediction};
    let t = 30;
    let path = |speed: f64, lateral: f64| -> Vec<Vec2> {
        (1..=t)
            .map(|k| [speed * 0.1 * k as f64, lateral * k as f64 / t as f64])
            .collect()
    };
    // (ground truth, modes as (speed, lateral), w_s, w_n)
    type Scene = ((f64, f64), [(f64, f64); 3], [f64; 3], [f64; 3]);
    let scenes: [Scene; 3] = [
        (
            (10.0, 0.0),
            [(10.0, 0.5), (5.0, 0.0), (12.0, 3.0)],
            [0.5, 0.3, 0.2],
            [0.6, 0.3, 0.1],
        ),
        (
            (4.0, -1.0),
            [(10.0, 0.0), (4.5, -1.0), (3.0, 2.0)],
            [0.7, 0.2, 0.1],
            [0.8, 0.15, 0.05],
        ),
        (
            (8.0, 3.5),
            [(8.0, 0.0), (9.0, 3.0), (6.0, 3.5)],
            [0.1, 0.1, 0.8],
            [0.3, 0.6, 0.1],
        ),
    ];
    let mut instances = Vec::new();
    let mut preds = Vec::new();
    for (i, (gt, modes, ws, wn)) in scenes.iter().enumerate() {
        let mut inst = random_instance(&mut ChaCha8Rng::seed_from_u64(i as u64), i, 1, 10, t);
        inst.future = path(gt.0, gt.1);
        instances.push(inst);
        let sig = 0.3 + 0.2 * i as f64;
        let modes = modes
            .iter()
            .map(|&(s, l)| {
                path(s, l)
                    .into_iter()
                    .map(|mu| GaussianModeStep {
                        mu,
                        sigma: [[sig * sig, 0.0], [0.0, sig * sig]],
                    })
                    .collect()
            })
            .collect();
        preds.push(
            MultiModalPrediction::new(
                modes,
                ModeDistribution::new(ws.to_vec()).unwrap(),
                ModeDistribution::new(wn.to_vec()).unwrap(),
                0.9,
            )
            .unwrap(),
        );
    }
    (instances, preds)
}

/// Brute-force reference implementations, written independently of the
/// library: explicit loops, `hypot`, and sorting instead of running minima.
pub mod oracle {
    use dipa::{MultiModalPrediction, Vec2};

    fn dist(a: Vec2, b: Vec2) -> f64 {
        (a[0] - b[0]).hypot(a[1] - b[1])
    }

    fn w_o(p: &MultiModalPrediction) -> Vec<f64> {
        p.w_s
            .weights()
            .iter()
            .zip(p.w_n.weights())
            .map(|(s, n)| (1.0 - p.k_n) * s + p.k_n * n)
            .collect()
    }

    pub fn min_ade(p: &MultiModalPrediction, gt: &[Vec2]) -> f64 {
        let mut all: Vec<f64> = p
            .modes
            .iter()
            .map(|mode| {
                mode.iter()
                    .zip(gt)
                    .map(|(s, x)| dist(s.mu, *x))
                    .sum::<f64>()
                    / gt.len() as f64
            })
            .collect();
        all.sort_by(f64::total_cmp);
        all[0]
    }

    pub fn min_fde(p: &MultiModalPrediction, gt: &[Vec2]) -> f64 {
        let mut all: Vec<f64> = p
            .modes
            .iter()
            .map(|mode| dist(mode[gt.len() - 1].mu, gt[gt.len() - 1]))
            .collect();
        all.sort_by(f64::total_cmp);
        all[0]
    }

    pub fn pred_rms(ps: &[MultiModalPrediction], gts: &[Vec<Vec2>], t: usize) -> f64 {
        let mut s = 0.0;
        for (p, gt) in ps.iter().zip(gts) {
            let w = w_o(p);
            let mut best = 0;
            for m in 1..w.len() {
                if w[m] > w[best] {
                    best = m;
                }
            }
            s += dist(p.modes[best][t].mu, gt[t]).powi(2);
        }
        (s / ps.len() as f64).sqrt()
    }

    pub fn miss_rate(ps: &[MultiModalPrediction], gts: &[Vec<Vec2>], thr: f64) -> f64 {
        let misses = ps
            .iter()
            .zip(gts)
            .filter(|(p, gt)| {
                p.modes
                    .iter()
                    .all(|m| dist(m[gt.len() - 1].mu, gt[gt.len() - 1]) > thr)
            })
            .count();
        misses as f64 / ps.len() as f64
    }

    pub fn recall(ps: &[MultiModalPrediction], gts: &[Vec<Vec2>], thr: f64) -> f64 {
        1.0 - miss_rate(ps, gts, thr)
    }

    pub fn precision(ps: &[MultiModalPrediction], gts: &[Vec<Vec2>], thr: f64, pthr: f64) -> f64 {
        let (mut hit, mut n) = (0.0, 0.0);
        for (p, gt) in ps.iter().zip(gts) {
            let w = w_o(p);
            let mut chosen: Vec<usize> = (0..w.len()).filter(|&m| w[m] >= pthr).collect();
            if chosen.is_empty() {
                let mut idx: Vec<usize> = (0..w.len()).collect();
                idx.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
                chosen.push(idx[0]);
            }
            for m in chosen {
                n += 1.0;
                if dist(p.modes[m][gt.len() - 1].mu, gt[gt.len() - 1]) <= thr {
                    hit += 1.0;
                }
            }
        }
        hit / n
    }

    /// Capped mixture NLL at step `t` from explicit density products.
    pub fn nll_step(p: &MultiModalPrediction, gt: &[Vec2], t: usize, sigma_min: f64) -> f64 {
        let w = w_o(p);
        let mut dens = 0.0;
        for (m, mode) in p.modes.iter().enumerate() {
            let s = mode[t].sigma;
            let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
            let (dx, dy) = (gt[t][0] - mode[t].mu[0], gt[t][1] - mode[t].mu[1]);
            let q = (s[1][1] * dx * dx - (s[0][1] + s[1][0]) * dx * dy + s[0][0] * dy * dy) / det;
            dens += w[m] * (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
        }
        let cap = 1.0 / (2.0 * std::f64::consts::PI * sigma_min * sigma_min);
        -dens.min(cap).ln()
    }
}

pub const ALL_HEADS: [Head; 4] = [Head::Mean, Head::Cov, Head::Ws, Head::Wn];

/// Gradients of `f` with respect to every head, in [`ALL_HEADS`] order.
pub fn grads_of<F>(h: &HeadValues, f: F) -> Vec<Option<Tensor>>
where
    F: Fn(&mut Graph, &PredictionVars, &[Vec2]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<_> = ALL_HEADS
        .iter()
        .map(|&hd| g.input(head_tensor(h, hd)))
        .collect();
    let pv = place_heads(&mut g, h, &ALL_HEADS, &vars);
    let root = f(&mut g, &pv, &h.future);
    let grads = g.backward(root).unwrap();
    vars.iter().map(|&v| grads.get(v).cloned()).collect()
}

pub fn exactly_zero(t: &Option<Tensor>) -> bool {
    t.as_ref()
        .is_none_or(|t| t.data().iter().all(|&x| x == 0.0))
}

pub fn nonzero(t: &Option<Tensor>) -> bool {
    !exactly_zero(t)
}

/// The gradient-stop contract on one random head draw: which heads each loss
/// reaches. Returns the name of the first violated probe.
pub fn gradient_stop_violation(seed: u64) -> Option<&'static str> {
    let h = random_heads(seed, 3, 6);
    let w_r = ModeDistribution::new(vec![0.5, 0.3, 0.2]).unwrap();
    let sp = grads_of(&h, |g, pv, f| {
        let l = log_density_grid(g, pv, f).unwrap();
        spatial_loss(g, l, &w_r).unwrap()
    });
    if !(nonzero(&sp[0]) && nonzero(&sp[1]) && exactly_zero(&sp[2]) && exactly_zero(&sp[3])) {
        return Some("spatial reaches the weight heads");
    }
    let mse = grads_of(&h, |g, pv, f| mse_mode_loss(g, pv, f).unwrap());
    if !(exactly_zero(&mse[0])
        && exactly_zero(&mse[1])
        && nonzero(&mse[2])
        && exactly_zero(&mse[3]))
    {
        return Some("mse reaches the means");
    }
    let nll = grads_of(&h, |g, pv, f| {
        let fz = frozen(g, pv);
        let l = log_density_grid(g, &fz, f).unwrap();
        nll_mode_loss(g, l, pv).unwrap()
    });
    if !(exactly_zero(&nll[0])
        && exactly_zero(&nll[1])
        && exactly_zero(&nll[2])
        && nonzero(&nll[3]))
    {
        return Some("nll_mode reaches the spatial heads");
    }
    let kl = grads_of(&h, |g, pv, _| kl_mode_loss(g, &w_r, pv.wn).unwrap());
    if !(exactly_zero(&kl[0]) && exactly_zero(&kl[1]) && exactly_zero(&kl[2]) && nonzero(&kl[3])) {
        return Some("kl reaches heads other than W_n");
    }
    None
}
