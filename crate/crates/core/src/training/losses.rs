//! Loss terms on the autodiff graph.
//!
//! Each function takes the constrained prediction nodes from
//! [`PredictionVars`] and applies its own gradient stops, so the caller can
//! sum the terms into one root and run a single backward pass.

use dipa_autodiff::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::domain::{ModeDistribution, Vec2};
use crate::gaussian::LN_2PI;
use crate::model::PredictionVars;

pub const KL_CLAMP: f64 = 1e-12;

type GResult<T> = dipa_autodiff::Result<T>;

/// Scalar values of every term for one instance or a batch mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub spatial: f64,
    pub mse_mode: f64,
    pub nll_mode: f64,
    pub kl_mode: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn is_finite(&self) -> bool {
        [
            self.spatial,
            self.mse_mode,
            self.nll_mode,
            self.kl_mode,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub(crate) fn accumulate(&mut self, other: &LossBundle, scale: f64) {
        self.spatial += scale * other.spatial;
        self.mse_mode += scale * other.mse_mode;
        self.nll_mode += scale * other.nll_mode;
        self.kl_mode += scale * other.kl_mode;
        self.total += scale * other.total;
    }
}

/// Coefficients applied to the four terms when forming the total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub spatial: f64,
    pub mse: f64,
    pub nll: f64,
    pub kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            spatial: 1.0,
            mse: 1.0,
            nll: 1.0,
            kl: 1.0,
        }
    }
}

/// Spatial parameters with every gradient path cut.
pub fn frozen(g: &mut Graph, pv: &PredictionVars) -> PredictionVars {
    PredictionVars {
        mean: g.stop_gradient(pv.mean),
        sigma1: g.stop_gradient(pv.sigma1),
        sigma2: g.stop_gradient(pv.sigma2),
        theta: g.stop_gradient(pv.theta),
        ..*pv
    }
}

/// Ground truth replicated per mode as two `[M, T]` constants.
fn future_grid(g: &mut Graph, future: &[Vec2], m: usize) -> GResult<(Var, Var)> {
    let t = future.len();
    let xs: Vec<f64> = (0..m).flat_map(|_| future.iter().map(|p| p[0])).collect();
    let ys: Vec<f64> = (0..m).flat_map(|_| future.iter().map(|p| p[1])).collect();
    Ok((
        g.constant(Tensor::new(vec![m, t], xs)?),
        g.constant(Tensor::new(vec![m, t], ys)?),
    ))
}

fn mean_channels(g: &mut Graph, mean: Var) -> GResult<(Var, Var)> {
    let s = g.shape(mean).to_vec();
    let mx = g.slice(mean, 2, 0, 1)?;
    let mx = g.reshape(mx, &s[..2])?;
    let my = g.slice(mean, 2, 1, 1)?;
    let my = g.reshape(my, &s[..2])?;
    Ok((mx, my))
}

/// `[M, T]` log-densities `ln N(x_t; μ_{m,t}, Σ_{m,t})` of the ground truth.
pub fn log_density_grid(g: &mut Graph, pv: &PredictionVars, future: &[Vec2]) -> GResult<Var> {
    let m = g.shape(pv.mean)[0];
    let (fx, fy) = future_grid(g, future, m)?;
    let (mx, my) = mean_channels(g, pv.mean)?;
    let dx = g.sub(fx, mx)?;
    let dy = g.sub(fy, my)?;
    let c = g.cos(pv.theta);
    let s = g.sin(pv.theta);
    let cdx = g.mul(c, dx)?;
    let sdy = g.mul(s, dy)?;
    let u = g.add(cdx, sdy)?;
    let sdx = g.mul(s, dx)?;
    let cdy = g.mul(c, dy)?;
    let v = g.sub(cdy, sdx)?;
    let u1 = g.div(u, pv.sigma1)?;
    let v2 = g.div(v, pv.sigma2)?;
    let u1 = g.square(u1);
    let v2 = g.square(v2);
    let q = g.add(u1, v2)?;
    let half_q = g.scale(q, -0.5);
    let l1 = g.log(pv.sigma1);
    let l2 = g.log(pv.sigma2);
    let logs = g.add(l1, l2)?;
    let out = g.sub(half_q, logs)?;
    Ok(g.add_scalar(out, -LN_2PI))
}

fn per_step_weights(w: &ModeDistribution, t: usize) -> Tensor {
    let data = w
        .weights()
        .iter()
        .flat_map(|&x| std::iter::repeat_n(x, t))
        .collect();
    Tensor::new(vec![w.len(), t], data).expect("shape")
}

/// `−(1/T) Σ_t ln Σ_m W_r,m N(x_t; μ_{m,t}, Σ_{m,t})` with `W_r` constant.
pub fn spatial_loss(g: &mut Graph, log_density: Var, w_r: &ModeDistribution) -> GResult<Var> {
    let t = g.shape(log_density)[1];
    let lse = g.logsumexp_weighted(log_density, 0, &per_step_weights(w_r, t))?;
    let mean = g.mean_all(lse);
    Ok(g.neg(mean))
}

/// `Σ_m W_s,m (1/T) Σ_t ‖x_t − μ_{m,t}‖²` with `μ` constant.
pub fn mse_mode_loss(g: &mut Graph, pv: &PredictionVars, future: &[Vec2]) -> GResult<Var> {
    let m = g.shape(pv.mean)[0];
    let mean = g.stop_gradient(pv.mean);
    let (fx, fy) = future_grid(g, future, m)?;
    let (mx, my) = mean_channels(g, mean)?;
    let dx = g.sub(fx, mx)?;
    let dy = g.sub(fy, my)?;
    let dx = g.square(dx);
    let dy = g.square(dy);
    let sq = g.add(dx, dy)?;
    let per_mode = g.mean(sq, 1)?;
    let weighted = g.mul(pv.ws, per_mode)?;
    Ok(g.sum_all(weighted))
}

/// Mixture NLL with log-weights `log_w` broadcast across timesteps.
fn weighted_nll(g: &mut Graph, log_density: Var, log_w: Var) -> GResult<Var> {
    let (m, t) = (g.shape(log_density)[0], g.shape(log_density)[1]);
    let lw = g.reshape(log_w, &[m, 1])?;
    let lw = g.broadcast_to(lw, &[m, t])?;
    let joint = g.add(log_density, lw)?;
    let lse = g.logsumexp(joint, 0)?;
    let mean = g.mean_all(lse);
    Ok(g.neg(mean))
}

/// Mixture NLL under `W_n`; pass a log-density grid built from [`frozen`]
/// parameters so only the `W_n` head is trained.
pub fn nll_mode_loss(g: &mut Graph, frozen_log_density: Var, pv: &PredictionVars) -> GResult<Var> {
    weighted_nll(g, frozen_log_density, pv.log_wn)
}

/// `D_KL(W_r ‖ W_n)` with `W_r` constant and both clamped at [`KL_CLAMP`].
pub fn kl_mode_loss(g: &mut Graph, w_r: &ModeDistribution, wn: Var) -> GResult<Var> {
    let wr = w_r.weights();
    let entropy_part: f64 = wr.iter().map(|&w| w * w.max(KL_CLAMP).ln()).sum();
    let c = g.constant(Tensor::vector(wr.to_vec()));
    let clamped = g.clamp_min(wn, KL_CLAMP);
    let log_wn = g.log(clamped);
    let cross = g.mul(c, log_wn)?;
    let cross = g.sum_all(cross);
    let neg = g.neg(cross);
    Ok(g.add_scalar(neg, entropy_part))
}

/// Mixture NLL weighted by the blended output distribution, with gradients
/// reaching every head.
pub fn standard_nll_loss(
    g: &mut Graph,
    log_density: Var,
    pv: &PredictionVars,
    k_n: f64,
) -> GResult<Var> {
    let a = g.scale(pv.ws, 1.0 - k_n);
    let b = g.scale(pv.wn, k_n);
    let wo = g.add(a, b)?;
    let wo = g.clamp_min(wo, f64::MIN_POSITIVE);
    let log_wo = g.log(wo);
    weighted_nll(g, log_density, log_wo)
}
