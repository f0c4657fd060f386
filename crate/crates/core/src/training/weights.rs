use serde::{Deserialize, Serialize};

use crate::domain::{ModeDistribution, MultiModalPrediction, Vec2};
use crate::gaussian::{distance, log_density, logsumexp};

/// Per-instance loss weighting distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingWeights {
    pub w_c: ModeDistribution,
    pub w_p: ModeDistribution,
    pub w_r: ModeDistribution,
    pub k_r: f64,
}

impl TrainingWeights {
    pub fn compute(pred: &MultiModalPrediction, future: &[Vec2], k_r: f64) -> Self {
        let w_c = closest_mode_weights(pred, future);
        let w_p = posterior_weights(pred, future);
        let w_r = training_mode_weights(&w_c, &w_p, k_r);
        Self { w_c, w_p, w_r, k_r }
    }
}

/// Mean Euclidean displacement of each mode from the ground truth.
pub fn mean_displacements(pred: &MultiModalPrediction, future: &[Vec2]) -> Vec<f64> {
    let t = future.len().min(pred.num_steps()) as f64;
    pred.modes
        .iter()
        .map(|steps| {
            steps
                .iter()
                .zip(future)
                .map(|(s, x)| distance(*x, s.mu))
                .sum::<f64>()
                / t
        })
        .collect()
}

/// One-hot on the mode with the smallest mean displacement; ties go to the lowest index.
pub fn closest_mode_weights(pred: &MultiModalPrediction, future: &[Vec2]) -> ModeDistribution {
    let d = mean_displacements(pred, future);
    let mut best = 0;
    for (m, &v) in d.iter().enumerate() {
        if v < d[best] {
            best = m;
        }
    }
    ModeDistribution::one_hot(d.len(), best)
}

/// Posterior responsibility of each mode for the observation, averaged over
/// timesteps. Normalized in log space so underflowing densities stay finite.
pub fn posterior_weights(pred: &MultiModalPrediction, future: &[Vec2]) -> ModeDistribution {
    let m = pred.num_modes();
    let steps = future.len().min(pred.num_steps());
    let mut acc = vec![0.0; m];
    let mut logs = vec![0.0; m];
    for (t, x) in future.iter().enumerate().take(steps) {
        for (k, l) in logs.iter_mut().enumerate() {
            let s = &pred.modes[k][t];
            *l = log_density(*x, s.mu, &s.sigma);
        }
        let lse = logsumexp(&logs);
        if lse.is_finite() {
            for (a, l) in acc.iter_mut().zip(&logs) {
                *a += (l - lse).exp();
            }
        } else {
            for a in &mut acc {
                *a += 1.0 / m as f64;
            }
        }
    }
    let total: f64 = acc.iter().sum();
    ModeDistribution::new(acc.iter().map(|a| a / total).collect())
        .unwrap_or_else(|_| ModeDistribution::uniform(m))
}

/// `(1 - k_r)·w_c + k_r·w_p`.
pub fn training_mode_weights(
    w_c: &ModeDistribution,
    w_p: &ModeDistribution,
    k_r: f64,
) -> ModeDistribution {
    ModeDistribution::blend(w_c, w_p, k_r)
}
