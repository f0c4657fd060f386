//! Adam optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::param::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        Self {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Gradients are checked before any parameter is touched,
    /// so a divergence error leaves `params` unchanged.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        for ((_, p), g) in params.iter().zip(grads) {
            if !g.is_finite() {
                return Err(AutodiffError::Divergence(p.name.clone()));
            }
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
        for (i, id) in ids.into_iter().enumerate() {
            let w = params.value_mut(id).data_mut();
            let (m, v, g) = (self.m[i].data_mut(), self.v[i].data_mut(), grads[i].data());
            for j in 0..w.len() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                w[j] -= c.learning_rate * mhat / (vhat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(values));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = store(vec![1.5, -2.0]);
        let before = s.clone();
        let mut adam = Adam::new(AdamConfig::default(), &s);
        for _ in 0..5 {
            adam.step(&mut s, &[Tensor::zeros(&[2])]).unwrap();
        }
        assert_eq!(s, before);
    }

    #[test]
    fn first_step_has_learning_rate_magnitude() {
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + eps).
        let g = 0.37;
        let want = 1e-3 * g / (g + 1e-8);
        let mut s = store(vec![0.0]);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        adam.step(&mut s, &[Tensor::vector(vec![g])]).unwrap();
        assert!((s.value(crate::ParamId(0)).data()[0] + want).abs() < 1e-18);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store(vec![0.0]);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let err = adam
            .step(&mut s, &[Tensor::vector(vec![f64::NAN])])
            .unwrap_err();
        assert!(matches!(err, AutodiffError::Divergence(ref n) if n == "w"));
        assert_eq!(s.value(crate::ParamId(0)).data(), &[0.0]);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut s = store(vec![0.3, -0.2, 0.25]);
        let cfg = AdamConfig {
            learning_rate: 1e-2,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &s);
        for _ in 0..500 {
            let w = s.value(crate::ParamId(0)).data().to_vec();
            let g = Tensor::vector(w.iter().map(|x| 2.0 * x).collect());
            adam.step(&mut s, &[g]).unwrap();
        }
        let norm: f64 = s
            .value(crate::ParamId(0))
            .data()
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        assert!(norm < 1e-3, "norm {norm}");
    }
}
