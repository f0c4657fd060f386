use serde::{Deserialize, Serialize};

use crate::error::{DipaError, Result};

/// Network sizes and output scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub conv_kernel: usize,
    pub conv_layers: usize,
    pub edge_layers: usize,
    pub node_layers: usize,
    pub decoder_layers: usize,
    pub modes: usize,
    pub obs_steps: usize,
    pub future_steps: usize,
    /// Meters per unit of network position input. On output, each mode's
    /// per-step displacement is `position_scale / future_steps` per unit, so
    /// a unit output held over the horizon travels `position_scale` meters.
    pub position_scale: f64,
    /// Meters/second per unit of speed input.
    pub speed_scale: f64,
    /// Added to each std-dev so every covariance stays positive definite.
    pub sigma_floor: f64,
    /// Initial std-dev in meters.
    pub init_sigma: f64,
    /// Reach of the farthest initial mode along the heading axis, in meters.
    /// Mode `m` of `M` starts as straight travel to `spread * (m + 1) / M`,
    /// so the default fans modes out from a near stop to highway travel.
    pub init_mode_spread: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            conv_kernel: 3,
            conv_layers: 2,
            edge_layers: 2,
            node_layers: 2,
            decoder_layers: 2,
            modes: 2,
            obs_steps: 10,
            future_steps: 30,
            position_scale: 10.0,
            speed_scale: 10.0,
            sigma_floor: 1e-3,
            init_sigma: 1.0,
            init_mode_spread: 30.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn conv_out_len(&self) -> usize {
        self.obs_steps
            .saturating_sub(self.conv_layers * (self.conv_kernel.saturating_sub(1)))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.hidden,
            self.conv_kernel,
            self.edge_layers,
            self.node_layers,
            self.decoder_layers,
            self.modes,
            self.obs_steps,
            self.future_steps,
        ];
        if positive.contains(&0) {
            return Err(DipaError::Config("model sizes must be positive".into()));
        }
        if self.conv_out_len() == 0 {
            return Err(DipaError::Config(format!(
                "{} conv layers of kernel {} consume all {} observed steps",
                self.conv_layers, self.conv_kernel, self.obs_steps
            )));
        }
        if !(self.position_scale > 0.0
            && self.speed_scale > 0.0
            && self.sigma_floor > 0.0
            && self.init_sigma > self.sigma_floor)
        {
            return Err(DipaError::Config(
                "scales must be positive and init_sigma > sigma_floor".into(),
            ));
        }
        Ok(())
    }
}
