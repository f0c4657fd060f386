//! The prediction network: per-agent temporal-convolution encoder,
//! edge-based interaction encoder with masked max-pooling and a
//! broadcast scene context, and decoder heads for trajectories,
//! covariances and the two mode-weight distributions.

mod config;
mod features;
mod layers;

use std::path::Path;

use dipa_autodiff::{Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::ModelConfig;
pub use features::{sequence_features, static_features, SEQ_CHANNELS, STATIC_FEATURES};
use layers::{Conv, Dense, Mlp};

use crate::domain::{GaussianModeStep, Instance, ModeDistribution, MultiModalPrediction};
use crate::error::{DipaError, Result};
use crate::gaussian::cov_from_axes;

/// Latent vector for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentEncoding(pub Vec<f64>);

/// Unconstrained decoder outputs.
#[derive(Debug, Clone, Copy)]
pub struct RawHeads {
    /// `[M, T, 2]`, meters.
    pub mean: Var,
    /// `[M, T, 3]`: two std-dev pre-activations and a rotation angle.
    pub cov: Var,
    pub ws_logits: Var,
    pub wn_logits: Var,
}

/// Constrained prediction parameters as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct PredictionVars {
    /// `[M, T, 2]`
    pub mean: Var,
    /// `[M, T]` std-dev along the rotated first axis.
    pub sigma1: Var,
    /// `[M, T]`
    pub sigma2: Var,
    /// `[M, T]`
    pub theta: Var,
    /// `[M]` on the simplex.
    pub ws: Var,
    pub wn: Var,
    pub log_ws: Var,
    pub log_wn: Var,
}

impl PredictionVars {
    /// `σ = softplus(a) + floor`, `Σ = R(θ) diag(σ1², σ2²) R(θ)ᵀ`, softmax weights.
    pub fn assemble(
        g: &mut Graph,
        raw: &RawHeads,
        sigma_floor: f64,
    ) -> dipa_autodiff::Result<Self> {
        let shape = g.shape(raw.cov).to_vec();
        let (m, t) = (shape[0], shape[1]);
        let channel = |g: &mut Graph, c: usize| -> dipa_autodiff::Result<Var> {
            let s = g.slice(raw.cov, 2, c, 1)?;
            g.reshape(s, &[m, t])
        };
        let a = channel(g, 0)?;
        let b = channel(g, 1)?;
        let theta = channel(g, 2)?;
        let sa = g.softplus(a);
        let sigma1 = g.add_scalar(sa, sigma_floor);
        let sb = g.softplus(b);
        let sigma2 = g.add_scalar(sb, sigma_floor);
        let ws = g.softmax(raw.ws_logits, 0)?;
        let wn = g.softmax(raw.wn_logits, 0)?;
        let log_ws = g.log_softmax(raw.ws_logits, 0)?;
        let log_wn = g.log_softmax(raw.wn_logits, 0)?;
        Ok(Self {
            mean: raw.mean,
            sigma1,
            sigma2,
            theta,
            ws,
            wn,
            log_ws,
            log_wn,
        })
    }

    pub fn to_prediction(&self, g: &Graph, k_n: f64) -> Result<MultiModalPrediction> {
        let mean = g.value(self.mean);
        let (m, t) = (mean.shape()[0], mean.shape()[1]);
        let (s1, s2, th) = (
            g.value(self.sigma1).data(),
            g.value(self.sigma2).data(),
            g.value(self.theta).data(),
        );
        let modes = (0..m)
            .map(|mi| {
                (0..t)
                    .map(|ti| {
                        let k = mi * t + ti;
                        GaussianModeStep {
                            mu: [mean.data()[2 * k], mean.data()[2 * k + 1]],
                            sigma: cov_from_axes(s1[k], s2[k], th[k]),
                        }
                    })
                    .collect()
            })
            .collect();
        let ws = normalized(g.value(self.ws).data())?;
        let wn = normalized(g.value(self.wn).data())?;
        MultiModalPrediction::new(modes, ws, wn, k_n)
    }
}

/// Softmax output renormalized against rounding before the simplex check.
fn normalized(w: &[f64]) -> Result<ModeDistribution> {
    let s: f64 = w.iter().sum();
    ModeDistribution::new(w.iter().map(|x| x / s).collect())
}

/// Graph nodes from one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `[N, H]`
    pub encodings: Var,
    /// `[N, 2H]`
    pub enriched: Var,
    pub raw: RawHeads,
    pub pred: PredictionVars,
}

#[derive(Debug, Clone)]
pub struct DipaModel {
    pub config: ModelConfig,
    /// Output blend: `W_o = (1 - k_n) W_s + k_n W_n`.
    pub k_n: f64,
    params: ParamStore,
    convs: Vec<Conv>,
    encoder_out: Dense,
    edge_mlp: Mlp,
    node_mlp: Mlp,
    decoder: Mlp,
    mean_head: Dense,
    cov_head: Dense,
    ws_head: Dense,
    wn_head: Dense,
    /// Lower-triangular ones, `[T, T]`.
    cumsum: Tensor,
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl DipaModel {
    pub fn new(config: ModelConfig, k_n: f64) -> Result<Self> {
        config.validate()?;
        if !(0.0..=1.0).contains(&k_n) {
            return Err(DipaError::Config(format!("k_n = {k_n} outside [0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let h = config.hidden;
        let convs = (0..config.conv_layers)
            .map(|i| {
                Conv::new(
                    &mut p,
                    &mut rng,
                    &format!("enc.conv{i}"),
                    config.conv_kernel,
                    if i == 0 { SEQ_CHANNELS } else { h },
                    h,
                )
            })
            .collect();
        let conv_width = if config.conv_layers == 0 {
            SEQ_CHANNELS
        } else {
            h
        };
        let flat = config.conv_out_len() * conv_width + STATIC_FEATURES;
        let encoder_out = Dense::new(&mut p, &mut rng, "enc.out", flat, h);
        let edge_mlp = Mlp::new(&mut p, &mut rng, "edge", 2 * h, h, config.edge_layers);
        let node_mlp = Mlp::new(&mut p, &mut rng, "node", 2 * h, h, config.node_layers);
        let decoder = Mlp::new(&mut p, &mut rng, "dec", 2 * h, h, config.decoder_layers);
        let (m, t) = (config.modes, config.future_steps);
        let mean_head = Dense::new(&mut p, &mut rng, "head.mean", h, m * t * 2);
        let cov_head = Dense::new(&mut p, &mut rng, "head.cov", h, m * t * 3);
        let ws_head = Dense::new(&mut p, &mut rng, "head.ws", h, m);
        let wn_head = Dense::new(&mut p, &mut rng, "head.wn", h, m);

        // Mode means start on distinct constant-speed lines along the heading axis.
        {
            let b = p.value_mut(mean_head.b).data_mut();
            for mi in 0..m {
                let reach = config.init_mode_spread * (mi + 1) as f64 / m as f64;
                for ti in 0..t {
                    b[(mi * t + ti) * 2] = reach / config.position_scale;
                }
            }
        }
        {
            let pre = inverse_softplus(config.init_sigma - config.sigma_floor);
            let b = p.value_mut(cov_head.b).data_mut();
            for k in 0..m * t {
                b[3 * k] = pre;
                b[3 * k + 1] = pre;
            }
        }

        Ok(Self {
            config,
            k_n,
            params: p,
            convs,
            encoder_out,
            edge_mlp,
            node_mlp,
            decoder,
            mean_head,
            cov_head,
            ws_head,
            wn_head,
            cumsum: Tensor::new(
                vec![t, t],
                (0..t * t)
                    .map(|k| if k % t <= k / t { 1.0 } else { 0.0 })
                    .collect(),
            )?,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.params.save(path)?)
    }

    pub fn load_checkpoint(config: ModelConfig, k_n: f64, path: impl AsRef<Path>) -> Result<Self> {
        let mut model = Self::new(config, k_n)?;
        let stored = ParamStore::load(path)?;
        model.params.load_values_from(&stored)?;
        Ok(model)
    }

    fn check_instance(&self, instance: &Instance) -> Result<()> {
        let cfg = &self.config;
        for a in instance.agents() {
            a.validate(cfg.obs_steps)?;
        }
        Ok(())
    }

    /// Encodes every agent (prediction agent first) into `[N, H]`.
    pub fn encode_graph(&self, g: &mut Graph, instance: &Instance) -> Result<Var> {
        if instance.prediction_agent.states.is_empty() {
            return Err(DipaError::MalformedInstance(format!(
                "instance {} has no agents",
                instance.id
            )));
        }
        self.check_instance(instance)?;
        let n = instance.num_agents();
        let mut rows = Vec::with_capacity(n);
        let mut statics = Vec::with_capacity(n * STATIC_FEATURES);
        for track in instance.agents() {
            let mut x = g.constant(sequence_features(track, &self.config));
            for c in &self.convs {
                x = c.forward(g, x)?;
            }
            let len = g.value(x).len();
            rows.push(g.reshape(x, &[1, len])?);
            statics.extend(static_features(track));
        }
        let seq = if rows.len() == 1 {
            rows[0]
        } else {
            g.concat(&rows, 0)?
        };
        let st = g.constant(Tensor::new(vec![n, STATIC_FEATURES], statics)?);
        let x = g.concat(&[seq, st], 1)?;
        let h = self.encoder_out.forward(g, x)?;
        Ok(g.relu(h))
    }

    /// Edge features for every ordered pair `(i, j)` (self-edges included),
    /// max-reduced per node over present partners, node MLP, then a
    /// masked max over nodes broadcast back onto each node.
    pub fn interact_graph(&self, g: &mut Graph, enc: Var, mask: &[bool]) -> Result<Var> {
        let (n, h) = (g.shape(enc)[0], g.shape(enc)[1]);
        if mask.len() != n {
            return Err(DipaError::MalformedInstance(format!(
                "mask has {} entries for {n} agents",
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(DipaError::MalformedInstance("no present agents".into()));
        }
        let rows = g.reshape(enc, &[n, 1, h])?;
        let cols = g.reshape(enc, &[1, n, h])?;
        let rows = g.broadcast_to(rows, &[n, n, h])?;
        let cols = g.broadcast_to(cols, &[n, n, h])?;
        let pairs = g.concat(&[rows, cols], 2)?;
        let pairs = g.reshape(pairs, &[n * n, 2 * h])?;
        let edges = self.edge_mlp.forward(g, pairs)?;
        let edges = g.reshape(edges, &[n, n, h])?;
        let edge_mask: Vec<bool> = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                i == j || (mask[i] && mask[j])
            })
            .collect();
        let summary = g.masked_max(edges, 1, &edge_mask)?;
        let node_in = g.concat(&[enc, summary], 1)?;
        let nodes = self.node_mlp.forward(g, node_in)?;
        let scene = g.masked_max(nodes, 0, mask)?;
        let scene = g.reshape(scene, &[1, h])?;
        let scene = g.broadcast_to(scene, &[n, h])?;
        Ok(g.concat(&[nodes, scene], 1)?)
    }

    /// Decodes one enriched encoding `[2H]` into raw head outputs.
    pub fn decode_graph(&self, g: &mut Graph, enriched: Var) -> Result<RawHeads> {
        let (m, t) = (self.config.modes, self.config.future_steps);
        let hdn = self.decoder.forward(g, enriched)?;
        let steps = self.mean_head.forward(g, hdn)?;
        let steps = g.scale(steps, self.config.position_scale / t as f64);
        let mean = self.integrate(g, steps)?;
        let cov = self.cov_head.forward(g, hdn)?;
        let cov = g.reshape(cov, &[m, t, 3])?;
        let ws_logits = self.ws_head.forward(g, hdn)?;
        let wn_logits = self.wn_head.forward(g, hdn)?;
        Ok(RawHeads {
            mean,
            cov,
            ws_logits,
            wn_logits,
        })
    }

    /// Running sum over time of per-step displacements `[M·T·2]`, giving
    /// `[M, T, 2]` positions. A mode's position at `t` depends on all of its
    /// earlier steps, which keeps each mode one coherent trajectory.
    fn integrate(&self, g: &mut Graph, steps: Var) -> Result<Var> {
        let (m, t) = (self.config.modes, self.config.future_steps);
        let tri = g.constant(self.cumsum.clone());
        let mut rows = Vec::with_capacity(m);
        for mi in 0..m {
            let d = g.slice(steps, 0, mi * t * 2, t * 2)?;
            let d = g.reshape(d, &[t, 2])?;
            let pos = g.matmul(tri, d)?;
            rows.push(g.reshape(pos, &[1, t, 2])?);
        }
        Ok(if m == 1 { rows[0] } else { g.concat(&rows, 0)? })
    }

    pub fn forward_graph(
        &self,
        g: &mut Graph,
        instance: &Instance,
        mask: &[bool],
    ) -> Result<ForwardVars> {
        if !mask.first().copied().unwrap_or(false) {
            return Err(DipaError::MalformedInstance(
                "prediction agent must be present".into(),
            ));
        }
        let encodings = self.encode_graph(g, instance)?;
        let enriched = self.interact_graph(g, encodings, mask)?;
        let width = g.shape(enriched)[1];
        let row = g.slice(enriched, 0, 0, 1)?;
        let row = g.reshape(row, &[width])?;
        let raw = self.decode_graph(g, row)?;
        let pred = PredictionVars::assemble(g, &raw, self.config.sigma_floor)?;
        Ok(ForwardVars {
            encodings,
            enriched,
            raw,
            pred,
        })
    }

    pub fn predict(&self, instance: &Instance) -> Result<MultiModalPrediction> {
        let mask = vec![true; instance.num_agents()];
        self.predict_masked(instance, &mask)
    }

    /// Prediction with some neighbours excluded from the interaction reductions.
    pub fn predict_masked(
        &self,
        instance: &Instance,
        mask: &[bool],
    ) -> Result<MultiModalPrediction> {
        let mut g = Graph::with_params(&self.params);
        let fw = self.forward_graph(&mut g, instance, mask)?;
        fw.pred.to_prediction(&g, self.k_n)
    }

    pub fn encode_agents(&self, instance: &Instance) -> Result<Vec<AgentEncoding>> {
        let mut g = Graph::with_params(&self.params);
        let enc = self.encode_graph(&mut g, instance)?;
        let h = self.config.hidden;
        Ok(g.value(enc)
            .data()
            .chunks(h)
            .map(|c| AgentEncoding(c.to_vec()))
            .collect())
    }

    /// Context-enriched encodings (`2H` each) for the given agent encodings.
    pub fn interact(&self, encodings: &[AgentEncoding], mask: &[bool]) -> Result<Vec<Vec<f64>>> {
        let h = self.config.hidden;
        if encodings.is_empty() || encodings.iter().any(|e| e.0.len() != h) {
            return Err(DipaError::MalformedInstance(
                "encodings must be non-empty with hidden width".into(),
            ));
        }
        let mut g = Graph::with_params(&self.params);
        let flat: Vec<f64> = encodings.iter().flat_map(|e| e.0.iter().copied()).collect();
        let enc = g.constant(Tensor::new(vec![encodings.len(), h], flat)?);
        let out = self.interact_graph(&mut g, enc, mask)?;
        Ok(g.value(out)
            .data()
            .chunks(2 * h)
            .map(<[f64]>::to_vec)
            .collect())
    }

    pub fn decode(&self, enriched: &[f64]) -> Result<MultiModalPrediction> {
        let mut g = Graph::with_params(&self.params);
        let x = g.constant(Tensor::vector(enriched.to_vec()));
        let raw = self.decode_graph(&mut g, x)?;
        let pred = PredictionVars::assemble(&mut g, &raw, self.config.sigma_floor)?;
        pred.to_prediction(&g, self.k_n)
    }
}
