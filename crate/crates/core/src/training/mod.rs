//! Mode-weighted training: per-instance training weights, the four loss
//! terms with their gradient stops, and the epoch loop.

mod losses;
mod weights;

use std::borrow::Borrow;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dipa_autodiff::{Adam, AdamConfig, Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use losses::{
    frozen, kl_mode_loss, log_density_grid, mse_mode_loss, nll_mode_loss, spatial_loss,
    standard_nll_loss, LossBundle, LossWeights, KL_CLAMP,
};
pub use weights::{
    closest_mode_weights, mean_displacements, posterior_weights, training_mode_weights,
    TrainingWeights,
};

use crate::domain::Instance;
use crate::error::{DipaError, Result};
use crate::model::DipaModel;
use crate::par::{map_ordered, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainVariant {
    DipaDefault,
    StandardNll,
    ClosestOnly,
    PosteriorOnly,
    WSOnly,
    WNOnly,
}

impl TrainVariant {
    pub const ALL: [TrainVariant; 6] = [
        Self::DipaDefault,
        Self::StandardNll,
        Self::ClosestOnly,
        Self::PosteriorOnly,
        Self::WSOnly,
        Self::WNOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::DipaDefault => "dipa_default",
            Self::StandardNll => "standard_nll",
            Self::ClosestOnly => "closest_only",
            Self::PosteriorOnly => "posterior_only",
            Self::WSOnly => "w_s_only",
            Self::WNOnly => "w_n_only",
        }
    }

    /// Training-weight blend used by this variant.
    pub fn k_r(self, configured: f64) -> f64 {
        match self {
            Self::ClosestOnly => 0.0,
            Self::PosteriorOnly => 1.0,
            _ => configured,
        }
    }

    /// Output blend reported by this variant.
    pub fn k_n(self, configured: f64) -> f64 {
        match self {
            Self::WSOnly => 0.0,
            Self::WNOnly => 1.0,
            _ => configured,
        }
    }

    /// Variants that differ from `dipa_default` only in the output blend and
    /// can therefore reuse its trained parameters.
    pub fn shares_default_training(self) -> bool {
        matches!(self, Self::DipaDefault | Self::WSOnly | Self::WNOnly)
    }
}

impl fmt::Display for TrainVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainVariant {
    type Err = DipaError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| DipaError::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    pub k_r: f64,
    pub loss_weights: LossWeights,
    pub execution: Execution,
    /// Write an intermediate checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamConfig::default(),
            batch_size: 32,
            epochs: 20,
            seed: 0,
            k_r: 0.5,
            loss_weights: LossWeights::default(),
            execution: Execution::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(DipaError::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.k_r) {
            return Err(DipaError::Config(format!(
                "k_r = {} outside [0, 1]",
                self.k_r
            )));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(DipaError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Loss graph for one preprocessed instance.
pub struct InstanceLoss {
    pub root: Var,
    pub terms: LossBundle,
    pub weights: Option<TrainingWeights>,
}

/// Builds every loss term for `instance` on `g` and returns the weighted total as root.
pub fn instance_loss(
    g: &mut Graph,
    model: &DipaModel,
    instance: &Instance,
    variant: TrainVariant,
    k_r: f64,
    lw: &LossWeights,
) -> Result<InstanceLoss> {
    let mask = vec![true; instance.num_agents()];
    let fw = model.forward_graph(g, instance, &mask)?;
    let pv = fw.pred;
    let logn = log_density_grid(g, &pv, &instance.future)?;

    if variant == TrainVariant::StandardNll {
        let root = standard_nll_loss(g, logn, &pv, model.k_n)?;
        let v = g.value(root).item();
        let terms = LossBundle {
            spatial: v,
            total: v,
            ..LossBundle::default()
        };
        return Ok(InstanceLoss {
            root,
            terms,
            weights: None,
        });
    }

    let pred = pv.to_prediction(g, model.k_n)?;
    let tw = TrainingWeights::compute(&pred, &instance.future, variant.k_r(k_r));
    let spatial = spatial_loss(g, logn, &tw.w_r)?;
    let mse = mse_mode_loss(g, &pv, &instance.future)?;
    let fz = frozen(g, &pv);
    let logn_frozen = log_density_grid(g, &fz, &instance.future)?;
    let nll = nll_mode_loss(g, logn_frozen, &pv)?;
    let kl = kl_mode_loss(g, &tw.w_r, pv.wn)?;

    let parts = [
        (spatial, lw.spatial),
        (mse, lw.mse),
        (nll, lw.nll),
        (kl, lw.kl),
    ];
    let mut root: Option<Var> = None;
    for (v, w) in parts {
        let term = g.scale(v, w);
        root = Some(match root {
            None => term,
            Some(r) => g.add(r, term)?,
        });
    }
    let root = root.expect("four terms");
    let val = |v: Var| g.value(v).item();
    let terms = LossBundle {
        spatial: val(spatial),
        mse_mode: val(mse),
        nll_mode: val(nll),
        kl_mode: val(kl),
        total: val(root),
    };
    Ok(InstanceLoss {
        root,
        terms,
        weights: Some(tw),
    })
}

fn first_non_finite(terms: &LossBundle) -> Option<&'static str> {
    [
        ("spatial", terms.spatial),
        ("mse_mode", terms.mse_mode),
        ("nll_mode", terms.nll_mode),
        ("kl_mode", terms.kl_mode),
        ("total", terms.total),
    ]
    .into_iter()
    .find(|(_, v)| !v.is_finite())
    .map(|(n, _)| n)
}

/// One row of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub spatial: f64,
    pub mse: f64,
    pub nll: f64,
    pub kl: f64,
    pub total: f64,
}

impl LossRecord {
    fn new(step: u64, b: &LossBundle) -> Self {
        Self {
            step,
            spatial: b.spatial,
            mse: b.mse_mode,
            nll: b.nll_mode,
            kl: b.kl_mode,
            total: b.total,
        }
    }
}

pub fn write_loss_csv(path: impl AsRef<Path>, curve: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in curve {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Owns the model and optimizer state across steps.
pub struct Trainer {
    pub model: DipaModel,
    pub config: TrainConfig,
    pub variant: TrainVariant,
    adam: Adam,
    step: u64,
}

impl Trainer {
    pub fn new(mut model: DipaModel, config: TrainConfig, variant: TrainVariant) -> Result<Self> {
        config.validate()?;
        model.k_n = variant.k_n(model.k_n);
        let adam = Adam::new(config.optimizer, model.params());
        Ok(Self {
            model,
            config,
            variant,
            adam,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Batch-mean losses and gradients; parameters are not touched.
    pub fn batch_gradients<B: Borrow<Instance> + Sync>(
        &self,
        batch: &[B],
    ) -> Result<(LossBundle, Vec<Tensor>)> {
        if batch.is_empty() {
            return Err(DipaError::EmptyDataset);
        }
        let model = &self.model;
        let (variant, k_r, lw) = (self.variant, self.config.k_r, self.config.loss_weights);
        let per = map_ordered(
            self.config.execution,
            batch,
            |_, inst| -> Result<(LossBundle, Vec<Tensor>)> {
                let inst: &Instance = inst.borrow();
                let mut g = Graph::with_params(model.params());
                let il = instance_loss(&mut g, model, inst, variant, k_r, &lw)?;
                if let Some(term) = first_non_finite(&il.terms) {
                    return Err(DipaError::Divergence {
                        step: self.step + 1,
                        detail: format!("instance {}: non-finite {term} loss", inst.id),
                    });
                }
                let grads = g.backward(il.root)?;
                let mut acc = model.params().zeros_like();
                grads.accumulate_params(&mut acc);
                Ok((il.terms, acc))
            },
        );
        let scale = 1.0 / batch.len() as f64;
        let mut mean = LossBundle::default();
        let mut total = model.params().zeros_like();
        for r in per {
            let (terms, grads) = r?;
            mean.accumulate(&terms, scale);
            for (t, g) in total.iter_mut().zip(&grads) {
                for (a, b) in t.data_mut().iter_mut().zip(g.data()) {
                    *a += scale * b;
                }
            }
        }
        Ok((mean, total))
    }

    pub fn train_step<B: Borrow<Instance> + Sync>(&mut self, batch: &[B]) -> Result<LossBundle> {
        let (loss, grads) = self.batch_gradients(batch)?;
        let step = self.step + 1;
        self.adam
            .step(self.model.params_mut(), &grads)
            .map_err(|e| DipaError::Divergence {
                step,
                detail: e.to_string(),
            })?;
        self.step += 1;
        Ok(loss)
    }
}

/// Result of a full training run.
pub struct TrainOutcome {
    pub model: DipaModel,
    pub curve: Vec<LossRecord>,
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub dir: PathBuf,
}

impl TrainOutputs {
    pub fn model_path(&self) -> PathBuf {
        self.dir.join("model.json")
    }
    pub fn last_good_path(&self) -> PathBuf {
        self.dir.join("last_good.json")
    }
    pub fn loss_csv_path(&self) -> PathBuf {
        self.dir.join("loss.csv")
    }
    pub fn epoch_checkpoint_path(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("checkpoint_epoch{epoch:03}.json"))
    }
}

/// Trains on preprocessed instances with a seeded per-epoch shuffle.
///
/// On divergence the parameters from the last successful step are written to
/// `last_good.json` (when `outputs` is set) before the error is returned.
pub fn train(
    model: DipaModel,
    data: &[Instance],
    config: &TrainConfig,
    variant: TrainVariant,
    outputs: Option<&TrainOutputs>,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(DipaError::EmptyDataset);
    }
    if let Some(o) = outputs {
        fs::create_dir_all(&o.dir)?;
    }
    let mut trainer = Trainer::new(model, config.clone(), variant)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::new();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = LossBundle::default();
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &data[i]).collect();
            let last_good = trainer.model.params().clone();
            match trainer.train_step(&batch) {
                Ok(loss) => {
                    curve.push(LossRecord::new(trainer.steps_taken(), &loss));
                    epoch_loss.accumulate(&loss, 1.0);
                    batches += 1;
                }
                Err(e) => {
                    if let Some(o) = outputs {
                        last_good.save(o.last_good_path())?;
                        write_loss_csv(o.loss_csv_path(), &curve)?;
                        log::error!(
                            "training diverged; last good parameters in {}",
                            o.last_good_path().display()
                        );
                    }
                    return Err(e);
                }
            }
        }
        log::info!(
            "{variant} epoch {}/{}: total {:.4}",
            epoch + 1,
            config.epochs,
            epoch_loss.total / batches.max(1) as f64
        );
        if let Some(o) = outputs {
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                trainer
                    .model
                    .save_checkpoint(o.epoch_checkpoint_path(epoch + 1))?;
            }
        }
    }
    if let Some(o) = outputs {
        trainer.model.save_checkpoint(o.model_path())?;
        write_loss_csv(o.loss_csv_path(), &curve)?;
    }
    Ok(TrainOutcome {
        model: trainer.model,
        curve,
    })
}
