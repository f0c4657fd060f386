//! Training-variant comparison and the output-blend (`k_n`) sweep.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{Instance, MultiModalPrediction};
use crate::error::Result;
use crate::metrics::{evaluate, predict_all, MetricsConfig, MetricsReport};
use crate::model::{DipaModel, ModelConfig};
use crate::par::map_ordered;
use crate::training::{train, TrainConfig, TrainOutputs, TrainVariant};

/// `0.0, 0.1, ..., 1.0`.
pub fn default_k_n_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
    /// Output blend of the default model.
    pub k_n: f64,
    pub k_n_grid: Vec<f64>,
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `variant` or `k_n_sweep`.
    pub kind: String,
    pub variant: String,
    pub k_r: f64,
    pub k_n: f64,
    pub pred_rms_final: f64,
    pub nll_final: f64,
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnSweepPoint {
    pub k_n: f64,
    pub pred_rms_final: f64,
    pub nll_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    pub reports: Vec<(String, MetricsReport)>,
    pub kn_sweep: Vec<KnSweepPoint>,
}

impl AblationResult {
    pub fn row(&self, variant: TrainVariant) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.kind == "variant" && r.variant == variant.name())
    }

    /// Writes `ablation.json`, `ablation.csv` and `kn_sweep.csv`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("ablation.json"),
            serde_json::to_string_pretty(self)?,
        )?;
        let mut w = csv::Writer::from_path(dir.join("ablation.csv"))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("kn_sweep.csv"))?;
        for p in &self.kn_sweep {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn row(kind: &str, variant: TrainVariant, k_r: f64, k_n: f64, r: &MetricsReport) -> AblationRow {
    AblationRow {
        kind: kind.into(),
        variant: variant.name().into(),
        k_r,
        k_n,
        pred_rms_final: r.final_pred_rms(),
        nll_final: r.final_nll(),
        min_ade: r.min_ade,
        min_fde: r.min_fde,
        miss_rate: r.miss_rate,
    }
}

fn reblend(preds: &[MultiModalPrediction], k_n: f64) -> Result<Vec<MultiModalPrediction>> {
    preds.iter().map(|p| p.with_k_n(k_n)).collect()
}

/// Trains `dipa_default`, `standard_nll`, `closest_only` and `posterior_only`
/// from the same initialization and data, evaluates them, and derives
/// `w_s_only`, `w_n_only` and the `k_n` sweep by re-blending the default
/// model's two weight heads. With `out` set, each trained model is saved
/// under `out/<variant>/`.
pub fn run_ablation(
    train_set: &[Instance],
    eval_set: &[Instance],
    cfg: &AblationConfig,
    out: Option<&Path>,
) -> Result<AblationResult> {
    let trained_variants: Vec<TrainVariant> = TrainVariant::ALL
        .into_iter()
        .filter(|v| *v == TrainVariant::DipaDefault || !v.shares_default_training())
        .collect();
    let outcomes = map_ordered(
        cfg.train.execution,
        &trained_variants,
        |_, &variant| -> Result<DipaModel> {
            let model = DipaModel::new(cfg.model.clone(), cfg.k_n)?;
            let outputs = out.map(|d| TrainOutputs {
                dir: d.join(variant.name()),
            });
            log::info!("ablation: training {variant}");
            Ok(train(model, train_set, &cfg.train, variant, outputs.as_ref())?.model)
        },
    );
    let models = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let exec = cfg.train.execution;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut default_preds = None;
    for (variant, model) in trained_variants.iter().zip(&models) {
        let preds = predict_all(model, eval_set, exec)?;
        let (report, _) = evaluate(eval_set, &preds, &cfg.metrics)?;
        rows.push(row(
            "variant",
            *variant,
            variant.k_r(cfg.train.k_r),
            model.k_n,
            &report,
        ));
        reports.push((variant.name().to_string(), report));
        if *variant == TrainVariant::DipaDefault {
            default_preds = Some(preds);
        }
    }
    let default_preds = default_preds.expect("default variant is always trained");
    for variant in [TrainVariant::WSOnly, TrainVariant::WNOnly] {
        let k_n = variant.k_n(cfg.k_n);
        let (report, _) = evaluate(eval_set, &reblend(&default_preds, k_n)?, &cfg.metrics)?;
        rows.push(row("variant", variant, cfg.train.k_r, k_n, &report));
        reports.push((variant.name().to_string(), report));
    }
    let mut kn_sweep = Vec::new();
    for &k_n in &cfg.k_n_grid {
        let (report, _) = evaluate(eval_set, &reblend(&default_preds, k_n)?, &cfg.metrics)?;
        rows.push(row(
            "k_n_sweep",
            TrainVariant::DipaDefault,
            cfg.train.k_r,
            k_n,
            &report,
        ));
        kn_sweep.push(KnSweepPoint {
            k_n,
            pred_rms_final: report.final_pred_rms(),
            nll_final: report.final_nll(),
        });
    }
    Ok(AblationResult {
        rows,
        reports,
        kn_sweep,
    })
}

/// Number of adjacent pairs that break a non-decreasing trend.
pub fn monotone_violations(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] < w[0]).count()
}
