//! One function per subcommand. Inputs are only read; every command writes
//! its resolved configuration into its output directory.

use std::fs;
use std::path::{Path, PathBuf};

use dipa::ablation::{default_k_n_grid, run_ablation, AblationConfig, AblationResult};
use dipa::metrics::{self, MetricsReport};
use dipa::synth::{self, DatasetSplit};
use dipa::training::{train, TrainOutputs};
use dipa::DipaModel;
use serde::Serialize;

use crate::config::{RunConfig, RESOLVED_CONFIG};
use crate::error::{CliError, CliResult};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const MODEL_FILE: &str = "model.json";

fn prepare_out(out: &Path, cfg: &RunConfig) -> CliResult<()> {
    fs::create_dir_all(out)?;
    cfg.save(&out.join(RESOLVED_CONFIG))
}

/// `path` itself when it is a file, otherwise `path/default_name`.
pub fn dataset_path(path: &Path, default_name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(default_name)
    } else {
        path.to_path_buf()
    }
}

fn load_split(path: &Path, default_name: &str) -> CliResult<DatasetSplit> {
    let file = dataset_path(path, default_name);
    log::info!("loading {}", file.display());
    Ok(synth::load(&file)?)
}

/// Synthesizes train/eval splits, or imports a trajectory CSV when `csv` is set.
pub fn cmd_generate(cfg: &RunConfig, csv: Option<&Path>, out: &Path) -> CliResult<()> {
    prepare_out(out, cfg)?;
    let (train_split, eval_split) = match csv {
        Some(path) => {
            let all = synth::import_generic_csv(path, &cfg.import)?;
            let n_eval = (all.len() as f64 * cfg.data.eval_fraction).round() as usize;
            log::info!("imported {} windows from {}", all.len(), path.display());
            all.split_at(all.len() - n_eval)
        }
        None => {
            let all = synth::generate(
                &cfg.scenario,
                cfg.data.n_train + cfg.data.n_eval,
                cfg.train.execution,
            )?;
            all.split_at(cfg.data.n_train)
        }
    };
    synth::save(&train_split, out.join(TRAIN_FILE))?;
    synth::save(&eval_split, out.join(EVAL_FILE))?;
    log::info!(
        "wrote {} train / {} eval instances to {}",
        train_split.len(),
        eval_split.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> CliResult<()> {
    prepare_out(out, cfg)?;
    let split = load_split(data, TRAIN_FILE)?;
    let model = DipaModel::new(cfg.model.clone(), cfg.hyper.k_n)?;
    let outputs = TrainOutputs {
        dir: out.to_path_buf(),
    };
    train(
        model,
        &split.instances,
        &cfg.train,
        cfg.variant,
        Some(&outputs),
    )?;
    log::info!("saved {}", outputs.model_path().display());
    Ok(())
}

/// What `cmd_eval` scores.
pub enum EvalSource<'a> {
    Model(&'a Path),
    Predictions(&'a Path),
}

/// Scores a checkpoint, or a stored predictions file, against a dataset.
/// Writes `metrics.json`, `instances.csv` and (for checkpoints) `predictions.jsonl`.
pub fn cmd_eval(
    cfg: &RunConfig,
    source: EvalSource,
    data: &Path,
    out: &Path,
) -> CliResult<MetricsReport> {
    prepare_out(out, cfg)?;
    let split = load_split(data, EVAL_FILE)?;
    let preds = match source {
        EvalSource::Model(path) => {
            let path = dataset_path(path, MODEL_FILE);
            let model = DipaModel::load_checkpoint(cfg.model.clone(), cfg.hyper.k_n, &path)?;
            let preds = metrics::predict_all(&model, &split.instances, cfg.train.execution)?;
            let ids: Vec<&str> = split.instances.iter().map(|i| i.id.as_str()).collect();
            metrics::save_predictions(out.join("predictions.jsonl"), &ids, &preds)?;
            preds
        }
        EvalSource::Predictions(path) => {
            let stored = metrics::load_predictions(path)?;
            if stored.len() != split.len() {
                return Err(CliError::Core(dipa::DipaError::Data(format!(
                    "{} predictions for {} instances",
                    stored.len(),
                    split.len()
                ))));
            }
            for ((id, _), inst) in stored.iter().zip(&split.instances) {
                if *id != inst.id {
                    return Err(CliError::Core(dipa::DipaError::Data(format!(
                        "prediction for `{id}` does not match instance `{}`",
                        inst.id
                    ))));
                }
            }
            stored.into_iter().map(|(_, p)| p).collect()
        }
    };
    let (report, rows) = metrics::evaluate(&split.instances, &preds, &cfg.metrics)?;
    report.save(out.join(METRICS_FILE))?;
    metrics::write_instance_csv(out.join("instances.csv"), &rows)?;
    log::info!(
        "minADE {:.3} m, minFDE {:.3} m, NLL {:.3}",
        report.min_ade,
        report.min_fde,
        report.nll_mean
    );
    Ok(report)
}

/// Expects `data` to hold `train.jsonl` and `eval.jsonl`.
pub fn cmd_ablate(cfg: &RunConfig, data: &Path, out: &Path) -> CliResult<AblationResult> {
    prepare_out(out, cfg)?;
    let train_split = load_split(&data.join(TRAIN_FILE), TRAIN_FILE)?;
    let eval_split = load_split(&data.join(EVAL_FILE), EVAL_FILE)?;
    let acfg = AblationConfig {
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        metrics: cfg.metrics.clone(),
        k_n: cfg.hyper.k_n,
        k_n_grid: default_k_n_grid(),
    };
    let result = run_ablation(
        &train_split.instances,
        &eval_split.instances,
        &acfg,
        Some(out),
    )?;
    result.save(out)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub run: String,
    pub n_instances: usize,
    pub modes: usize,
    pub min_ade_m: f64,
    pub min_fde_m: f64,
    pub miss_rate: f64,
    pub pred_rms_final_m: f64,
    pub nll_final_ln_m_inv2: f64,
    pub nll_mean_ln_m_inv2: f64,
    pub nll_ceiling_hits: usize,
}

impl ReportRow {
    fn new(run: String, r: &MetricsReport) -> Self {
        Self {
            run,
            n_instances: r.n_instances,
            modes: r.modes,
            min_ade_m: r.min_ade,
            min_fde_m: r.min_fde,
            miss_rate: r.miss_rate,
            pred_rms_final_m: r.final_pred_rms(),
            nll_final_ln_m_inv2: r.final_nll(),
            nll_mean_ln_m_inv2: r.nll_mean,
            nll_ceiling_hits: r.nll_ceiling_hits,
        }
    }
}

fn run_name(path: &Path) -> String {
    let p = if path.is_dir() {
        path
    } else {
        path.parent().unwrap_or(path)
    };
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Collects reports from `metrics.json` files, run directories holding one,
/// or ablation directories (one row per stored variant report).
pub fn collect_reports(runs: &[PathBuf]) -> CliResult<Vec<(String, MetricsReport)>> {
    let mut out = Vec::new();
    for run in runs {
        let name = run_name(run);
        let ablation = run.join("ablation.json");
        if run.is_dir() && ablation.is_file() {
            let res: AblationResult = serde_json::from_str(&fs::read_to_string(&ablation)?)?;
            out.extend(
                res.reports
                    .into_iter()
                    .map(|(v, r)| (format!("{name}/{v}"), r)),
            );
        } else {
            out.push((name, MetricsReport::load(dataset_path(run, METRICS_FILE))?));
        }
    }
    Ok(out)
}

/// Merges reports into `report.csv` and `report.json`.
pub fn cmd_report(runs: &[PathBuf], out: &Path) -> CliResult<Vec<ReportRow>> {
    if runs.is_empty() {
        return Err(CliError::Config("report needs at least one run".into()));
    }
    fs::create_dir_all(out)?;
    let reports = collect_reports(runs)?;
    let rows: Vec<ReportRow> = reports
        .iter()
        .map(|(n, r)| ReportRow::new(n.clone(), r))
        .collect();
    let mut w = csv::Writer::from_path(out.join("report.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let full: Vec<_> = reports
        .iter()
        .map(|(n, r)| serde_json::json!({ "run": n, "report": r }))
        .collect();
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&full)?,
    )?;
    Ok(rows)
}
