//! Evaluation metrics: predRMS, minADE/minFDE, miss rate, density-capped
//! NLL, recall/precision conversions, and behaviour calibration.
//!
//! Distances are in meters and NLL in ln m⁻². Horizons given in seconds are
//! sampled at step index `round(h / dt) - 1` of the predicted sequence.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{Instance, MultiModalPrediction, Vec2};
use crate::error::{DipaError, Result};
use crate::gaussian::{distance, isotropic_peak_density, log_density, logsumexp, squared_distance};
use crate::model::DipaModel;
use crate::par::{map_ordered, Execution};

pub const NLL_UNITS: &str = "ln m^-2";
/// Per-timestep NLL used when the mixture density is not representable.
pub const NLL_CEILING: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub horizons_s: Vec<f64>,
    pub dt: f64,
    pub miss_threshold: f64,
    pub sigma_min: f64,
    pub recall_thresholds: Vec<f64>,
    pub precision_probability_threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            horizons_s: vec![1.0, 2.0, 3.0],
            dt: 0.1,
            miss_threshold: 2.0,
            sigma_min: 0.1,
            recall_thresholds: vec![0.5, 1.0, 2.0, 4.0],
            precision_probability_threshold: 0.2,
        }
    }
}

/// Step index sampled for a horizon in seconds.
pub fn horizon_index(horizon_s: f64, dt: f64, steps: usize) -> Result<usize> {
    let k = (horizon_s / dt).round();
    if !(k >= 1.0) || k as usize > steps {
        return Err(DipaError::Config(format!(
            "horizon {horizon_s} s is outside the {steps}-step prediction ({} s)",
            steps as f64 * dt
        )));
    }
    Ok(k as usize - 1)
}

pub fn ade_of_mode(pred: &MultiModalPrediction, m: usize, future: &[Vec2]) -> f64 {
    let steps = &pred.modes[m];
    steps
        .iter()
        .zip(future)
        .map(|(s, x)| distance(s.mu, *x))
        .sum::<f64>()
        / future.len() as f64
}

pub fn fde_of_mode(pred: &MultiModalPrediction, m: usize, future: &[Vec2]) -> f64 {
    let t = future.len() - 1;
    distance(pred.modes[m][t].mu, future[t])
}

/// Average displacement of the closest mode.
pub fn min_ade(pred: &MultiModalPrediction, future: &[Vec2]) -> f64 {
    (0..pred.num_modes())
        .map(|m| ade_of_mode(pred, m, future))
        .fold(f64::INFINITY, f64::min)
}

/// Final displacement of the mode closest at the final step.
pub fn min_fde(pred: &MultiModalPrediction, future: &[Vec2]) -> f64 {
    (0..pred.num_modes())
        .map(|m| fde_of_mode(pred, m, future))
        .fold(f64::INFINITY, f64::min)
}

/// RMS error of each instance's most probable mode (`argmax W_o`) at step `t`.
pub fn pred_rms(preds: &[MultiModalPrediction], futures: &[&[Vec2]], t: usize) -> Result<f64> {
    if preds.is_empty() {
        return Err(DipaError::EmptyDataset);
    }
    let sum: f64 = preds
        .iter()
        .zip(futures)
        .map(|(p, f)| squared_distance(p.modes[p.w_o.argmax()][t].mu, f[t]))
        .sum();
    Ok((sum / preds.len() as f64).sqrt())
}

/// Fraction of values strictly above `threshold`.
pub fn miss_rate(min_fdes: &[f64], threshold: f64) -> f64 {
    if min_fdes.is_empty() {
        return 0.0;
    }
    min_fdes.iter().filter(|&&d| d > threshold).count() as f64 / min_fdes.len() as f64
}

/// Fraction of instances with some mode's final position within `threshold`.
pub fn recall_at(min_fdes: &[f64], threshold: f64) -> f64 {
    if min_fdes.is_empty() {
        return 0.0;
    }
    min_fdes.iter().filter(|&&d| d <= threshold).count() as f64 / min_fdes.len() as f64
}

/// Modes counted as predicted: `W_o ≥ probability_threshold`, or the most
/// probable mode if none qualifies.
pub fn selected_modes(pred: &MultiModalPrediction, probability_threshold: f64) -> Vec<usize> {
    let sel: Vec<usize> = (0..pred.num_modes())
        .filter(|&m| pred.w_o.weights()[m] >= probability_threshold)
        .collect();
    if sel.is_empty() {
        vec![pred.w_o.argmax()]
    } else {
        sel
    }
}

/// Dataset-pooled precision: close selected modes over all selected modes.
pub fn precision_at(
    preds: &[MultiModalPrediction],
    futures: &[&[Vec2]],
    distance_threshold: f64,
    probability_threshold: f64,
) -> f64 {
    let (mut close, mut total) = (0usize, 0usize);
    for (p, f) in preds.iter().zip(futures) {
        for m in selected_modes(p, probability_threshold) {
            total += 1;
            if fde_of_mode(p, m, f) <= distance_threshold {
                close += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        close as f64 / total as f64
    }
}

/// Per-timestep NLL of the ground truth with the mixture density capped at
/// the peak density of an isotropic Gaussian with std-dev `sigma_min`.
/// Returns the values and whether any step hit [`NLL_CEILING`].
pub fn nll_capped_steps(
    pred: &MultiModalPrediction,
    future: &[Vec2],
    sigma_min: f64,
) -> (Vec<f64>, bool) {
    let ln_cap = isotropic_peak_density(sigma_min).ln();
    let w = pred.w_o.weights();
    let mut hit = false;
    let mut terms = vec![0.0; pred.num_modes()];
    let values = future
        .iter()
        .enumerate()
        .map(|(t, x)| {
            for (m, term) in terms.iter_mut().enumerate() {
                let s = &pred.modes[m][t];
                *term = w[m].ln() + log_density(*x, s.mu, &s.sigma);
            }
            let nll = -logsumexp(&terms).min(ln_cap);
            if nll.is_finite() && nll <= NLL_CEILING {
                nll
            } else {
                hit = true;
                NLL_CEILING
            }
        })
        .collect();
    (values, hit)
}

/// Mean over timesteps of [`nll_capped_steps`].
pub fn nll_capped(pred: &MultiModalPrediction, future: &[Vec2], sigma_min: f64) -> f64 {
    let (v, _) = nll_capped_steps(pred, future, sigma_min);
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdValue {
    pub threshold_m: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub pred_rms: String,
    pub min_ade: String,
    pub min_fde: String,
    pub miss_rate: String,
    pub nll: String,
    pub recall_at: String,
    pub precision_at: String,
    pub horizons: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            pred_rms: "m".into(),
            min_ade: "m".into(),
            min_fde: "m".into(),
            miss_rate: "fraction".into(),
            nll: NLL_UNITS.into(),
            recall_at: "fraction".into(),
            precision_at: "fraction".into(),
            horizons: "s".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_instances: usize,
    pub modes: usize,
    pub horizons_s: Vec<f64>,
    /// Step index sampled for each horizon: `round(h / dt) - 1`.
    pub horizon_steps: Vec<usize>,
    pub pred_rms: Vec<f64>,
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_threshold_m: f64,
    pub miss_rate: f64,
    /// Dataset mean of the per-timestep capped NLL at each horizon step.
    pub nll: Vec<f64>,
    /// Dataset mean of each instance's NLL averaged over all predicted steps.
    pub nll_mean: f64,
    pub sigma_min_m: f64,
    pub recall_at: Vec<ThresholdValue>,
    pub precision_probability_threshold: f64,
    pub precision_at: Vec<ThresholdValue>,
    /// Instances with at least one step at the NLL ceiling.
    pub nll_ceiling_hits: usize,
    pub units: Units,
}

impl MetricsReport {
    pub fn final_pred_rms(&self) -> f64 {
        *self.pred_rms.last().expect("at least one horizon")
    }

    pub fn final_nll(&self) -> f64 {
        *self.nll.last().expect("at least one horizon")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub instance_id: String,
    pub min_ade: f64,
    pub min_fde: f64,
    pub nll: f64,
    pub nll_final: f64,
    pub miss: bool,
    pub most_probable_mode: usize,
    pub w_o_max: f64,
}

/// Scores predictions made in the instances' local frame.
pub fn evaluate(
    instances: &[Instance],
    preds: &[MultiModalPrediction],
    cfg: &MetricsConfig,
) -> Result<(MetricsReport, Vec<InstanceMetrics>)> {
    if instances.is_empty() {
        return Err(DipaError::EmptyDataset);
    }
    if instances.len() != preds.len() {
        return Err(DipaError::Data(format!(
            "{} instances but {} predictions",
            instances.len(),
            preds.len()
        )));
    }
    if cfg.horizons_s.is_empty() {
        return Err(DipaError::Config("no evaluation horizons".into()));
    }
    let steps = instances[0].future.len();
    for (i, p) in instances.iter().zip(preds) {
        if i.future.len() != steps || p.num_steps() != steps {
            return Err(DipaError::Data(format!(
                "instance {}: prediction/future length mismatch",
                i.id
            )));
        }
    }
    let horizon_steps = cfg
        .horizons_s
        .iter()
        .map(|&h| horizon_index(h, cfg.dt, steps))
        .collect::<Result<Vec<_>>>()?;
    let futures: Vec<&[Vec2]> = instances.iter().map(|i| i.future.as_slice()).collect();
    let n = instances.len() as f64;

    let mut per = Vec::with_capacity(instances.len());
    let mut nll_at = vec![0.0; horizon_steps.len()];
    let mut hits = 0;
    for (inst, p) in instances.iter().zip(preds) {
        let (nll_steps, hit) = nll_capped_steps(p, &inst.future, cfg.sigma_min);
        if hit {
            hits += 1;
            log::warn!(
                "instance {}: mixture density underflow, NLL step set to {NLL_CEILING}",
                inst.id
            );
        }
        for (acc, &k) in nll_at.iter_mut().zip(&horizon_steps) {
            *acc += nll_steps[k] / n;
        }
        let fde = min_fde(p, &inst.future);
        per.push(InstanceMetrics {
            instance_id: inst.id.clone(),
            min_ade: min_ade(p, &inst.future),
            min_fde: fde,
            nll: nll_steps.iter().sum::<f64>() / nll_steps.len() as f64,
            nll_final: *nll_steps.last().expect("non-empty future"),
            miss: fde > cfg.miss_threshold,
            most_probable_mode: p.w_o.argmax(),
            w_o_max: p.w_o.weights()[p.w_o.argmax()],
        });
    }
    let fdes: Vec<f64> = per.iter().map(|m| m.min_fde).collect();
    let report = MetricsReport {
        n_instances: instances.len(),
        modes: preds[0].num_modes(),
        horizons_s: cfg.horizons_s.clone(),
        pred_rms: horizon_steps
            .iter()
            .map(|&k| pred_rms(preds, &futures, k))
            .collect::<Result<Vec<_>>>()?,
        horizon_steps,
        min_ade: per.iter().map(|m| m.min_ade).sum::<f64>() / n,
        min_fde: fdes.iter().sum::<f64>() / n,
        miss_threshold_m: cfg.miss_threshold,
        miss_rate: miss_rate(&fdes, cfg.miss_threshold),
        nll: nll_at,
        nll_mean: per.iter().map(|m| m.nll).sum::<f64>() / n,
        sigma_min_m: cfg.sigma_min,
        recall_at: cfg
            .recall_thresholds
            .iter()
            .map(|&t| ThresholdValue {
                threshold_m: t,
                value: recall_at(&fdes, t),
            })
            .collect(),
        precision_probability_threshold: cfg.precision_probability_threshold,
        precision_at: cfg
            .recall_thresholds
            .iter()
            .map(|&t| ThresholdValue {
                threshold_m: t,
                value: precision_at(preds, &futures, t, cfg.precision_probability_threshold),
            })
            .collect(),
        nll_ceiling_hits: hits,
        units: Units::default(),
    };
    Ok((report, per))
}

/// Runs the model over every instance, preserving order.
pub fn predict_all(
    model: &DipaModel,
    instances: &[Instance],
    exec: Execution,
) -> Result<Vec<MultiModalPrediction>> {
    map_ordered(exec, instances, |_, inst| model.predict(inst))
        .into_iter()
        .collect()
}

pub fn write_instance_csv(path: impl AsRef<Path>, rows: &[InstanceMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const PREDICTIONS_FORMAT: &str = "dipa-predictions";

#[derive(Serialize, Deserialize)]
struct PredictionHeader {
    format: String,
    version: u32,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    instance_id: String,
    prediction: MultiModalPrediction,
}

/// JSON-lines: a header `{"format":"dipa-predictions","version":1,"count":n}`
/// then one `{"instance_id":..,"prediction":..}` per line.
pub fn save_predictions(
    path: impl AsRef<Path>,
    ids: &[&str],
    preds: &[MultiModalPrediction],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = PredictionHeader {
        format: PREDICTIONS_FORMAT.into(),
        version: 1,
        count: preds.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (id, p) in ids.iter().zip(preds) {
        serde_json::to_writer(
            &mut w,
            &PredictionRecord {
                instance_id: id.to_string(),
                prediction: p.clone(),
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<(String, MultiModalPrediction)>> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let err = |line: usize, detail: String| DipaError::Parse {
        path: shown.clone(),
        line,
        detail,
    };
    let mut lines = BufReader::new(File::open(path)?).lines().enumerate();
    let header: PredictionHeader = match lines.next() {
        Some((_, l)) => serde_json::from_str(&l?).map_err(|e| err(1, format!("header: {e}")))?,
        None => return Err(err(1, "empty file, expected header".into())),
    };
    if header.format != PREDICTIONS_FORMAT {
        return Err(err(1, format!("unsupported format {}", header.format)));
    }
    let mut out = Vec::new();
    for (i, l) in lines {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        let r: PredictionRecord =
            serde_json::from_str(&l).map_err(|e| err(i + 1, e.to_string()))?;
        out.push((r.instance_id, r.prediction));
    }
    if out.len() != header.count {
        return Err(err(
            out.len() + 1,
            format!(
                "header declares {} records, file has {}",
                header.count,
                out.len()
            ),
        ));
    }
    Ok(out)
}

/// Mean future over a set of instances: the unimodal reference predictor.
pub fn mean_future(instances: &[Instance]) -> Result<Vec<Vec2>> {
    let first = instances.first().ok_or(DipaError::EmptyDataset)?;
    let mut acc = vec![[0.0, 0.0]; first.future.len()];
    for i in instances {
        for (a, x) in acc.iter_mut().zip(&i.future) {
            a[0] += x[0];
            a[1] += x[1];
        }
    }
    let n = instances.len() as f64;
    Ok(acc.into_iter().map(|a| [a[0] / n, a[1] / n]).collect())
}

/// Average displacement of one fixed trajectory against every instance.
pub fn trajectory_ade(trajectory: &[Vec2], instances: &[Instance]) -> f64 {
    let per = instances.iter().map(|i| {
        i.future
            .iter()
            .zip(trajectory)
            .map(|(x, p)| distance(*x, *p))
            .sum::<f64>()
            / i.future.len() as f64
    });
    per.sum::<f64>() / instances.len() as f64
}

/// Average output-weight mass per latent behaviour. Each predicted mode is
/// attributed to the behaviour whose noiseless prototype future it is
/// closest to (mean displacement), and its `W_o` weight is credited there.
pub fn behaviour_mass(
    preds: &[MultiModalPrediction],
    prototypes: &[Vec<Vec<Vec2>>],
) -> Result<Vec<f64>> {
    let nb = prototypes.first().map_or(0, Vec::len);
    if preds.is_empty() || nb == 0 || preds.len() != prototypes.len() {
        return Err(DipaError::Data(
            "behaviour mass needs one prototype set per prediction".into(),
        ));
    }
    let mut mass = vec![0.0; nb];
    for (p, protos) in preds.iter().zip(prototypes) {
        for m in 0..p.num_modes() {
            let mut best = (f64::INFINITY, 0);
            for (b, proto) in protos.iter().enumerate() {
                let d = ade_of_mode(p, m, proto);
                if d < best.0 {
                    best = (d, b);
                }
            }
            mass[best.1] += p.w_o.weights()[m];
        }
    }
    let n = preds.len() as f64;
    Ok(mass.into_iter().map(|m| m / n).collect())
}
