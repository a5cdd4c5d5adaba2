//! Losses, Adam, scalers, initialization and the batched training loop.

mod adam;
mod loss;
mod scaler;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{loss_mse, loss_nll, nll_of_probabilities, Loss};
pub use scaler::{Scaler, ScalerKind};

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Targets};
use crate::error::{Result, SpineError};
use crate::grad::{accumulate_from_trace, Workspace};
use crate::model::{Family, Model};
use crate::par;

/// Examples per parallel work unit. Fixed so that gradient sums are
/// reduced in the same order regardless of thread count.
const CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub loss: Loss,
    /// Overrides the model's sharpness when set.
    pub a: Option<f64>,
    /// Log every this many epochs; 0 disables.
    pub log_every: usize,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            batch_size: 0,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            loss: Loss::Mse,
            a: None,
            log_every: 0,
            clip_norm: 1e3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SpineError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if let Some(a) = self.a {
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("a must be positive and finite, got {a}"));
            }
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        Ok(())
    }

    /// Parses a flat `key = value` file.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| SpineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InitScheme {
    /// Weights and biases `~ U(-1/sqrt(d), 1/sqrt(d))`; sinusoid amplitude
    /// and offset `~ N(0, 1)`.
    #[default]
    UniformFanIn,
}

/// Fresh parameter vector for `model`, deterministic in `seed`.
pub fn init_params(model: &Model, seed: u64, scheme: InitScheme) -> Vec<f64> {
    let InitScheme::UniformFanIn = scheme;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = vec![0.0; model.theta.len()];
    if let Some(pl) = model.pre_linear {
        let bound = 1.0 / (pl.in_dim as f64).sqrt();
        for t in &mut theta[..pl.param_len()] {
            *t = rng.random_range(-bound..=bound);
        }
    }
    let d = model.structure.input_dim;
    let bound = 1.0 / (d as f64).sqrt();
    let mut done: Vec<usize> = Vec::new();
    for c in &model.structure.components {
        if done.contains(&c.params.start) {
            continue;
        }
        done.push(c.params.start);
        let p = &mut theta[c.params.clone()];
        match c.family {
            Family::Sinusoidal => {
                for t in &mut p[..=d] {
                    *t = rng.random_range(-bound..=bound);
                }
                p[d + 1] = rng.sample(StandardNormal);
                p[d + 2] = rng.sample(StandardNormal);
            }
            _ => {
                for t in p.iter_mut() {
                    *t = rng.random_range(-bound..=bound);
                }
            }
        }
    }
    theta
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch, in scaled target units.
    pub loss: f64,
    /// Training accuracy (classification) or MSE in z-scored target units.
    pub metric: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub best: Option<EpochRecord>,
    pub clipped_steps: usize,
    /// Set when training stopped on a non-finite loss or gradient.
    pub diverged: Option<String>,
}

impl History {
    pub fn final_record(&self) -> Option<EpochRecord> {
        self.records.last().copied()
    }

    pub fn best_loss(&self) -> f64 {
        self.best.map_or(f64::NAN, |r| r.loss)
    }

    pub fn best_metric(&self) -> f64 {
        self.best.map_or(f64::NAN, |r| r.metric)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("epoch,loss,metric\n");
        for r in &self.records {
            out.push_str(&format!("{},{:?},{:?}\n", r.epoch, r.loss, r.metric));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| SpineError::io(path, e))
    }
}

/// Training data mapped through the model's scalers once up front.
pub(crate) struct Prepared {
    pub x: Vec<f64>,
    pub d: usize,
    pub y: PreparedTargets,
    /// Per-column factor turning scaled squared error into z-scored units.
    pub z_factor: Vec<f64>,
}

pub(crate) enum PreparedTargets {
    Values { k: usize, data: Vec<f64> },
    Labels { k: usize, data: Vec<usize> },
}

pub(crate) fn prepare(model: &Model, data: &Dataset) -> Result<Prepared> {
    if data.d != model.input_dim() {
        return Err(SpineError::Input(format!(
            "dataset has {} features, model expects {}",
            data.d,
            model.input_dim()
        )));
    }
    if data.output_dim() != model.num_heads() {
        return Err(SpineError::Input(format!(
            "dataset needs {} outputs, model has {} heads",
            data.output_dim(),
            model.num_heads()
        )));
    }
    let x = model.x_scaler.transform(&data.features);
    let (y, z_factor) = match &data.targets {
        Targets::Values { k, data: raw } => {
            let scaled = model.y_scaler.transform(raw);
            let z = (0..*k)
                .map(|c| {
                    let col = raw.iter().skip(c).step_by(*k);
                    let n = raw.len() / k;
                    let mean = col.clone().sum::<f64>() / n as f64;
                    let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                    model.y_scaler.squared_unit(c) / if var > 0.0 { var } else { 1.0 }
                })
                .collect();
            (PreparedTargets::Values { k: *k, data: scaled }, z)
        }
        Targets::Labels { num_classes, data: labels } => (
            PreparedTargets::Labels {
                k: *num_classes,
                data: labels.clone(),
            },
            Vec::new(),
        ),
    };
    Ok(Prepared {
        x,
        d: data.d,
        y,
        z_factor,
    })
}

#[derive(Default)]
struct ChunkResult {
    grad: Vec<f64>,
    loss: f64,
    metric: f64,
    error: Option<SpineError>,
}

/// Loss, metric sum and (optionally) gradient over `idx`, with the
/// per-example upstream scaled by `1 / batch`.
fn chunk_pass(
    model: &Model,
    prep: &Prepared,
    loss: Loss,
    idx: &[usize],
    batch: f64,
    want_grad: bool,
) -> ChunkResult {
    let mut out = ChunkResult {
        grad: if want_grad { vec![0.0; model.theta.len()] } else { Vec::new() },
        ..ChunkResult::default()
    };
    let mut ws = Workspace::default();
    let mut upstream = vec![0.0; model.num_heads()];
    for &i in idx {
        let x = &prep.x[i * prep.d..(i + 1) * prep.d];
        if let Err(e) = model.trace(x, &mut ws.trace) {
            out.error = Some(e);
            return out;
        }
        let pred = &ws.trace.heads;
        match (&prep.y, loss) {
            (PreparedTargets::Values { k, data }, Loss::Mse) => {
                let t = &data[i * k..(i + 1) * k];
                for c in 0..*k {
                    let e = pred[c] - t[c];
                    out.loss += e * e / *k as f64;
                    out.metric += e * e * prep.z_factor[c] / *k as f64;
                    upstream[c] = 2.0 * e / (*k as f64 * batch);
                }
            }
            (PreparedTargets::Labels { k, data }, Loss::Nll) => {
                let (l, g) = match loss_nll(pred, *k, &data[i..=i]) {
                    Ok(v) => v,
                    Err(e) => {
                        out.error = Some(e);
                        return out;
                    }
                };
                out.loss += l;
                if argmax(pred) == data[i] {
                    out.metric += 1.0;
                }
                for (u, gi) in upstream.iter_mut().zip(g) {
                    *u = gi / batch;
                }
            }
            (PreparedTargets::Labels { k, data }, Loss::Mse) => {
                // One-hot regression onto class indicators.
                for c in 0..*k {
                    let e = pred[c] - if data[i] == c { 1.0 } else { 0.0 };
                    out.loss += e * e / *k as f64;
                    upstream[c] = 2.0 * e / (*k as f64 * batch);
                }
                if argmax(pred) == data[i] {
                    out.metric += 1.0;
                }
            }
            (PreparedTargets::Values { .. }, Loss::Nll) => {
                out.error = Some(SpineError::Config("nll loss needs class labels".into()));
                return out;
            }
        }
        if want_grad {
            if let Err(e) = accumulate_from_trace(model, x, &upstream, &mut out.grad, &mut ws) {
                out.error = Some(e);
                return out;
            }
        }
    }
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Trains `model` in its own form. Scalers must already be fitted on the
/// training split; they are applied here once.
///
/// Divergence (non-finite loss or gradient) stops training and is reported
/// in [`History::diverged`] rather than as an error.
pub fn fit(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<History> {
    fit_with(model, data, cfg, &mut |_, _| {})
}

/// [`fit`] with a hook called after every completed epoch.
pub fn fit_with(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord, &Model),
) -> Result<History> {
    cfg.validate()?;
    if let Some(a) = cfg.a {
        model.a = a;
    }
    model.validate()?;
    let prep = prepare(model, data)?;
    let n = data.n;
    if n == 0 {
        return Err(SpineError::Data("training set is empty".into()));
    }
    let batch_size = if cfg.batch_size == 0 { n } else { cfg.batch_size.min(n) };
    let adam = cfg.adam();
    let mut state = AdamState::new(model.theta.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = History::default();

    'epochs: for epoch in 1..=cfg.epochs {
        if batch_size < n {
            order.shuffle(&mut rng);
        }
        let (mut loss_sum, mut metric_sum) = (0.0, 0.0);
        for batch in order.chunks(batch_size) {
            let bs = batch.len() as f64;
            let parts = par::map_chunks(batch, CHUNK, |_, idx| chunk_pass(model, &prep, cfg.loss, idx, bs, true));
            let mut grad = vec![0.0; model.theta.len()];
            let (mut bl, mut bm) = (0.0, 0.0);
            for part in parts {
                if let Some(e) = part.error {
                    history.diverged = Some(e.to_string());
                    break 'epochs;
                }
                bl += part.loss;
                bm += part.metric;
                for (g, p) in grad.iter_mut().zip(&part.grad) {
                    *g += p;
                }
            }
            if !bl.is_finite() {
                history.diverged = Some(format!("non-finite loss in epoch {epoch}"));
                break 'epochs;
            }
            loss_sum += bl;
            metric_sum += bm;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.clip_norm {
                let s = cfg.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
                history.clipped_steps += 1;
                log::debug!("epoch {epoch}: gradient norm {norm:.3e} clipped to {}", cfg.clip_norm);
            }
            if let Err(e) = adam_step(&mut model.theta, &grad, &mut state, &adam) {
                history.diverged = Some(e.to_string());
                break 'epochs;
            }
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / n as f64,
            metric: metric_sum / n as f64,
        };
        let better = match (history.best, data.is_classification()) {
            (None, _) => true,
            (Some(b), true) => record.metric > b.metric || (record.metric == b.metric && record.loss < b.loss),
            (Some(b), false) => record.loss < b.loss,
        };
        if better {
            history.best = Some(record);
        }
        if cfg.log_every > 0 && epoch % cfg.log_every == 0 {
            log::info!("epoch {epoch}: loss {:.6e} metric {:.6}", record.loss, record.metric);
        }
        history.records.push(record);
        on_epoch(&record, model);
    }
    if let Some(msg) = &history.diverged {
        log::warn!("training diverged: {msg}");
    }
    Ok(history)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    /// Mean loss in scaled target units.
    pub loss: f64,
    /// Regression: MSE in raw target units.
    pub mse_raw: Option<f64>,
    /// Regression: MSE in z-scored target units (raw MSE over the target
    /// variance of the evaluated set).
    pub mse_z: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Loss and metrics of `model` on `data` without updating anything.
pub fn evaluate(model: &Model, data: &Dataset, loss: Loss) -> Result<Evaluation> {
    let prep = prepare(model, data)?;
    let idx: Vec<usize> = (0..data.n).collect();
    let parts = par::map_chunks(&idx, CHUNK, |_, c| chunk_pass(model, &prep, loss, c, 1.0, false));
    let (mut l, mut m) = (0.0, 0.0);
    for p in parts {
        if let Some(e) = p.error {
            return Err(e);
        }
        l += p.loss;
        m += p.metric;
    }
    let n = data.n as f64;
    let (mse_raw, mse_z, accuracy) = match &data.targets {
        Targets::Values { .. } => (Some(raw_mse(model, data)?), Some(m / n), None),
        Targets::Labels { .. } => (None, None, Some(m / n)),
    };
    Ok(Evaluation {
        n: data.n,
        loss: l / n,
        mse_raw,
        mse_z,
        accuracy,
    })
}

fn raw_mse(model: &Model, data: &Dataset) -> Result<f64> {
    let (targets, k) = data.values().expect("regression data");
    let preds = predict_raw(model, data)?;
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / (data.n * k) as f64)
}

/// Head outputs in raw target units for every row, row-major.
pub fn predict_raw(model: &Model, data: &Dataset) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..data.n).collect();
    let parts = par::map_chunks(&idx, CHUNK, |_, c| {
        c.iter()
            .map(|&i| model.predict_raw(data.row(i)))
            .collect::<Result<Vec<_>>>()
    });
    let mut out = Vec::with_capacity(data.n * model.num_heads());
    for p in parts {
        for row in p? {
            out.extend(row);
        }
    }
    Ok(out)
}

/// Fits the conventional scalers on a training split: z-scored inputs and,
/// for regression, unit min-max targets.
pub fn fit_default_scalers(model: &mut Model, train: &Dataset) {
    model.x_scaler = Scaler::fit(ScalerKind::ZScore, &train.features, train.d);
    model.y_scaler = match train.values() {
        Some((y, k)) => Scaler::fit(ScalerKind::MinMaxUnit, y, k),
        None => Scaler::identity(),
    };
}
