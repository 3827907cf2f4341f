//! Minibatch sampling and the seeded training loop.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{BasinRecord, DailySeries, DateRange, NormStats, DISCHARGE};
use crate::network::{rmse_masked_loss, ModelConfig, NetworkError, SequenceInput, StreamflowModel};
use crate::tensor::{adam_step, AdamState, Graph, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("window of {window} days does not fit basin {basin} ({days} days available)")]
    WindowTooLong {
        basin: String,
        window: usize,
        days: usize,
    },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("basin {basin}: {msg}")]
    Data { basin: String, msg: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_basins: usize,
    /// Defaults to `ceil(train basins / batch_basins)`.
    #[serde(default)]
    pub batches_per_epoch: Option<usize>,
    pub seq_len: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    /// Free-form label of the FDC availability scenario, recorded in outputs.
    #[serde(default)]
    pub fdc_scenario: Option<String>,
}

fn default_clip() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_basins == 0 || self.seq_len == 0 || self.batches_per_epoch == Some(0) {
            return Err(TrainError::InvalidConfig("counts must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "clip norm {}",
                self.clip_norm
            )));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_basins: usize) -> usize {
        self.batches_per_epoch
            .unwrap_or_else(|| n_basins.div_ceil(self.batch_basins).max(1))
    }
}

/// One basin's normalized model inputs and targets over a date range.
#[derive(Debug, Clone, PartialEq)]
pub struct BasinData {
    pub id: String,
    pub start_date: chrono::NaiveDate,
    pub n_vars: usize,
    /// Row-major `[days × forcing vars]`.
    pub forcings: Vec<f64>,
    pub target: Vec<f64>,
    pub mask: Vec<bool>,
    pub attributes: Vec<f64>,
    pub fdc: Option<Vec<f64>>,
}

impl BasinData {
    pub fn days(&self) -> usize {
        self.target.len()
    }

    pub fn window(&self, start: usize, len: usize) -> SequenceInput {
        SequenceInput {
            forcings: self.forcings[start * self.n_vars..(start + len) * self.n_vars].to_vec(),
            attributes: self.attributes.clone(),
            fdc: self.fdc.clone(),
        }
    }

    pub fn full_input(&self) -> SequenceInput {
        self.window(0, self.days())
    }
}

/// Normalized attribute values of `basin` for the model's attribute list.
pub fn normalized_attributes(
    basin: &BasinRecord,
    names: &[String],
    stats: &NormStats,
) -> Result<Vec<f64>> {
    names
        .iter()
        .map(|name| {
            let entry = stats.attribute(name).ok_or_else(|| TrainError::Data {
                basin: basin.id.clone(),
                msg: format!("no normalization for attribute {name}"),
            })?;
            let v = basin.attribute(name).ok_or_else(|| TrainError::Data {
                basin: basin.id.clone(),
                msg: format!("missing attribute {name}"),
            })?;
            Ok(entry.normalize(v))
        })
        .collect()
}

/// Slice an already normalized series to the covered part of `range`.
///
/// Only days inside `range` are copied, so nothing outside it can reach a
/// loss computed from the result.
pub fn prepare_basin(
    normalized: &DailySeries,
    range: &DateRange,
    config: &ModelConfig,
    attributes: Vec<f64>,
    fdc: Option<Vec<f64>>,
) -> Result<BasinData> {
    let id = normalized.basin_id.clone();
    let span = normalized.day_span(range);
    let var_idx: Vec<usize> = config
        .forcing_variables
        .iter()
        .map(|v| {
            normalized.var_index(v).ok_or_else(|| TrainError::Data {
                basin: id.clone(),
                msg: format!("no forcing variable {v}"),
            })
        })
        .collect::<Result<_>>()?;
    let nv = normalized.variables.len();
    let mut forcings = Vec::with_capacity(span.len() * var_idx.len());
    for d in span.clone() {
        for &v in &var_idx {
            let i = d * nv + v;
            forcings.push(if normalized.mask[i] {
                normalized.values[i]
            } else {
                0.0
            });
        }
    }
    let (target, mask) = match normalized.var_index(DISCHARGE) {
        Some(q) => normalized.column(q, span.clone()),
        None => (vec![0.0; span.len()], vec![false; span.len()]),
    };
    Ok(BasinData {
        id,
        start_date: normalized.date_at(span.start),
        n_vars: var_idx.len(),
        forcings,
        target,
        mask,
        attributes,
        fdc,
    })
}

/// `(basin index, window start)` pairs: basins uniform with replacement,
/// starts uniform over every position where the window fits.
pub fn sample_batch(
    basins: &[BasinData],
    batch: usize,
    seq_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    if basins.is_empty() {
        return Err(TrainError::InvalidConfig("no training basins".into()));
    }
    if let Some(b) = basins.iter().find(|b| b.days() < seq_len) {
        return Err(TrainError::WindowTooLong {
            basin: b.id.clone(),
            window: seq_len,
            days: b.days(),
        });
    }
    Ok((0..batch)
        .map(|_| {
            let b = rng.random_range(0..basins.len());
            let start = rng.random_range(0..=basins[b].days() - seq_len);
            (b, start)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: StreamflowModel,
    pub trace: Vec<LossRecord>,
    /// Batches whose targets were entirely masked.
    pub skipped_steps: usize,
}

/// A prepared minibatch: inputs plus flattened `[B × t]` targets and mask.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Vec<SequenceInput>,
    pub target: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Batch {
    pub fn gather(basins: &[BasinData], picks: &[(usize, usize)], seq_len: usize) -> Batch {
        let mut inputs = Vec::with_capacity(picks.len());
        let mut target = Vec::with_capacity(picks.len() * seq_len);
        let mut mask = Vec::with_capacity(picks.len() * seq_len);
        for &(b, s) in picks {
            let basin = &basins[b];
            inputs.push(basin.window(s, seq_len));
            target.extend_from_slice(&basin.target[s..s + seq_len]);
            mask.extend_from_slice(&basin.mask[s..s + seq_len]);
        }
        Batch {
            inputs,
            target,
            mask,
        }
    }
}

/// Scale `grads` in place so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads
            .iter_mut()
            .flat_map(|g| g.iter_mut())
            .for_each(|v| *v *= s);
    }
    norm
}

fn step_seed(seed: u64, step: u64) -> u64 {
    let mut z = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One forward/backward/Adam update on `batch`. Returns the loss before the
/// update, or `None` when every target is masked.
pub fn train_step(
    model: &mut StreamflowModel,
    adam: &mut AdamState,
    batch: &Batch,
    clip_norm: f64,
    dropout_seed: u64,
) -> Result<Option<f64>> {
    let mut g = Graph::training(dropout_seed);
    let vars = model.register(&mut g);
    let pred = model.forward(&mut g, &vars, &batch.inputs)?;
    let loss = match rmse_masked_loss(&mut g, pred, &batch.target, &batch.mask) {
        Ok(l) => l,
        Err(NetworkError::AllMasked) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Ok(Some(value));
    }
    g.backward(loss)?;
    let mut grads: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();
    clip_global_norm(&mut grads, clip_norm);
    adam_step(model.params_mut(), &grads, adam)?;
    Ok(Some(value))
}

/// Train `model` in place for `config.epochs` epochs on `basins`.
pub fn train(
    mut model: StreamflowModel,
    basins: &[BasinData],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut trace = Vec::new();
    let mut skipped = 0;
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            model,
            trace,
            skipped_steps: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(config.learning_rate, model.params());
    let steps = config.steps_per_epoch(basins.len());
    let mut global = 0u64;
    for epoch in 0..config.epochs {
        for step in 0..steps {
            let picks = sample_batch(basins, config.batch_basins, config.seq_len, &mut rng)?;
            let batch = Batch::gather(basins, &picks, config.seq_len);
            let loss = train_step(
                &mut model,
                &mut adam,
                &batch,
                config.clip_norm,
                step_seed(config.seed, global),
            )?;
            global += 1;
            match loss {
                None => skipped += 1,
                Some(l) if !l.is_finite() => {
                    log::error!("loss {l} at epoch {epoch} step {step}");
                    return Err(TrainError::NonFiniteLoss { epoch, step });
                }
                Some(l) => trace.push(LossRecord {
                    epoch,
                    step,
                    loss: l,
                }),
            }
        }
        if let Some(last) = trace.last() {
            log::debug!("epoch {epoch}: loss {:.5}", last.loss);
        }
    }
    Ok(TrainOutcome {
        model,
        trace,
        skipped_steps: skipped,
    })
}

pub fn write_loss_trace(path: &Path, trace: &[LossRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,step,loss")?;
    for r in trace {
        writeln!(out, "{},{},{}", r.epoch, r.step, r.loss)?;
    }
    out.flush()?;
    Ok(())
}
