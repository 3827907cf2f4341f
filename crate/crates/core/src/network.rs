//! Encoder–LSTM streamflow model.
//!
//! A 1-D convolutional encoder turns a basin's normalized 100-point FDC
//! into `E` static features. Those features and the selected normalized
//! attributes are tiled over time and concatenated with the daily forcings;
//! the result drives a single-layer LSTM whose hidden state is mapped to
//! discharge by a linear head.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::NormStats;
use crate::fdc::FDC_POINTS;
use crate::tensor::{Checkpoint, Graph, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("every target entry is masked")]
    AllMasked,
    #[error("no alias configured for attribute {0}")]
    MissingAlias(String),
    #[error("alias {alias} -> {column} names no attribute column")]
    UnknownColumn { alias: String, column: String },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InputSelection {
    #[serde(rename = "full-attr")]
    FullAttr,
    #[serde(rename = "5-attr")]
    FiveAttr,
    #[serde(rename = "no-attr")]
    NoAttr,
}

impl InputSelection {
    pub const ALL: [InputSelection; 3] = [
        InputSelection::FullAttr,
        InputSelection::FiveAttr,
        InputSelection::NoAttr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InputSelection::FullAttr => "full-attr",
            InputSelection::FiveAttr => "5-attr",
            InputSelection::NoAttr => "no-attr",
        }
    }
}

impl std::fmt::Display for InputSelection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for InputSelection {
    type Err = NetworkError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-attr" => Ok(InputSelection::FullAttr),
            "5-attr" => Ok(InputSelection::FiveAttr),
            "no-attr" => Ok(InputSelection::NoAttr),
            other => Err(NetworkError::InvalidConfig(format!(
                "unknown input selection {other:?}"
            ))),
        }
    }
}

/// Canonical names of the five basic attributes; each must be mapped to a
/// file column by the alias table.
pub const FIVE_ATTRIBUTES: [&str; 5] = [
    "slope",
    "area",
    "forest_fraction",
    "soil_porosity",
    "max_soil_water",
];

/// Attribute columns fed to the model for `selection`, in catalog order for
/// full-attr and canonical order for 5-attr.
pub fn select_attributes(
    selection: InputSelection,
    columns: &[String],
    aliases: &BTreeMap<String, String>,
) -> Result<Vec<String>> {
    match selection {
        InputSelection::FullAttr => Ok(columns.to_vec()),
        InputSelection::NoAttr => Ok(Vec::new()),
        InputSelection::FiveAttr => FIVE_ATTRIBUTES
            .iter()
            .map(|&name| {
                let column = aliases
                    .get(name)
                    .ok_or_else(|| NetworkError::MissingAlias(name.to_string()))?;
                if !columns.contains(column) {
                    return Err(NetworkError::UnknownColumn {
                        alias: name.to_string(),
                        column: column.clone(),
                    });
                }
                Ok(column.clone())
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    None,
    Max(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub conv: Vec<ConvLayer>,
    pub pooling: Pooling,
    pub output_features: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        let layer = |out_channels| ConvLayer {
            out_channels,
            kernel: 5,
            stride: 1,
            pad: 0,
        };
        EncoderConfig {
            conv: vec![layer(8), layer(16)],
            pooling: Pooling::Max(2),
            output_features: 20,
        }
    }
}

impl EncoderConfig {
    /// `(channels, length)` after the conv/pool stack on a length-100 input.
    pub fn conv_output(&self) -> Result<(usize, usize)> {
        if self.output_features == 0 {
            return Err(NetworkError::InvalidConfig(
                "output_features must be >= 1".into(),
            ));
        }
        let (mut ch, mut len) = (1usize, FDC_POINTS);
        for (i, l) in self.conv.iter().enumerate() {
            if l.stride == 0 || l.kernel == 0 || l.out_channels == 0 {
                return Err(NetworkError::InvalidConfig(format!(
                    "conv layer {i} has a zero size"
                )));
            }
            if len + 2 * l.pad < l.kernel {
                return Err(NetworkError::InvalidConfig(format!(
                    "conv layer {i}: input length {len} shorter than kernel"
                )));
            }
            len = (len + 2 * l.pad - l.kernel) / l.stride + 1;
            ch = l.out_channels;
            if let Pooling::Max(k) = self.pooling {
                if k == 0 || len < k {
                    return Err(NetworkError::InvalidConfig(format!(
                        "pooling {k} after conv layer {i} leaves nothing"
                    )));
                }
                len /= k;
            }
        }
        Ok((ch, len))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub selection: InputSelection,
    pub use_fdc: bool,
    pub forcing_variables: Vec<String>,
    pub attribute_names: Vec<String>,
    pub hidden: usize,
    pub dropout: f64,
    pub encoder: EncoderConfig,
}

impl ModelConfig {
    pub fn input_width(&self) -> usize {
        self.forcing_variables.len()
            + self.attribute_names.len()
            + if self.use_fdc {
                self.encoder.output_features
            } else {
                0
            }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(NetworkError::InvalidConfig(
                "hidden size must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NetworkError::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.forcing_variables.is_empty() {
            return Err(NetworkError::InvalidConfig("no forcing variables".into()));
        }
        if self.use_fdc {
            self.encoder.conv_output()?;
        }
        Ok(())
    }
}

/// Encoder output `x'` for one basin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderFeatures(pub Vec<f64>);

/// One basin's normalized model inputs over a window of `t` days.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceInput {
    /// Row-major `[t × forcing vars]`.
    pub forcings: Vec<f64>,
    pub attributes: Vec<f64>,
    /// Normalized FDC (100 values) when the model uses one.
    pub fdc: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamflowModel {
    pub config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

impl StreamflowModel {
    /// Fresh model; weights uniform in ±1/√fan-in, forget-gate bias +1.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut push = |name: String, t: Tensor| {
            names.push(name);
            params.push(t);
        };
        if config.use_fdc {
            let mut c_in = 1;
            for (i, l) in config.encoder.conv.iter().enumerate() {
                let bound = 1.0 / ((c_in * l.kernel) as f64).sqrt();
                push(
                    format!("encoder.conv{i}.w"),
                    uniform(&mut rng, &[l.out_channels, c_in, l.kernel], bound),
                );
                push(
                    format!("encoder.conv{i}.b"),
                    uniform(&mut rng, &[l.out_channels], bound),
                );
                c_in = l.out_channels;
            }
            let (ch, len) = config.encoder.conv_output()?;
            let flat = ch * len;
            let e = config.encoder.output_features;
            let bound = 1.0 / (flat as f64).sqrt();
            push(
                "encoder.linear.w".into(),
                uniform(&mut rng, &[flat, e], bound),
            );
            push("encoder.linear.b".into(), uniform(&mut rng, &[e], bound));
        }
        let (input, h) = (config.input_width(), config.hidden);
        let b_in = 1.0 / (input as f64).sqrt();
        let b_h = 1.0 / (h as f64).sqrt();
        push("lstm.w_ih".into(), uniform(&mut rng, &[input, 4 * h], b_in));
        push("lstm.w_hh".into(), uniform(&mut rng, &[h, 4 * h], b_h));
        let mut bias = uniform(&mut rng, &[4 * h], b_h);
        bias.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        push("lstm.b".into(), bias);
        push("head.w".into(), uniform(&mut rng, &[h, 1], b_h));
        push("head.b".into(), uniform(&mut rng, &[1], b_h));
        Ok(StreamflowModel {
            config,
            names,
            params,
        })
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.params[i])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Register every parameter on `g` as a tracked leaf.
    pub fn register(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    fn var(&self, vars: &[Var], name: &str) -> Var {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("parameter {name} not registered"));
        vars[i]
    }

    /// Encoder on the graph: `[1 × 100]` normalized FDC to `[1 × E]` features.
    pub fn encode_on(&self, g: &mut Graph, vars: &[Var], fdc: &[f64]) -> Result<Var> {
        if fdc.len() != FDC_POINTS {
            return Err(NetworkError::ShapeMismatch {
                what: "fdc",
                expected: FDC_POINTS,
                got: fdc.len(),
            });
        }
        let mut x = g.constant(Tensor::new(vec![1, FDC_POINTS], fdc.to_vec())?);
        for (i, l) in self.config.encoder.conv.iter().enumerate() {
            let w = self.var(vars, &format!("encoder.conv{i}.w"));
            let b = self.var(vars, &format!("encoder.conv{i}.b"));
            x = g.conv1d(x, w, b, l.stride, l.pad)?;
            x = g.relu(x);
            if let Pooling::Max(k) = self.config.encoder.pooling {
                x = g.max_pool1d(x, k)?;
            }
        }
        let flat = g.value(x).len();
        let x = g.reshape(x, &[1, flat])?;
        let w = self.var(vars, "encoder.linear.w");
        let b = self.var(vars, "encoder.linear.b");
        let y = g.matmul(x, w)?;
        Ok(g.add(y, b)?)
    }

    /// Eval-mode encoder features for one normalized FDC.
    pub fn encode(&self, fdc: &[f64]) -> Result<EncoderFeatures> {
        if !self.config.use_fdc {
            return Err(NetworkError::InvalidConfig(
                "model has no FDC encoder".into(),
            ));
        }
        let mut g = Graph::new();
        let vars = self.register(&mut g);
        let f = self.encode_on(&mut g, &vars, fdc)?;
        Ok(EncoderFeatures(g.value(f).data().to_vec()))
    }

    /// Forward pass for a batch of equal-length windows; returns `[B × t]`
    /// predictions in normalized discharge space.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], batch: &[SequenceInput]) -> Result<Var> {
        let cfg = &self.config;
        let nb = batch.len();
        let nv = cfg.forcing_variables.len();
        let first = batch.first().ok_or(NetworkError::ShapeMismatch {
            what: "batch",
            expected: 1,
            got: 0,
        })?;
        let t = first.forcings.len() / nv;
        if t == 0 {
            return Err(NetworkError::ShapeMismatch {
                what: "sequence length",
                expected: 1,
                got: 0,
            });
        }
        for s in batch {
            if s.forcings.len() != t * nv {
                return Err(NetworkError::ShapeMismatch {
                    what: "forcings",
                    expected: t * nv,
                    got: s.forcings.len(),
                });
            }
            if s.attributes.len() != cfg.attribute_names.len() {
                return Err(NetworkError::ShapeMismatch {
                    what: "attributes",
                    expected: cfg.attribute_names.len(),
                    got: s.attributes.len(),
                });
            }
        }

        // Static block [B × (attrs + E)], tiled over every step.
        let mut statics = Vec::new();
        if !cfg.attribute_names.is_empty() {
            let rows: Vec<Vec<f64>> = batch.iter().map(|s| s.attributes.clone()).collect();
            statics.push(g.constant(Tensor::from_rows(&rows)?));
        }
        if cfg.use_fdc {
            let mut feats = Vec::with_capacity(nb);
            for s in batch {
                let fdc = s.fdc.as_deref().ok_or(NetworkError::ShapeMismatch {
                    what: "fdc",
                    expected: FDC_POINTS,
                    got: 0,
                })?;
                feats.push(self.encode_on(g, vars, fdc)?);
            }
            statics.push(if feats.len() == 1 {
                feats[0]
            } else {
                g.concat(&feats, 0)?
            });
        }
        let static_block = match statics.len() {
            0 => None,
            1 => Some(statics[0]),
            _ => Some(g.concat(&statics, 1)?),
        };

        let h_size = cfg.hidden;
        let w_ih = self.var(vars, "lstm.w_ih");
        let w_hh = self.var(vars, "lstm.w_hh");
        let bias = self.var(vars, "lstm.b");
        let head_w = self.var(vars, "head.w");
        let head_b = self.var(vars, "head.b");
        let mut h = g.constant(Tensor::zeros(&[nb, h_size]));
        let mut c = g.constant(Tensor::zeros(&[nb, h_size]));
        let mut outputs = Vec::with_capacity(t);
        let mut step_forcing = vec![0.0; nb * nv];
        for step in 0..t {
            for (b, s) in batch.iter().enumerate() {
                step_forcing[b * nv..(b + 1) * nv]
                    .copy_from_slice(&s.forcings[step * nv..(step + 1) * nv]);
            }
            let f = g.constant(Tensor::new(vec![nb, nv], step_forcing.clone())?);
            let x = match static_block {
                Some(sb) => g.concat(&[f, sb], 1)?,
                None => f,
            };
            let x = g.dropout(x, cfg.dropout)?;
            let xw = g.matmul(x, w_ih)?;
            let hw = g.matmul(h, w_hh)?;
            let pre = g.add(xw, hw)?;
            let gates = g.add(pre, bias)?;
            let gi = g.slice(gates, 1, 0, h_size)?;
            let gf = g.slice(gates, 1, h_size, h_size)?;
            let gg = g.slice(gates, 1, 2 * h_size, h_size)?;
            let go = g.slice(gates, 1, 3 * h_size, h_size)?;
            let i_gate = g.sigmoid(gi);
            let f_gate = g.sigmoid(gf);
            let cand = g.tanh(gg);
            let o_gate = g.sigmoid(go);
            let keep = g.mul(f_gate, c)?;
            let write = g.mul(i_gate, cand)?;
            c = g.add(keep, write)?;
            let tc = g.tanh(c);
            h = g.mul(o_gate, tc)?;
            let hd = g.dropout(h, cfg.dropout)?;
            let y = g.matmul(hd, head_w)?;
            outputs.push(g.add(y, head_b)?);
        }
        Ok(if outputs.len() == 1 {
            outputs[0]
        } else {
            g.concat(&outputs, 1)?
        })
    }

    /// Eval-mode predictions (normalized space) for one sequence.
    pub fn predict(&self, input: &SequenceInput) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = self.register(&mut g);
        let y = self.forward(&mut g, &vars, std::slice::from_ref(input))?;
        Ok(g.value(y).data().to_vec())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_tensors(self.names.iter().map(String::as_str).zip(&self.params))
    }

    /// Rebuild from a config and a parameter checkpoint; every expected
    /// tensor must be present with the expected shape.
    pub fn from_checkpoint(config: ModelConfig, ck: &Checkpoint) -> Result<Self> {
        let mut model = StreamflowModel::new(config, 0)?;
        for (name, slot) in model.names.iter().zip(model.params.iter_mut()) {
            let t = ck.get(name)?;
            if t.shape() != slot.shape() {
                return Err(NetworkError::Checkpoint(format!(
                    "{name}: expected shape {:?}, found {:?}",
                    slot.shape(),
                    t.shape()
                )));
            }
            *slot = t;
        }
        Ok(model)
    }
}

/// `sqrt(mean((ŷ − y)²))` over unmasked entries.
pub fn rmse_masked(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(NetworkError::ShapeMismatch {
            what: "loss inputs",
            expected: pred.len(),
            got: target.len().min(mask.len()),
        });
    }
    let (sum, n) = pred
        .iter()
        .zip(target)
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), ((p, y), _)| {
            (s + (p - y).powi(2), n + 1)
        });
    if n == 0 {
        return Err(NetworkError::AllMasked);
    }
    Ok((sum / n as f64).sqrt())
}

/// Batch loss on the graph: masked RMSE of each row of `pred: [B × t]`,
/// averaged over rows that have at least one observed target.
pub fn rmse_masked_loss(g: &mut Graph, pred: Var, target: &[f64], mask: &[bool]) -> Result<Var> {
    let shape = g.shape(pred).to_vec();
    let (nb, t) = (shape[0], shape[1]);
    if target.len() != nb * t || mask.len() != nb * t {
        return Err(NetworkError::ShapeMismatch {
            what: "loss target",
            expected: nb * t,
            got: target.len(),
        });
    }
    let mut row_losses = Vec::new();
    for b in 0..nb {
        let rows = b * t..(b + 1) * t;
        let n = mask[rows.clone()].iter().filter(|&&m| m).count();
        if n == 0 {
            continue;
        }
        let y: Vec<f64> = target[rows.clone()]
            .iter()
            .zip(&mask[rows.clone()])
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        let m: Vec<f64> = mask[rows]
            .iter()
            .map(|&m| if m { 1.0 } else { 0.0 })
            .collect();
        let p = if nb == 1 {
            pred
        } else {
            g.slice(pred, 0, b, 1)?
        };
        let yv = g.constant(Tensor::new(vec![1, t], y)?);
        let mv = g.constant(Tensor::new(vec![1, t], m)?);
        let diff = g.sub(p, yv)?;
        let masked = g.mul(diff, mv)?;
        let sq = g.mul(masked, masked)?;
        let s = g.sum(sq);
        let ms = g.scale(s, 1.0 / n as f64);
        row_losses.push(g.sqrt(ms));
    }
    if row_losses.is_empty() {
        return Err(NetworkError::AllMasked);
    }
    let k = row_losses.len();
    let stacked = if k == 1 {
        row_losses[0]
    } else {
        g.concat(&row_losses, 0)?
    };
    let total = g.sum(stacked);
    Ok(g.scale(total, 1.0 / k as f64))
}

/// Everything needed to evaluate a trained model without its training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub config: ModelConfig,
    pub norm_stats: NormStats,
    pub seed: u64,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub manifest: ModelManifest,
    pub params: Checkpoint,
}

impl ModelCheckpoint {
    pub fn new(model: &StreamflowModel, norm_stats: NormStats, seed: u64) -> Self {
        ModelCheckpoint {
            manifest: ModelManifest {
                config: model.config.clone(),
                norm_stats,
                seed,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
            },
            params: model.to_checkpoint(),
        }
    }

    pub fn model(&self) -> Result<StreamflowModel> {
        StreamflowModel::from_checkpoint(self.manifest.config.clone(), &self.params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| NetworkError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| NetworkError::Checkpoint(e.to_string()))?;
        let ck: ModelCheckpoint =
            serde_json::from_str(&text).map_err(|e| NetworkError::Checkpoint(e.to_string()))?;
        ck.params.validate()?;
        Ok(ck)
    }
}
