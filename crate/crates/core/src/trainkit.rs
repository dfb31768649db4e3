//! Training loop with early stopping, masked evaluation metrics, and binary
//! checkpoints that round-trip every tensor bit for bit.
//!
//! Losses are computed in normalized space; reported metrics are computed on
//! de-normalized predictions against the raw targets, skipping entries whose
//! raw target is exactly 0 (the missing-data convention).

use std::fmt::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::backbones::{BackboneConfig, BackboneKind, ModelError, StaticGnn, TemporalOnly};
use crate::dataio::{flatten_window, DataError, DatasetSplit, WindowSample, Zscore};
use crate::moe::{
    episodic_step, infer_graph, masked_mse, GraphMode, MoeConfig, MoeModel, PreparedSample,
};
use crate::msgd::DayPartition;
use crate::tensor::{clip_grad_norm, Adam, ParamSet, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0}")]
    Contract(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("{path}: {msg} at byte {offset}")]
    Format {
        path: String,
        offset: usize,
        msg: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub backbone: BackboneKind,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    pub temperature: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub hidden: usize,
    pub layers: usize,
    pub embed_dim: usize,
    pub encoder_hidden: usize,
    pub gate_hidden: usize,
}

impl TrainConfig {
    pub fn defaults(backbone: BackboneKind, seed: u64) -> Self {
        Self {
            backbone,
            max_epochs: 100,
            patience: 15,
            batch_size: 32,
            lr: 1e-3,
            lambda: 1.0,
            temperature: 1.0,
            grad_clip: 5.0,
            seed,
            hidden: 32,
            layers: 2,
            embed_dim: 16,
            encoder_hidden: 64,
            gate_hidden: 64,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.patience < 1 {
            return Err(TrainError::Contract("patience must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::Contract("batch size must be at least 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(TrainError::Contract("max_epochs must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TrainError::Contract(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// A backbone plus everything needed to run it forward.
#[derive(Debug, Clone)]
pub enum ModelBundle {
    Moe(MoeModel),
    Static(StaticGnn),
    Temporal(TemporalOnly),
}

impl ModelBundle {
    pub fn kind(&self) -> BackboneKind {
        match self {
            Self::Moe(_) => BackboneKind::MoeGnn,
            Self::Static(_) => BackboneKind::StaticGnn,
            Self::Temporal(_) => BackboneKind::TemporalOnly,
        }
    }

    /// Noise-free forecast for one prepared input window.
    pub fn predict(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        x_flat: Var,
    ) -> Result<Var, ModelError> {
        match self {
            Self::Moe(m) => {
                let g = infer_graph(tape, params, m, x_flat, GraphMode::Deterministic, None)?;
                m.backbone.forward(tape, params, x_flat, g)
            }
            Self::Static(m) => m.forward(tape, params, x_flat),
            Self::Temporal(m) => m.forward(tape, params, x_flat),
        }
    }
}

/// Instantiate the requested backbone with fresh parameters.
#[allow(clippy::too_many_arguments)]
pub fn build_model(
    config: &TrainConfig,
    n_nodes: usize,
    channels: usize,
    l1: usize,
    l2: usize,
    k: usize,
    params: &mut ParamSet,
    rng: &mut ChaCha20Rng,
) -> Result<ModelBundle, TrainError> {
    let backbone_cfg = BackboneConfig {
        n_nodes,
        channels,
        l1,
        l2,
        hidden: config.hidden,
        layers: config.layers,
        embed_dim: config.embed_dim,
    };
    Ok(match config.backbone {
        BackboneKind::MoeGnn => {
            let moe_cfg = MoeConfig {
                n_nodes,
                channels,
                l1,
                embed_dim: config.embed_dim,
                encoder_hidden: config.encoder_hidden,
                gate_hidden: config.gate_hidden,
                k,
                temperature: config.temperature,
                lambda: config.lambda,
            };
            ModelBundle::Moe(MoeModel::new(params, rng, moe_cfg, backbone_cfg)?)
        }
        BackboneKind::StaticGnn => ModelBundle::Static(StaticGnn::new(params, rng, backbone_cfg)?),
        BackboneKind::TemporalOnly => {
            ModelBundle::Temporal(TemporalOnly::new(params, rng, backbone_cfg)?)
        }
    })
}

fn normalize_flat(flat: &Tensor, channels: usize, zscore: &Zscore) -> Tensor {
    let mut out = flat.clone();
    let cols = out.cols();
    for i in 0..out.rows() {
        for j in 0..cols {
            let v = out.get(i, j);
            out.set(i, j, zscore.normalize(v, j % channels));
        }
    }
    out
}

fn denormalize_flat(flat: &Tensor, channels: usize, zscore: &Zscore) -> Tensor {
    let mut out = flat.clone();
    let cols = out.cols();
    for i in 0..out.rows() {
        for j in 0..cols {
            let v = out.get(i, j);
            out.set(i, j, zscore.denormalize(v, j % channels));
        }
    }
    out
}

/// Flatten and normalize one window sample. The mask marks entries whose
/// raw target is nonzero; the domain comes from the partition when one is
/// given, otherwise from the sample itself.
pub fn prepare_sample(
    ws: &WindowSample,
    zscore: &Zscore,
    partition: Option<&DayPartition>,
) -> PreparedSample {
    let channels = ws.x.shape()[2];
    let x_raw = flatten_window(&ws.x);
    let y_raw = flatten_window(&ws.y);
    let mask_data: Vec<f64> = y_raw
        .data()
        .iter()
        .map(|&v| if v != 0.0 { 1.0 } else { 0.0 })
        .collect();
    let mask_count = mask_data.iter().sum();
    let mask = Tensor::new(y_raw.shape().to_vec(), mask_data).unwrap();
    PreparedSample {
        x: normalize_flat(&x_raw, channels, zscore),
        y: normalize_flat(&y_raw, channels, zscore),
        mask,
        mask_count,
        domain: partition
            .map(|p| p.assign_domain(ws.slot))
            .or(ws.domain),
        slot: ws.slot,
    }
}

/// Ordered checkpoint metadata, written as `key=value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckpointMeta {
    pub entries: Vec<(String, String)>,
}

impl CheckpointMeta {
    pub fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn require(&self, key: &str) -> Result<&str, TrainError> {
        self.get(key)
            .ok_or_else(|| TrainError::Contract(format!("checkpoint metadata missing {key}")))
    }

    fn require_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T, TrainError> {
        self.require(key)?.parse().map_err(|_| {
            TrainError::Contract(format!("checkpoint metadata {key} is not parseable"))
        })
    }

    fn float_list(&self, key: &str) -> Result<Vec<f64>, TrainError> {
        self.require(key)?
            .split(',')
            .map(|s| {
                s.parse().map_err(|_| {
                    TrainError::Contract(format!("checkpoint metadata {key} has a bad number"))
                })
            })
            .collect()
    }
}

/// Losses and validation trace of a finished run, plus the best parameters.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelBundle,
    pub params: ParamSet,
    pub best_epoch: usize,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
    pub meta: CheckpointMeta,
}

fn shape_of(splits: &DatasetSplit) -> Result<(usize, usize, usize, usize), TrainError> {
    let first = splits
        .train
        .first()
        .ok_or_else(|| TrainError::Contract("no training samples".into()))?;
    let xs = first.x.shape();
    let ys = first.y.shape();
    Ok((xs[1], xs[2], xs[0], ys[0]))
}

fn batch_loss(
    tape: &mut Tape,
    params: &ParamSet,
    model: &ModelBundle,
    batch: &[&PreparedSample],
    rng: &mut ChaCha20Rng,
) -> Result<Var, TrainError> {
    match model {
        ModelBundle::Moe(m) => Ok(episodic_step(tape, params, m, batch, rng)?.total),
        _ => {
            let mut acc: Option<Var> = None;
            for s in batch {
                let x = tape.leaf(s.x.clone());
                let pred = model.predict(tape, params, x)?;
                let l = masked_mse(tape, pred, &s.y, &s.mask, s.mask_count)?;
                acc = Some(match acc {
                    None => l,
                    Some(a) => tape.add(a, l)?,
                });
            }
            Ok(tape.scalar_mul(acc.unwrap(), 1.0 / batch.len() as f64))
        }
    }
}

/// Run the full training protocol and return the best-validation weights.
///
/// Every epoch shuffles the training samples with the seeded generator,
/// steps Adam over batches (episodically for the expert-mixture model),
/// then scores masked validation MAE on de-normalized forecasts. Training
/// stops once validation has not improved for `patience` epochs or at
/// `max_epochs`; the returned parameters are from the best epoch.
pub fn train(
    config: &TrainConfig,
    splits: &DatasetSplit,
    zscore: &Zscore,
    partition: Option<&DayPartition>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let (n_nodes, channels, l1, l2) = shape_of(splits)?;
    if splits.validation.is_empty() {
        return Err(TrainError::Contract("no validation samples".into()));
    }
    let k = match (config.backbone, partition) {
        (BackboneKind::MoeGnn, None) => {
            return Err(TrainError::Contract(
                "the expert-mixture backbone needs a day partition".into(),
            ));
        }
        (BackboneKind::MoeGnn, Some(p)) => {
            if p.k() < 2 {
                return Err(TrainError::Contract(format!(
                    "episodic training needs K >= 2 experts, got {}",
                    p.k()
                )));
            }
            p.k()
        }
        (_, p) => p.map(|p| p.k()).unwrap_or(0),
    };

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut params = ParamSet::new();
    let model = build_model(config, n_nodes, channels, l1, l2, k, &mut params, &mut rng)?;

    let train_set: Vec<PreparedSample> = splits
        .train
        .iter()
        .map(|ws| prepare_sample(ws, zscore, partition))
        .collect();

    let mut opt = Adam::new(config.lr);
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut stale = 0usize;
    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();
    let mut step = 0usize;

    for epoch in 1..=config.max_epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in indices.chunks(config.batch_size) {
            step += 1;
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            params.zero_grads();
            let mut tape = Tape::new();
            let loss = batch_loss(&mut tape, &params, &model, &batch, &mut rng)?;
            let loss_val = tape.value(loss).data()[0];
            if !loss_val.is_finite() {
                return Err(TrainError::Diverged { epoch, step });
            }
            tape.backward_params(loss, &mut params)?;
            clip_grad_norm(&mut params, config.grad_clip);
            opt.step(&mut params);
            epoch_loss += loss_val;
            batches += 1;
        }
        train_curve.push(epoch_loss / batches as f64);

        let val = evaluate(&model, &params, &splits.validation, zscore)?;
        if !val.mae.is_finite() {
            return Err(TrainError::Diverged { epoch, step });
        }
        val_curve.push(val.mae);
        if val.mae < best_val {
            best_val = val.mae;
            best_epoch = epoch;
            best_params = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let mut meta = CheckpointMeta::default();
    meta.push("backbone", config.backbone);
    meta.push("seed", config.seed);
    meta.push("k", k);
    meta.push("n_nodes", n_nodes);
    meta.push("channels", channels);
    meta.push("l1", l1);
    meta.push("l2", l2);
    meta.push("hidden", config.hidden);
    meta.push("layers", config.layers);
    meta.push("embed_dim", config.embed_dim);
    meta.push("encoder_hidden", config.encoder_hidden);
    meta.push("gate_hidden", config.gate_hidden);
    meta.push("temperature", config.temperature);
    meta.push("lambda", config.lambda);
    meta.push("norm_mean", join_floats(&zscore.mean));
    meta.push("norm_std", join_floats(&zscore.std));

    Ok(TrainOutcome {
        model,
        params: best_params,
        best_epoch,
        train_curve,
        val_curve,
        meta,
    })
}

fn join_floats(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Rebuild the model, parameters, and normalization recorded in a
/// checkpoint's metadata, then overwrite every parameter with the stored
/// tensors.
pub fn restore_model(
    tensors: &[(String, Tensor)],
    meta: &CheckpointMeta,
) -> Result<(ModelBundle, ParamSet, Zscore), TrainError> {
    let backbone: BackboneKind = meta
        .require("backbone")?
        .parse()
        .map_err(|e: ModelError| TrainError::Contract(e.to_string()))?;
    let config = TrainConfig {
        backbone,
        hidden: meta.require_parsed("hidden")?,
        layers: meta.require_parsed("layers")?,
        embed_dim: meta.require_parsed("embed_dim")?,
        encoder_hidden: meta.require_parsed("encoder_hidden")?,
        gate_hidden: meta.require_parsed("gate_hidden")?,
        temperature: meta.require_parsed("temperature")?,
        lambda: meta.require_parsed("lambda")?,
        seed: meta.require_parsed("seed")?,
        ..TrainConfig::defaults(backbone, 0)
    };
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut params = ParamSet::new();
    let model = build_model(
        &config,
        meta.require_parsed("n_nodes")?,
        meta.require_parsed("channels")?,
        meta.require_parsed("l1")?,
        meta.require_parsed("l2")?,
        meta.require_parsed("k")?,
        &mut params,
        &mut rng,
    )?;
    apply_checkpoint(&mut params, tensors)?;
    let zscore = Zscore {
        mean: meta.float_list("norm_mean")?,
        std: meta.float_list("norm_std")?,
    };
    Ok((model, params, zscore))
}

/// Overwrite parameter values by name with the checkpoint tensors; every
/// parameter must be covered and shapes must agree.
pub fn apply_checkpoint(
    params: &mut ParamSet,
    tensors: &[(String, Tensor)],
) -> Result<(), TrainError> {
    if tensors.len() != params.len() {
        return Err(TrainError::Contract(format!(
            "checkpoint holds {} tensors but the model has {} parameters",
            tensors.len(),
            params.len()
        )));
    }
    for (name, t) in tensors {
        let (id, p) = params
            .by_name(name)
            .ok_or_else(|| TrainError::Contract(format!("checkpoint tensor {name} is not a model parameter")))?;
        if p.value.shape() != t.shape() {
            return Err(TrainError::Contract(format!(
                "checkpoint tensor {name} has shape {:?}, expected {:?}",
                t.shape(),
                p.value.shape()
            )));
        }
        params.get_mut(id).value = t.clone();
    }
    Ok(())
}

/// Masked metrics of one evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub mae: f64,
    pub rmse: f64,
    /// None when no target entry is unmasked.
    pub mape: Option<f64>,
    pub count: usize,
    /// Per forecast step 1..=l2, same masking.
    pub per_horizon: Vec<HorizonMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonMetrics {
    pub horizon: usize,
    pub mae: f64,
    pub rmse: f64,
    pub mape: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct ErrorSums {
    abs: f64,
    sq: f64,
    ape: f64,
    count: usize,
}

impl ErrorSums {
    fn absorb(&mut self, other: &ErrorSums) {
        self.abs += other.abs;
        self.sq += other.sq;
        self.ape += other.ape;
        self.count += other.count;
    }

    fn add_entry(&mut self, pred: f64, target: f64) {
        if target == 0.0 {
            return;
        }
        let d = pred - target;
        self.abs += d.abs();
        self.sq += d * d;
        self.ape += d.abs() / target.abs();
        self.count += 1;
    }
}

fn sums_to_row(per_horizon: Vec<ErrorSums>) -> MetricsRow {
    let mut overall = ErrorSums::default();
    for s in &per_horizon {
        overall.absorb(s);
    }
    let cell = |s: &ErrorSums| -> (f64, f64, Option<f64>) {
        if s.count == 0 {
            (0.0, 0.0, None)
        } else {
            let n = s.count as f64;
            (s.abs / n, (s.sq / n).sqrt(), Some(s.ape / n))
        }
    };
    let (mae, rmse, mape) = cell(&overall);
    MetricsRow {
        mae,
        rmse,
        mape,
        count: overall.count,
        per_horizon: per_horizon
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let (mae, rmse, mape) = cell(s);
                HorizonMetrics {
                    horizon: i + 1,
                    mae,
                    rmse,
                    mape,
                    count: s.count,
                }
            })
            .collect(),
    }
}

/// Masked metrics from already de-normalized (prediction, raw target)
/// matrix pairs, each N x (l2*C) in window layout.
pub fn metrics_from_pairs(
    pairs: &[(Tensor, Tensor)],
    channels: usize,
) -> Result<MetricsRow, TrainError> {
    let first = pairs
        .first()
        .ok_or_else(|| TrainError::Contract("no samples to evaluate".into()))?;
    let cols = first.0.cols();
    if cols % channels != 0 {
        return Err(TrainError::Contract(format!(
            "{cols} columns do not hold whole {channels}-channel steps"
        )));
    }
    let horizons = cols / channels;
    let mut sums = vec![ErrorSums::default(); horizons];
    for (pred, target) in pairs {
        if pred.shape() != target.shape() || pred.cols() != cols {
            return Err(TrainError::Contract(
                "prediction and target shapes disagree".into(),
            ));
        }
        for i in 0..pred.rows() {
            for j in 0..cols {
                sums[j / channels].add_entry(pred.get(i, j), target.get(i, j));
            }
        }
    }
    Ok(sums_to_row(sums))
}

/// Forecast every sample with the noise-free graph and score de-normalized
/// predictions against raw targets, masking zero targets.
pub fn evaluate(
    model: &ModelBundle,
    params: &ParamSet,
    samples: &[WindowSample],
    zscore: &Zscore,
) -> Result<MetricsRow, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Contract("no samples to evaluate".into()));
    }
    let pairs: Vec<(Tensor, Tensor)> = samples
        .par_iter()
        .map(|ws| -> Result<(Tensor, Tensor), TrainError> {
            let channels = ws.x.shape()[2];
            let x_raw = flatten_window(&ws.x);
            let x = normalize_flat(&x_raw, channels, zscore);
            let y_raw = flatten_window(&ws.y);
            let mut tape = Tape::new();
            let xv = tape.leaf(x);
            let pred = model.predict(&mut tape, params, xv)?;
            let pred_raw = denormalize_flat(tape.value(pred), channels, zscore);
            Ok((pred_raw, y_raw))
        })
        .collect::<Result<_, _>>()?;
    let channels = samples[0].x.shape()[2];
    metrics_from_pairs(&pairs, channels)
}

fn write_metric_line(out: &mut String, label: &str, mae: f64, rmse: f64, mape: Option<f64>) {
    match mape {
        Some(m) => writeln!(out, "{label}\t{mae}\t{rmse}\t{m}").unwrap(),
        None => writeln!(out, "{label}\t{mae}\t{rmse}\tundefined").unwrap(),
    }
}

/// Tab-separated metrics: one row per forecast horizon plus an overall row.
pub fn render_metrics_tsv(row: &MetricsRow) -> String {
    let mut out = String::from("horizon\tmae\trmse\tmape\n");
    for h in &row.per_horizon {
        write_metric_line(&mut out, &h.horizon.to_string(), h.mae, h.rmse, h.mape);
    }
    write_metric_line(&mut out, "overall", row.mae, row.rmse, row.mape);
    out
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"STXP";
const CHECKPOINT_VERSION: u32 = 1;

/// Insertion-ordered (name, value) list of a parameter set, the layout
/// stored in checkpoints.
pub fn checkpoint_tensors(params: &ParamSet) -> Vec<(String, Tensor)> {
    params
        .iter()
        .map(|(_, p)| (p.name.clone(), p.value.clone()))
        .collect()
}

/// Binary layout: magic `STXP`, version, tensor count, then per tensor the
/// name (u16 length prefix), u32 rows, u32 cols, and row-major f64 data;
/// finally a u32-length-prefixed block of `key=value` metadata lines. All
/// integers and floats little-endian.
pub fn save_checkpoint(
    tensors: &[(String, Tensor)],
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<(), TrainError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        if name.len() > u16::MAX as usize {
            return Err(TrainError::Contract(format!("tensor name too long: {name}")));
        }
        if !t.is_matrix() {
            return Err(TrainError::Contract(format!(
                "tensor {name} is not a matrix"
            )));
        }
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut meta_text = String::new();
    for (k, v) in &meta.entries {
        writeln!(meta_text, "{k}={v}").unwrap();
    }
    buf.extend_from_slice(&(meta_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta_text.as_bytes());
    std::fs::write(path, &buf).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, msg: impl Into<String>) -> Result<T, TrainError> {
        Err(TrainError::Format {
            path: self.path.to_string(),
            offset: self.pos,
            msg: msg.into(),
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        if self.pos + n > self.buf.len() {
            return self.fail(format!(
                "file truncated: needed {n} more bytes, found {}",
                self.buf.len() - self.pos
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, TrainError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(Vec<(String, Tensor)>, CheckpointMeta), TrainError> {
    let buf = std::fs::read(path).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let path_str = path.display().to_string();
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path: &path_str,
    };
    if r.take(4)? != CHECKPOINT_MAGIC {
        r.pos = 0;
        return r.fail("bad magic, not a checkpoint file");
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        r.pos = 4;
        return r.fail(format!("unsupported version {version}"));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name_pos = r.pos;
        let name = match std::str::from_utf8(r.take(name_len)?) {
            Ok(s) => s.to_string(),
            Err(_) => {
                r.pos = name_pos;
                return r.fail("tensor name is not UTF-8");
            }
        };
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let data_bytes = r.take(rows * cols * 8)?;
        let data: Vec<f64> = data_bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::matrix(rows, cols, data)
            .map_err(|e| TrainError::Contract(e.to_string()))?;
        tensors.push((name, t));
    }
    let meta_len = r.u32()? as usize;
    let meta_pos = r.pos;
    let meta_text = match std::str::from_utf8(r.take(meta_len)?) {
        Ok(s) => s.to_string(),
        Err(_) => {
            r.pos = meta_pos;
            return r.fail("metadata is not UTF-8");
        }
    };
    if r.pos != buf.len() {
        return r.fail(format!("{} trailing bytes", buf.len() - r.pos));
    }
    let mut meta = CheckpointMeta::default();
    for line in meta_text.lines() {
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            r.pos = meta_pos;
            return r.fail(format!("metadata line without '=': {line:?}"));
        };
        meta.entries.push((k.to_string(), v.to_string()));
    }
    Ok((tensors, meta))
}
