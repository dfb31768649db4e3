//! Expert graphon mixtures: K per-interval expert embeddings, a shared
//! window-conditioned time encoder, relaxed Bernoulli graph sampling, and a
//! gate that mixes expert graphons for inputs from unseen conditions.
//!
//! Training is episodic. Every sample carries the domain (day interval) it
//! falls in; its own expert builds the graph used for forecasting, while
//! the gate must reconstruct that expert's graphon from a mixture of the
//! remaining K-1 experts, none of which may receive gradient from the
//! reconstruction. At test time all K experts participate in the mixture.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::Gumbel;

use crate::backbones::{init_matrix, GnnCore, ModelError};
use crate::tensor::{ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct MoeConfig {
    pub n_nodes: usize,
    pub channels: usize,
    pub l1: usize,
    /// Embedding width d of expert and time embeddings.
    pub embed_dim: usize,
    pub encoder_hidden: usize,
    pub gate_hidden: usize,
    /// Expert count; must equal the day partition's interval count.
    pub k: usize,
    /// Gumbel noise temperature s.
    pub temperature: f64,
    /// Weight of the mixture-reconstruction loss in the total loss. The two
    /// losses touch disjoint parameters, so this only scales how fast the
    /// gate learns.
    pub lambda: f64,
}

impl MoeConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_nodes == 0
            || self.channels == 0
            || self.l1 == 0
            || self.embed_dim == 0
            || self.encoder_hidden == 0
            || self.gate_hidden == 0
            || self.k == 0
        {
            return Err(ModelError::Contract("config fields must all be positive".into()));
        }
        if self.temperature <= 0.0 {
            return Err(ModelError::Contract(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// K learnable expert embedding matrices, one per day interval, each
/// N x d.
#[derive(Debug, Clone)]
pub struct ExpertBank {
    pub embeddings: Vec<ParamId>,
}

impl ExpertBank {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha20Rng,
        k: usize,
        n_nodes: usize,
        embed_dim: usize,
    ) -> Result<Self, ModelError> {
        let mut embeddings = Vec::with_capacity(k);
        for i in 0..k {
            embeddings.push(params.add(
                &format!("expert.{i}"),
                init_matrix(rng, n_nodes, embed_dim, embed_dim),
            )?);
        }
        Ok(Self { embeddings })
    }

    pub fn k(&self) -> usize {
        self.embeddings.len()
    }
}

/// Per-node perceptron from a flattened input window to a d-wide time
/// embedding; shared across nodes and experts.
#[derive(Debug, Clone)]
pub struct TimeEncoder {
    pub in_dim: usize,
    pub out_dim: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl TimeEncoder {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha20Rng,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            in_dim,
            out_dim,
            w1: params.add("encoder.w1", init_matrix(rng, in_dim, hidden, in_dim))?,
            b1: params.add("encoder.b1", init_matrix(rng, 1, hidden, in_dim))?,
            w2: params.add("encoder.w2", init_matrix(rng, hidden, out_dim, hidden))?,
            b2: params.add("encoder.b2", init_matrix(rng, 1, out_dim, hidden))?,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }

    /// Row v of the output is the encoder applied to node v's window.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        x_flat: Var,
    ) -> Result<Var, ModelError> {
        let x_shape = tape.value(x_flat).shape().to_vec();
        if x_shape.len() != 2 || x_shape[1] != self.in_dim {
            return Err(ModelError::Contract(format!(
                "encoder input shape {x_shape:?} does not have {} columns",
                self.in_dim
            )));
        }
        let n = x_shape[0];
        let w1 = tape.param(params, self.w1);
        let b1 = tape.param(params, self.b1);
        let w2 = tape.param(params, self.w2);
        let b2 = tape.param(params, self.b2);
        let h = tape.matmul(x_flat, w1)?;
        let b1r = tape.broadcast_row(b1, n)?;
        let h = tape.add(h, b1r)?;
        let h = tape.tanh(h);
        let out = tape.matmul(h, w2)?;
        let b2r = tape.broadcast_row(b2, n)?;
        Ok(tape.add(out, b2r)?)
    }
}

/// Perceptron from pooled window features to K expert logits.
#[derive(Debug, Clone)]
pub struct MixGate {
    pub in_dim: usize,
    pub k: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl MixGate {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha20Rng,
        in_dim: usize,
        hidden: usize,
        k: usize,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            in_dim,
            k,
            w1: params.add("gate.w1", init_matrix(rng, in_dim, hidden, in_dim))?,
            b1: params.add("gate.b1", init_matrix(rng, 1, hidden, in_dim))?,
            w2: params.add("gate.w2", init_matrix(rng, hidden, k, hidden))?,
            b2: params.add("gate.b2", init_matrix(rng, 1, k, hidden))?,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }

    fn logits(&self, tape: &mut Tape, params: &ParamSet, x_flat: Var) -> Result<Var, ModelError> {
        let n = tape.value(x_flat).rows();
        // gate input: mean over nodes of the flattened window
        let pool = tape.leaf(Tensor::filled(vec![1, n], 1.0 / n as f64));
        let pooled = tape.matmul(pool, x_flat)?;
        let w1 = tape.param(params, self.w1);
        let b1 = tape.param(params, self.b1);
        let w2 = tape.param(params, self.w2);
        let b2 = tape.param(params, self.b2);
        let h = tape.matmul(pooled, w1)?;
        let h = tape.add(h, b1)?;
        let h = tape.tanh(h);
        let out = tape.matmul(h, w2)?;
        Ok(tape.add(out, b2)?)
    }
}

/// Edge-probability matrix P = sigmoid(E_g * E_t^T); entry (i, j) is the
/// sigmoid of the inner product of expert row i with time-embedding row j.
/// Directed: not symmetric in general.
pub fn build_graphon(tape: &mut Tape, e_g: Var, e_t: Var) -> Result<Var, ModelError> {
    let e_t_t = tape.transpose(e_t)?;
    let logits = tape.matmul(e_g, e_t_t)?;
    Ok(tape.sigmoid(logits))
}

/// Two independent standard Gumbel draws shaped like a graphon.
pub fn gumbel_pair(rng: &mut ChaCha20Rng, n: usize) -> (Tensor, Tensor) {
    let g = Gumbel::new(0.0, 1.0).unwrap();
    let mut draw = || {
        let data: Vec<f64> = (0..n * n).map(|_| rng.sample(g)).collect();
        Tensor::matrix(n, n, data).unwrap()
    };
    (draw(), draw())
}

/// Relaxed Bernoulli sample G = sigmoid(logit(P) + (z1 - z2)/s). Only the
/// noise is divided by the temperature. The noise is a constant of the
/// computation, so gradients flow into P (reparameterization); with z1 = z2
/// the result is P exactly, entry for entry.
pub fn sample_graph(
    tape: &mut Tape,
    p: Var,
    temperature: f64,
    z1: &Tensor,
    z2: &Tensor,
) -> Result<Var, ModelError> {
    if temperature <= 0.0 {
        return Err(ModelError::Contract(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if z1.shape() != z2.shape() || z1.shape() != tape.value(p).shape() {
        return Err(ModelError::Contract(format!(
            "noise shapes {:?}/{:?} do not match graphon {:?}",
            z1.shape(),
            z2.shape(),
            tape.value(p).shape()
        )));
    }
    let shift_data: Vec<f64> = z1
        .data()
        .iter()
        .zip(z2.data())
        .map(|(a, b)| (a - b) / temperature)
        .collect();
    let shift = Tensor::new(z1.shape().to_vec(), shift_data).unwrap();
    Ok(tape.logit_shift(p, &shift)?)
}

/// Gate weights for one sample: softmax over the active expert set. With
/// `exclude` set (training), the excluded expert's weight is exactly 0 and
/// the softmax runs over the remaining K-1 logits.
pub fn gate_weights(
    tape: &mut Tape,
    params: &ParamSet,
    gate: &MixGate,
    x_flat: Var,
    exclude: Option<usize>,
) -> Result<Var, ModelError> {
    let k = gate.k;
    let logits = gate.logits(tape, params, x_flat)?;
    let Some(skip) = exclude else {
        return Ok(tape.softmax_rows(logits)?);
    };
    if k < 2 {
        return Err(ModelError::Contract(
            "cannot exclude an expert from a single-expert gate".into(),
        ));
    }
    if skip >= k {
        return Err(ModelError::Contract(format!(
            "exclude index {skip} out of range for {k} experts"
        )));
    }
    let active = if skip == 0 {
        tape.slice_cols(logits, 1, k)?
    } else if skip == k - 1 {
        tape.slice_cols(logits, 0, k - 1)?
    } else {
        let left = tape.slice_cols(logits, 0, skip)?;
        let right = tape.slice_cols(logits, skip + 1, k)?;
        tape.concat_cols(left, right)?
    };
    let soft = tape.softmax_rows(active)?;
    let zero = tape.leaf(Tensor::zeros(vec![1, 1]));
    let out = if skip == 0 {
        tape.concat_cols(zero, soft)?
    } else if skip == k - 1 {
        tape.concat_cols(soft, zero)?
    } else {
        let left = tape.slice_cols(soft, 0, skip)?;
        let right = tape.slice_cols(soft, skip, k - 1)?;
        let lz = tape.concat_cols(left, zero)?;
        tape.concat_cols(lz, right)?
    };
    Ok(out)
}

/// Convex combination sum_k w_k * P_k of graphons under already-normalized
/// weights (a 1 x K row).
pub fn mix_graphons(tape: &mut Tape, weights: Var, graphons: &[Var]) -> Result<Var, ModelError> {
    let k = graphons.len();
    if tape.value(weights).shape() != [1, k] {
        return Err(ModelError::Contract(format!(
            "weight shape {:?} does not match {k} graphons",
            tape.value(weights).shape()
        )));
    }
    if k == 0 {
        return Err(ModelError::Contract("no graphons to mix".into()));
    }
    let n = tape.value(graphons[0]).rows();
    let ones_row = tape.leaf(Tensor::filled(vec![1, n], 1.0));
    let mut acc: Option<Var> = None;
    for (i, &p) in graphons.iter().enumerate() {
        let w = tape.slice_cols(weights, i, i + 1)?;
        let w_col = tape.broadcast_row(w, n)?;
        let w_mat = tape.matmul(w_col, ones_row)?;
        let term = tape.mul(w_mat, p)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.unwrap())
}

/// One training/evaluation sample in model layout: node-major flattened
/// input and target plus the 0/1 target mask (1 where the raw target is
/// nonzero).
#[derive(Debug, Clone)]
pub struct PreparedSample {
    /// N x (l1*C) normalized input window.
    pub x: Tensor,
    /// N x (l2*C) normalized target window.
    pub y: Tensor,
    /// N x (l2*C) entries, 1.0 where the raw target is nonzero.
    pub mask: Tensor,
    /// Count of unmasked entries.
    pub mask_count: f64,
    pub domain: Option<usize>,
    pub slot: usize,
}

/// The full expert-mixture forecasting model.
#[derive(Debug, Clone)]
pub struct MoeModel {
    pub config: MoeConfig,
    pub bank: ExpertBank,
    pub encoder: TimeEncoder,
    pub gate: MixGate,
    pub backbone: GnnCore,
}

impl MoeModel {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha20Rng,
        config: MoeConfig,
        backbone: crate::backbones::BackboneConfig,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let in_dim = config.l1 * config.channels;
        let bank = ExpertBank::new(params, rng, config.k, config.n_nodes, config.embed_dim)?;
        let encoder = TimeEncoder::new(params, rng, in_dim, config.encoder_hidden, config.embed_dim)?;
        let gate = MixGate::new(params, rng, in_dim, config.gate_hidden, config.k)?;
        let backbone = GnnCore::new(params, rng, backbone, "moe")?;
        Ok(Self {
            config,
            bank,
            encoder,
            gate,
            backbone,
        })
    }

    pub fn gate_param_ids(&self) -> Vec<ParamId> {
        self.gate.param_ids()
    }

    pub fn non_gate_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.bank.embeddings.clone();
        ids.extend(self.encoder.param_ids());
        ids.extend(self.backbone.param_ids());
        ids
    }

    /// All K graphons for one encoded window, in expert order.
    pub fn graphons(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        e_t: Var,
    ) -> Result<Vec<Var>, ModelError> {
        self.bank
            .embeddings
            .iter()
            .map(|&id| {
                let e_g = tape.param(params, id);
                build_graphon(tape, e_g, e_t)
            })
            .collect()
    }
}

/// Loss heads of one episodic step, as tape variables so the caller decides
/// what to differentiate.
#[derive(Debug, Clone, Copy)]
pub struct EpisodicLosses {
    pub l_base: Var,
    pub l_mix: Var,
    pub total: Var,
}

/// Sum-of-squares forecasting loss over unmasked entries, averaged by mask
/// count; a fully masked sample contributes 0.
pub fn masked_mse(
    tape: &mut Tape,
    pred: Var,
    y: &Tensor,
    mask: &Tensor,
    mask_count: f64,
) -> Result<Var, ModelError> {
    let y_leaf = tape.leaf(y.clone());
    let mask_leaf = tape.leaf(mask.clone());
    let diff = tape.sub(pred, y_leaf)?;
    let masked = tape.mul(diff, mask_leaf)?;
    let sq = tape.mul(masked, masked)?;
    let sse = tape.sum(sq);
    Ok(tape.scalar_mul(sse, 1.0 / mask_count.max(1.0)))
}

/// One episodic batch: for every sample, its own expert's graphon is
/// sampled into the forecasting graph (reparameterized noise), while the
/// gate mixes the *other* experts' stop-gradient graphons to reconstruct
/// the own graphon. The reconstruction loss therefore reaches gate
/// parameters only; the forecasting loss reaches everything else.
///
/// Returns batch-mean losses; the total is l_base + lambda * l_mix.
pub fn episodic_step(
    tape: &mut Tape,
    params: &ParamSet,
    model: &MoeModel,
    batch: &[&PreparedSample],
    rng: &mut ChaCha20Rng,
) -> Result<EpisodicLosses, ModelError> {
    let k = model.config.k;
    if k < 2 {
        return Err(ModelError::Contract(format!(
            "episodic training needs K >= 2 experts, got {k}"
        )));
    }
    if batch.is_empty() {
        return Err(ModelError::Contract("empty batch".into()));
    }
    let n = model.config.n_nodes;
    let mut base_acc: Option<Var> = None;
    let mut mix_acc: Option<Var> = None;
    for sample in batch {
        let own = sample.domain.ok_or_else(|| {
            ModelError::Contract("sample is missing its domain label".into())
        })?;
        if own >= k {
            return Err(ModelError::Contract(format!(
                "domain {own} out of range for {k} experts"
            )));
        }
        let x = tape.leaf(sample.x.clone());
        let e_t = model.encoder.forward(tape, params, x)?;
        let graphons = model.graphons(tape, params, e_t)?;

        // reconstruction head: gradients must reach only the gate
        let target = tape.stop_gradient(graphons[own]);
        let wrapped: Vec<Var> = graphons.iter().map(|&p| tape.stop_gradient(p)).collect();
        let w = gate_weights(tape, params, &model.gate, x, Some(own))?;
        let p_mix = mix_graphons(tape, w, &wrapped)?;
        let l_mix_i = tape.mse(p_mix, target)?;

        // forecasting head through the own expert's sampled graph
        let (z1, z2) = gumbel_pair(rng, n);
        let g = sample_graph(tape, graphons[own], model.config.temperature, &z1, &z2)?;
        let pred = model.backbone.forward(tape, params, x, g)?;
        let l_base_i = masked_mse(tape, pred, &sample.y, &sample.mask, sample.mask_count)?;

        base_acc = Some(match base_acc {
            None => l_base_i,
            Some(a) => tape.add(a, l_base_i)?,
        });
        mix_acc = Some(match mix_acc {
            None => l_mix_i,
            Some(a) => tape.add(a, l_mix_i)?,
        });
    }
    let inv_b = 1.0 / batch.len() as f64;
    let l_base = tape.scalar_mul(base_acc.unwrap(), inv_b);
    let l_mix = tape.scalar_mul(mix_acc.unwrap(), inv_b);
    let scaled_mix = tape.scalar_mul(l_mix, model.config.lambda);
    let total = tape.add(l_base, scaled_mix)?;
    Ok(EpisodicLosses {
        l_base,
        l_mix,
        total,
    })
}

/// How the inference-time graph is produced from the mixed graphon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphMode {
    /// Noise-free: the mixed graphon itself (the z1 = z2 identity).
    Deterministic,
    /// One relaxed Bernoulli draw.
    Sample,
}

impl std::str::FromStr for GraphMode {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "deterministic" => Ok(Self::Deterministic),
            "sample" => Ok(Self::Sample),
            other => Err(ModelError::Contract(format!(
                "unknown graph mode {other:?}: expected deterministic or sample"
            ))),
        }
    }
}

/// Test-time graph: every expert participates, weighted by the gate with no
/// exclusion.
pub fn infer_graph(
    tape: &mut Tape,
    params: &ParamSet,
    model: &MoeModel,
    x_flat: Var,
    mode: GraphMode,
    rng: Option<&mut ChaCha20Rng>,
) -> Result<Var, ModelError> {
    let e_t = model.encoder.forward(tape, params, x_flat)?;
    let graphons = model.graphons(tape, params, e_t)?;
    let w = gate_weights(tape, params, &model.gate, x_flat, None)?;
    let p_mix = mix_graphons(tape, w, &graphons)?;
    match mode {
        GraphMode::Deterministic => Ok(p_mix),
        GraphMode::Sample => {
            let rng = rng.ok_or_else(|| {
                ModelError::Contract("sample mode needs a noise source".into())
            })?;
            let (z1, z2) = gumbel_pair(rng, model.config.n_nodes);
            sample_graph(tape, p_mix, model.config.temperature, &z1, &z2)
        }
    }
}
