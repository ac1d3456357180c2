//! Decoder-only language model over method token sequences.
//!
//! Pre-LN transformer blocks with learned positions and an untied output
//! head. Position 0 of every input is the begin marker.

use std::path::Path;
use std::sync::Arc;

use curekit_nn::layers::{linear, multi_head_attention};
use curekit_nn::{adam_step, lr_schedule, Array, Grads, NnError, OptimizerState, ParamId, ParamStore, Scalar, Tape, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense;

pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sequence of length {len} exceeds the maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("sequence of length {0} is too short")]
    SequenceTooShort(usize),
    #[error("buggy span {span:?} does not fit a context of {len} tokens")]
    SpanMismatch { span: (usize, usize), len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlmConfig {
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
}

impl PlmConfig {
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            embed_dim: 64,
            n_layers: 2,
            n_heads: 2,
            max_seq_len: 256,
            vocab_size,
        }
    }

    pub fn full_scale(vocab_size: usize) -> Self {
        Self {
            embed_dim: 384,
            n_layers: 8,
            n_heads: 6,
            max_seq_len: 1024,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(ModelError::Config(format!(
                "embed_dim {} not divisible by {} heads",
                self.embed_dim, self.n_heads
            )));
        }
        if self.vocab_size < 2 || self.max_seq_len < 2 || self.n_layers == 0 {
            return Err(ModelError::Config("degenerate model size".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("embed_dim".into(), self.embed_dim.to_string()),
            ("n_layers".into(), self.n_layers.to_string()),
            ("n_heads".into(), self.n_heads.to_string()),
            ("max_seq_len".into(), self.max_seq_len.to_string()),
            ("vocab_size".into(), self.vocab_size.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| -> Result<usize> {
            pairs
                .iter()
                .find(|(n, _)| n == k)
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| ModelError::Config(format!("missing `{k}`")))
        };
        let cfg = Self {
            embed_dim: get("embed_dim")?,
            n_layers: get("n_layers")?,
            n_heads: get("n_heads")?,
            max_seq_len: get("max_seq_len")?,
            vocab_size: get("vocab_size")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct LayerIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    qkv_w: ParamId,
    qkv_b: ParamId,
    o_w: ParamId,
    o_b: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
}

/// Parameter handles of one language model inside a (possibly shared) store.
#[derive(Debug, Clone)]
pub struct PlmIds {
    pub tok: ParamId,
    pub pos: ParamId,
    layers: Vec<LayerIds>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

const LAYER_PARAMS: [&str; 12] = [
    "ln1_g", "ln1_b", "qkv_w", "qkv_b", "o_w", "o_b", "ln2_g", "ln2_b", "ff1_w", "ff1_b", "ff2_w", "ff2_b",
];

impl PlmIds {
    pub fn init<T: Scalar>(store: &mut ParamStore<T>, cfg: &PlmConfig, prefix: &str, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let std = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        store.insert_uniform(format!("{prefix}tok"), vec![cfg.vocab_size, d], 0.1, rng)?;
        store.insert_uniform(format!("{prefix}pos"), vec![cfg.max_seq_len, d], 0.1, rng)?;
        for l in 0..cfg.n_layers {
            let p = format!("{prefix}layer{l}.");
            store.insert_filled(format!("{p}ln1_g"), vec![d], 1.0)?;
            store.insert_filled(format!("{p}ln1_b"), vec![d], 0.0)?;
            store.insert_normal(format!("{p}qkv_w"), vec![d, 3 * d], std(d), rng)?;
            store.insert_filled(format!("{p}qkv_b"), vec![3 * d], 0.0)?;
            store.insert_normal(format!("{p}o_w"), vec![d, d], std(d) / (2.0 * cfg.n_layers as f64).sqrt(), rng)?;
            store.insert_filled(format!("{p}o_b"), vec![d], 0.0)?;
            store.insert_filled(format!("{p}ln2_g"), vec![d], 1.0)?;
            store.insert_filled(format!("{p}ln2_b"), vec![d], 0.0)?;
            store.insert_normal(format!("{p}ff1_w"), vec![d, 4 * d], std(d), rng)?;
            store.insert_filled(format!("{p}ff1_b"), vec![4 * d], 0.0)?;
            store.insert_normal(
                format!("{p}ff2_w"),
                vec![4 * d, d],
                std(4 * d) / (2.0 * cfg.n_layers as f64).sqrt(),
                rng,
            )?;
            store.insert_filled(format!("{p}ff2_b"), vec![d], 0.0)?;
        }
        store.insert_filled(format!("{prefix}lnf_g"), vec![d], 1.0)?;
        store.insert_filled(format!("{prefix}lnf_b"), vec![d], 0.0)?;
        store.insert_normal(format!("{prefix}head_w"), vec![d, cfg.vocab_size], std(d), rng)?;
        store.insert_filled(format!("{prefix}head_b"), vec![cfg.vocab_size], 0.0)?;
        Self::lookup(store, cfg, prefix)
    }

    pub fn lookup<T: Scalar>(store: &ParamStore<T>, cfg: &PlmConfig, prefix: &str) -> Result<Self> {
        let id = |n: String| store.id(&n);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("{prefix}layer{l}.");
            let ids: Vec<ParamId> = LAYER_PARAMS
                .iter()
                .map(|n| id(format!("{p}{n}")))
                .collect::<Result<_, _>>()?;
            layers.push(LayerIds {
                ln1_g: ids[0],
                ln1_b: ids[1],
                qkv_w: ids[2],
                qkv_b: ids[3],
                o_w: ids[4],
                o_b: ids[5],
                ln2_g: ids[6],
                ln2_b: ids[7],
                ff1_w: ids[8],
                ff1_b: ids[9],
                ff2_w: ids[10],
                ff2_b: ids[11],
            });
        }
        let out = Self {
            tok: id(format!("{prefix}tok"))?,
            pos: id(format!("{prefix}pos"))?,
            layers,
            lnf_g: id(format!("{prefix}lnf_g"))?,
            lnf_b: id(format!("{prefix}lnf_b"))?,
            head_w: id(format!("{prefix}head_w"))?,
            head_b: id(format!("{prefix}head_b"))?,
        };
        let shape = store.get(out.tok).shape();
        if shape != [cfg.vocab_size, cfg.embed_dim] {
            return Err(ModelError::Config(format!("token table shape {shape:?} disagrees with config")));
        }
        Ok(out)
    }
}

/// Values recorded by one forward pass. `kv` holds, per layer, the keys and
/// values of every position seen so far (prefix rows included).
#[derive(Debug, Clone)]
pub struct PlmPass {
    pub logits: Var,
    pub hidden: Var,
    pub kv: Vec<(Var, Var)>,
    pub len: usize,
}

/// Runs `tokens` through the model. With `prefix = Some((pass, rows))` the
/// first `rows` positions of an earlier pass are reused as attention context
/// and `tokens` continue from position `rows`.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    ids: &PlmIds,
    cfg: &PlmConfig,
    tokens: &[usize],
    prefix: Option<(&PlmPass, usize)>,
) -> Result<PlmPass> {
    let offset = prefix.map_or(0, |(_, r)| r);
    let total = offset + tokens.len();
    if total > cfg.max_seq_len {
        return Err(ModelError::SequenceTooLong {
            len: total,
            max: cfg.max_seq_len,
        });
    }
    if let Some((p, r)) = prefix {
        if r > p.len {
            return Err(ModelError::SequenceTooLong { len: r, max: p.len });
        }
    }
    let d = cfg.embed_dim;
    let tok = tape.param(store, ids.tok);
    let pos = tape.param(store, ids.pos);
    let te = tape.embedding(tok, tokens)?;
    let positions: Vec<usize> = (offset..total).collect();
    let pe = tape.embedding(pos, &positions)?;
    let mut x = tape.add(te, pe)?;
    let mut kv = Vec::with_capacity(cfg.n_layers);
    for (li, l) in ids.layers.iter().enumerate() {
        let p = |tape: &mut Tape<T>, id| tape.param(store, id);
        let (g1, b1) = (p(tape, l.ln1_g), p(tape, l.ln1_b));
        let a = tape.layer_norm(x, g1, b1)?;
        let (qw, qb) = (p(tape, l.qkv_w), p(tape, l.qkv_b));
        let qkv = linear(tape, a, qw, qb)?;
        let q = tape.slice_cols(qkv, 0, d)?;
        let mut k = tape.slice_cols(qkv, d, 2 * d)?;
        let mut v = tape.slice_cols(qkv, 2 * d, 3 * d)?;
        if let Some((pp, r)) = prefix {
            if r > 0 {
                let (pk, pv) = pp.kv[li];
                let pk = tape.slice_rows(pk, 0, r)?;
                let pv = tape.slice_rows(pv, 0, r)?;
                k = tape.concat_rows(&[pk, k])?;
                v = tape.concat_rows(&[pv, v])?;
            }
        }
        let att = multi_head_attention(tape, q, k, v, cfg.n_heads, Some(offset))?;
        let (ow, ob) = (p(tape, l.o_w), p(tape, l.o_b));
        let o = linear(tape, att, ow, ob)?;
        x = tape.add(x, o)?;
        let (g2, b2) = (p(tape, l.ln2_g), p(tape, l.ln2_b));
        let m = tape.layer_norm(x, g2, b2)?;
        let (w1, bb1) = (p(tape, l.ff1_w), p(tape, l.ff1_b));
        let h = linear(tape, m, w1, bb1)?;
        let h = tape.gelu(h);
        let (w2, bb2) = (p(tape, l.ff2_w), p(tape, l.ff2_b));
        let f = linear(tape, h, w2, bb2)?;
        x = tape.add(x, f)?;
        kv.push((k, v));
    }
    let (gf, bf) = (tape.param(store, ids.lnf_g), tape.param(store, ids.lnf_b));
    let hidden = tape.layer_norm(x, gf, bf)?;
    let (hw, hb) = (tape.param(store, ids.head_w), tape.param(store, ids.head_b));
    let logits = linear(tape, hidden, hw, hb)?;
    Ok(PlmPass {
        logits,
        hidden,
        kv,
        len: total,
    })
}

/// Mean log-likelihood of `targets` under the rows of `logits`.
pub fn mean_log_likelihood<T: Scalar>(tape: &mut Tape<T>, logits: Var, targets: &[usize]) -> Result<Var> {
    let ce = tape.cross_entropy(logits, targets)?;
    Ok(tape.scale(ce, -1.0))
}

/// Mean over positions of `log P(x_i | x_<i)`, conditioning `x_1` on the
/// begin marker.
pub fn sequence_log_likelihood<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    ids: &PlmIds,
    cfg: &PlmConfig,
    seq: &[usize],
) -> Result<Var> {
    if seq.len() < 2 {
        return Err(ModelError::SequenceTooShort(seq.len()));
    }
    let mut input = Vec::with_capacity(seq.len());
    input.push(BOS_ID);
    input.extend_from_slice(&seq[..seq.len() - 1]);
    let pass = forward(tape, store, ids, cfg, &input, None)?;
    mean_log_likelihood(tape, pass.logits, seq)
}

/// Batch mean of per-sequence mean log-likelihoods.
pub fn plm_loss<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    ids: &PlmIds,
    cfg: &PlmConfig,
    batch: &[Vec<usize>],
) -> Result<Var> {
    if batch.is_empty() {
        return Err(ModelError::SequenceTooShort(0));
    }
    let mut total: Option<Var> = None;
    for seq in batch {
        let l = sequence_log_likelihood(tape, store, ids, cfg, seq)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    Ok(tape.scale(total.expect("nonempty"), 1.0 / batch.len() as f64))
}

/// A language model together with its own parameter store.
#[derive(Debug, Clone)]
pub struct Plm<T> {
    pub config: PlmConfig,
    pub store: ParamStore<T>,
    pub ids: PlmIds,
}

impl<T: Scalar> Plm<T> {
    pub fn new(config: PlmConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids = PlmIds::init(&mut store, &config, "", &mut rng)?;
        Ok(Self { config, store, ids })
    }

    /// Logits and hidden states for `tokens` (no begin marker is added).
    pub fn forward_values(&self, tokens: &[usize]) -> Result<(Array<T>, Array<T>)> {
        let mut tape = Tape::inference();
        let pass = forward(&mut tape, &self.store, &self.ids, &self.config, tokens, None)?;
        Ok((tape.value(pass.logits).clone(), tape.value(pass.hidden).clone()))
    }

    pub fn log_likelihood(&self, batch: &[Vec<usize>]) -> Result<f64> {
        let mut tape = Tape::inference();
        let l = plm_loss(&mut tape, &self.store, &self.ids, &self.config, batch)?;
        Ok(tape.scalar(l).as_f64())
    }

    /// Parameters moved to another precision.
    pub fn cast<U: Scalar>(&self) -> Plm<U> {
        Plm {
            config: self.config.clone(),
            store: self.store.cast(),
            ids: self.ids.clone(),
        }
    }
}

impl Plm<f32> {
    pub fn save(&self, path: &Path) -> Result<()> {
        curekit_nn::io::save_weights(path, &self.config.to_pairs(), &self.store)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = curekit_nn::io::load_weights(path)?;
        let config = PlmConfig::from_pairs(&file.0)?;
        let ids = PlmIds::lookup(&file.1, &config, "")?;
        Ok(Self {
            config,
            store: file.1,
            ids,
        })
    }

    /// Greedy continuation of `prefix` (begin marker added) until the end
    /// marker or `max_new` tokens.
    pub fn greedy(&self, prefix: &[usize], max_new: usize) -> Result<Vec<usize>> {
        let frozen = FrozenPlm::new(self);
        let mut cache = KvCache::empty(self.config.n_layers, self.config.embed_dim);
        let mut input = vec![BOS_ID];
        input.extend_from_slice(prefix);
        let mut out = prefix.to_vec();
        let hidden = frozen.prefill(&mut cache, &input)?;
        let d = self.config.embed_dim;
        let mut last = hidden[hidden.len() - d..].to_vec();
        for _ in 0..max_new {
            let logits = frozen.logits(&last, 1);
            let next = argmax(&logits);
            if next == EOS_ID {
                break;
            }
            out.push(next);
            if cache.len() >= self.config.max_seq_len {
                break;
            }
            last = frozen.extend_batch(std::slice::from_mut(&mut cache), &[next])?;
        }
        Ok(out)
    }
}

pub fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            epochs: 30,
            batch_size: 12,
            peak_lr: 2.5e-3,
            warmup_steps: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_log_likelihood: f64,
    pub val_log_likelihood: f64,
}

/// Resumable pre-training state. Cloning it is a checkpoint.
#[derive(Debug, Clone)]
pub struct PlmTrainer {
    pub plm: Plm<f32>,
    pub opt: OptimizerState,
    pub cfg: TrainConfig,
    pub epoch: usize,
    total_steps: u64,
}

impl PlmTrainer {
    pub fn new(plm: Plm<f32>, cfg: TrainConfig, n_train: usize) -> Self {
        let steps_per_epoch = n_train.div_ceil(cfg.batch_size.max(1)) as u64;
        Self {
            opt: OptimizerState::new(&plm.store),
            total_steps: steps_per_epoch * cfg.epochs as u64,
            plm,
            cfg,
            epoch: 0,
        }
    }

    pub fn step(&mut self, batch: &[Vec<usize>]) -> Result<f64> {
        let n = self.plm.store.len();
        let mut grads = Grads::new(n);
        let mut ll = 0.0;
        for seq in batch {
            let mut tape = Tape::new();
            let l = sequence_log_likelihood(&mut tape, &self.plm.store, &self.plm.ids, &self.plm.config, seq)?;
            ll += tape.scalar(l) as f64;
            let neg = tape.scale(l, -1.0);
            tape.backward(neg)?;
            grads.merge(&tape.param_grads(n));
        }
        grads.scale(1.0 / batch.len() as f32);
        let lr = lr_schedule(self.opt.step, self.cfg.warmup_steps, self.cfg.peak_lr, self.total_steps);
        adam_step(&mut self.plm.store, &grads, &mut self.opt, lr)?;
        Ok(ll / batch.len() as f64)
    }

    pub fn run_epoch(&mut self, train: &[Vec<usize>], val: &[Vec<usize>]) -> Result<EpochLog> {
        self.epoch += 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.cfg.seed ^ (self.epoch as u64).wrapping_mul(0x9e37_79b9)));
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.cfg.batch_size.max(1)) {
            let batch: Vec<Vec<usize>> = chunk.iter().map(|&i| train[i].clone()).collect();
            sum += self.step(&batch)?;
            batches += 1;
        }
        Ok(EpochLog {
            epoch: self.epoch,
            train_log_likelihood: sum / batches.max(1) as f64,
            val_log_likelihood: if val.is_empty() { f64::NAN } else { self.plm.log_likelihood(val)? },
        })
    }
}

/// Pre-trains a fresh model; the returned log starts with the untrained
/// validation score as epoch 0.
pub fn pretrain(
    train: &[Vec<usize>],
    val: &[Vec<usize>],
    config: PlmConfig,
    schedule: TrainConfig,
) -> Result<(Plm<f32>, Vec<EpochLog>)> {
    let plm = Plm::new(config, schedule.seed)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        train_log_likelihood: f64::NAN,
        val_log_likelihood: if val.is_empty() { f64::NAN } else { plm.log_likelihood(val)? },
    }];
    let mut trainer = PlmTrainer::new(plm, schedule.clone(), train.len());
    for _ in 0..schedule.epochs {
        log.push(trainer.run_epoch(train, val)?);
    }
    Ok((trainer.plm, log))
}

// ---- cached inference -------------------------------------------------------

struct FrozenLayer {
    ln1_g: Array<f32>,
    ln1_b: Array<f32>,
    qkv_w: Array<f32>,
    qkv_b: Array<f32>,
    o_w: Array<f32>,
    o_b: Array<f32>,
    ln2_g: Array<f32>,
    ln2_b: Array<f32>,
    ff1_w: Array<f32>,
    ff1_b: Array<f32>,
    ff2_w: Array<f32>,
    ff2_b: Array<f32>,
}

/// Weights copied out of a store for tape-free, cache-based decoding.
pub struct FrozenPlm {
    pub config: PlmConfig,
    tok: Array<f32>,
    pos: Array<f32>,
    layers: Vec<FrozenLayer>,
    lnf_g: Array<f32>,
    lnf_b: Array<f32>,
    head_w: Array<f32>,
    head_b: Array<f32>,
}

/// Keys and values per layer: a shared, immutable prefix plus rows owned by
/// this sequence. Cloning copies only the owned rows.
#[derive(Debug, Clone)]
pub struct KvCache {
    dim: usize,
    prefix: Arc<Vec<(Vec<f32>, Vec<f32>)>>,
    prefix_rows: usize,
    own: Vec<(Vec<f32>, Vec<f32>)>,
    own_rows: usize,
}

impl KvCache {
    pub fn empty(n_layers: usize, dim: usize) -> Self {
        Self {
            dim,
            prefix: Arc::new(vec![(Vec::new(), Vec::new()); n_layers]),
            prefix_rows: 0,
            own: vec![(Vec::new(), Vec::new()); n_layers],
            own_rows: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.prefix_rows + self.own_rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A cache sharing the first `rows` positions of `self`.
    pub fn share_prefix(&self, rows: usize) -> Self {
        let rows = rows.min(self.len());
        let layers = (0..self.own.len())
            .map(|l| {
                let mut k = Vec::with_capacity(rows * self.dim);
                let mut v = Vec::with_capacity(rows * self.dim);
                for r in 0..rows {
                    k.extend_from_slice(self.key(l, r));
                    v.extend_from_slice(self.value(l, r));
                }
                (k, v)
            })
            .collect();
        Self {
            dim: self.dim,
            prefix: Arc::new(layers),
            prefix_rows: rows,
            own: vec![(Vec::new(), Vec::new()); self.own.len()],
            own_rows: 0,
        }
    }

    fn key(&self, layer: usize, row: usize) -> &[f32] {
        let d = self.dim;
        if row < self.prefix_rows {
            &self.prefix[layer].0[row * d..(row + 1) * d]
        } else {
            let r = row - self.prefix_rows;
            &self.own[layer].0[r * d..(r + 1) * d]
        }
    }

    fn value(&self, layer: usize, row: usize) -> &[f32] {
        let d = self.dim;
        if row < self.prefix_rows {
            &self.prefix[layer].1[row * d..(row + 1) * d]
        } else {
            let r = row - self.prefix_rows;
            &self.own[layer].1[r * d..(r + 1) * d]
        }
    }
}

impl FrozenPlm {
    pub fn new(plm: &Plm<f32>) -> Self {
        Self::from_store(&plm.store, &plm.ids, &plm.config)
    }

    pub fn from_store(store: &ParamStore<f32>, ids: &PlmIds, config: &PlmConfig) -> Self {
        let g = |id: ParamId| store.get(id).clone();
        Self {
            config: config.clone(),
            tok: g(ids.tok),
            pos: g(ids.pos),
            layers: ids
                .layers
                .iter()
                .map(|l| FrozenLayer {
                    ln1_g: g(l.ln1_g),
                    ln1_b: g(l.ln1_b),
                    qkv_w: g(l.qkv_w),
                    qkv_b: g(l.qkv_b),
                    o_w: g(l.o_w),
                    o_b: g(l.o_b),
                    ln2_g: g(l.ln2_g),
                    ln2_b: g(l.ln2_b),
                    ff1_w: g(l.ff1_w),
                    ff1_b: g(l.ff1_b),
                    ff2_w: g(l.ff2_w),
                    ff2_b: g(l.ff2_b),
                })
                .collect(),
            lnf_g: g(ids.lnf_g),
            lnf_b: g(ids.lnf_b),
            head_w: g(ids.head_w),
            head_b: g(ids.head_b),
        }
    }

    /// Output-head logits for `rows` hidden-state rows.
    pub fn logits(&self, hidden: &[f32], rows: usize) -> Vec<f32> {
        dense::affine(hidden, rows, &self.head_w, &self.head_b)
    }

    pub fn head(&self) -> (&Array<f32>, &Array<f32>) {
        (&self.head_w, &self.head_b)
    }

    /// Appends `tokens` to one cache; returns their hidden states.
    pub fn prefill(&self, cache: &mut KvCache, tokens: &[usize]) -> Result<Vec<f32>> {
        let owners = vec![0; tokens.len()];
        self.run(std::slice::from_mut(cache), &owners, tokens)
    }

    /// Appends one token to each cache; returns one hidden row per cache.
    pub fn extend_batch(&self, caches: &mut [KvCache], tokens: &[usize]) -> Result<Vec<f32>> {
        let owners: Vec<usize> = (0..tokens.len()).collect();
        self.run(caches, &owners, tokens)
    }

    fn run(&self, caches: &mut [KvCache], owners: &[usize], tokens: &[usize]) -> Result<Vec<f32>> {
        let cfg = &self.config;
        let d = cfg.embed_dim;
        let n = tokens.len();
        let mut positions = Vec::with_capacity(n);
        let mut next: Vec<usize> = caches.iter().map(|c| c.len()).collect();
        for &o in owners {
            positions.push(next[o]);
            next[o] += 1;
        }
        if let Some(&m) = next.iter().max() {
            if m > cfg.max_seq_len {
                return Err(ModelError::SequenceTooLong {
                    len: m,
                    max: cfg.max_seq_len,
                });
            }
        }
        let mut x = Vec::with_capacity(n * d);
        for (&t, &p) in tokens.iter().zip(&positions) {
            let te = self.tok.row(t);
            let pe = self.pos.row(p);
            x.extend(te.iter().zip(pe).map(|(a, b)| a + b));
        }
        let hd = d / cfg.n_heads;
        let scale = 1.0 / (hd as f32).sqrt();
        for (li, l) in self.layers.iter().enumerate() {
            let a = dense::layer_norm(&x, &l.ln1_g, &l.ln1_b);
            let qkv = dense::affine(&a, n, &l.qkv_w, &l.qkv_b);
            for (r, &o) in owners.iter().enumerate() {
                let row = &qkv[r * 3 * d..(r + 1) * 3 * d];
                let c = &mut caches[o];
                c.own[li].0.extend_from_slice(&row[d..2 * d]);
                c.own[li].1.extend_from_slice(&row[2 * d..]);
            }
            let mut att = vec![0.0f32; n * d];
            for (r, (&o, &p)) in owners.iter().zip(&positions).enumerate() {
                let c = &caches[o];
                let q = &qkv[r * 3 * d..r * 3 * d + d];
                for h in 0..cfg.n_heads {
                    let cols = h * hd..(h + 1) * hd;
                    let keys: Vec<&[f32]> = (0..=p).map(|j| &c.key(li, j)[cols.clone()]).collect();
                    let vals: Vec<&[f32]> = (0..=p).map(|j| &c.value(li, j)[cols.clone()]).collect();
                    let out = dense::attend(&q[cols.clone()], &keys, &vals, scale);
                    att[r * d + h * hd..r * d + (h + 1) * hd].copy_from_slice(&out);
                }
            }
            let o = dense::affine(&att, n, &l.o_w, &l.o_b);
            dense::add_in_place(&mut x, &o);
            let m = dense::layer_norm(&x, &l.ln2_g, &l.ln2_b);
            let mut h = dense::affine(&m, n, &l.ff1_w, &l.ff1_b);
            dense::gelu_in_place(&mut h);
            let f = dense::affine(&h, n, &l.ff2_w, &l.ff2_b);
            dense::add_in_place(&mut x, &f);
        }
        for (o, c) in next.iter().zip(caches.iter_mut()) {
            c.own_rows = o - c.prefix_rows;
        }
        Ok(dense::layer_norm(&x, &self.lnf_g, &self.lnf_b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(vocab: usize) -> PlmConfig {
        PlmConfig {
            embed_dim: 8,
            n_layers: 2,
            n_heads: 2,
            max_seq_len: 32,
            vocab_size: vocab,
        }
    }

    #[test]
    fn shapes_and_config_checks() {
        let plm = Plm::<f32>::new(tiny(11), 1).unwrap();
        let (logits, hidden) = plm.forward_values(&[1, 4, 5, 6]).unwrap();
        assert_eq!(logits.shape(), &[4, 11]);
        assert_eq!(hidden.shape(), &[4, 8]);
        assert!(matches!(
            plm.forward_values(&[3; 33]),
            Err(ModelError::SequenceTooLong { len: 33, max: 32 })
        ));
        let mut bad = tiny(11);
        bad.n_heads = 3;
        assert!(Plm::<f32>::new(bad, 1).is_err());
    }

    #[test]
    fn uniform_logits_give_minus_ln_v() {
        let mut plm = Plm::<f64>::new(tiny(100), 2).unwrap();
        plm.store.get_mut(plm.ids.head_w).data_mut().iter_mut().for_each(|v| *v = 0.0);
        plm.store.get_mut(plm.ids.head_b).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let ll = plm.log_likelihood(&[vec![5, 6, 7], vec![9, 9, 9, 9, 9, 9]]).unwrap();
        assert!((ll + 100f64.ln()).abs() < 1e-9);
        assert!(matches!(plm.log_likelihood(&[vec![5]]), Err(ModelError::SequenceTooShort(1))));
    }

    #[test]
    fn cached_prefill_and_steps_match_tape_forward() {
        let plm = Plm::<f32>::new(tiny(13), 3).unwrap();
        let toks = [1, 4, 9, 2, 12, 7, 7, 3];
        let (_, hidden) = plm.forward_values(&toks).unwrap();
        let frozen = FrozenPlm::new(&plm);
        let mut cache = KvCache::empty(2, 8);
        let mut rows = frozen.prefill(&mut cache, &toks[..3]).unwrap();
        let mut branch = cache.share_prefix(3);
        for &t in &toks[3..] {
            rows.extend(frozen.extend_batch(std::slice::from_mut(&mut branch), &[t]).unwrap());
        }
        for (a, b) in rows.iter().zip(hidden.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }
}
