//! The repair network: a language model embedding the buggy method, one or
//! two convolutional encoders, and a convolutional decoder with attention.

use std::path::Path;

use curekit_nn::layers::{attention, conv1d, linear};
use curekit_nn::{adam_step, lr_schedule, Grads, OptimizerState, ParamId, ParamStore, Scalar, Tape, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PatchExample;
use crate::plm::{self, ModelError, Plm, PlmConfig, PlmIds, Result, BOS_ID, EOS_ID};

const HALF_SQRT: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Separate encoders for the buggy lines and the whole method.
    Conut,
    /// One encoder over `context <SEP> buggy lines`.
    Fconv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AprHyperparams {
    pub variant: Variant,
    pub conv_dim: usize,
    pub kernel_size: usize,
    pub n_conv_layers: usize,
    pub dropout: f64,
    pub lambda: f64,
}

impl AprHyperparams {
    pub fn desk(variant: Variant) -> Self {
        Self {
            variant,
            conv_dim: 64,
            kernel_size: 3,
            n_conv_layers: 2,
            dropout: 0.3,
            lambda: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_dim == 0 || self.kernel_size == 0 || self.n_conv_layers == 0 {
            return Err(ModelError::Config("conv sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(ModelError::Config(format!(
                "dropout {} / lambda {} out of range",
                self.dropout, self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AprConfig {
    pub hp: AprHyperparams,
    pub plm: PlmConfig,
    /// Embed with the language model; otherwise plain token + position
    /// tables and a separate generator.
    pub use_plm: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct ConvStack {
    pub(crate) in_w: ParamId,
    pub(crate) in_b: ParamId,
    pub(crate) convs: Vec<(ParamId, ParamId)>,
    pub(crate) out_w: ParamId,
    pub(crate) out_b: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct DecLayer {
    pub(crate) conv_w: ParamId,
    pub(crate) conv_b: ParamId,
    pub(crate) att_in_w: ParamId,
    pub(crate) att_in_b: ParamId,
    pub(crate) att_out_w: ParamId,
    pub(crate) att_out_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct NmtIds {
    pub(crate) emb: Option<(ParamId, ParamId)>,
    pub(crate) enc_bug: Option<ConvStack>,
    pub(crate) enc_ctx: ConvStack,
    pub(crate) merge: Option<(ParamId, ParamId)>,
    pub(crate) sep: Option<ParamId>,
    pub(crate) dec_in: (ParamId, ParamId),
    pub(crate) dec_layers: Vec<DecLayer>,
    pub(crate) dec_out: (ParamId, ParamId),
    pub(crate) gen: Option<(ParamId, ParamId)>,
}

/// Registers (with `rng`) or looks up (without) every translation parameter.
struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<T: Scalar> Builder<'_, T> {
    fn normal(&mut self, name: String, shape: Vec<usize>, std: f64) -> Result<ParamId> {
        Ok(match self.rng.as_deref_mut() {
            Some(rng) => self.store.insert_normal(name, shape, std, rng)?,
            None => self.store.id(&name)?,
        })
    }

    fn uniform(&mut self, name: String, shape: Vec<usize>) -> Result<ParamId> {
        Ok(match self.rng.as_deref_mut() {
            Some(rng) => self.store.insert_uniform(name, shape, 0.1, rng)?,
            None => self.store.id(&name)?,
        })
    }

    fn zeros(&mut self, name: String, shape: Vec<usize>) -> Result<ParamId> {
        Ok(match self.rng {
            Some(_) => self.store.insert_filled(name, shape, 0.0)?,
            None => self.store.id(&name)?,
        })
    }

    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<(ParamId, ParamId)> {
        let w = self.normal(format!("{name}_w"), vec![fan_in, fan_out], 1.0 / (fan_in as f64).sqrt())?;
        let b = self.zeros(format!("{name}_b"), vec![fan_out])?;
        Ok((w, b))
    }

    fn conv_stack(&mut self, name: &str, d: usize, hp: &AprHyperparams) -> Result<ConvStack> {
        let c = hp.conv_dim;
        let (in_w, in_b) = self.dense(&format!("{name}.in"), d, c)?;
        let convs = (0..hp.n_conv_layers)
            .map(|l| self.dense(&format!("{name}.conv{l}"), hp.kernel_size * c, 2 * c))
            .collect::<Result<_>>()?;
        let (out_w, out_b) = self.dense(&format!("{name}.out"), c, d)?;
        Ok(ConvStack {
            in_w,
            in_b,
            convs,
            out_w,
            out_b,
        })
    }

    fn build(&mut self, cfg: &AprConfig) -> Result<NmtIds> {
        let d = cfg.plm.embed_dim;
        let v = cfg.plm.vocab_size;
        let hp = &cfg.hp;
        let c = hp.conv_dim;
        let emb = if cfg.use_plm {
            None
        } else {
            Some((
                self.uniform("nmt.emb_tok".into(), vec![v, d])?,
                self.uniform("nmt.emb_pos".into(), vec![cfg.plm.max_seq_len, d])?,
            ))
        };
        let (enc_bug, merge, sep) = match hp.variant {
            Variant::Conut => (
                Some(self.conv_stack("nmt.enc_bug", d, hp)?),
                Some(self.dense("nmt.merge", 2 * d, d)?),
                None,
            ),
            Variant::Fconv => (None, None, Some(self.uniform("nmt.sep".into(), vec![1, d])?)),
        };
        let enc_ctx = self.conv_stack("nmt.enc_ctx", d, hp)?;
        let dec_in = self.dense("nmt.dec.in", d, c)?;
        let mut dec_layers = Vec::with_capacity(hp.n_conv_layers);
        for l in 0..hp.n_conv_layers {
            let (conv_w, conv_b) = self.dense(&format!("nmt.dec.conv{l}"), hp.kernel_size * c, 2 * c)?;
            let (att_in_w, att_in_b) = self.dense(&format!("nmt.dec.att_in{l}"), c, d)?;
            let (att_out_w, att_out_b) = self.dense(&format!("nmt.dec.att_out{l}"), d, c)?;
            dec_layers.push(DecLayer {
                conv_w,
                conv_b,
                att_in_w,
                att_in_b,
                att_out_w,
                att_out_b,
            });
        }
        let dec_out = self.dense("nmt.dec.out", c, d)?;
        let gen = if cfg.use_plm { None } else { Some(self.dense("nmt.gen", d, v)?) };
        Ok(NmtIds {
            emb,
            enc_bug,
            enc_ctx,
            merge,
            sep,
            dec_in,
            dec_layers,
            dec_out,
            gen,
        })
    }
}

/// Intermediate values of one teacher-forced pass.
pub struct AprPass {
    /// Decoder logits, one row per decoder input (`y0` first).
    pub logits: Var,
    /// `L_GPT(y')` when the language model is in use and targets were given.
    pub lm_log_likelihood: Option<Var>,
}

struct Embedded {
    /// `[BOS] + x`, one row per position.
    full: Var,
    full_logits: Option<Var>,
    lm_pass: Option<plm::PlmPass>,
}

/// Buffers that carry training-time randomness.
pub struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut ChaCha8Rng,
}

fn maybe_dropout<T: Scalar>(tape: &mut Tape<T>, x: Var, drop: &mut Option<Dropout<'_>>) -> Result<Var> {
    match drop {
        Some(d) if d.p > 0.0 => Ok(tape.dropout(x, d.p, d.rng)?),
        _ => Ok(x),
    }
}

#[derive(Debug, Clone)]
pub struct AprModel<T> {
    pub config: AprConfig,
    pub store: ParamStore<T>,
    pub plm_ids: Option<PlmIds>,
    pub nmt: NmtIds,
}

impl<T: Scalar> AprModel<T> {
    /// Fresh translation weights on top of `plm` (copied) when given.
    pub fn new(config: AprConfig, plm: Option<&Plm<f32>>, seed: u64) -> Result<Self> {
        config.hp.validate()?;
        config.plm.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plm_ids = match (config.use_plm, plm) {
            (true, Some(p)) => {
                if p.config != config.plm {
                    return Err(ModelError::Config("language model config differs".into()));
                }
                for id in p.store.ids() {
                    store.insert(format!("plm.{}", p.store.name(id)), p.store.get(id).cast())?;
                }
                Some(PlmIds::lookup(&store, &config.plm, "plm.")?)
            }
            (true, None) => Some(PlmIds::init(&mut store, &config.plm, "plm.", &mut rng)?),
            (false, _) => None,
        };
        let nmt = Builder {
            store: &mut store,
            rng: Some(&mut rng),
        }
        .build(&config)?;
        Ok(Self {
            config,
            store,
            plm_ids,
            nmt,
        })
    }

    pub fn cast<U: Scalar>(&self) -> AprModel<U> {
        AprModel {
            config: self.config.clone(),
            store: self.store.cast(),
            plm_ids: self.plm_ids.clone(),
            nmt: self.nmt.clone(),
        }
    }

    fn embed(
        &self,
        tape: &mut Tape<T>,
        context: &[usize],
        span: (usize, usize),
        dec_tokens: &[usize],
    ) -> Result<Embedded> {
        let mut input = Vec::with_capacity(context.len() + 1);
        input.push(BOS_ID);
        input.extend_from_slice(context);
        let p = &self.config.plm;
        match &self.plm_ids {
            Some(ids) => {
                let xp = plm::forward(tape, &self.store, ids, p, &input, None)?;
                let lm_pass = if dec_tokens.is_empty() {
                    None
                } else {
                    Some(plm::forward(tape, &self.store, ids, p, dec_tokens, Some((&xp, span.0)))?)
                };
                Ok(Embedded {
                    full: xp.hidden,
                    full_logits: Some(xp.logits),
                    lm_pass,
                })
            }
            None => {
                if input.len() > p.max_seq_len {
                    return Err(ModelError::SequenceTooLong {
                        len: input.len(),
                        max: p.max_seq_len,
                    });
                }
                let (tok, pos) = self.nmt.emb.expect("plain embedder");
                let (tok, pos) = (tape.param(&self.store, tok), tape.param(&self.store, pos));
                let te = tape.embedding(tok, &input)?;
                let positions: Vec<usize> = (0..input.len()).collect();
                let pe = tape.embedding(pos, &positions)?;
                Ok(Embedded {
                    full: tape.add(te, pe)?,
                    full_logits: None,
                    lm_pass: None,
                })
            }
        }
    }

    /// Decoder input rows for `[y0] + dec_tokens` given the embedded method.
    fn decoder_inputs(&self, tape: &mut Tape<T>, emb: &Embedded, span: (usize, usize), dec_tokens: &[usize]) -> Result<Var> {
        let b1 = span.0;
        match &self.plm_ids {
            Some(_) => {
                let y0 = tape.slice_rows(emb.full, b1 - 1, b1)?;
                match &emb.lm_pass {
                    Some(lp) => Ok(tape.concat_rows(&[y0, lp.hidden])?),
                    None => Ok(y0),
                }
            }
            None => {
                let total = b1 + dec_tokens.len();
                if total > self.config.plm.max_seq_len {
                    return Err(ModelError::SequenceTooLong {
                        len: total,
                        max: self.config.plm.max_seq_len,
                    });
                }
                let (tok, pos) = self.nmt.emb.expect("plain embedder");
                let (tok, pos) = (tape.param(&self.store, tok), tape.param(&self.store, pos));
                let y0 = tape.slice_rows(emb.full, b1 - 1, b1)?;
                if dec_tokens.is_empty() {
                    return Ok(y0);
                }
                let te = tape.embedding(tok, dec_tokens)?;
                let positions: Vec<usize> = (b1..total).collect();
                let pe = tape.embedding(pos, &positions)?;
                let rest = tape.add(te, pe)?;
                Ok(tape.concat_rows(&[y0, rest])?)
            }
        }
    }

    fn conv_stack(&self, tape: &mut Tape<T>, s: &ConvStack, e: Var, drop: &mut Option<Dropout<'_>>) -> Result<(Var, Var)> {
        let k = self.config.hp.kernel_size;
        let p = |tape: &mut Tape<T>, id| tape.param(&self.store, id);
        let ed = maybe_dropout(tape, e, drop)?;
        let (w, b) = (p(tape, s.in_w), p(tape, s.in_b));
        let mut h = linear(tape, ed, w, b)?;
        for &(cw, cb) in &s.convs {
            let (w, b) = (p(tape, cw), p(tape, cb));
            let c = conv1d(tape, h, w, b, k, (k - 1) / 2, k / 2)?;
            let c = tape.glu(c)?;
            let c = maybe_dropout(tape, c, drop)?;
            let sum = tape.add(h, c)?;
            h = tape.scale(sum, HALF_SQRT);
        }
        let (w, b) = (p(tape, s.out_w), p(tape, s.out_b));
        let z = linear(tape, h, w, b)?;
        let ze = tape.add(z, e)?;
        let values = tape.scale(ze, HALF_SQRT);
        Ok((z, values))
    }

    /// Attention keys and values over the encoded method.
    pub(crate) fn encode(&self, tape: &mut Tape<T>, full: Var, span: (usize, usize), drop: &mut Option<Dropout<'_>>) -> Result<(Var, Var)> {
        let rows = tape.shape(full)[0];
        let ctx = tape.slice_rows(full, 1, rows)?;
        let bug = tape.slice_rows(full, span.0, span.1 + 1)?;
        match self.config.hp.variant {
            Variant::Conut => {
                let (zc, vc) = self.conv_stack(tape, &self.nmt.enc_ctx, ctx, drop)?;
                let (zb, vb) = self.conv_stack(tape, self.nmt.enc_bug.as_ref().expect("dual"), bug, drop)?;
                let c_n = rows - 1;
                let zb = tape.pad_rows(zb, span.0 - 1, c_n - span.1);
                let vb = tape.pad_rows(vb, span.0 - 1, c_n - span.1);
                let (mw, mb) = self.nmt.merge.expect("dual");
                let (mw, mb) = (tape.param(&self.store, mw), tape.param(&self.store, mb));
                let kcat = tape.concat_cols(&[zc, zb])?;
                let vcat = tape.concat_cols(&[vc, vb])?;
                Ok((linear(tape, kcat, mw, mb)?, linear(tape, vcat, mw, mb)?))
            }
            Variant::Fconv => {
                let sep = tape.param(&self.store, self.nmt.sep.expect("single"));
                let stream = tape.concat_rows(&[ctx, sep, bug])?;
                self.conv_stack(tape, &self.nmt.enc_ctx, stream, drop)
            }
        }
    }

    fn decode(&self, tape: &mut Tape<T>, g: Var, keys: Var, values: Var, drop: &mut Option<Dropout<'_>>) -> Result<Var> {
        let k = self.config.hp.kernel_size;
        let p = |tape: &mut Tape<T>, id| tape.param(&self.store, id);
        let gd = maybe_dropout(tape, g, drop)?;
        let (w, b) = (p(tape, self.nmt.dec_in.0), p(tape, self.nmt.dec_in.1));
        let mut h = linear(tape, gd, w, b)?;
        for l in &self.nmt.dec_layers {
            let (w, b) = (p(tape, l.conv_w), p(tape, l.conv_b));
            let c = conv1d(tape, h, w, b, k, k - 1, 0)?;
            let c = tape.glu(c)?;
            let c = maybe_dropout(tape, c, drop)?;
            let (w, b) = (p(tape, l.att_in_w), p(tape, l.att_in_b));
            let q = linear(tape, c, w, b)?;
            let q = tape.add(q, g)?;
            let q = tape.scale(q, HALF_SQRT);
            let a = attention(tape, q, keys, values, None)?;
            let (w, b) = (p(tape, l.att_out_w), p(tape, l.att_out_b));
            let a = linear(tape, a, w, b)?;
            let ca = tape.add(c, a)?;
            let ca = tape.scale(ca, HALF_SQRT);
            let hs = tape.add(h, ca)?;
            h = tape.scale(hs, HALF_SQRT);
        }
        let (w, b) = (p(tape, self.nmt.dec_out.0), p(tape, self.nmt.dec_out.1));
        let out = linear(tape, h, w, b)?;
        let gen_in = tape.add(out, g)?;
        let (gw, gb) = match (&self.plm_ids, self.nmt.gen) {
            (Some(ids), _) => (ids.head_w, ids.head_b),
            (None, Some(gen)) => gen,
            (None, None) => unreachable!("generator exists without a language model"),
        };
        let (gw, gb) = (p(tape, gw), p(tape, gb));
        Ok(linear(tape, gen_in, gw, gb)?)
    }

    /// Teacher-forced pass with decoder inputs `[y0] + dec_tokens`.
    pub fn pass(
        &self,
        tape: &mut Tape<T>,
        context: &[usize],
        span: (usize, usize),
        dec_tokens: &[usize],
        mut drop: Option<Dropout<'_>>,
    ) -> Result<AprPass> {
        check_span(span, context.len())?;
        let emb = self.embed(tape, context, span, dec_tokens)?;
        let g = self.decoder_inputs(tape, &emb, span, dec_tokens)?;
        let (keys, values) = self.encode(tape, emb.full, span, &mut drop)?;
        let logits = self.decode(tape, g, keys, values, &mut drop)?;
        let lm_log_likelihood = match (&emb.lm_pass, emb.full_logits) {
            (Some(lp), Some(xl)) => {
                let b1 = span.0;
                let prefix = tape.slice_rows(xl, 0, b1)?;
                let rows = if dec_tokens.len() > 1 {
                    let rest = tape.slice_rows(lp.logits, 0, dec_tokens.len() - 1)?;
                    tape.concat_rows(&[prefix, rest])?
                } else {
                    prefix
                };
                let mut targets = context[..b1 - 1].to_vec();
                targets.extend_from_slice(dec_tokens);
                Some(plm::mean_log_likelihood(tape, rows, &targets)?)
            }
            _ => None,
        };
        Ok(AprPass {
            logits,
            lm_log_likelihood,
        })
    }

    /// `L_NMT`: mean log-probability of `fix + <EOS>` under teacher forcing.
    pub fn nmt_loss(&self, tape: &mut Tape<T>, ex: &PatchExample, drop: Option<Dropout<'_>>) -> Result<(Var, AprPass)> {
        let pass = self.pass(tape, &ex.context_ids, ex.buggy_span, &ex.fix_ids, drop)?;
        let mut targets = ex.fix_ids.clone();
        targets.push(EOS_ID);
        let l = plm::mean_log_likelihood(tape, pass.logits, &targets)?;
        Ok((l, pass))
    }

    /// `L_APR = L_NMT + lambda * L_GPT(y')`; lambda is ignored without a
    /// language model.
    pub fn apr_loss(&self, tape: &mut Tape<T>, ex: &PatchExample, lambda: f64, drop: Option<Dropout<'_>>) -> Result<Var> {
        let (nmt, pass) = self.nmt_loss(tape, ex, drop)?;
        match pass.lm_log_likelihood {
            Some(lm) if lambda != 0.0 => {
                let scaled = tape.scale(lm, lambda);
                Ok(tape.add(nmt, scaled)?)
            }
            _ => Ok(nmt),
        }
    }

    /// Next-token log-probabilities after `partial_fix`, which starts with
    /// `y0` (the context token before the buggy span).
    pub fn apr_step(&self, ex: &PatchExample, partial_fix: &[usize]) -> Result<Vec<f64>> {
        check_span(ex.buggy_span, ex.c_n())?;
        let y0 = if ex.buggy_span.0 == 1 { BOS_ID } else { ex.context_ids[ex.buggy_span.0 - 2] };
        if partial_fix.first() != Some(&y0) {
            return Err(ModelError::Config("partial fix must start with y0".into()));
        }
        let mut tape = Tape::inference();
        let pass = self.pass(&mut tape, &ex.context_ids, ex.buggy_span, &partial_fix[1..], None)?;
        let lp = tape.log_softmax(pass.logits);
        let v = tape.value(lp);
        Ok(v.row(v.rows() - 1).iter().map(|x| x.as_f64()).collect())
    }

    pub fn nmt_log_likelihood(&self, ex: &PatchExample) -> Result<f64> {
        let mut tape = Tape::inference();
        let (l, _) = self.nmt_loss(&mut tape, ex, None)?;
        Ok(tape.scalar(l).as_f64())
    }

    pub fn apr_log_likelihood(&self, ex: &PatchExample, lambda: f64) -> Result<f64> {
        let mut tape = Tape::inference();
        let l = self.apr_loss(&mut tape, ex, lambda, None)?;
        Ok(tape.scalar(l).as_f64())
    }

    /// Parameter ids of the language model and translation parts.
    pub fn param_groups(&self) -> (Vec<ParamId>, Vec<ParamId>) {
        self.store
            .ids()
            .partition(|&id| self.store.name(id).starts_with("plm."))
    }

    /// Zeroes the decoder's attention output projections.
    pub fn zero_attention(&mut self) {
        for l in &self.nmt.dec_layers {
            for id in [l.att_out_w, l.att_out_b] {
                self.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

}

fn check_span(span: (usize, usize), c_n: usize) -> Result<()> {
    if span.0 == 0 || span.1 < span.0 || span.1 > c_n {
        return Err(ModelError::SpanMismatch { span, len: c_n });
    }
    Ok(())
}

impl AprModel<f32> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let cfg = serde_json::to_string(&self.config).expect("config serializes");
        curekit_nn::io::save_weights(path, &[("apr_config".into(), cfg)], &self.store)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (pairs, mut store) = curekit_nn::io::load_weights(path)?;
        let cfg = pairs
            .iter()
            .find(|(k, _)| k == "apr_config")
            .and_then(|(_, v)| serde_json::from_str::<AprConfig>(v).ok())
            .ok_or_else(|| ModelError::Config("missing apr_config header".into()))?;
        let plm_ids = if cfg.use_plm { Some(PlmIds::lookup(&store, &cfg.plm, "plm.")?) } else { None };
        let nmt = Builder {
            store: &mut store,
            rng: None,
        }
        .build(&cfg)?;
        Ok(Self {
            config: cfg,
            store,
            plm_ids,
            nmt,
        })
    }
}

// ---- fine-tuning ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub seed: u64,
}

impl FinetuneConfig {
    pub fn desk() -> Self {
        Self {
            epochs: 10,
            batch_size: 6,
            peak_lr: 1e-3,
            warmup_steps: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneLog {
    pub epoch: usize,
    pub train_apr: f64,
    pub val_nmt: f64,
    pub val_perplexity: f64,
}

/// Resumable fine-tuning state; both the language-model and translation
/// parameters are updated.
#[derive(Debug, Clone)]
pub struct AprTrainer {
    pub model: AprModel<f32>,
    pub opt: OptimizerState,
    pub cfg: FinetuneConfig,
    pub epoch: usize,
    total_steps: u64,
}

impl AprTrainer {
    pub fn new(model: AprModel<f32>, cfg: FinetuneConfig, n_train: usize) -> Self {
        let steps = n_train.div_ceil(cfg.batch_size.max(1)) as u64 * cfg.epochs as u64;
        Self {
            opt: OptimizerState::new(&model.store),
            model,
            cfg,
            epoch: 0,
            total_steps: steps,
        }
    }

    /// One optimizer step on `batch`; returns the mean `L_APR`.
    pub fn step(&mut self, batch: &[&PatchExample]) -> Result<f64> {
        let n = self.model.store.len();
        let lambda = self.model.config.hp.lambda;
        let p = self.model.config.hp.dropout;
        let mut grads = Grads::new(n);
        let mut total = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_add(self.opt.step.wrapping_mul(0x2545_f491)));
        for ex in batch {
            let mut tape = Tape::new();
            let drop = Some(Dropout { p, rng: &mut rng });
            let l = self.model.apr_loss(&mut tape, ex, lambda, drop)?;
            total += tape.scalar(l) as f64;
            let neg = tape.scale(l, -1.0);
            tape.backward(neg)?;
            grads.merge(&tape.param_grads(n));
        }
        grads.scale(1.0 / batch.len() as f32);
        let lr = lr_schedule(self.opt.step, self.cfg.warmup_steps, self.cfg.peak_lr, self.total_steps);
        adam_step(&mut self.model.store, &grads, &mut self.opt, lr)?;
        Ok(total / batch.len() as f64)
    }

    pub fn run_epoch(&mut self, train: &[PatchExample], val: &[PatchExample]) -> Result<FinetuneLog> {
        self.epoch += 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.cfg.seed ^ (self.epoch as u64).wrapping_mul(0x9e37_79b9)));
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.cfg.batch_size.max(1)) {
            let batch: Vec<&PatchExample> = chunk.iter().map(|&i| &train[i]).collect();
            sum += self.step(&batch)?;
            steps += 1;
        }
        let val_nmt = mean_nmt(&self.model, val)?;
        Ok(FinetuneLog {
            epoch: self.epoch,
            train_apr: sum / steps.max(1) as f64,
            val_nmt,
            val_perplexity: (-val_nmt).exp(),
        })
    }
}

pub fn mean_nmt(model: &AprModel<f32>, data: &[PatchExample]) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let mut s = 0.0;
    for ex in data {
        s += model.nmt_log_likelihood(ex)?;
    }
    Ok(s / data.len() as f64)
}

pub fn finetune(
    model: AprModel<f32>,
    train: &[PatchExample],
    val: &[PatchExample],
    cfg: FinetuneConfig,
) -> Result<(AprModel<f32>, Vec<FinetuneLog>)> {
    let mut t = AprTrainer::new(model, cfg.clone(), train.len());
    let mut logs = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        logs.push(t.run_epoch(train, val)?);
    }
    Ok((t.model, logs))
}

// ---- hyperparameter search ------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub conv_dim: (usize, usize),
    pub kernel_size: (usize, usize),
    pub n_conv_layers: (usize, usize),
    pub dropout: (f64, f64),
    pub lambda: f64,
}

impl SearchSpace {
    pub fn full_scale() -> Self {
        Self {
            conv_dim: (128, 512),
            kernel_size: (2, 10),
            n_conv_layers: (1, 5),
            dropout: (0.0, 0.5),
            lambda: 0.3,
        }
    }

    pub fn desk() -> Self {
        Self {
            conv_dim: (32, 128),
            kernel_size: (2, 6),
            n_conv_layers: (1, 3),
            dropout: (0.0, 0.3),
            lambda: 0.3,
        }
    }

    pub fn sample(&self, variant: Variant, rng: &mut impl Rng) -> AprHyperparams {
        AprHyperparams {
            variant,
            conv_dim: rng.gen_range(self.conv_dim.0..=self.conv_dim.1),
            kernel_size: rng.gen_range(self.kernel_size.0..=self.kernel_size.1),
            n_conv_layers: rng.gen_range(self.n_conv_layers.0..=self.n_conv_layers.1),
            dropout: rng.gen_range(self.dropout.0..=self.dropout.1),
            lambda: self.lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub config: AprHyperparams,
    pub val_perplexity: f64,
}

/// Samples `n_trials` configurations (variants alternate), trains each for
/// `trial_budget` epochs, and keeps the `k / 2` lowest-perplexity configs of
/// each variant. Trials are independent and run on the rayon pool.
#[allow(clippy::too_many_arguments)]
pub fn random_search(
    space: &SearchSpace,
    n_trials: usize,
    trial_budget: FinetuneConfig,
    k: usize,
    seed: u64,
    base: &AprConfig,
    plm: Option<&Plm<f32>>,
    train: &[PatchExample],
    val: &[PatchExample],
) -> Result<(Vec<AprHyperparams>, Vec<TrialRecord>)> {
    use rayon::prelude::*;
    if n_trials < k {
        return Err(ModelError::Config(format!("{n_trials} trials cannot yield {k} configs")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs: Vec<AprHyperparams> = (0..n_trials)
        .map(|i| {
            let v = if i % 2 == 0 { Variant::Conut } else { Variant::Fconv };
            space.sample(v, &mut rng)
        })
        .collect();
    let records = configs
        .par_iter()
        .enumerate()
        .map(|(i, hp)| {
            let cfg = AprConfig {
                hp: hp.clone(),
                ..base.clone()
            };
            let model = AprModel::new(cfg, plm, seed.wrapping_add(i as u64 + 1))?;
            let budget = FinetuneConfig {
                seed: seed.wrapping_add(i as u64),
                ..trial_budget.clone()
            };
            let (model, _) = finetune(model, train, val, budget)?;
            let ppl = (-mean_nmt(&model, val)?).exp();
            Ok(TrialRecord {
                trial: i,
                config: hp.clone(),
                val_perplexity: if ppl.is_finite() { ppl } else { f64::INFINITY },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut top = Vec::new();
    for v in [Variant::Conut, Variant::Fconv] {
        let mut of: Vec<&TrialRecord> = records.iter().filter(|r| r.config.variant == v).collect();
        of.sort_by(|a, b| a.val_perplexity.total_cmp(&b.val_perplexity).then(a.trial.cmp(&b.trial)));
        let want = if v == Variant::Conut { k.div_ceil(2) } else { k / 2 };
        top.extend(of.iter().take(want).map(|r| r.config.clone()));
    }
    Ok((top, records))
}

pub fn write_trial_log(records: &[TrialRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

// ---- cached inference -------------------------------------------------------------

pub use crate::infer::{AprScorer, DecodeState};
