//! Incremental decoding for a trained repair model: the method is embedded
//! and encoded once, then each hypothesis carries only its language-model
//! cache suffix and the last `kernel - 1` inputs of every decoder layer.

use curekit_nn::{Array, ParamId, Tape};

use crate::apr::AprModel;
use crate::dense;
use crate::plm::{FrozenPlm, KvCache, ModelError, Result, BOS_ID};

struct FrozenDecLayer {
    conv_w: Array<f32>,
    conv_b: Array<f32>,
    att_in_w: Array<f32>,
    att_in_b: Array<f32>,
    att_out_w: Array<f32>,
    att_out_b: Array<f32>,
}

/// Per-hypothesis decoder state.
#[derive(Debug, Clone)]
pub struct DecodeState {
    kv: Option<KvCache>,
    /// Per layer, the most recent layer inputs (oldest first).
    history: Vec<Vec<Vec<f32>>>,
    /// Position of the next decoder input in method coordinates.
    next_pos: usize,
}

/// Frozen weights plus per-bug encoder outputs.
pub struct AprScorer {
    plm: Option<FrozenPlm>,
    plain: Option<(Array<f32>, Array<f32>)>,
    dec_in: (Array<f32>, Array<f32>),
    layers: Vec<FrozenDecLayer>,
    dec_out: (Array<f32>, Array<f32>),
    gen: (Array<f32>, Array<f32>),
    keys: Array<f32>,
    values: Array<f32>,
    base_kv: Option<KvCache>,
    y0_embedding: Vec<f32>,
    b1: usize,
    kernel: usize,
    conv_dim: usize,
    embed_dim: usize,
    vocab: usize,
    max_seq_len: usize,
}

impl AprScorer {
    pub fn new(model: &AprModel<f32>, context: &[usize], span: (usize, usize)) -> Result<Self> {
        if span.0 == 0 || span.1 < span.0 || span.1 > context.len() {
            return Err(ModelError::SpanMismatch { span, len: context.len() });
        }
        let cfg = &model.config;
        let d = cfg.plm.embed_dim;
        let get = |id: ParamId| model.store.get(id).clone();
        let pair = |p: (ParamId, ParamId)| (get(p.0), get(p.1));
        let mut input = vec![BOS_ID];
        input.extend_from_slice(context);
        if input.len() > cfg.plm.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: input.len(),
                max: cfg.plm.max_seq_len,
            });
        }
        let nmt = &model.nmt;
        let (plm, base_kv, full, gen, plain) = match &model.plm_ids {
            Some(ids) => {
                let frozen = FrozenPlm::from_store(&model.store, ids, &cfg.plm);
                let mut cache = KvCache::empty(cfg.plm.n_layers, d);
                let full = frozen.prefill(&mut cache, &input)?;
                let base = cache.share_prefix(span.0);
                let gen = (get(ids.head_w), get(ids.head_b));
                (Some(frozen), Some(base), full, gen, None)
            }
            None => {
                let (tok, pos) = pair(nmt.emb.expect("plain embedder"));
                let mut full = Vec::with_capacity(input.len() * d);
                for (p, &t) in input.iter().enumerate() {
                    full.extend(tok.row(t).iter().zip(pos.row(p)).map(|(a, b)| a + b));
                }
                let gen = pair(nmt.gen.expect("generator"));
                (None, None, full, gen, Some((tok, pos)))
            }
        };
        let y0_embedding = full[(span.0 - 1) * d..span.0 * d].to_vec();
        let mut tape = Tape::<f32>::inference();
        let full_var = tape.constant(Array::matrix(input.len(), d, full)?);
        let (k, v) = model.encode(&mut tape, full_var, span, &mut None)?;
        let (k, v) = (tape.value(k).clone(), tape.value(v).clone());
        Ok(Self {
            plm,
            plain,
            dec_in: pair(nmt.dec_in),
            layers: nmt
                .dec_layers
                .iter()
                .map(|l| FrozenDecLayer {
                    conv_w: get(l.conv_w),
                    conv_b: get(l.conv_b),
                    att_in_w: get(l.att_in_w),
                    att_in_b: get(l.att_in_b),
                    att_out_w: get(l.att_out_w),
                    att_out_b: get(l.att_out_b),
                })
                .collect(),
            dec_out: pair(nmt.dec_out),
            gen,
            keys: k,
            values: v,
            base_kv,
            y0_embedding,
            b1: span.0,
            kernel: cfg.hp.kernel_size,
            conv_dim: cfg.hp.conv_dim,
            embed_dim: d,
            vocab: cfg.plm.vocab_size,
            max_seq_len: cfg.plm.max_seq_len,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    /// Most fix tokens that fit the position tables.
    pub fn max_fix_len(&self) -> usize {
        self.max_seq_len.saturating_sub(self.b1)
    }

    /// State after consuming `y0`, and its next-token log-probabilities.
    pub fn init(&self) -> Result<(DecodeState, Vec<f32>)> {
        let mut states = vec![DecodeState {
            kv: self.base_kv.clone(),
            history: vec![Vec::new(); self.layers.len()],
            next_pos: self.b1 - 1,
        }];
        let lp = self.decode_rows(&mut states, self.y0_embedding.clone());
        Ok((states.pop().expect("one state"), lp))
    }

    /// Feeds `tokens[i]` to `states[i]`; returns `states.len() x V`
    /// log-probabilities, row-major.
    pub fn extend(&self, states: &mut [DecodeState], tokens: &[usize]) -> Result<Vec<f32>> {
        assert_eq!(states.len(), tokens.len());
        let d = self.embed_dim;
        let g = match (&self.plm, &self.plain) {
            (Some(frozen), _) => {
                let mut caches: Vec<KvCache> = states.iter_mut().map(|s| s.kv.take().expect("cache")).collect();
                let out = frozen.extend_batch(&mut caches, tokens);
                for (s, c) in states.iter_mut().zip(caches) {
                    s.kv = Some(c);
                }
                out?
            }
            (None, Some((tok, pos))) => {
                let mut g = Vec::with_capacity(tokens.len() * d);
                for (s, &t) in states.iter().zip(tokens) {
                    let p = s.next_pos;
                    if p >= self.max_seq_len {
                        return Err(ModelError::SequenceTooLong {
                            len: p + 1,
                            max: self.max_seq_len,
                        });
                    }
                    g.extend(tok.row(t).iter().zip(pos.row(p)).map(|(a, b)| a + b));
                }
                g
            }
            (None, None) => unreachable!("scorer has an embedder"),
        };
        Ok(self.decode_rows(states, g))
    }

    fn decode_rows(&self, states: &mut [DecodeState], g: Vec<f32>) -> Vec<f32> {
        let b = states.len();
        let c = self.conv_dim;
        let k = self.kernel;
        let half = std::f32::consts::FRAC_1_SQRT_2;
        let scale = 1.0 / (self.embed_dim as f32).sqrt();
        let n_keys = self.keys.rows();
        let keys: Vec<&[f32]> = (0..n_keys).map(|i| self.keys.row(i)).collect();
        let values: Vec<&[f32]> = (0..n_keys).map(|i| self.values.row(i)).collect();
        let mut h = dense::affine(&g, b, &self.dec_in.0, &self.dec_in.1);
        for (li, l) in self.layers.iter().enumerate() {
            let mut window = vec![0.0f32; b * k * c];
            for (r, s) in states.iter_mut().enumerate() {
                let hist = &mut s.history[li];
                let w = &mut window[r * k * c..(r + 1) * k * c];
                let pad = (k - 1).saturating_sub(hist.len());
                for (j, row) in hist.iter().enumerate() {
                    w[(pad + j) * c..(pad + j + 1) * c].copy_from_slice(row);
                }
                let cur = &h[r * c..(r + 1) * c];
                w[(k - 1) * c..].copy_from_slice(cur);
                if k > 1 {
                    hist.push(cur.to_vec());
                    if hist.len() > k - 1 {
                        hist.remove(0);
                    }
                }
            }
            let conv = dense::affine(&window, b, &l.conv_w, &l.conv_b);
            let mut cv = dense::glu(&conv, 2 * c);
            let mut q = dense::affine(&cv, b, &l.att_in_w, &l.att_in_b);
            dense::add_in_place(&mut q, &g);
            dense::scale_in_place(&mut q, half);
            let mut att = Vec::with_capacity(b * self.embed_dim);
            for qr in q.chunks(self.embed_dim) {
                att.extend(dense::attend(qr, &keys, &values, scale));
            }
            let a = dense::affine(&att, b, &l.att_out_w, &l.att_out_b);
            dense::add_in_place(&mut cv, &a);
            dense::scale_in_place(&mut cv, half);
            dense::add_in_place(&mut h, &cv);
            dense::scale_in_place(&mut h, half);
        }
        let mut out = dense::affine(&h, b, &self.dec_out.0, &self.dec_out.1);
        dense::add_in_place(&mut out, &g);
        let mut logits = dense::affine(&out, b, &self.gen.0, &self.gen.1);
        dense::log_softmax_rows(&mut logits, self.vocab);
        for s in states.iter_mut() {
            s.next_pos += 1;
        }
        logits
    }
}

/// Greedy decoding until the end marker or `max_len` tokens.
pub fn greedy_decode(model: &AprModel<f32>, context: &[usize], span: (usize, usize), max_len: usize) -> Result<Vec<usize>> {
    let scorer = AprScorer::new(model, context, span)?;
    let (mut state, mut lp) = scorer.init()?;
    let mut out = Vec::new();
    for _ in 0..max_len.min(scorer.max_fix_len()) {
        let next = crate::plm::argmax(&lp);
        if next == crate::plm::EOS_ID {
            break;
        }
        out.push(next);
        lp = scorer.extend(std::slice::from_mut(&mut state), &[next])?;
    }
    Ok(out)
}
