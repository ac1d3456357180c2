use curekit::apr::{AprConfig, AprHyperparams, AprModel, AprTrainer, FinetuneConfig, Variant};
use curekit::corpus::PatchExample;
use curekit::infer::{greedy_decode, AprScorer};
use curekit::plm::{PlmConfig, BOS_ID};
use curekit::tokenizer::TokenSeq;
use curekit_nn::gradcheck::{check_gradients, DEFAULT_EPS};
use curekit_nn::{Array, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const V: usize = 12;

fn tiny_config(variant: Variant, use_plm: bool) -> AprConfig {
    AprConfig {
        hp: AprHyperparams {
            variant,
            conv_dim: 6,
            kernel_size: 3,
            n_conv_layers: 2,
            dropout: 0.0,
            lambda: 0.3,
        },
        plm: PlmConfig {
            embed_dim: 8,
            n_layers: 1,
            n_heads: 2,
            max_seq_len: 32,
            vocab_size: V,
        },
        use_plm,
    }
}

fn random_example(rng: &mut ChaCha8Rng) -> PatchExample {
    let c_n = rng.gen_range(3..10);
    let b1 = rng.gen_range(1..=c_n);
    let bn = rng.gen_range(b1..=c_n.min(b1 + 2));
    let f_n = rng.gen_range(1..5);
    let context_ids: Vec<usize> = (0..c_n).map(|_| rng.gen_range(4..V)).collect();
    let fix_ids: Vec<usize> = (0..f_n).map(|_| rng.gen_range(4..V)).collect();
    PatchExample {
        context: TokenSeq::new(vec![String::new(); c_n]),
        context_ids,
        buggy_span: (b1, bn),
        fix: TokenSeq::new(vec![String::new(); f_n]),
        fix_ids,
    }
}

fn all_configs() -> Vec<AprConfig> {
    let mut out = Vec::new();
    for v in [Variant::Conut, Variant::Fconv] {
        for p in [true, false] {
            out.push(tiny_config(v, p));
        }
    }
    out
}

#[test]
fn loss_is_additive_and_lambda_zero_is_nmt() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = AprModel::<f64>::new(tiny_config(Variant::Conut, true), None, 1).unwrap();
    for _ in 0..50 {
        let ex = random_example(&mut rng);
        let mut tape = Tape::inference();
        let (nmt, pass) = model.nmt_loss(&mut tape, &ex, None).unwrap();
        let gpt = tape.scalar(pass.lm_log_likelihood.unwrap());
        let nmt = tape.scalar(nmt);
        let apr = model.apr_log_likelihood(&ex, 0.3).unwrap();
        assert!((apr - (nmt + 0.3 * gpt)).abs() < 1e-6);
        assert_eq!(model.apr_log_likelihood(&ex, 0.0).unwrap(), nmt);
        assert!(nmt < 0.0 && gpt < 0.0);
    }
}

#[test]
fn step_output_is_a_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for cfg in all_configs() {
        let model = AprModel::<f32>::new(cfg, None, 2).unwrap();
        let ex = random_example(&mut rng);
        let y0 = if ex.buggy_span.0 == 1 { BOS_ID } else { ex.context_ids[ex.buggy_span.0 - 2] };
        let lp = model.apr_step(&ex, &[y0, 5, 6]).unwrap();
        assert_eq!(lp.len(), V);
        let s: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(model.apr_step(&ex, &[y0 ^ 1]).is_err() || y0 ^ 1 == y0);
    }
}

#[test]
fn span_outside_context_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = AprModel::<f32>::new(tiny_config(Variant::Fconv, false), None, 2).unwrap();
    let mut ex = random_example(&mut rng);
    ex.buggy_span = (2, ex.c_n() + 1);
    assert!(model.nmt_log_likelihood(&ex).is_err());
}

#[test]
fn zeroed_attention_cuts_off_the_encoders() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for cfg in all_configs() {
        let mut model = AprModel::<f64>::new(cfg, None, 3).unwrap();
        let mut ex = random_example(&mut rng);
        while ex.buggy_span.1 == ex.c_n() {
            ex = random_example(&mut rng);
        }
        let y0 = if ex.buggy_span.0 == 1 { BOS_ID } else { ex.context_ids[ex.buggy_span.0 - 2] };
        let mut other = ex.clone();
        for t in &mut other.context_ids[ex.buggy_span.1..] {
            *t = 4 + (*t + 1 - 4) % (V - 4);
        }
        let a = model.apr_step(&ex, &[y0, 7]).unwrap();
        let b = model.apr_step(&other, &[y0, 7]).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
        model.zero_attention();
        let a = model.apr_step(&ex, &[y0, 7]).unwrap();
        let b = model.apr_step(&other, &[y0, 7]).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn language_model_term_ignores_tokens_from_the_span_on() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = AprModel::<f64>::new(tiny_config(Variant::Conut, true), None, 4).unwrap();
    for _ in 0..20 {
        let ex = random_example(&mut rng);
        let mut other = ex.clone();
        for t in &mut other.context_ids[ex.buggy_span.0 - 1..] {
            *t = 4 + (*t + 3 - 4) % (V - 4);
        }
        let gpt = |e: &PatchExample| {
            let mut tape = Tape::inference();
            let (_, pass) = model.nmt_loss(&mut tape, e, None).unwrap();
            tape.scalar(pass.lm_log_likelihood.unwrap())
        };
        assert_eq!(gpt(&ex), gpt(&other));
    }
}

#[test]
fn incremental_scorer_matches_tape_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for cfg in all_configs() {
        let model = AprModel::<f32>::new(cfg, None, 5).unwrap();
        for _ in 0..5 {
            let ex = random_example(&mut rng);
            let y0 = if ex.buggy_span.0 == 1 { BOS_ID } else { ex.context_ids[ex.buggy_span.0 - 2] };
            let scorer = AprScorer::new(&model, &ex.context_ids, ex.buggy_span).unwrap();
            let (state, first) = scorer.init().unwrap();
            let want = model.apr_step(&ex, &[y0]).unwrap();
            for (a, b) in first.iter().zip(&want) {
                assert!((*a as f64 - b).abs() < 1e-4, "{a} vs {b}");
            }
            let fix = [5, 9, 4, 11];
            let mut states = vec![state.clone(), state];
            let mut prefix = vec![y0];
            for &t in &fix {
                prefix.push(t);
                let lp = scorer.extend(&mut states, &[t, t]).unwrap();
                let want = model.apr_step(&ex, &prefix).unwrap();
                for (j, b) in want.iter().enumerate() {
                    assert!((lp[j] as f64 - b).abs() < 1e-4);
                    assert_eq!(lp[j], lp[V + j]);
                }
            }
        }
    }
}

#[test]
fn gradients_split_into_translation_and_language_model_parts() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = AprModel::<f64>::new(tiny_config(Variant::Conut, true), None, 6).unwrap();
    let n = model.store.len();
    let (plm_ids, _) = model.param_groups();
    for _ in 0..5 {
        let ex = random_example(&mut rng);
        let grads = |which: u8| {
            let mut tape = Tape::new();
            let (nmt, pass) = model.nmt_loss(&mut tape, &ex, None).unwrap();
            let gpt = pass.lm_log_likelihood.unwrap();
            let out = match which {
                0 => nmt,
                1 => gpt,
                _ => {
                    let s = tape.scale(gpt, 0.3);
                    tape.add(nmt, s).unwrap()
                }
            };
            tape.backward(out).unwrap();
            tape.param_grads(n)
        };
        let (gn, gg, ga) = (grads(0), grads(1), grads(2));
        for &id in &plm_ids {
            let zero = vec![0.0; model.store.get(id).len()];
            let a = ga.get(id).unwrap_or(&zero);
            let nm = gn.get(id).unwrap_or(&zero);
            let lm = gg.get(id).unwrap_or(&zero);
            for i in 0..a.len() {
                assert!((a[i] - (nm[i] + 0.3 * lm[i])).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn apr_loss_gradients_match_finite_differences() {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let model = AprModel::<f64>::new(tiny_config(Variant::Conut, true), None, seed).unwrap();
        let ex = random_example(&mut rng);
        let names = ["plm.tok", "plm.layer0.qkv_w", "plm.head_w", "nmt.enc_ctx.conv0_w", "nmt.merge_w", "nmt.dec.att_in0_w"];
        let ids: Vec<_> = names.iter().map(|n| model.store.id(n).unwrap()).collect();
        let inputs: Vec<Array<f64>> = ids.iter().map(|&id| model.store.get(id).clone()).collect();
        let report = check_gradients(&inputs, DEFAULT_EPS, 1e-6, |tape, vars| {
            for (&id, &v) in ids.iter().zip(vars) {
                tape.bind_param(id, v);
            }
            model.apr_loss(tape, &ex, 0.3, None).map_err(|e| curekit_nn::NnError::Format(e.to_string()))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "seed {seed}: {:?}", report);
    }
}

fn overfit(model: AprModel<f32>, data: &[PatchExample], steps: usize) -> (AprModel<f32>, Vec<f64>) {
    let cfg = FinetuneConfig {
        epochs: 1,
        batch_size: data.len(),
        peak_lr: 2e-3,
        warmup_steps: 0,
        seed: 1,
    };
    let mut t = AprTrainer::new(model, cfg, data.len() * steps * 4);
    let batch: Vec<&PatchExample> = data.iter().collect();
    let losses = (0..steps).map(|_| t.step(&batch).unwrap()).collect();
    (t.model, losses)
}

#[test]
fn training_objective_rises_on_a_small_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let data: Vec<_> = (0..10).map(|_| random_example(&mut rng)).collect();
    for cfg in all_configs() {
        let model = AprModel::<f32>::new(cfg, None, 4).unwrap();
        let (_, losses) = overfit(model, &data, 50);
        for w in losses.windows(2) {
            assert!(w[1] > w[0], "{losses:?}");
        }
    }
}

#[test]
fn greedy_decode_reproduces_a_memorized_fix() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let data: Vec<_> = (0..3).map(|_| random_example(&mut rng)).collect();
    for cfg in all_configs() {
        let model = AprModel::<f32>::new(cfg, None, 5).unwrap();
        let (model, _) = overfit(model, &data, 300);
        for ex in &data {
            let out = greedy_decode(&model, &ex.context_ids, ex.buggy_span, 10).unwrap();
            assert_eq!(out, ex.fix_ids);
        }
    }
}
