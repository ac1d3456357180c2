use curekit::bench::{build_desk_data, train_codec, train_plm, DeskSizes, TrainBudget};
use curekit::lang::generate::generate_program;
use curekit::lang::extract_methods;
use curekit::plm::{Plm, PlmConfig, PlmTrainer, TrainConfig, EOS_ID};
use curekit::tokenizer::{word_tokenize, Codec, Vocab};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(vocab: usize, dim: usize, layers: usize) -> PlmConfig {
    PlmConfig {
        embed_dim: dim,
        n_layers: layers,
        n_heads: 2,
        max_seq_len: 64,
        vocab_size: vocab,
    }
}

#[test]
fn outputs_ignore_every_later_token() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..10 {
        let plm = Plm::<f64>::new(config(20, 8, 2), seed).unwrap();
        let toks: Vec<usize> = (0..12).map(|_| rng.gen_range(0..20)).collect();
        let (logits, hidden) = plm.forward_values(&toks).unwrap();
        for i in 0..toks.len() - 1 {
            let mut other = toks.clone();
            for t in &mut other[i + 1..] {
                *t = rng.gen_range(0..20);
            }
            other[i + 1..].reverse();
            let (l2, h2) = plm.forward_values(&other).unwrap();
            let row = |a: &curekit_nn::Array<f64>, w: usize| a.data()[..(i + 1) * w].to_vec();
            assert_eq!(row(&logits, 20), row(&l2, 20), "logits at {i}");
            assert_eq!(row(&hidden, 8), row(&h2, 8), "hidden at {i}");
        }
    }
}

#[test]
fn uniform_score_is_a_mean_not_a_sum() {
    let mut plm = Plm::<f64>::new(config(100, 8, 1), 4).unwrap();
    plm.store.get_mut(plm.ids.head_w).data_mut().iter_mut().for_each(|v| *v = 0.0);
    plm.store.get_mut(plm.ids.head_b).data_mut().iter_mut().for_each(|v| *v = 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let short: Vec<usize> = (0..10).map(|_| rng.gen_range(4..100)).collect();
    let long: Vec<usize> = (0..20).map(|_| rng.gen_range(4..100)).collect();
    let a = plm.log_likelihood(&[short]).unwrap();
    let b = plm.log_likelihood(&[long]).unwrap();
    assert!((a + 100f64.ln()).abs() < 1e-9);
    assert!((a - b).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn log_likelihood_is_never_positive(seed in 0u64..1000, seq in proptest::collection::vec(0usize..16, 2..20)) {
        let plm = Plm::<f64>::new(config(16, 8, 1), seed).unwrap();
        prop_assert!(plm.log_likelihood(&[seq]).unwrap() <= 0.0);
    }
}

fn small_methods(n: usize, seed: u64) -> (Codec, Vec<Vec<usize>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut methods = Vec::new();
    while methods.len() < n {
        let g = generate_program(&mut rng);
        for m in extract_methods(&g.source, 30).unwrap() {
            if methods.len() < n && !methods.contains(&m) {
                methods.push(m);
            }
        }
    }
    let corpus: Vec<_> = methods.iter().map(|m| word_tokenize(m)).collect();
    let codec = Codec::Word(Vocab::word_level(&corpus));
    let seqs = corpus
        .iter()
        .map(|t| {
            let mut ids = codec.ids(t);
            ids.push(EOS_ID);
            ids
        })
        .collect();
    (codec, seqs)
}

fn schedule(epochs: usize, batch: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: batch,
        peak_lr: lr,
        warmup_steps: 10,
        seed: 3,
    }
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let (codec, seqs) = small_methods(12, 5);
    let plm = Plm::new(config(codec.vocab().len(), 16, 1), 8).unwrap();
    let mut straight = PlmTrainer::new(plm, schedule(4, 4, 3e-3), seqs.len());
    let mut logs = Vec::new();
    let mut checkpoint = None;
    for e in 0..4 {
        if e == 2 {
            checkpoint = Some(straight.clone());
        }
        logs.push(straight.run_epoch(&seqs, &seqs[..3]).unwrap());
    }
    let mut resumed = checkpoint.unwrap();
    let tail: Vec<_> = (0..2).map(|_| resumed.run_epoch(&seqs, &seqs[..3]).unwrap()).collect();
    assert_eq!(&logs[2..], &tail[..]);
    for id in straight.plm.store.ids() {
        assert_eq!(straight.plm.store.get(id).data(), resumed.plm.store.get(id).data());
    }
}

#[test]
fn greedy_reproduces_each_memorized_method() {
    let (codec, seqs) = small_methods(3, 9);
    let plm = Plm::new(config(codec.vocab().len(), 32, 2), 1).unwrap();
    let mut t = PlmTrainer::new(plm, schedule(150, 3, 3e-3), seqs.len());
    for _ in 0..150 {
        t.run_epoch(&seqs, &[]).unwrap();
    }
    for s in &seqs {
        let body = &s[..s.len() - 1];
        let out = t.plm.greedy(&body[..3], 64).unwrap();
        assert_eq!(out, body);
    }
}

#[test]
fn desk_pretraining_cuts_validation_loss_by_thirty_percent() {
    let data = build_desk_data(&DeskSizes::desk(), 6);
    let mut budget = TrainBudget::desk();
    budget.plm.epochs = 6;
    let codec = train_codec(&data, true, budget.target_vocab).unwrap();
    let (_, log) = train_plm(&data, &codec, &budget, 6).unwrap();
    let first = -log[0].val_log_likelihood;
    let last = -log.last().unwrap().val_log_likelihood;
    assert!(last <= 0.7 * first, "{first} -> {last}");
}
