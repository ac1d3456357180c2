//! Acceptance run: one PASS/FAIL line per criterion. Criteria 6 to 10 train
//! the five ablation configurations on the bundled benchmark for three seeds,
//! which takes a while on a single core.

mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use curekit::apr::{AprConfig, AprHyperparams, AprModel, Variant};
use curekit::bench::{build_training_data, evaluate, read_benchmark, run_ablation, DeskSizes, TrainBudget};
use curekit::corpus::PatchExample;
use curekit::lang::lexer::lex_lenient;
use curekit::lang::BugInstance;
use curekit::plm::{sequence_log_likelihood, Plm, PlmConfig, PlmTrainer, TrainConfig, EOS_ID};
use curekit::repair::{correct_rank, identifier_usage, MetricsRecord, RepairConfig, RepairOutcome, ValidationStatus};
use curekit::tokenizer::{bpe_encode, detokenize_with_refs, train_bpe, word_tokenize, BpeModel, Codec, TokenSeq, Vocab, UNK};
use curekit_nn::gradcheck::{check_gradients, DEFAULT_EPS};
use curekit_nn::layers::{attention, conv1d, linear, multi_head_attention};
use curekit_nn::{Array, NnError, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::fixtures::{fixture_lines, UNSEEN};
use support::search_oracle::compare_with_exhaustive;

type Outcome = Result<String, String>;
type Check = (usize, &'static str, fn() -> Outcome);
type Deferred<'a> = (usize, &'static str, Box<dyn FnOnce() -> Outcome + 'a>);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- 1: gradients -------------------------------------------------------------

const SEEDS: u64 = 20;
const TOL: f64 = 1e-4;

type Case = (&'static str, Vec<Vec<usize>>, Box<dyn Fn(&mut Tape<f64>, &[Var], u64) -> curekit_nn::Result<Var>>);

fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array<f64> {
    let n = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn project(t: &mut Tape<f64>, y: Var, seed: u64) -> curekit_nn::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = rand_array(&mut rng, t.shape(y));
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

macro_rules! case {
    ($name:expr, [$($shape:expr),*], |$t:ident, $v:ident, $s:ident| $body:expr) => {
        (
            $name,
            vec![$($shape.to_vec()),*],
            Box::new(|$t: &mut Tape<f64>, $v: &[Var], $s: u64| -> curekit_nn::Result<Var> {
                let y = $body;
                project($t, y, $s)
            }) as Box<dyn Fn(&mut Tape<f64>, &[Var], u64) -> curekit_nn::Result<Var>>,
        )
    };
}

fn primitive_cases() -> Vec<Case> {
    vec![
        case!("matmul", [[3, 4], [4, 5]], |t, v, s| t.matmul(v[0], v[1])?),
        case!("matmul_nt", [[3, 4], [5, 4]], |t, v, s| t.matmul_nt(v[0], v[1])?),
        case!("add", [[2, 3], [2, 3]], |t, v, s| t.add(v[0], v[1])?),
        case!("add_row", [[4, 3], [3]], |t, v, s| t.add_row(v[0], v[1])?),
        case!("mul", [[2, 3], [2, 3]], |t, v, s| t.mul(v[0], v[1])?),
        case!("mul_const", [[2, 3]], |t, v, s| t.mul_const(v[0], vec![0.0, 2.0, -1.0, 0.5, 1.0, 3.0])?),
        case!("scale", [[2, 3]], |t, v, s| t.scale(v[0], -1.7)),
        case!("gelu", [[3, 4]], |t, v, s| t.gelu(v[0])),
        case!("glu", [[3, 6]], |t, v, s| t.glu(v[0])?),
        case!("layer_norm", [[3, 5], [5], [5]], |t, v, s| t.layer_norm(v[0], v[1], v[2])?),
        case!("softmax", [[3, 4]], |t, v, s| t.softmax(v[0], None)),
        case!("softmax_causal", [[3, 5]], |t, v, s| t.softmax(v[0], Some(2))),
        case!("log_softmax", [[3, 4]], |t, v, s| t.log_softmax(v[0])),
        case!("embedding", [[5, 3]], |t, v, s| t.embedding(v[0], &[4, 0, 4, 2])?),
        case!("unfold", [[5, 2]], |t, v, s| t.unfold(v[0], 3, 2, 0)?),
        case!("slice_rows", [[5, 3]], |t, v, s| t.slice_rows(v[0], 1, 4)?),
        case!("slice_cols", [[3, 5]], |t, v, s| t.slice_cols(v[0], 2, 5)?),
        case!("concat_rows", [[2, 3], [1, 3]], |t, v, s| t.concat_rows(&[v[0], v[1], v[0]])?),
        case!("concat_cols", [[2, 3], [2, 1]], |t, v, s| t.concat_cols(&[v[1], v[0]])?),
        case!("pad_rows", [[2, 3]], |t, v, s| t.pad_rows(v[0], 1, 2)),
        case!("cross_entropy", [[4, 6]], |t, v, s| t.cross_entropy(v[0], &[0, 5, 2, 2])?),
        case!("sum", [[2, 3]], |t, v, s| {
            let sq = t.mul(v[0], v[0])?;
            t.sum(sq)
        }),
        case!("mean", [[2, 3]], |t, v, s| {
            let sq = t.mul(v[0], v[0])?;
            t.mean(sq)
        }),
        case!("dropout", [[4, 3]], |t, v, s| t.dropout(v[0], 0.4, &mut ChaCha8Rng::seed_from_u64(s))?),
        case!("linear", [[3, 4], [4, 2], [2]], |t, v, s| linear(t, v[0], v[1], v[2])?),
        case!("conv1d_same", [[5, 2], [6, 4], [4]], |t, v, s| conv1d(t, v[0], v[1], v[2], 3, 1, 1)?),
        case!("conv1d_causal", [[5, 2], [6, 4], [4]], |t, v, s| conv1d(t, v[0], v[1], v[2], 3, 2, 0)?),
        case!("attention", [[3, 4], [5, 4], [5, 4]], |t, v, s| attention(t, v[0], v[1], v[2], None)?),
        case!("attention_causal", [[3, 4], [5, 4], [5, 4]], |t, v, s| attention(t, v[0], v[1], v[2], Some(2))?),
        case!("multi_head_attention", [[4, 6], [4, 6], [4, 6]], |t, v, s| multi_head_attention(t, v[0], v[1], v[2], 2, Some(0))?),
    ]
}

const APR_V: usize = 12;

fn apr_config(variant: Variant, use_plm: bool) -> AprConfig {
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
            vocab_size: APR_V,
        },
        use_plm,
    }
}

fn random_example(rng: &mut ChaCha8Rng) -> PatchExample {
    let c_n = rng.gen_range(3..10);
    let b1 = rng.gen_range(1..=c_n);
    let bn = rng.gen_range(b1..=c_n.min(b1 + 2));
    let f_n = rng.gen_range(1..5);
    PatchExample {
        context: TokenSeq::new(vec![String::new(); c_n]),
        context_ids: (0..c_n).map(|_| rng.gen_range(4..APR_V)).collect(),
        buggy_span: (b1, bn),
        fix: TokenSeq::new(vec![String::new(); f_n]),
        fix_ids: (0..f_n).map(|_| rng.gen_range(4..APR_V)).collect(),
    }
}

fn to_nn(e: impl std::fmt::Display) -> NnError {
    NnError::Format(e.to_string())
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut checks = 0;
    let mut record = |name: &str, seed: u64, err: f64| {
        checks += 1;
        if err > worst.0 {
            worst = (err, format!("{name} seed {seed}"));
        }
    };
    for (name, shapes, f) in primitive_cases() {
        for seed in 0..SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + name.len() as u64);
            let inputs: Vec<Array<f64>> = shapes.iter().map(|s| rand_array(&mut rng, s)).collect();
            let r = check_gradients(&inputs, DEFAULT_EPS, 1e-6, |t, v| f(t, v, seed)).map_err(|e| e.to_string())?;
            record(name, seed, r.max_rel_error);
        }
    }
    // composed language-model objective over every parameter
    for seed in 0..SEEDS {
        let plm = Plm::<f64>::new(
            PlmConfig {
                embed_dim: 8,
                n_layers: 2,
                n_heads: 2,
                max_seq_len: 12,
                vocab_size: 10,
            },
            seed,
        )
        .map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
        let seq: Vec<usize> = (0..rng.gen_range(2..10)).map(|_| rng.gen_range(0..10)).collect();
        let ids: Vec<_> = plm.store.ids().collect();
        let inputs: Vec<Array<f64>> = ids.iter().map(|&id| plm.store.get(id).clone()).collect();
        let r = check_gradients(&inputs, DEFAULT_EPS, 1e-6, |t, vars| {
            for (&id, &v) in ids.iter().zip(vars) {
                t.bind_param(id, v);
            }
            sequence_log_likelihood(t, &plm.store, &plm.ids, &plm.config, &seq).map_err(to_nn)
        })
        .map_err(|e| e.to_string())?;
        record("L_GPT", seed, r.max_rel_error);
    }
    // composed repair objective, both encoder layouts
    for variant in [Variant::Conut, Variant::Fconv] {
        for seed in 0..SEEDS {
            let model = AprModel::<f64>::new(apr_config(variant, true), None, seed).map_err(|e| e.to_string())?;
            let ex = random_example(&mut ChaCha8Rng::seed_from_u64(seed + 900));
            let ids: Vec<_> = model.store.ids().collect();
            let inputs: Vec<Array<f64>> = ids.iter().map(|&id| model.store.get(id).clone()).collect();
            let r = check_gradients(&inputs, DEFAULT_EPS, 1e-6, |t, vars| {
                for (&id, &v) in ids.iter().zip(vars) {
                    t.bind_param(id, v);
                }
                model.apr_loss(t, &ex, 0.3, None).map_err(to_nn)
            })
            .map_err(|e| e.to_string())?;
            record(if variant == Variant::Conut { "L_APR dual" } else { "L_APR single" }, seed, r.max_rel_error);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst.0 < TOL && secs < 120.0,
        format!("{checks} checks, max rel error {:.2e} ({}), {secs:.1} s", worst.0, worst.1),
    )
}

// ---- 2: language-model objective --------------------------------------------------

fn lm_objective() -> Outcome {
    let mut plm = Plm::<f64>::new(
        PlmConfig {
            embed_dim: 16,
            n_layers: 2,
            n_heads: 2,
            max_seq_len: 64,
            vocab_size: 100,
        },
        3,
    )
    .map_err(|e| e.to_string())?;
    plm.store.get_mut(plm.ids.head_w).data_mut().iter_mut().for_each(|v| *v = 0.0);
    plm.store.get_mut(plm.ids.head_b).data_mut().iter_mut().for_each(|v| *v = 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch: Vec<Vec<usize>> = (0..4).map(|i| (0..5 + 7 * i).map(|_| rng.gen_range(0..100)).collect()).collect();
    let uniform = plm.log_likelihood(&batch).map_err(|e| e.to_string())?;
    let gap = (uniform + 100f64.ln()).abs();

    let start = Instant::now();
    let g = curekit::lang::generate::generate_program(&mut ChaCha8Rng::seed_from_u64(7));
    let method = curekit::lang::extract_methods(&g.source, 200).map_err(|e| e.to_string())?.remove(0);
    let toks = word_tokenize(&method);
    let codec = Codec::Word(Vocab::word_level([&toks]));
    let mut seq = codec.ids(&toks);
    seq.push(EOS_ID);
    let cfg = PlmConfig::desk(codec.vocab().len());
    let plm = Plm::new(cfg, 1).map_err(|e| e.to_string())?;
    let sched = TrainConfig {
        epochs: 500,
        batch_size: 1,
        peak_lr: 2.5e-3,
        warmup_steps: 20,
        seed: 0,
    };
    let mut t = PlmTrainer::new(plm, sched, 1);
    let batch = [seq.clone()];
    let mut reached = None;
    for step in 1..=500 {
        t.step(&batch).map_err(|e| e.to_string())?;
        if step % 10 == 0 && t.plm.log_likelihood(&batch).map_err(|e| e.to_string())? > -0.05 {
            reached = Some(step);
            break;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let last = t.plm.log_likelihood(&batch).map_err(|e| e.to_string())?;
    ensure(
        gap < 1e-6 && reached.is_some() && secs < 60.0,
        format!(
            "uniform {uniform:.9} (gap {gap:.1e}); {}-token method at {last:.4} after {} steps, {secs:.1} s",
            seq.len(),
            reached.map_or("500+".to_string(), |s| s.to_string())
        ),
    )
}

// ---- 3: combined objective ------------------------------------------------------

fn additivity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut exact = true;
    let mut n = 0;
    for variant in [Variant::Conut, Variant::Fconv] {
        let model = AprModel::<f64>::new(apr_config(variant, true), None, 1).map_err(|e| e.to_string())?;
        for _ in 0..50 {
            let ex = random_example(&mut rng);
            let mut tape = Tape::inference();
            let (nmt, pass) = model.nmt_loss(&mut tape, &ex, None).map_err(|e| e.to_string())?;
            let gpt = tape.scalar(pass.lm_log_likelihood.ok_or("no language-model term")?);
            let nmt = tape.scalar(nmt);
            let apr = model.apr_log_likelihood(&ex, 0.3).map_err(|e| e.to_string())?;
            worst = worst.max((apr - (nmt + 0.3 * gpt)).abs());
            exact &= model.apr_log_likelihood(&ex, 0.0).map_err(|e| e.to_string())? == nmt;
            n += 1;
        }
    }
    ensure(worst < 1e-6 && exact, format!("{n} examples, max deviation {worst:.1e}, lambda 0 exact: {exact}"))
}

// ---- 4: tokenizer ---------------------------------------------------------------

fn lexemes(line: &str) -> Vec<String> {
    lex_lenient(line).into_iter().map(|t| t.text).collect()
}

fn tokenizer() -> Outcome {
    let lines = fixture_lines(200);
    let round_trip = lines.iter().filter(|l| lexemes(&detokenize_with_refs(&word_tokenize(l))) == lexemes(l)).count();

    let corpus: Vec<TokenSeq> = fixture_lines(2000).iter().map(|l| word_tokenize(l)).collect();
    let model = train_bpe(&corpus, 600).map_err(|e| e.to_string())?;
    let mut unknown = 0;
    for ident in UNSEEN {
        let enc = bpe_encode(&word_tokenize(&format!("let {ident} = {ident} + 1;")), &model).map_err(|e| e.to_string())?;
        unknown += enc.tokens.iter().filter(|t| *t == UNK || !model.vocab().contains(t)).count();
    }

    let small: Vec<TokenSeq> = ["charset", "charcode", "charlist", "no", "charset", "charcode", "no", "no"]
        .iter()
        .map(|w| word_tokenize(w))
        .collect();
    let learned = train_bpe(&small, 1000).map_err(|e| e.to_string())?;
    let hand = BpeModel::from_files_text(&learned.vocab().to_text(), "c h\nch a\ncha r\nn o</w>\n").map_err(|e| e.to_string())?;
    let split = hand.encode_word("charno").map_err(|e| e.to_string())?;
    let charno = split == ["char@@", "no"] && learned.encode_word("charno").map_err(|e| e.to_string())? == split;

    ensure(
        round_trip == 200 && unknown == 0 && charno,
        format!("round trip {round_trip}/200, unknown tokens {unknown} over {} identifiers, charno -> {}", UNSEEN.len(), split.join(" ")),
    )
}

// ---- 5: search ------------------------------------------------------------------

fn search_oracle() -> Outcome {
    let start = Instant::now();
    let compared = compare_with_exhaustive(100)?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("100 scorers, {compared} ranked sequences identical, {secs:.2} s"))
}

// ---- 6 to 10: benchmark runs ------------------------------------------------------

const RUN_SEEDS: [u64; 3] = [17, 18, 19];

struct SeedRun {
    seed: u64,
    metrics: Vec<MetricsRecord>,
    full: Vec<RepairOutcome>,
    unchecked: Vec<RepairOutcome>,
    uncontrolled: Vec<RepairOutcome>,
    secs: f64,
}

fn benchmark_runs(bugs: &[BugInstance]) -> Result<Vec<SeedRun>, String> {
    let budget = TrainBudget::desk();
    let cfg = RepairConfig::desk();
    let mut out = Vec::new();
    for seed in RUN_SEEDS {
        let start = Instant::now();
        let data = build_training_data(&DeskSizes::desk(), seed, bugs.to_vec());
        let ablation = run_ablation(&data, &budget, &cfg, seed).map_err(|e| e.to_string())?;
        let secs = start.elapsed().as_secs_f64();
        let setup = &ablation.setups[&(true, true)];
        let unchecked = evaluate(setup, bugs, false, true, &cfg).map_err(|e| e.to_string())?;
        let uncontrolled = evaluate(setup, bugs, true, false, &cfg).map_err(|e| e.to_string())?;
        let metrics = ablation.metrics();
        for m in &metrics {
            println!("    seed {seed} {}", serde_json::to_string(m).unwrap());
        }
        out.push(SeedRun {
            seed,
            full: ablation.run("full").ok_or("no full run")?.outcomes.clone(),
            metrics,
            unchecked,
            uncontrolled,
            secs,
        });
    }
    Ok(out)
}

fn identifier_rate(outcomes: &[RepairOutcome]) -> (usize, usize) {
    let mut valid = 0;
    let mut total = 0;
    for o in outcomes {
        for c in &o.candidates {
            let (v, t) = identifier_usage(&c.line, &o.scope);
            valid += v;
            total += t;
        }
    }
    (valid, total)
}

fn identifier_soundness(runs: &[SeedRun]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let on = identifier_rate(&r.full);
        let off = identifier_rate(&r.unchecked);
        ok &= on.1 > 0 && on.0 == on.1 && off.0 < off.1;
        parts.push(format!("seed {}: on {}/{}, off {}/{}", r.seed, on.0, on.1, off.0, off.1));
    }
    ensure(ok, parts.join("; "))
}

fn metric<'a>(r: &'a SeedRun, name: &str) -> &'a MetricsRecord {
    r.metrics.iter().find(|m| m.config == name).expect("configuration present")
}

fn compilable(runs: &[SeedRun]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let full = metric(r, "full").compilable_rate_30;
        let vanilla = metric(r, "vanilla").compilable_rate_30;
        ok &= matches!((full, vanilla), (Some(f), Some(v)) if f > v);
        parts.push(format!("seed {}: full {} vs vanilla {}", r.seed, fmt_rate(full), fmt_rate(vanilla)));
    }
    ensure(ok, parts.join("; "))
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or("n/a".into(), |v| format!("{v:.3}"))
}

fn length_gap(outcomes: &[RepairOutcome]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for o in outcomes {
        let mut c: Vec<_> = o.candidates.iter().collect();
        c.sort_by_key(|p| p.rank);
        for p in c.iter().take(30) {
            sum += (p.n_tokens as f64 - o.buggy_len as f64).abs();
            n += 1;
        }
    }
    sum / n.max(1) as f64
}

fn length_control(runs: &[SeedRun]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let on = length_gap(&r.full);
        let off = length_gap(&r.uncontrolled);
        ok &= on < off;
        parts.push(format!("seed {}: {off:.2} -> {on:.2} tokens", r.seed));
    }
    ensure(ok, parts.join("; "))
}

fn end_to_end(runs: &[SeedRun], bugs: &[BugInstance]) -> Outcome {
    // the first seed is the reference run; the others are reported
    let mut parts = Vec::new();
    let mut verdict = false;
    for (i, r) in runs.iter().enumerate() {
        let plausible = r.full.iter().filter(|o| o.candidates.iter().any(|c| c.status == ValidationStatus::Plausible)).count();
        let top100 = r
            .full
            .iter()
            .zip(bugs)
            .filter(|(o, b)| correct_rank(&o.candidates, &b.original_line).is_some_and(|k| k <= 100))
            .count();
        if i == 0 {
            verdict = plausible >= 12 && top100 >= 8 && r.secs < 1800.0;
        }
        parts.push(format!("seed {}: plausible {plausible}/20, truth in top 100 {top100}/20, {:.0} s", r.seed, r.secs));
    }
    ensure(verdict, parts.join("; "))
}

fn monotone(runs: &[SeedRun]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let fixed: Vec<usize> = r.metrics.iter().map(|m| m.bugs_fixed).collect();
        ok &= r.metrics.len() == 5 && fixed.windows(2).all(|w| w[0] <= w[1]);
        parts.push(format!("seed {}: {fixed:?}", r.seed));
    }
    ensure(ok, parts.join("; "))
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let (tag, detail) = match &res {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("[{tag}] {n:>2} {name}: {detail}");
    res.is_ok()
}

fn main() {
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| filter.is_empty() || filter.contains(&n);
    let mut results = Vec::new();
    let quick: [Check; 5] = [
        (1, "gradient fidelity", gradient_fidelity),
        (2, "language-model objective", lm_objective),
        (3, "combined objective additivity", additivity),
        (4, "tokenizer", tokenizer),
        (5, "search oracle", search_oracle),
    ];
    for (n, name, f) in quick {
        if wanted(n) {
            results.push(run(n, name, f));
        }
    }

    if (6..=10).any(wanted) {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../benchmark");
        let loaded = read_benchmark(&dir).map(|b| b.into_iter().map(|(_, bug)| bug).collect::<Vec<_>>());
        let runs = loaded.map_err(|e| e.to_string()).and_then(|bugs| benchmark_runs(&bugs).map(|r| (bugs, r)));
        match runs {
            Ok((bugs, runs)) => {
                let heavy: [Deferred<'_>; 5] = [
                    (6, "identifier soundness", Box::new(|| identifier_soundness(&runs))),
                    (7, "compilable rate at 30", Box::new(|| compilable(&runs))),
                    (8, "length control", Box::new(|| length_control(&runs))),
                    (9, "end to end", Box::new(|| end_to_end(&runs, &bugs))),
                    (10, "ablation monotonicity", Box::new(|| monotone(&runs))),
                ];
                for (n, name, f) in heavy {
                    if wanted(n) {
                        results.push(run(n, name, f));
                    }
                }
            }
            Err(e) => {
                for n in (6..=10).filter(|&n| wanted(n)) {
                    println!("[FAIL] {n:>2} benchmark run: {e}");
                    results.push(false);
                }
            }
        }
    }

    let passed = results.iter().filter(|&&r| r).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
