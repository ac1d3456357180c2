//! Desk-scale corpora, training and the ablation harness.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apr::{finetune, AprConfig, AprHyperparams, AprModel, FinetuneConfig, FinetuneLog, Variant};
use crate::corpus::{build_patch_dataset, length_diff_distribution, split, CorpusError, LengthModel, PatchExample, PatchRecord};
use crate::lang::{extract_methods, generate::generate_program, seed_bug, BugInstance};
use crate::plm::{pretrain, EpochLog, ModelError, Plm, PlmConfig, TrainConfig, EOS_ID};
use crate::repair::{repair, MetricsRecord, RepairConfig, RepairError, RepairOutcome};
use crate::search::SearchError;
use crate::tokenizer::{train_bpe, word_tokenize, Codec, TokenSeq, TokenizerError, Vocab, DESK_TARGET_VOCAB};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Repair(#[from] RepairError),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskSizes {
    pub methods: usize,
    pub patches: usize,
    pub heldout: usize,
    /// Longest method or patch context, in word-level tokens.
    pub max_tokens: usize,
}

impl DeskSizes {
    pub fn desk() -> Self {
        Self {
            methods: 500,
            patches: 300,
            heldout: 20,
            max_tokens: 160,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeskData {
    pub methods: Vec<String>,
    pub patches: Vec<PatchRecord>,
    pub heldout: Vec<BugInstance>,
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

fn sub_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(tag)
}

/// Seeded single-line bugs from freshly generated programs.
pub fn seeded_bugs(n: usize, max_tokens: usize, rng: &mut ChaCha8Rng, exclude: &HashSet<String>) -> Vec<BugInstance> {
    let mut out = Vec::with_capacity(n);
    let mut seen = exclude.clone();
    while out.len() < n {
        let g = generate_program(rng);
        let Ok(bug) = seed_bug(&g.program, &g.tests, rng.gen()) else {
            continue;
        };
        let rec = PatchRecord::from_bug(&bug);
        if word_tokenize(&rec.context).tokens.len() > max_tokens || !seen.insert(rec.context) {
            continue;
        }
        out.push(bug);
    }
    out
}

/// Pre-training methods, training patches and held-out bugs, each from its
/// own random stream of generated programs.
pub fn build_desk_data(sizes: &DeskSizes, seed: u64) -> DeskData {
    let heldout = seeded_bugs(sizes.heldout, sizes.max_tokens, &mut stream(seed, 3), &HashSet::new());
    build_training_data(sizes, seed, heldout)
}

/// Training corpora around a fixed set of held-out bugs; no training patch
/// shares a method with a held-out bug.
pub fn build_training_data(sizes: &DeskSizes, seed: u64, heldout: Vec<BugInstance>) -> DeskData {
    let mut rng = stream(seed, 1);
    let mut methods = Vec::with_capacity(sizes.methods);
    let mut seen = HashSet::new();
    while methods.len() < sizes.methods {
        let g = generate_program(&mut rng);
        for m in extract_methods(&g.source, sizes.max_tokens).expect("generated source parses") {
            if methods.len() < sizes.methods && seen.insert(m.clone()) {
                methods.push(m);
            }
        }
    }
    let exclude: HashSet<String> = heldout.iter().map(|b| PatchRecord::from_bug(b).context).collect();
    let patches = seeded_bugs(sizes.patches, sizes.max_tokens, &mut stream(seed, 2), &exclude)
        .iter()
        .map(PatchRecord::from_bug)
        .collect();
    DeskData { methods, patches, heldout }
}

fn tokenizer_corpus(data: &DeskData) -> Vec<TokenSeq> {
    data.methods
        .iter()
        .map(|m| word_tokenize(m))
        .chain(data.patches.iter().map(|p| word_tokenize(&p.fix)))
        .chain(data.patches.iter().map(|p| word_tokenize(&p.context)))
        .collect()
}

/// Word vocabulary or BPE model learned from the training side only.
pub fn train_codec(data: &DeskData, bpe: bool, target_vocab: usize) -> Result<Codec> {
    let corpus = tokenizer_corpus(data);
    Ok(if bpe {
        Codec::Bpe(train_bpe(&corpus, target_vocab)?)
    } else {
        Codec::Word(Vocab::word_level(&corpus))
    })
}

/// Method token ids followed by the end marker.
pub fn plm_sequences(methods: &[String], codec: &Codec, max_len: usize) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    for m in methods {
        let mut ids = codec.ids(&codec.encode_text(m)?);
        ids.push(EOS_ID);
        // the language model also sees a leading start marker
        if ids.len() < max_len {
            out.push(ids);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainBudget {
    pub plm: TrainConfig,
    pub finetune: FinetuneConfig,
    pub conut: AprHyperparams,
    pub fconv: AprHyperparams,
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub target_vocab: usize,
    pub validation_fraction: f64,
}

impl TrainBudget {
    pub fn desk() -> Self {
        let p = PlmConfig::desk(0);
        Self {
            plm: TrainConfig::desk(),
            finetune: FinetuneConfig::desk(),
            conut: AprHyperparams::desk(Variant::Conut),
            fconv: AprHyperparams::desk(Variant::Fconv),
            embed_dim: p.embed_dim,
            n_layers: p.n_layers,
            n_heads: p.n_heads,
            max_seq_len: p.max_seq_len,
            target_vocab: DESK_TARGET_VOCAB,
            validation_fraction: 0.1,
        }
    }

    pub fn plm_config(&self, vocab_size: usize) -> PlmConfig {
        PlmConfig {
            embed_dim: self.embed_dim,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            max_seq_len: self.max_seq_len,
            vocab_size,
        }
    }
}

/// A codec, optional language model and a trained Conut + Fconv pair.
pub struct Setup {
    pub codec: Codec,
    pub plm: Option<Plm<f32>>,
    pub models: Vec<AprModel<f32>>,
    pub length_model: LengthModel,
    pub plm_log: Vec<EpochLog>,
    pub finetune_logs: Vec<Vec<FinetuneLog>>,
}

pub fn patch_examples(data: &DeskData, codec: &Codec, max_seq_len: usize) -> Result<Vec<PatchExample>> {
    // context plus start marker must fit the position table
    let ds = build_patch_dataset(&data.patches, codec, max_seq_len - 1)?;
    Ok(ds.into_iter().filter(|e| e.buggy_span.0 + e.f_n() < max_seq_len).collect())
}

pub fn train_plm(data: &DeskData, codec: &Codec, budget: &TrainBudget, seed: u64) -> Result<(Plm<f32>, Vec<EpochLog>)> {
    let cfg = budget.plm_config(codec.vocab().len());
    let seqs = plm_sequences(&data.methods, codec, cfg.max_seq_len)?;
    let (train, val) = split(&seqs, budget.validation_fraction, sub_seed(seed, 11));
    let sched = TrainConfig {
        seed: sub_seed(seed, 12),
        ..budget.plm.clone()
    };
    Ok(pretrain(&train, &val, cfg, sched)?)
}

pub fn train_apr(
    codec: &Codec,
    plm: Option<&Plm<f32>>,
    examples: &[PatchExample],
    budget: &TrainBudget,
    variant: Variant,
    seed: u64,
) -> Result<(AprModel<f32>, Vec<FinetuneLog>)> {
    let config = AprConfig {
        hp: match variant {
            Variant::Conut => budget.conut.clone(),
            Variant::Fconv => budget.fconv.clone(),
        },
        plm: budget.plm_config(codec.vocab().len()),
        use_plm: plm.is_some(),
    };
    let (train, val) = split(examples, budget.validation_fraction, sub_seed(seed, 21));
    let model = AprModel::new(config, plm, sub_seed(seed, 22 + variant as u64))?;
    let cfg = FinetuneConfig {
        seed: sub_seed(seed, 24 + variant as u64),
        ..budget.finetune.clone()
    };
    Ok(finetune(model, &train, &val, cfg)?)
}

/// Codec, language model and ensemble for one tokenization / pre-training
/// choice.
pub fn train_setup(data: &DeskData, bpe: bool, gpt: bool, budget: &TrainBudget, seed: u64) -> Result<Setup> {
    let codec = train_codec(data, bpe, budget.target_vocab)?;
    let (plm, plm_log) = if gpt {
        let (p, log) = train_plm(data, &codec, budget, seed)?;
        (Some(p), log)
    } else {
        (None, Vec::new())
    };
    let examples = patch_examples(data, &codec, budget.max_seq_len)?;
    let length_model = length_diff_distribution(&examples)?;
    let trained = [Variant::Conut, Variant::Fconv]
        .par_iter()
        .map(|&v| train_apr(&codec, plm.as_ref(), &examples, budget, v, seed))
        .collect::<Result<Vec<_>>>()?;
    let (models, finetune_logs) = trained.into_iter().unzip();
    Ok(Setup {
        codec,
        plm,
        models,
        length_model,
        plm_log,
        finetune_logs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AblationRow {
    pub name: &'static str,
    pub bpe: bool,
    pub gpt: bool,
    pub identifier_check: bool,
    pub length_control: bool,
}

pub const ABLATION_ROWS: [AblationRow; 5] = [
    AblationRow { name: "vanilla", bpe: false, gpt: false, identifier_check: false, length_control: false },
    AblationRow { name: "+bpe", bpe: true, gpt: false, identifier_check: false, length_control: false },
    AblationRow { name: "+gpt", bpe: false, gpt: true, identifier_check: false, length_control: false },
    AblationRow { name: "+bpe+gpt", bpe: true, gpt: true, identifier_check: false, length_control: false },
    AblationRow { name: "full", bpe: true, gpt: true, identifier_check: true, length_control: true },
];

/// Repairs every bug with one setup; a bug with no finished hypothesis gets
/// an empty candidate list.
pub fn evaluate(setup: &Setup, bugs: &[BugInstance], identifier_check: bool, length_control: bool, cfg: &RepairConfig) -> Result<Vec<RepairOutcome>> {
    let mut cfg = cfg.clone();
    cfg.search.identifier_check = identifier_check;
    cfg.search.length_control = length_control;
    bugs.iter()
        .map(|b| match repair(b, &setup.models, &setup.codec, Some(&setup.length_model), &cfg) {
            Err(RepairError::Search(SearchError::NoCandidates)) => Ok(RepairOutcome {
                candidates: Vec::new(),
                buggy_len: 0,
                scope: crate::lang::scope_identifiers(&b.program, b.buggy_line).map_err(RepairError::from)?,
            }),
            r => Ok(r?),
        })
        .collect()
}

pub struct AblationRun {
    pub row: AblationRow,
    pub outcomes: Vec<RepairOutcome>,
    pub metrics: MetricsRecord,
}

pub struct Ablation {
    pub runs: Vec<AblationRun>,
    /// Trained setups keyed by `(bpe, gpt)`.
    pub setups: BTreeMap<(bool, bool), Setup>,
}

impl Ablation {
    pub fn metrics(&self) -> Vec<MetricsRecord> {
        self.runs.iter().map(|r| r.metrics.clone()).collect()
    }

    pub fn run(&self, name: &str) -> Option<&AblationRun> {
        self.runs.iter().find(|r| r.row.name == name)
    }
}

pub fn run_ablation(data: &DeskData, budget: &TrainBudget, cfg: &RepairConfig, seed: u64) -> Result<Ablation> {
    let keys = [(false, false), (true, false), (false, true), (true, true)];
    let trained = keys
        .par_iter()
        .map(|&(bpe, gpt)| train_setup(data, bpe, gpt, budget, seed).map(|s| ((bpe, gpt), s)))
        .collect::<Result<Vec<_>>>()?;
    let setups: BTreeMap<(bool, bool), Setup> = trained.into_iter().collect();
    let mut runs = Vec::new();
    for row in ABLATION_ROWS {
        let setup = &setups[&(row.bpe, row.gpt)];
        let outcomes = evaluate(setup, &data.heldout, row.identifier_check, row.length_control, cfg)?;
        let pairs: Vec<_> = data.heldout.iter().zip(&outcomes).collect();
        let metrics = crate::repair::metrics(row.name, &pairs);
        runs.push(AblationRun { row, outcomes, metrics });
    }
    Ok(Ablation { runs, setups })
}

// ---- benchmark files ------------------------------------------------------------

/// Manifest entry for one bug; the source and tests live next to it as
/// `<id>.ml0` and `<id>.tests.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugEntry {
    pub id: String,
    pub line: usize,
    pub original_line: String,
    pub kind: crate::lang::MutationKind,
}

pub const MANIFEST: &str = "bugs.jsonl";

#[derive(Debug, Error)]
pub enum BenchmarkIoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> BenchmarkIoError + '_ {
    move |source| BenchmarkIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn fmt_err(path: &std::path::Path, msg: impl ToString) -> BenchmarkIoError {
    BenchmarkIoError::Format {
        path: path.display().to_string(),
        msg: msg.to_string(),
    }
}

pub fn write_benchmark(dir: &std::path::Path, bugs: &[BugInstance]) -> Result<(), BenchmarkIoError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = String::new();
    for (i, b) in bugs.iter().enumerate() {
        let id = format!("b{}", i + 1);
        let src = dir.join(format!("{id}.{}", crate::lang::SOURCE_EXTENSION));
        std::fs::write(&src, &b.source).map_err(io_err(&src))?;
        let tests = dir.join(format!("{id}.tests.json"));
        std::fs::write(&tests, crate::lang::interp::write_test_suite(&b.test_suite)).map_err(io_err(&tests))?;
        let entry = BugEntry {
            id,
            line: b.buggy_line,
            original_line: b.original_line.clone(),
            kind: b.kind,
        };
        manifest.push_str(&serde_json::to_string(&entry).expect("entry serializes"));
        manifest.push('\n');
    }
    let m = dir.join(MANIFEST);
    std::fs::write(&m, manifest).map_err(io_err(&m))
}

/// Loads a bug from its source, buggy line and test suite. Tests that fail
/// on the given source form the failing partition.
pub fn load_bug(source: &str, line: usize, tests_json: &str, original_line: Option<&str>) -> Result<BugInstance, String> {
    let program = crate::lang::compile(source).map_err(|e| e.to_string())?;
    let buggy_line_text = crate::lang::source_line(source, line)
        .ok_or_else(|| format!("line {line} is outside the source"))?
        .trim()
        .to_string();
    program
        .function_at_line(line)
        .ok_or_else(|| format!("line {line} is not inside a function"))?;
    let tests = crate::lang::interp::parse_test_suite(tests_json).map_err(|e| e.to_string())?;
    let outcomes = crate::lang::run_tests(&program, &tests, crate::lang::DEFAULT_STEP_BUDGET);
    let failing_tests: Vec<usize> = outcomes.iter().enumerate().filter(|(_, o)| !o.passed()).map(|(i, _)| i).collect();
    let original_line = original_line.unwrap_or(&buggy_line_text).to_string();
    Ok(BugInstance {
        original_source: crate::lang::replace_line(source, line, &original_line).unwrap_or_else(|| source.to_string()),
        program,
        source: source.to_string(),
        buggy_line: line,
        original_line,
        buggy_line_text,
        test_suite: tests,
        failing_tests,
        kind: crate::lang::MutationKind::VariableSubstitution,
    })
}

pub fn read_benchmark(dir: &std::path::Path) -> Result<Vec<(String, BugInstance)>, BenchmarkIoError> {
    let m = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&m).map_err(io_err(&m))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let e: BugEntry = serde_json::from_str(line).map_err(|err| fmt_err(&m, err))?;
        let src_path = dir.join(format!("{}.{}", e.id, crate::lang::SOURCE_EXTENSION));
        let source = std::fs::read_to_string(&src_path).map_err(io_err(&src_path))?;
        let tests_path = dir.join(format!("{}.tests.json", e.id));
        let tests = std::fs::read_to_string(&tests_path).map_err(io_err(&tests_path))?;
        let mut bug = load_bug(&source, e.line, &tests, Some(&e.original_line)).map_err(|msg| fmt_err(&src_path, msg))?;
        bug.kind = e.kind;
        out.push((e.id, bug));
    }
    Ok(out)
}
