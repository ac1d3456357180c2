use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Component, Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use curekit::apr::{random_search, write_trial_log, AprConfig, AprHyperparams, AprModel, SearchSpace, Variant};
use curekit::bench::{
    build_desk_data, build_training_data, load_bug, patch_examples, plm_sequences, read_benchmark, run_ablation,
    train_apr, write_benchmark, DeskSizes, TrainBudget,
};
use curekit::config::parse_kv;
use curekit::corpus::{length_diff_distribution, read_records, split, write_records, LengthModel};
use curekit::plm::{pretrain, Plm};
use curekit::repair::{correct_rank, repair, repair_records, to_jsonl, MetricsRecord, RepairConfig};
use curekit::search::PenaltyMode;
use curekit::tokenizer::{train_bpe, word_tokenize, BpeModel, Codec, TokenSeq, Vocab};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

fn data<E: Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn internal<E: Display>(e: E) -> CliError {
    CliError::Internal(e.to_string())
}

/// Neural program repair for MiniLang.
#[derive(Parser, Debug)]
#[command(name = "curekit", version)]
struct Cli {
    /// Key-value config file (`key = value` lines); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Learn a word vocabulary or BPE merges from a method corpus.
    TokenizeTrain(TokenizeTrain),
    /// Pre-train the code language model.
    PretrainPlm(PretrainPlm),
    /// Random search over translation-model hyperparameters.
    SearchHparams(SearchHparams),
    /// Fine-tune one repair model on patch records.
    Finetune(Finetune),
    /// Generate a seeded-bug corpus: methods, patch records and a benchmark.
    BenchSeed(BenchSeed),
    /// Generate, rank and validate patches for one buggy line.
    Repair(RepairArgs),
    /// Train and evaluate the five ablation configurations.
    Ablate(Ablate),
    /// Print a metrics report, optionally checking it against a golden file.
    Report(Report),
}

#[derive(Args, Debug)]
struct Common {
    /// Output directory; nothing is written outside it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for every random choice of the stage.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TokenizeTrain {
    #[command(flatten)]
    common: Common,
    /// Method corpus, methods separated by blank lines.
    #[arg(long)]
    corpus: PathBuf,
    /// Learn BPE merges (`true`) or a word vocabulary (`false`).
    #[arg(long)]
    bpe: Option<bool>,
    #[arg(long)]
    target_vocab: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args, Debug)]
struct PretrainPlm {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    corpus: PathBuf,
    /// Directory holding `vocab.txt` and, for BPE, `merges.txt`.
    #[arg(long)]
    tokenizer: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct SearchHparams {
    #[command(flatten)]
    common: Common,
    /// Patch records, one JSON object per line.
    #[arg(long)]
    patches: PathBuf,
    #[arg(long)]
    tokenizer: PathBuf,
    /// Pre-trained language model; omit to embed with plain tables.
    #[arg(long)]
    plm: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Configurations kept (half of each variant).
    #[arg(long)]
    keep: Option<usize>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct Finetune {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    patches: PathBuf,
    #[arg(long)]
    tokenizer: PathBuf,
    #[arg(long)]
    plm: Option<PathBuf>,
    /// `conut` or `fconv`.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct BenchSeed {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    methods: Option<usize>,
    #[arg(long)]
    patches: Option<usize>,
    #[arg(long)]
    bugs: Option<usize>,
}

#[derive(Args, Debug)]
struct SearchFlags {
    #[arg(long)]
    beam: Option<usize>,
    /// Candidates generated per bug.
    #[arg(long)]
    candidates: Option<usize>,
    /// Candidates run against the tests.
    #[arg(long)]
    validate: Option<usize>,
    #[arg(long)]
    identifier_check: Option<bool>,
    #[arg(long)]
    length_control: Option<bool>,
    /// Stop validating at the first plausible patch.
    #[arg(long)]
    early_stop: Option<bool>,
}

#[derive(Args, Debug)]
struct RepairArgs {
    #[command(flatten)]
    common: Common,
    /// Buggy source file.
    #[arg(long)]
    bug: PathBuf,
    /// 1-based buggy line.
    #[arg(long)]
    line: usize,
    /// Test suite; defaults to `<bug stem>.tests.json` beside the source.
    #[arg(long)]
    tests: Option<PathBuf>,
    #[arg(long)]
    tokenizer: PathBuf,
    /// Trained repair model; repeat for an ensemble.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    /// Length-difference model written by `finetune`.
    #[arg(long)]
    length_model: Option<PathBuf>,
    /// Known correct line, marks matching candidates in the report.
    #[arg(long)]
    truth: Option<String>,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(Args, Debug)]
struct Ablate {
    #[command(flatten)]
    common: Common,
    /// Benchmark directory to repair; by default one is seeded.
    #[arg(long)]
    bench: Option<PathBuf>,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(Args, Debug)]
struct Report {
    /// Metrics report written by `ablate`.
    #[arg(long)]
    metrics: PathBuf,
    /// Expected report; fixed-bug counts must agree.
    #[arg(long)]
    golden: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "seed", "out", "bpe", "target_vocab", "epochs", "batch", "lr", "plm_epochs", "plm_batch", "plm_lr", "ft_epochs",
    "ft_batch", "ft_lr", "trials", "keep", "variant", "lambda", "conv_dim", "kernel_size", "n_conv_layers", "dropout",
    "embed_dim", "n_layers", "n_heads", "max_seq_len", "methods", "patches", "bugs", "max_tokens", "beam",
    "candidates", "validate", "donor_cap", "identifier_check", "length_control", "early_stop", "penalty_mode",
];

/// Flag, then config file, then built-in default.
struct Settings {
    file: BTreeMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            None => BTreeMap::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                parse_kv(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
        };
        if let Some(k) = file.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(CliError::Usage(format!("unknown config key `{k}`")));
        }
        Ok(Self { file })
    }

    fn get<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.get(key) {
            Some(text) => text
                .parse()
                .map_err(|e| CliError::Usage(format!("config key `{key}`: {e}"))),
            None => Ok(default),
        }
    }

    fn seed(&self, c: &Common) -> Result<u64> {
        self.get("seed", c.seed, 0)
    }

    fn out(&self, c: &Common) -> Result<OutDir> {
        let dir: PathBuf = self.get("out", c.out.clone(), PathBuf::from("out"))?;
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        Ok(OutDir { dir })
    }

    fn first<T: FromStr + Clone>(&self, keys: &[&str], flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        if flag.is_some() {
            return self.get(keys[0], flag, default);
        }
        for k in keys {
            if self.file.contains_key(*k) {
                return self.get(k, None, default);
            }
        }
        Ok(default)
    }

    fn budget(&self, t: Option<&TrainFlags>, stage: &str) -> Result<TrainBudget> {
        let mut b = TrainBudget::desk();
        let (ep, ba, lr) = t.map_or((None, None, None), |t| (t.epochs, t.batch, t.lr));
        let plm_flags = if stage == "plm" { (ep, ba, lr) } else { (None, None, None) };
        let ft_flags = if stage == "ft" { (ep, ba, lr) } else { (None, None, None) };
        b.plm.epochs = self.first(&["plm_epochs", "epochs"], plm_flags.0, b.plm.epochs)?;
        b.plm.batch_size = self.first(&["plm_batch", "batch"], plm_flags.1, b.plm.batch_size)?;
        b.plm.peak_lr = self.first(&["plm_lr", "lr"], plm_flags.2, b.plm.peak_lr)?;
        b.finetune.epochs = self.first(&["ft_epochs", "epochs"], ft_flags.0, b.finetune.epochs)?;
        b.finetune.batch_size = self.first(&["ft_batch", "batch"], ft_flags.1, b.finetune.batch_size)?;
        b.finetune.peak_lr = self.first(&["ft_lr", "lr"], ft_flags.2, b.finetune.peak_lr)?;
        b.embed_dim = self.get("embed_dim", None, b.embed_dim)?;
        b.n_layers = self.get("n_layers", None, b.n_layers)?;
        b.n_heads = self.get("n_heads", None, b.n_heads)?;
        b.max_seq_len = self.get("max_seq_len", None, b.max_seq_len)?;
        b.target_vocab = self.get("target_vocab", None, b.target_vocab)?;
        b.conut = self.hparams(b.conut.clone(), None)?;
        b.fconv = self.hparams(b.fconv.clone(), None)?;
        if b.plm.batch_size == 0 || b.finetune.batch_size == 0 {
            return Err(CliError::Usage("batch size must be positive".into()));
        }
        Ok(b)
    }

    fn hparams(&self, base: AprHyperparams, lambda: Option<f64>) -> Result<AprHyperparams> {
        let hp = AprHyperparams {
            conv_dim: self.get("conv_dim", None, base.conv_dim)?,
            kernel_size: self.get("kernel_size", None, base.kernel_size)?,
            n_conv_layers: self.get("n_conv_layers", None, base.n_conv_layers)?,
            dropout: self.get("dropout", None, base.dropout)?,
            lambda: self.get("lambda", lambda, base.lambda)?,
            ..base
        };
        hp.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(hp)
    }

    fn sizes(&self, b: Option<&BenchSeed>) -> Result<DeskSizes> {
        let d = DeskSizes::desk();
        Ok(DeskSizes {
            methods: self.get("methods", b.and_then(|b| b.methods), d.methods)?,
            patches: self.get("patches", b.and_then(|b| b.patches), d.patches)?,
            heldout: self.get("bugs", b.and_then(|b| b.bugs), d.heldout)?,
            max_tokens: self.get("max_tokens", None, d.max_tokens)?,
        })
    }

    fn repair_cfg(&self, f: &SearchFlags) -> Result<RepairConfig> {
        let mut c = RepairConfig::desk();
        c.search.beam_size = self.get("beam", f.beam, c.search.beam_size)?;
        c.generated_cap = self.get("candidates", f.candidates, c.generated_cap)?;
        c.search.n_candidates = c.generated_cap;
        c.validation_cap = self.get("validate", f.validate, c.validation_cap)?;
        c.donor_cap = self.get("donor_cap", None, c.donor_cap)?;
        c.search.identifier_check = self.get("identifier_check", f.identifier_check, c.search.identifier_check)?;
        c.search.length_control = self.get("length_control", f.length_control, c.search.length_control)?;
        c.early_stop = self.get("early_stop", f.early_stop, c.early_stop)?;
        let mode: String = self.get("penalty_mode", None, "prose".to_string())?;
        c.search.penalty_mode = match mode.as_str() {
            "prose" => PenaltyMode::Prose,
            "literal" => PenaltyMode::Literal,
            m => return Err(CliError::Usage(format!("penalty_mode `{m}`: expected prose or literal"))),
        };
        if c.search.beam_size == 0 || c.generated_cap == 0 {
            return Err(CliError::Usage("beam and candidates must be positive".into()));
        }
        Ok(c)
    }
}

/// Every file a subcommand writes goes through here.
struct OutDir {
    dir: PathBuf,
}

impl OutDir {
    fn path(&self, name: &str) -> Result<PathBuf> {
        let rel = Path::new(name);
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(CliError::Internal(format!("refusing to write `{name}` outside the output directory")));
        }
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
        }
        Ok(p)
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.path(name)?;
        std::fs::write(&p, contents).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        Ok(p)
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Methods separated by blank lines.
fn read_methods(path: &Path) -> Result<Vec<String>> {
    let text = read(path)?;
    let methods: Vec<String> = text
        .split("\n\n")
        .map(str::trim_end)
        .filter(|m| !m.trim().is_empty())
        .map(str::to_string)
        .collect();
    if methods.is_empty() {
        return Err(CliError::Data(format!("{}: no methods", path.display())));
    }
    Ok(methods)
}

fn load_codec(dir: &Path) -> Result<Codec> {
    let vocab = read(&dir.join("vocab.txt"))?;
    let merges = dir.join("merges.txt");
    if merges.exists() {
        Ok(Codec::Bpe(BpeModel::from_files_text(&vocab, &read(&merges)?).map_err(data)?))
    } else {
        Ok(Codec::Word(Vocab::from_text(&vocab).map_err(data)?))
    }
}

fn load_plm(path: Option<&PathBuf>) -> Result<Option<Plm<f32>>> {
    path.map(|p| Plm::load(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))))
        .transpose()
}

fn tokenize_train(s: &Settings, a: &TokenizeTrain) -> Result<()> {
    let out = s.out(&a.common)?;
    let corpus: Vec<TokenSeq> = read_methods(&a.corpus)?.iter().map(|m| word_tokenize(m)).collect();
    let budget = s.budget(None, "")?;
    if s.get("bpe", a.bpe, true)? {
        let model = train_bpe(&corpus, s.get("target_vocab", a.target_vocab, budget.target_vocab)?).map_err(data)?;
        out.write("vocab.txt", &model.vocab().to_text())?;
        out.write("merges.txt", &model.merges_text())?;
        eprintln!("bpe vocabulary: {} tokens, {} merges", model.vocab().len(), model.merges().len());
    } else {
        let v = Vocab::word_level(&corpus);
        out.write("vocab.txt", &v.to_text())?;
        eprintln!("word vocabulary: {} tokens", v.len());
    }
    Ok(())
}

fn pretrain_plm(s: &Settings, a: &PretrainPlm) -> Result<()> {
    let out = s.out(&a.common)?;
    let seed = s.seed(&a.common)?;
    let codec = load_codec(&a.tokenizer)?;
    let mut budget = s.budget(Some(&a.train), "plm")?;
    budget.plm.seed = seed;
    let cfg = budget.plm_config(codec.vocab().len());
    let seqs = plm_sequences(&read_methods(&a.corpus)?, &codec, cfg.max_seq_len).map_err(data)?;
    let (train, val) = split(&seqs, budget.validation_fraction, seed);
    let (plm, log) = pretrain(&train, &val, cfg, budget.plm).map_err(internal)?;
    plm.save(&out.path("plm.bin")?).map_err(internal)?;
    out.write("plm_log.jsonl", &to_jsonl(&log))?;
    for l in &log {
        eprintln!("epoch {}: val log-likelihood {:.4}", l.epoch, l.val_log_likelihood);
    }
    Ok(())
}

fn parse_variant(s: &str) -> Result<Variant> {
    match s {
        "conut" => Ok(Variant::Conut),
        "fconv" => Ok(Variant::Fconv),
        v => Err(CliError::Usage(format!("variant `{v}`: expected conut or fconv"))),
    }
}

fn patch_data(path: &Path, codec: &Codec, max_seq_len: usize) -> Result<Vec<curekit::corpus::PatchExample>> {
    let records = read_records(&read(path)?).map_err(data)?;
    let desk = curekit::bench::DeskData {
        methods: Vec::new(),
        patches: records,
        heldout: Vec::new(),
    };
    let ex = patch_examples(&desk, codec, max_seq_len).map_err(data)?;
    if ex.is_empty() {
        return Err(CliError::Data(format!("{}: no usable patch records", path.display())));
    }
    Ok(ex)
}

fn search_hparams(s: &Settings, a: &SearchHparams) -> Result<()> {
    let out = s.out(&a.common)?;
    let seed = s.seed(&a.common)?;
    let codec = load_codec(&a.tokenizer)?;
    let plm = load_plm(a.plm.as_ref())?;
    let budget = s.budget(Some(&a.train), "ft")?;
    let examples = patch_data(&a.patches, &codec, budget.max_seq_len)?;
    let (train, val) = split(&examples, budget.validation_fraction, seed);
    let base = AprConfig {
        hp: budget.conut.clone(),
        plm: budget.plm_config(codec.vocab().len()),
        use_plm: plm.is_some(),
    };
    let trials = s.get("trials", a.trials, 6)?;
    let keep = s.get("keep", a.keep, 2)?;
    let (top, records) = random_search(
        &SearchSpace::desk(),
        trials,
        budget.finetune,
        keep,
        seed,
        &base,
        plm.as_ref(),
        &train,
        &val,
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    out.write("trials.jsonl", &write_trial_log(&records))?;
    out.write("top.json", &serde_json::to_string_pretty(&top).map_err(internal)?)?;
    Ok(())
}

fn finetune_cmd(s: &Settings, a: &Finetune) -> Result<()> {
    let out = s.out(&a.common)?;
    let seed = s.seed(&a.common)?;
    let codec = load_codec(&a.tokenizer)?;
    let plm = load_plm(a.plm.as_ref())?;
    let mut budget = s.budget(Some(&a.train), "ft")?;
    let variant = parse_variant(&s.get("variant", a.variant.clone(), "conut".to_string())?)?;
    let hp = s.hparams(AprHyperparams::desk(variant), a.lambda)?;
    budget.conut = AprHyperparams { variant: Variant::Conut, ..hp.clone() };
    budget.fconv = AprHyperparams { variant: Variant::Fconv, ..hp };
    if let Some(p) = &plm {
        budget.embed_dim = p.config.embed_dim;
        budget.n_layers = p.config.n_layers;
        budget.n_heads = p.config.n_heads;
        budget.max_seq_len = p.config.max_seq_len;
        if p.config.vocab_size != codec.vocab().len() {
            return Err(CliError::Data("language model and tokenizer vocabularies differ".into()));
        }
    }
    let examples = patch_data(&a.patches, &codec, budget.max_seq_len)?;
    let lm = length_diff_distribution(&examples).map_err(data)?;
    let (model, log) = train_apr(&codec, plm.as_ref(), &examples, &budget, variant, seed).map_err(internal)?;
    let name = match variant {
        Variant::Conut => "apr-conut.bin",
        Variant::Fconv => "apr-fconv.bin",
    };
    model.save(&out.path(name)?).map_err(internal)?;
    out.write("length_model.json", &serde_json::to_string(&lm).map_err(internal)?)?;
    out.write(&format!("{name}.log.jsonl"), &to_jsonl(&log))?;
    Ok(())
}

fn bench_seed(s: &Settings, a: &BenchSeed) -> Result<()> {
    let out = s.out(&a.common)?;
    let data = build_desk_data(&s.sizes(Some(a))?, s.seed(&a.common)?);
    out.write("methods.txt", &(data.methods.join("\n\n") + "\n"))?;
    out.write("patches.jsonl", &write_records(&data.patches))?;
    write_benchmark(&out.path("bench")?, &data.heldout).map_err(data_err)?;
    eprintln!(
        "{} methods, {} patch records, {} benchmark bugs",
        data.methods.len(),
        data.patches.len(),
        data.heldout.len()
    );
    Ok(())
}

fn data_err<E: Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn repair_cmd(s: &Settings, a: &RepairArgs) -> Result<()> {
    let out = s.out(&a.common)?;
    let cfg = s.repair_cfg(&a.search)?;
    let codec = load_codec(&a.tokenizer)?;
    let source = read(&a.bug)?;
    let tests_path = a.tests.clone().unwrap_or_else(|| a.bug.with_extension("tests.json"));
    let bug = load_bug(&source, a.line, &read(&tests_path)?, a.truth.as_deref()).map_err(data)?;
    let models = a
        .models
        .iter()
        .map(|p| AprModel::load(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))))
        .collect::<Result<Vec<_>>>()?;
    if models.iter().any(|m| m.config.plm.vocab_size != codec.vocab().len()) {
        return Err(CliError::Data("model and tokenizer vocabularies differ".into()));
    }
    let lm: Option<LengthModel> = match &a.length_model {
        Some(p) => Some(serde_json::from_str(&read(p)?).map_err(data)?),
        None => None,
    };
    if cfg.search.length_control && lm.is_none() {
        return Err(CliError::Usage("length control needs --length-model".into()));
    }
    let outcome = repair(&bug, &models, &codec, lm.as_ref(), &cfg).map_err(data)?;
    let id = a.bug.file_stem().and_then(|s| s.to_str()).unwrap_or("bug").to_string();
    let truth = a.truth.clone().unwrap_or_default();
    out.write("repair.jsonl", &to_jsonl(&repair_records(&id, &truth, &outcome.candidates)))?;
    let plausible = outcome
        .candidates
        .iter()
        .filter(|c| c.status == curekit::repair::ValidationStatus::Plausible)
        .count();
    eprintln!("{} candidates, {plausible} plausible", outcome.candidates.len());
    if let Some(t) = &a.truth {
        match correct_rank(&outcome.candidates, t) {
            Some(r) => eprintln!("ground truth at rank {r}"),
            None => eprintln!("ground truth not generated"),
        }
    }
    Ok(())
}

fn ablate(s: &Settings, a: &Ablate) -> Result<()> {
    let out = s.out(&a.common)?;
    let seed = s.seed(&a.common)?;
    let cfg = s.repair_cfg(&a.search)?;
    let sizes = s.sizes(None)?;
    let budget = s.budget(None, "")?;
    let (data, ids) = match &a.bench {
        Some(dir) => {
            let bugs = read_benchmark(dir).map_err(data)?;
            let ids: Vec<String> = bugs.iter().map(|(id, _)| id.clone()).collect();
            (build_training_data(&sizes, seed, bugs.into_iter().map(|(_, b)| b).collect()), ids)
        }
        None => {
            let d = build_desk_data(&sizes, seed);
            let ids = (1..=d.heldout.len()).map(|i| format!("b{i}")).collect();
            (d, ids)
        }
    };
    let result = run_ablation(&data, &budget, &cfg, seed).map_err(internal)?;
    for run in &result.runs {
        let mut recs = Vec::new();
        for ((bug, o), id) in data.heldout.iter().zip(&run.outcomes).zip(&ids) {
            recs.extend(repair_records(id, &bug.original_line, &o.candidates));
        }
        out.write(&format!("repair-{}.jsonl", run.row.name.replacen('+', "plus-", 1).replace('+', "-plus-")), &to_jsonl(&recs))?;
    }
    let metrics = result.metrics();
    out.write("metrics.jsonl", &to_jsonl(&metrics))?;
    print_metrics(&metrics);
    Ok(())
}

fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    read(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::Data(format!("{}: {e}", path.display()))))
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

fn print_metrics(ms: &[MetricsRecord]) {
    println!("{:<10} {:>6} {:>9} {:>8} {:>9} {:>10}", "config", "fixed", "plausible", "comp@30", "comp@100", "mean_rank");
    for m in ms {
        println!(
            "{:<10} {:>6} {:>9} {:>8} {:>9} {:>10}",
            m.config,
            m.bugs_fixed,
            m.plausible,
            fmt_opt(m.compilable_rate_30),
            fmt_opt(m.compilable_rate_100),
            fmt_opt(m.mean_correct_rank)
        );
    }
}

fn report(a: &Report) -> Result<()> {
    let ms = read_metrics(&a.metrics)?;
    print_metrics(&ms);
    if let Some(g) = &a.golden {
        let golden = read_metrics(g)?;
        let counts = |v: &[MetricsRecord]| v.iter().map(|m| (m.config.clone(), m.bugs_fixed)).collect::<Vec<_>>();
        if counts(&ms) != counts(&golden) {
            return Err(CliError::Data(format!(
                "fixed-bug counts {:?} differ from golden {:?}",
                counts(&ms),
                counts(&golden)
            )));
        }
        println!("fixed-bug counts match {}", g.display());
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CUREKIT_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Usage(format!("CUREKIT_THREADS=`{v}` is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(internal)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let s = Settings::load(cli.config.as_deref())?;
    match &cli.cmd {
        Cmd::TokenizeTrain(a) => tokenize_train(&s, a),
        Cmd::PretrainPlm(a) => pretrain_plm(&s, a),
        Cmd::SearchHparams(a) => search_hparams(&s, a),
        Cmd::Finetune(a) => finetune_cmd(&s, a),
        Cmd::BenchSeed(a) => bench_seed(&s, a),
        Cmd::Repair(a) => repair_cmd(&s, a),
        Cmd::Ablate(a) => ablate(&s, a),
        Cmd::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("curekit: {e}");
            ExitCode::from(e.code())
        }
    }
}
