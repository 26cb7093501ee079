//! `deid` command line: one subcommand per pipeline stage.
//!
//! Every subcommand reads an optional TOML config (`--config`); explicit flags
//! override config values, which override built-in defaults.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus_io::{
    corpus_statistics, generate_synthetic_corpus, read_corpus_dir, read_split_manifest, render_statistics,
    split_corpus, write_corpus_dir, write_split_manifest, CorpusSplit, CorpusStats, ParseOptions, SplitName,
    SplitRatios, SyntheticConfig,
};
use crate::deid_output::{apply_policy, write_manifest, DeidMode, DeidPolicy};
use crate::evaluation::{evaluate, evaluate_at, predict_sequence, render_report, ReportFormat};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig};
use crate::tags::PhiClass;
use crate::tokenizer_align::{
    align_corpus, build_vocab, collapse_bio, encode, read_token_file, tokenize, write_token_file, AlignmentStatus,
    SubwordEncoding, TokenSequence, Vocab,
};
use crate::training::{sweep, train, HyperParams, Optimizer, RunLedger, SweepGrid, TaggerRunner};

pub const DEFAULT_SEED: u64 = 13;

#[derive(Debug, Parser)]
#[command(name = "deid", version, about = "Clinical text de-identification pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML file with default values for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every stochastic stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic annotated corpus.
    Gen(GenArgs),
    /// Parse and validate a corpus directory.
    Parse(CorpusArgs),
    /// Tokenize and BIO-label a corpus; report dropped documents.
    Align(CorpusArgs),
    /// Per-class token counts.
    Stats(StatsArgs),
    /// Seeded train/validation/test split.
    Split(SplitArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Train every point of a hyperparameter grid and keep the best.
    Sweep(SweepArgs),
    /// Score a trained model on one split.
    Eval(EvalArgs),
    /// Write de-identified copies of a corpus.
    Deid(DeidArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    docs: Option<usize>,
    /// `full` (every taggable class) or `sentences` (one PHI sentence per document).
    #[arg(long)]
    mix: Option<String>,
}

#[derive(Debug, Args)]
struct CorpusArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Resolve overlapping spans by keeping the longest instead of failing.
    #[arg(long)]
    keep_longest: bool,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    tokens: Option<PathBuf>,
    /// Split manifest; adds one column per split.
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    tokens: Option<PathBuf>,
    /// `train/validation/test`, e.g. `0.5/0.1/0.4`.
    #[arg(long)]
    ratios: Option<String>,
}

#[derive(Debug, Args, Clone)]
struct DataArgs {
    #[arg(long)]
    tokens: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    /// `tiny` or a preset name such as `bert-base`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// `sgd` (default) or `adam`.
    #[arg(long)]
    optimizer: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    decay: Option<f64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated epoch counts.
    #[arg(long)]
    grid_epochs: Option<String>,
    /// Comma-separated learning rates.
    #[arg(long)]
    grid_lr: Option<String>,
    /// Comma-separated weight decays.
    #[arg(long)]
    grid_decay: Option<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    tokens: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    /// Directory written by `train` or `sweep`.
    #[arg(long)]
    model_dir: Option<PathBuf>,
    /// `train`, `validation` or `test`.
    #[arg(long)]
    which: Option<String>,
    /// `table-text`, `delimited` or `bar-data`.
    #[arg(long)]
    format: Option<String>,
    /// Model label used in reports.
    #[arg(long)]
    name: Option<String>,
    /// Score whole entities (exact bounds and class) instead of tokens.
    #[arg(long)]
    entities: bool,
}

#[derive(Debug, Args)]
struct DeidArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    model_dir: Option<PathBuf>,
    /// `redact` or `tag-insert`.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    glyph: Option<String>,
    /// Replacement template containing `{class}`.
    #[arg(long)]
    template: Option<String>,
    #[arg(long)]
    keep_longest: bool,
}

/// Values a `--config` file may set. Keys mirror flag names with `_`.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub tokens: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub docs: Option<usize>,
    pub mix: Option<String>,
    pub keep_longest: Option<bool>,
    pub ratios: Option<String>,
    pub model: Option<String>,
    pub vocab_size: Option<usize>,
    pub max_len: Option<usize>,
    pub batch_size: Option<usize>,
    pub optimizer: Option<String>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub decay: Option<f64>,
    pub grid_epochs: Option<Vec<usize>>,
    pub grid_lr: Option<Vec<f64>>,
    pub grid_decay: Option<Vec<f64>>,
    pub which: Option<String>,
    pub format: Option<String>,
    pub name: Option<String>,
    pub mode: Option<String>,
    pub glyph: Option<String>,
    pub template: Option<String>,
}

/// Settings a trained model directory carries besides the checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    model: String,
    max_len: usize,
    seed: u64,
}

const DEFAULT_MODEL: &str = "tiny";
const DEFAULT_VOCAB_SIZE: usize = 2000;
const DEFAULT_MAX_LEN: usize = 16;
const DEFAULT_BATCH_SIZE: usize = 8;
const DEFAULT_EPOCHS: usize = 40;
const DEFAULT_LR: f64 = 0.3;
const DEFAULT_DECAY: f64 = 0.0;

enum Failure {
    Usage(String),
    Data(String),
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn data(msg: impl Into<String>) -> Failure {
    Failure::Data(msg.into())
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status: 0 on success, 1 on data errors, 2 on usage errors.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("deid: usage error: {msg}");
            2
        }
        Err(Failure::Data(msg)) => {
            eprintln!("deid: error: {}", msg.lines().next().unwrap_or(""));
            1
        }
    }
}

struct Ctx {
    cfg: PipelineConfig,
    seed: u64,
    jobs: usize,
    out: Option<PathBuf>,
}

impl Ctx {
    fn out(&self) -> Result<&Path, Failure> {
        self.out.as_deref().ok_or_else(|| usage("--out is required"))
    }
}

fn required<T>(flag: Option<T>, cfg: Option<T>, name: &str) -> Result<T, Failure> {
    flag.or(cfg).ok_or_else(|| usage(format!("--{name} is required")))
}

fn dispatch(cli: Cli) -> Outcome {
    let cfg: PipelineConfig = match &cli.global.config {
        Some(path) => {
            let src = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
            toml::from_str(&src).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    let ctx = Ctx {
        seed: cli.global.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED),
        jobs: cli.global.jobs.or(cfg.jobs).unwrap_or(1).max(1),
        out: cli.global.out.clone().or_else(|| cfg.out.clone()),
        cfg,
    };
    match cli.command {
        Command::Gen(a) => cmd_gen(&ctx, a),
        Command::Parse(a) => cmd_parse(&ctx, a),
        Command::Align(a) => cmd_align(&ctx, a),
        Command::Stats(a) => cmd_stats(&ctx, a),
        Command::Split(a) => cmd_split(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Sweep(a) => cmd_sweep(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Deid(a) => cmd_deid(&ctx, a),
    }
}

fn write_file(path: &Path, contents: &str) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| data(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))
}

/// Writes to `--out` when given, else stdout.
fn emit(ctx: &Ctx, text: &str) -> Outcome {
    match &ctx.out {
        Some(path) => write_file(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_gen(ctx: &Ctx, a: GenArgs) -> Outcome {
    let out = ctx.out()?;
    let n = a.docs.or(ctx.cfg.docs).unwrap_or(200);
    let mix = a.mix.or_else(|| ctx.cfg.mix.clone()).unwrap_or_else(|| "full".into());
    let config = match mix.as_str() {
        "full" => SyntheticConfig::full_mix(n, ctx.seed),
        "sentences" => SyntheticConfig::sentences(n, ctx.seed, PhiClass::taggable()),
        other => return Err(usage(format!("unknown mix {other:?} (expected full or sentences)"))),
    };
    let docs = generate_synthetic_corpus(&config)?;
    write_corpus_dir(out, &docs)?;
    write_file(
        &out.join("generation.txt"),
        &format!("# seed={} docs={n} mix={mix}\n", ctx.seed),
    )?;
    println!("wrote {} documents to {}", docs.len(), out.display());
    Ok(())
}

fn load_corpus(ctx: &Ctx, corpus: Option<PathBuf>, keep_longest: bool) -> Result<Vec<crate::corpus_io::AnnotatedDocument>, Failure> {
    let dir = required(corpus, ctx.cfg.corpus.clone(), "corpus")?;
    let opts = ParseOptions {
        keep_longest: keep_longest || ctx.cfg.keep_longest.unwrap_or(false),
    };
    Ok(read_corpus_dir(&dir, opts)?)
}

fn cmd_parse(ctx: &Ctx, a: CorpusArgs) -> Outcome {
    let docs = load_corpus(ctx, a.corpus, a.keep_longest)?;
    let spans: usize = docs.iter().map(|d| d.spans.len()).sum();
    emit(ctx, &format!("parsed {} documents with {spans} PHI spans\n", docs.len()))
}

fn cmd_align(ctx: &Ctx, a: CorpusArgs) -> Outcome {
    let out = ctx.out()?;
    let docs = load_corpus(ctx, a.corpus, a.keep_longest)?;
    let (seqs, reports) = align_corpus(&docs);
    write_file(&out.join("tokens.tsv"), &write_token_file(&seqs))?;
    let mut report = String::from("doc_id\tstatus\tunaligned_spans\n");
    for r in &reports {
        let status = match r.status {
            AlignmentStatus::Aligned => "aligned",
            AlignmentStatus::Dropped => "dropped",
        };
        let _ = writeln!(report, "{}\t{status}\t{}", r.doc_id, r.reasons.join(","));
    }
    let dropped = reports.iter().filter(|r| r.status == AlignmentStatus::Dropped).count();
    let _ = writeln!(report, "# aligned={} dropped={dropped} total={}", seqs.len(), reports.len());
    write_file(&out.join("alignment.tsv"), &report)?;
    println!("aligned {} of {} documents ({dropped} dropped)", seqs.len(), reports.len());
    Ok(())
}

fn load_tokens(ctx: &Ctx, tokens: Option<PathBuf>) -> Result<Vec<TokenSequence>, Failure> {
    let path = required(tokens, ctx.cfg.tokens.clone(), "tokens")?;
    read_token_file(&read_file(&path)?).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn load_split(ctx: &Ctx, split: Option<PathBuf>) -> Result<CorpusSplit, Failure> {
    let path = required(split, ctx.cfg.split.clone(), "split")?;
    Ok(read_split_manifest(&read_file(&path)?)?)
}

fn select(seqs: &[TokenSequence], split: &CorpusSplit, which: SplitName) -> Vec<TokenSequence> {
    seqs.iter()
        .filter(|s| split.assignment(&s.doc_id) == Some(which))
        .cloned()
        .collect()
}

fn cmd_stats(ctx: &Ctx, a: StatsArgs) -> Outcome {
    let seqs = load_tokens(ctx, a.tokens)?;
    let split_path = a.split.or_else(|| ctx.cfg.split.clone());
    let mut columns: Vec<(String, CorpusStats)> = Vec::new();
    if let Some(path) = split_path {
        let split = read_split_manifest(&read_file(&path)?)?;
        for which in SplitName::ALL {
            columns.push((which.as_str().to_string(), corpus_statistics(&select(&seqs, &split, which))));
        }
    }
    columns.push(("all".into(), corpus_statistics(&seqs)));
    let refs: Vec<(&str, &CorpusStats)> = columns.iter().map(|(n, s)| (n.as_str(), s)).collect();
    emit(ctx, &render_statistics(&refs))
}

fn cmd_split(ctx: &Ctx, a: SplitArgs) -> Outcome {
    let seqs = load_tokens(ctx, a.tokens)?;
    let ratios = match a.ratios.or_else(|| ctx.cfg.ratios.clone()) {
        None => SplitRatios::default(),
        Some(s) => {
            let parts: Vec<f64> = s
                .split('/')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| usage(format!("bad ratios {s:?}")))?;
            let [train, validation, test] = parts[..] else {
                return Err(usage(format!("ratios need three parts, got {s:?}")));
            };
            SplitRatios { train, validation, test }
        }
    };
    let ids: Vec<String> = seqs.iter().map(|s| s.doc_id.clone()).collect();
    let split = split_corpus(&ids, ratios, ctx.seed)?;
    emit(ctx, &write_split_manifest(&split))
}

struct Prepared {
    config: ModelConfig,
    model_name: String,
    vocab: Vocab,
    max_len: usize,
    train_windows: Vec<SubwordEncoding>,
    validation: Vec<TokenSequence>,
    batch_size: usize,
    optimizer: Optimizer,
}

fn prepare(ctx: &Ctx, a: DataArgs) -> Result<Prepared, Failure> {
    let seqs = load_tokens(ctx, a.tokens)?;
    let split = load_split(ctx, a.split)?;
    let train_seqs = select(&seqs, &split, SplitName::Train);
    if train_seqs.is_empty() {
        return Err(data("training split is empty"));
    }
    let validation = select(&seqs, &split, SplitName::Validation);
    let vocab_size = a.vocab_size.or(ctx.cfg.vocab_size).unwrap_or(DEFAULT_VOCAB_SIZE);
    let max_len = a.max_len.or(ctx.cfg.max_len).unwrap_or(DEFAULT_MAX_LEN);
    if max_len < 8 {
        return Err(usage("--max-len must be at least 8"));
    }
    let vocab = build_vocab(
        train_seqs.iter().flat_map(|s| s.tokens.iter().map(|t| t.surface.as_str())),
        vocab_size,
        2,
    )?;
    let model_name = a.model.or_else(|| ctx.cfg.model.clone()).unwrap_or_else(|| DEFAULT_MODEL.into());
    let mut config = match model_name.as_str() {
        "tiny" => ModelConfig::tiny(vocab.len(), max_len),
        name => ModelConfig::by_name(name).ok_or_else(|| usage(format!("unknown model {name:?}")))?,
    };
    config.vocab_size = vocab.len();
    config.max_positions = config.max_positions.max(max_len);
    let optimizer = match a.optimizer.or_else(|| ctx.cfg.optimizer.clone()).as_deref() {
        None | Some("sgd") => Optimizer::Sgd,
        Some("adam") => Optimizer::Adam,
        Some(other) => return Err(usage(format!("unknown optimizer {other:?}"))),
    };
    let train_windows = train_seqs.iter().flat_map(|s| encode(s, &vocab, max_len)).collect();
    Ok(Prepared {
        config,
        model_name,
        vocab,
        max_len,
        train_windows,
        validation,
        batch_size: a.batch_size.or(ctx.cfg.batch_size).unwrap_or(DEFAULT_BATCH_SIZE),
        optimizer,
    })
}

fn write_model_dir_files(dir: &Path, p: &Prepared, seed: u64) -> Outcome {
    write_file(&dir.join("vocab.txt"), &p.vocab.to_file_string())?;
    let meta = ModelMeta {
        model: p.model_name.clone(),
        max_len: p.max_len,
        seed,
    };
    write_file(&dir.join("model.json"), &serde_json::to_string_pretty(&meta).expect("meta serializes"))
}

fn cmd_train(ctx: &Ctx, a: TrainArgs) -> Outcome {
    let out = ctx.out()?.to_path_buf();
    let p = prepare(ctx, a.data)?;
    let hp = HyperParams {
        batch_size: p.batch_size,
        num_epochs: a.epochs.or(ctx.cfg.epochs).unwrap_or(DEFAULT_EPOCHS),
        learning_rate: a.lr.or(ctx.cfg.lr).unwrap_or(DEFAULT_LR),
        weight_decay: a.decay.or(ctx.cfg.decay).unwrap_or(DEFAULT_DECAY),
        seed: ctx.seed,
    };
    hp.validate().map_err(|e| usage(e.to_string()))?;
    let mut model = crate::model::init_model::<f32>(&p.config, ctx.seed)?;
    let mut record = train(&mut model, &p.train_windows, &hp, p.optimizer)?;
    std::fs::create_dir_all(&out)?;
    if record.completed() && !p.validation.is_empty() {
        let report = evaluate(&model, &p.validation, &p.vocab, p.max_len, "validation")?;
        record.validation = Some((&report).into());
    }
    let ckpt = out.join("model.ckpt");
    save_checkpoint(&ckpt, &model, Some(ctx.seed))?;
    record.checkpoint = Some(ckpt.display().to_string());
    write_model_dir_files(&out, &p, ctx.seed)?;
    write_file(&out.join("run.json"), &serde_json::to_string_pretty(&record).expect("record serializes"))?;
    if !record.completed() {
        return Err(data(format!("training diverged: {:?}", record.status)));
    }
    let f1 = record.validation.map_or(String::from("n/a"), |m| format!("{:.4}", m.f1));
    println!(
        "trained {} epochs, final loss {:.4}, validation F1 {f1}",
        hp.num_epochs,
        record.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn list<T: std::str::FromStr>(s: &str, name: &str) -> Result<Vec<T>, Failure> {
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| usage(format!("bad --{name} value {x:?}"))))
        .collect()
}

fn cmd_sweep(ctx: &Ctx, a: SweepArgs) -> Outcome {
    let out = ctx.out()?.to_path_buf();
    let p = prepare(ctx, a.data)?;
    if p.validation.is_empty() {
        return Err(data("validation split is empty"));
    }
    let base = SweepGrid::for_model(&p.model_name).unwrap_or_else(|| SweepGrid::desk(p.batch_size));
    let grid = SweepGrid {
        batch_size: p.batch_size,
        epochs: match a.grid_epochs {
            Some(s) => list(&s, "grid-epochs")?,
            None => ctx.cfg.grid_epochs.clone().unwrap_or(base.epochs),
        },
        learning_rates: match a.grid_lr {
            Some(s) => list(&s, "grid-lr")?,
            None => ctx.cfg.grid_lr.clone().unwrap_or(base.learning_rates),
        },
        weight_decays: match a.grid_decay {
            Some(s) => list(&s, "grid-decay")?,
            None => ctx.cfg.grid_decay.clone().unwrap_or(base.weight_decays),
        },
    };
    let points = grid.points(ctx.seed);
    for hp in &points {
        hp.validate().map_err(|e| usage(e.to_string()))?;
    }
    let ckpt_dir = out.join("runs");
    std::fs::create_dir_all(&ckpt_dir)?;
    write_model_dir_files(&out, &p, ctx.seed)?;
    let runner = TaggerRunner {
        config: p.config.clone(),
        init_seed: ctx.seed,
        train_windows: p.train_windows,
        validation: p.validation,
        vocab: p.vocab,
        max_len: p.max_len,
        optimizer: p.optimizer,
        checkpoint_dir: Some(ckpt_dir),
    };
    let ledger = RunLedger::new(&out.join("runs.jsonl"));
    let outcome = sweep(&points, &runner, Some(&ledger), ctx.jobs)?;
    if let Some(best) = &outcome.best.checkpoint {
        std::fs::copy(best, out.join("model.ckpt"))?;
    }
    write_file(&out.join("best.json"), &serde_json::to_string_pretty(&outcome.best).expect("record serializes"))?;
    let m = outcome.best.validation.expect("best run has validation metrics");
    println!(
        "{} runs ({} new); best {} with validation F1 {:.4}",
        outcome.records.len(),
        outcome.new_runs,
        outcome.best.hyperparams.key(),
        m.f1
    );
    Ok(())
}

struct LoadedModel {
    model: crate::model::TaggerModel<f32>,
    vocab: Vocab,
    max_len: usize,
    name: String,
}

fn load_model_dir(ctx: &Ctx, dir: Option<PathBuf>) -> Result<LoadedModel, Failure> {
    let dir = required(dir, ctx.cfg.model_dir.clone(), "model-dir")?;
    let meta: ModelMeta = serde_json::from_str(&read_file(&dir.join("model.json"))?)
        .map_err(|e| data(format!("{}: {e}", dir.join("model.json").display())))?;
    let vocab = Vocab::from_file_string(&read_file(&dir.join("vocab.txt"))?)?;
    let (model, _) = load_checkpoint(&dir.join("model.ckpt"))?;
    if model.config.vocab_size != vocab.len() {
        return Err(data("checkpoint and vocabulary sizes differ"));
    }
    Ok(LoadedModel {
        model,
        vocab,
        max_len: meta.max_len,
        name: meta.model,
    })
}

fn cmd_eval(ctx: &Ctx, a: EvalArgs) -> Outcome {
    let format: ReportFormat = a
        .format
        .or_else(|| ctx.cfg.format.clone())
        .unwrap_or_else(|| "table-text".into())
        .parse()
        .map_err(|e: crate::evaluation::EvalError| usage(e.to_string()))?;
    let which: SplitName = a
        .which
        .or_else(|| ctx.cfg.which.clone())
        .unwrap_or_else(|| "test".into())
        .parse()
        .map_err(|e: crate::corpus_io::CorpusError| usage(e.to_string()))?;
    let seqs = load_tokens(ctx, a.tokens)?;
    let split = load_split(ctx, a.split)?;
    let loaded = load_model_dir(ctx, a.model_dir)?;
    let subset = select(&seqs, &split, which);
    if subset.is_empty() {
        return Err(data(format!("{which} split is empty")));
    }
    let mut report = evaluate_at(&loaded.model, &subset, &loaded.vocab, loaded.max_len, which.as_str(), a.entities)?;
    report.model = a.name.or_else(|| ctx.cfg.name.clone()).unwrap_or(loaded.name);
    emit(ctx, &render_report(&report, format))
}

fn cmd_deid(ctx: &Ctx, a: DeidArgs) -> Outcome {
    let out = ctx.out()?.to_path_buf();
    let mode: DeidMode = a
        .mode
        .or_else(|| ctx.cfg.mode.clone())
        .unwrap_or_else(|| "tag-insert".into())
        .parse()
        .map_err(|e: crate::deid_output::DeidError| usage(e.to_string()))?;
    let defaults = DeidPolicy::default();
    let policy = DeidPolicy {
        mode,
        glyph: a.glyph.or_else(|| ctx.cfg.glyph.clone()).unwrap_or(defaults.glyph),
        template: a.template.or_else(|| ctx.cfg.template.clone()).unwrap_or(defaults.template),
    };
    policy.validate().map_err(|e| usage(e.to_string()))?;
    let docs = load_corpus(ctx, a.corpus, a.keep_longest)?;
    let loaded = load_model_dir(ctx, a.model_dir)?;
    std::fs::create_dir_all(&out)?;
    let mut replaced = 0;
    for doc in &docs {
        let tokens = tokenize(&doc.text);
        let seq = TokenSequence {
            doc_id: doc.doc_id.clone(),
            labels: vec![crate::tags::BioLabel::OUTSIDE; tokens.len()],
            tokens,
        };
        let labels = collapse_bio(&predict_sequence(&loaded.model, &seq, &loaded.vocab, loaded.max_len)?);
        let result = apply_policy(&doc.text, &seq.tokens, &labels, &policy)?;
        replaced += result.manifest.len();
        write_file(&out.join(format!("{}.txt", doc.doc_id)), &result.text)?;
        write_file(&out.join(format!("{}.manifest.jsonl", doc.doc_id)), &write_manifest(&result.manifest))?;
    }
    println!("de-identified {} documents ({replaced} replaced runs)", docs.len());
    Ok(())
}
