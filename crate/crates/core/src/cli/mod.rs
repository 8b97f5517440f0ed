//! The `treehole` command line.
//!
//! Every command takes explicit paths, writes its files into `--out` (a
//! directory) and finishes with `manifest.json` there. Exit status is 0 on
//! success, 2 for invalid input or configuration and 3 when training
//! diverges.

mod manifest;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::analysis::{correlation_report, series_svg, HitWeighting};
use crate::corpus::synth::MonthWindow;
use crate::corpus::{generate_synthetic, load_corpus, save_corpus, CorpusSplit, SplitName, SynthConfig};
use crate::embed_refine::{corpus_sentences, corpus_vocabulary, refine, EmbeddingTable, RefineConfig};
use crate::error::{Error, Result};
use crate::lexicon::{select_sentences, Lexicon};
use crate::sdm::InputMask;
use crate::trainer::{evaluate, harder_subset, run_ablation, train, EvalReport, Model, TrainConfig};

use manifest::ManifestBuilder;
pub use manifest::{file_digest, sha256_hex, FileDigest, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "treehole", version, about = "Latent risk detection on synthetic post streams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Refine word vectors with the masked lexicon task.
    Refine(RefineArgs),
    /// Train a detector.
    Train(TrainArgs),
    /// Evaluate a trained detector on one corpus split.
    Eval(EvalArgs),
    /// Train and test the four input ablations.
    Ablate(AblateArgs),
    /// Evaluate on at-risk users with little lexicon evidence.
    Harder(HarderArgs),
    /// Correlate visible hits, hidden hits and post attention per month.
    Analyze(AnalyzeArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for SplitName {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitName::Train,
            SplitArg::Validation => SplitName::Validation,
            SplitArg::Test => SplitName::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum WeightingArg {
    Count,
    Weighted,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Starting vectors; a random table over the corpus vocabulary when absent.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// One of text, text+image, text+features, full.
    #[arg(long)]
    pub variant: Option<InputMask>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory written by `train`, or a model file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Defaults to the table saved next to the model.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Defaults to the variant the model was trained with.
    #[arg(long)]
    pub variant: Option<InputMask>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HarderArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<InputMask>,
    /// Largest total of visible-post lexicon hits a user may have.
    #[arg(long, default_value_t = 0)]
    pub threshold: usize,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// First month of the 12-month window, `YYYY-MM`.
    #[arg(long, default_value = "2018-05")]
    pub window: String,
    #[arg(long, value_enum, default_value = "count")]
    pub weighting: WeightingArg,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_) => EXIT_DIVERGED,
        _ => EXIT_INVALID,
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Refine(a) => cmd_refine(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Harder(a) => cmd_harder(&a),
        Command::Analyze(a) => cmd_analyze(&a),
    }
}

fn out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn lexicon(path: Option<&Path>, m: &mut ManifestBuilder) -> Result<Lexicon> {
    match path {
        Some(p) => {
            m.input(p);
            Lexicon::load(p)
        }
        None => Ok(Lexicon::sample()),
    }
}

fn corpus(path: &Path, m: &mut ManifestBuilder) -> Result<CorpusSplit> {
    m.input(path);
    load_corpus(path)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("synth");
    m.input(&a.config);
    let mut config = SynthConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let lex = lexicon(a.lexicon.as_deref(), &mut m)?;
    m.seed(config.seed);
    m.config(&config)?;
    let split = generate_synthetic(&config, &lex, config.seed)?;
    out_dir(&a.out)?;
    let path = a.out.join("corpus.jsonl");
    save_corpus(&split, &path)?;
    m.output(path);
    println!(
        "users: train {}  validation {}  test {}",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    m.finish(&a.out)?;
    Ok(())
}

pub fn cmd_refine(a: &RefineArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("refine");
    let mut config: RefineConfig = match &a.config {
        Some(p) => {
            m.input(p);
            read_json(p)?
        }
        None => RefineConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    config.validate()?;
    m.seed(config.seed);
    m.config(&config)?;
    let split = corpus(&a.corpus, &mut m)?;
    let lex = lexicon(a.lexicon.as_deref(), &mut m)?;
    let table = match &a.embeddings {
        Some(p) => {
            m.input(p);
            let table = EmbeddingTable::load_pretrained(p, config.seed)?;
            let missing = corpus_vocabulary(&split, &lex)
                .iter()
                .filter(|t| !table.contains(t))
                .count();
            if missing > 0 {
                log::warn!("{missing} corpus tokens have no vector and map to <UNK>");
            }
            table
        }
        None => EmbeddingTable::random_for_corpus(&split, &lex, config.embedding_dim, config.seed)?,
    };
    let sentences = select_sentences(&corpus_sentences(&split.train), &lex, config.sentences, 1);
    let (refined, log) = refine(&table, &sentences, &lex, &config)?;
    out_dir(&a.out)?;
    m.write(a.out.join("embeddings.txt"), refined.to_text())?;
    m.write(a.out.join("refine_log.csv"), log.to_csv())?;
    print!("{}", log.to_csv());
    match log.final_accuracy() {
        Some(acc) => println!(
            "sentences {}  epochs {}{}  final accuracy {acc:.3}",
            sentences.len(),
            log.epochs.len(),
            if log.stopped_early { " (stopped early)" } else { "" }
        ),
        None => println!("no epochs run; vectors unchanged"),
    }
    m.finish(&a.out)?;
    Ok(())
}

fn train_config(
    path: Option<&Path>,
    embeddings: Option<&Path>,
    seed: Option<u64>,
    m: &mut ManifestBuilder,
) -> Result<TrainConfig> {
    let mut config = match path {
        Some(p) => {
            m.input(p);
            TrainConfig::load(p)?
        }
        None => TrainConfig::default(),
    };
    if let Some(e) = embeddings {
        config.embeddings = Some(e.to_path_buf());
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    m.input_opt(config.embeddings.as_deref());
    Ok(config)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("train");
    let mut config = train_config(a.config.as_deref(), a.embeddings.as_deref(), a.seed, &mut m)?;
    if let Some(v) = a.variant {
        config.variant = v;
    }
    config.validate()?;
    m.seed(config.seed);
    m.config(&config)?;
    let split = corpus(&a.corpus, &mut m)?;
    let lex = lexicon(a.lexicon.as_deref(), &mut m)?;
    let table = config.embedding_table(&split, &lex)?;
    let (model, log) = train(&split, &table, &config)?;
    out_dir(&a.out)?;
    m.write(a.out.join("model.json"), model.to_json()?)?;
    m.write(a.out.join("embeddings.txt"), table.to_text())?;
    m.write(a.out.join("config.json"), serde_json::to_string_pretty(&config)?)?;
    m.write(a.out.join("train_log.csv"), log.to_csv())?;
    print!("{}", log.to_csv());
    if let Some(best) = log.best_epoch {
        println!("kept epoch {best}");
    }
    m.finish(&a.out)?;
    Ok(())
}

/// Model, its embedding table and the variant it was trained with.
struct Trained {
    model: Model,
    table: EmbeddingTable,
    variant: InputMask,
}

fn load_trained(model: &Path, embeddings: Option<&Path>, m: &mut ManifestBuilder) -> Result<Trained> {
    let (dir, file) = if model.is_dir() {
        (model.to_path_buf(), model.join("model.json"))
    } else {
        (model.parent().map(Path::to_path_buf).unwrap_or_default(), model.to_path_buf())
    };
    m.input(&file);
    let loaded = Model::load(&file)?;
    let config_path = dir.join("config.json");
    let config: Option<TrainConfig> = if config_path.is_file() {
        m.input(&config_path);
        Some(read_json(&config_path)?)
    } else {
        None
    };
    let table_path = embeddings.map(Path::to_path_buf).unwrap_or_else(|| dir.join("embeddings.txt"));
    m.input(&table_path);
    let seed = config.as_ref().map_or(0, |c| c.seed);
    let mut table = EmbeddingTable::load_pretrained(&table_path, seed)?;
    table.trainable = false;
    Ok(Trained {
        model: loaded,
        table,
        variant: config.map_or(InputMask::ALL, |c| c.variant),
    })
}

fn write_report(report: &EvalReport, out: &Path, m: &mut ManifestBuilder) -> Result<()> {
    m.write(out.join("metrics.csv"), report.metrics_csv())?;
    m.write(out.join("predictions.csv"), report.predictions_csv())?;
    m.write(out.join("post_attention.csv"), report.post_attention_csv())?;
    m.write(out.join("word_attention.csv"), report.word_attention_csv())?;
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("eval");
    let trained = load_trained(&a.model, a.embeddings.as_deref(), &mut m)?;
    let variant = a.variant.unwrap_or(trained.variant);
    let split_name = SplitName::from(a.split);
    m.config(&json!({ "variant": variant, "split": split_name }))?;
    let split = corpus(&a.corpus, &mut m)?;
    let report = evaluate(&trained.model, &trained.table, split.part(split_name), variant)?;
    out_dir(&a.out)?;
    write_report(&report, &a.out, &mut m)?;
    println!("{}", report.summary_line());
    m.finish(&a.out)?;
    Ok(())
}

pub fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("ablate");
    let config = train_config(a.config.as_deref(), a.embeddings.as_deref(), a.seed, &mut m)?;
    config.validate()?;
    m.seed(config.seed);
    m.config(&config)?;
    let split = corpus(&a.corpus, &mut m)?;
    let lex = lexicon(a.lexicon.as_deref(), &mut m)?;
    let table = config.embedding_table(&split, &lex)?;
    let report = run_ablation(&split, &table, &config)?;
    out_dir(&a.out)?;
    m.write(a.out.join("ablation.csv"), report.to_csv())?;
    print!("{}", report.to_table());
    println!("(SVM and naive Bayes baselines are not included)");
    m.finish(&a.out)?;
    Ok(())
}

pub fn cmd_harder(a: &HarderArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("harder");
    let trained = load_trained(&a.model, a.embeddings.as_deref(), &mut m)?;
    let variant = a.variant.unwrap_or(trained.variant);
    let split_name = SplitName::from(a.split);
    m.config(&json!({ "variant": variant, "split": split_name, "threshold": a.threshold }))?;
    let split = corpus(&a.corpus, &mut m)?;
    let lex = lexicon(a.lexicon.as_deref(), &mut m)?;
    let subset = harder_subset(split.part(split_name), &lex, a.threshold);
    out_dir(&a.out)?;
    let mut users = String::from("user_id,visible_hits\n");
    for u in &subset {
        let hits: usize = u.posts().iter().map(|p| lex.count_hits(p.tokens())).sum();
        writeln!(users, "{},{hits}", u.user_id).expect("String write");
    }
    m.write(a.out.join("harder_users.csv"), users)?;
    println!("harder subset: {} users", subset.len());
    if subset.is_empty() {
        println!("no at-risk user is within the threshold; nothing to evaluate");
    } else {
        let report = evaluate(&trained.model, &trained.table, &subset, variant)?;
        write_report(&report, &a.out, &mut m)?;
        println!("{}", report.summary_line());
    }
    m.finish(&a.out)?;
    Ok(())
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("analyze");
    let trained = load_trained(&a.model, a.embeddings.as_deref(), &mut m)?;
    let Model::Sdm(model) = &trained.model else {
        return Err(Error::Config("analysis needs a model with post-level attention".into()));
    };
    let window = MonthWindow::parse(&a.window)?;
    let weighting = match a.weighting {
        WeightingArg::Count => HitWeighting::Count,
        WeightingArg::Weighted => HitWeighting::Weighted,
    };
    let split_name = SplitName::from(a.split);
    m.config(&json!({ "window": a.window, "weighting": weighting, "split": split_name }))?;
    let split = corpus(&a.corpus, &mut m)?;
    let lex = lexicon(a.lexicon.as_deref(), &mut m)?;
    let report = correlation_report(split.part(split_name), model, &trained.table, &lex, &window, weighting)?;
    out_dir(&a.out)?;
    m.write(a.out.join("correlations.csv"), report.to_csv())?;
    for u in &report.users {
        m.write(a.out.join("series").join(format!("{}.csv", u.user_id)), u.series_csv(&window))?;
        m.write(a.out.join("plots").join(format!("{}.svg", u.user_id)), series_svg(u, &window))?;
    }
    print!("{}", report.to_table());
    m.finish(&a.out)?;
    Ok(())
}
