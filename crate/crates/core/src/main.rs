//! Command-line front end: data generation, statistics, agreement,
//! embeddings, training, evaluation, ablations, gradient checks, plots.
//!
//! Exit status: 0 on success, 1 on invalid input or configuration, 2 on
//! numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crossing_intent::ablation::{run_ablation, weight_grid, AblationReport, Arm};
use crossing_intent::config::{TrainConfig, Variant};
use crossing_intent::dataset::{
    generate_synthetic, icc, load_corpus, save_corpus, GeneratorConfig, IccModel, RaterMatrix,
};
use crossing_intent::embeddings::{
    load_embeddings, load_word_vectors, toy_embed, toy_word_vectors, word_average_embed, word_vectors_to_string,
};
use crossing_intent::error::{Error, Result};
use crossing_intent::gradcheck::run_gradcheck;
use crossing_intent::io::{resolve_output, write_atomic, write_json};
use crossing_intent::model::Model;
use crossing_intent::plot::{ablation_svg, training_svg};
use crossing_intent::reason_graph::{build_adjacency, count_cooccurrence, CooccurrenceReport, ReasonVocabulary};
use crossing_intent::tfe::FileFeatureProvider;
use crossing_intent::train::{build_samples, evaluate, prepare, train, DataSources, EpochLog};

#[derive(Parser, Debug)]
#[command(name = "crossing-intent", version, about = "Pedestrian crossing intent and reason prediction")]
struct Cli {
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Generate a synthetic planted-factor corpus.
    Gen(GenArgs),
    /// Co-occurrence counts, conditional probabilities and label frequencies.
    Stats(StatsArgs),
    /// Intraclass correlation of a subjects × raters grid.
    Icc(IccArgs),
    /// Write reason embeddings or toy word vectors.
    Embed(EmbedArgs),
    /// Train on a corpus; writes checkpoint, log and test metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a corpus.
    Eval(EvalArgs),
    /// Multi-seed comparison of variants or loss weights.
    Ablate(AblateArgs),
    /// Finite-difference check of every parameter gradient.
    Gradcheck(GradcheckArgs),
    /// Render an ablation report or training log as SVG.
    Plot(PlotArgs),
}

#[derive(Args, Debug, Serialize)]
struct VocabArg {
    /// Reason vocabulary JSON; defaults to the built-in 17 reasons.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

impl VocabArg {
    fn load(&self) -> Result<ReasonVocabulary> {
        match &self.vocab {
            Some(p) => ReasonVocabulary::load(p),
            None => Ok(ReasonVocabulary::default_pie()),
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct GenArgs {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 10)]
    frames_min: u32,
    #[arg(long, default_value_t = 16)]
    frames_max: u32,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    vocab: VocabArg,
}

#[derive(Args, Debug, Serialize)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Drop conditional probabilities below this value.
    #[arg(long)]
    threshold: Option<f64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    vocab: VocabArg,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum IccChoice {
    Oneway,
    Consistency,
    Agreement,
}

#[derive(Args, Debug, Serialize)]
struct IccArgs {
    /// CSV with a header row; an optional leading `subject` column.
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long, value_enum, default_value = "agreement")]
    model: IccChoice,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum EmbedProvider {
    /// Hashed sentence embeddings.
    Toy,
    /// Hashed word vectors covering every content word of the vocabulary.
    ToyWords,
    /// Mean of word vectors read from `--word-vectors`.
    WordAverage,
}

#[derive(Args, Debug, Serialize)]
struct EmbedArgs {
    #[arg(long, value_enum, default_value = "toy")]
    provider: EmbedProvider,
    #[arg(long, default_value_t = 32)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    word_vectors: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    vocab: VocabArg,
}

/// Configuration file plus flag overrides.
#[derive(Args, Debug, Serialize)]
struct ConfigArgs {
    /// TOML configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    gamma_reason: Option<f64>,
    #[arg(long)]
    gamma_intent: Option<f64>,
    #[arg(long)]
    t: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = &self.variant {
            cfg.variant = Variant::parse(v)?;
        }
        if let Some(v) = self.gamma_reason {
            cfg.gamma_reason = v;
        }
        if let Some(v) = self.gamma_intent {
            cfg.gamma_intent = v;
        }
        if let Some(v) = self.t {
            cfg.t = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Optional externally computed inputs.
#[derive(Args, Debug, Serialize)]
struct SourceArgs {
    /// Reason sentence embeddings, `<id> <v1> ... <vd>` per line.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Word vectors for the word_embed variant, `<word> <v1> ... <vd>`.
    #[arg(long)]
    word_vectors: Option<PathBuf>,
    /// Local-context features, `<pedestrian_id> <frame_index> <v1> ... <vd>`.
    #[arg(long, requires = "global_features")]
    local_features: Option<PathBuf>,
    /// Global-context features in the same format.
    #[arg(long, requires = "local_features")]
    global_features: Option<PathBuf>,
}

impl SourceArgs {
    fn load(&self, vocab: &ReasonVocabulary) -> Result<DataSources> {
        Ok(DataSources {
            sentence_embeddings: self.embeddings.as_deref().map(|p| load_embeddings(p, vocab)).transpose()?,
            word_vectors: self.word_vectors.as_deref().map(load_word_vectors).transpose()?,
            features: match (&self.local_features, &self.global_features) {
                (Some(l), Some(g)) => Some(FileFeatureProvider::load(l, g)?),
                _ => None,
            },
        })
    }
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory for checkpoint, log and metrics.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    sources: SourceArgs,
    #[command(flatten)]
    vocab: VocabArg,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SplitChoice {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Part of the checkpoint's seeded split to evaluate.
    #[arg(long, value_enum, default_value = "test")]
    split: SplitChoice,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    sources: SourceArgs,
    #[command(flatten)]
    vocab: VocabArg,
}

#[derive(Args, Debug, Serialize)]
struct AblateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Comma-separated seeds, at least three.
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    seeds: Vec<u64>,
    /// Comma-separated variants; ignored with `--weight-grid`.
    #[arg(long, value_delimiter = ',', default_values_t = ["full".to_string(), "no_crossmodal".to_string()])]
    variants: Vec<String>,
    /// Compare loss weights (0.5,1), (1,0.5), (1,1) on the full model.
    #[arg(long)]
    weight_grid: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    sources: SourceArgs,
    #[command(flatten)]
    vocab: VocabArg,
}

#[derive(Args, Debug, Serialize)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "full")]
    variant: String,
    #[arg(long, default_value_t = crossing_intent::gradcheck::DEFAULT_STEP)]
    step: f64,
    #[arg(long, default_value_t = crossing_intent::gradcheck::DEFAULT_TOLERANCE)]
    tolerance: f64,
}

#[derive(Args, Debug, Serialize)]
struct PlotArgs {
    /// Ablation report JSON written by `ablate`.
    #[arg(long, conflicts_with = "log", required_unless_present = "log")]
    ablation: Option<PathBuf>,
    /// Training log JSONL written by `train`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn echo<T: Serialize>(label: &str, value: &T) {
    eprintln!(
        "resolved {label}: {}",
        serde_json::to_string(value).expect("arguments serialize")
    );
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(&resolve_output(p), text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json_text<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn run(cli: Cli) -> Result<()> {
    echo("arguments", &cli.command);
    match cli.command {
        Command::Gen(a) => {
            let vocab = a.vocab.load()?;
            let cfg = GeneratorConfig {
                n_records: a.n,
                seed: a.seed,
                noise_rate: a.noise,
                frames_min: a.frames_min,
                frames_max: a.frames_max,
            };
            let corpus = generate_synthetic(&cfg, &vocab)?;
            save_corpus(&resolve_output(&a.out), &corpus)
        }
        Command::Stats(a) => {
            let vocab = a.vocab.load()?;
            let corpus = load_corpus(&a.corpus, &vocab)?;
            let stats = count_cooccurrence(&corpus, &vocab)?;
            let adjacency = build_adjacency(&stats, a.threshold);
            adjacency.validate(&stats)?;
            let report = CooccurrenceReport::new(&stats, &adjacency, &vocab);
            emit(a.out.as_deref(), &json_text(&report))
        }
        Command::Icc(a) => {
            let model = match a.model {
                IccChoice::Oneway => IccModel::Oneway,
                IccChoice::Consistency => IccModel::TwowayRandomConsistency,
                IccChoice::Agreement => IccModel::TwowayRandomAgreement,
            };
            let m = RaterMatrix::load_csv(&a.ratings)?;
            println!("{}", icc(&m, model)?);
            Ok(())
        }
        Command::Embed(a) => {
            let vocab = a.vocab.load()?;
            let out = resolve_output(&a.out);
            match a.provider {
                EmbedProvider::Toy => toy_embed(&vocab, a.d, a.seed)?.save(&out),
                EmbedProvider::ToyWords => {
                    write_atomic(&out, word_vectors_to_string(&toy_word_vectors(&vocab, a.d, a.seed)).as_bytes())
                }
                EmbedProvider::WordAverage => {
                    let words = a
                        .word_vectors
                        .as_deref()
                        .ok_or_else(|| Error::Usage("--word-vectors is required for word-average".into()))?;
                    word_average_embed(&vocab, words)?.save(&out)
                }
            }
        }
        Command::Train(a) => {
            let vocab = a.vocab.load()?;
            let cfg = a.config.resolve()?;
            eprintln!("resolved config:\n{}", cfg.to_toml());
            let corpus = load_corpus(&a.corpus, &vocab)?;
            let sources = a.sources.load(&vocab)?;
            let data = prepare(&cfg, &corpus, &vocab, &sources)?;
            let outcome = train(&cfg, data.graph.as_ref(), &data.train, &data.val)?;
            let out = resolve_output(&a.out);
            outcome.best.save(&out.join("checkpoint"))?;
            write_atomic(&out.join("config.toml"), cfg.to_toml().as_bytes())?;
            let log: String = outcome
                .log
                .iter()
                .map(|e| serde_json::to_string(e).expect("log serializes") + "\n")
                .collect();
            write_atomic(&out.join("train_log.jsonl"), log.as_bytes())?;
            if !data.test.is_empty() {
                let report = evaluate(&outcome.best, &data.test)?;
                write_json(&out.join("test_metrics.json"), &report)?;
                println!(
                    "test: intent accuracy {:.4}, reason subset accuracy {:.4}, reason macro-F1 {:.4}",
                    report.intent.accuracy, report.reason.subset_accuracy, report.reason.macro_f1
                );
            }
            Ok(())
        }
        Command::Eval(a) => {
            let vocab = a.vocab.load()?;
            let model = Model::load(&a.checkpoint)?;
            eprintln!("resolved config:\n{}", model.config.to_toml());
            let corpus = load_corpus(&a.corpus, &vocab)?;
            let sources = a.sources.load(&vocab)?;
            let records = match a.split {
                SplitChoice::All => corpus,
                part => {
                    let s = crossing_intent::dataset::split(&corpus, model.config.split, model.config.seed)?;
                    match part {
                        SplitChoice::Train => s.train,
                        SplitChoice::Val => s.val,
                        _ => s.test,
                    }
                }
            };
            let provider = sources.provider(&model.config)?;
            let samples = build_samples(&records, provider.as_ref(), &model.config)?;
            let report = evaluate(&model, &samples)?;
            emit(a.out.as_deref(), &json_text(&report))
        }
        Command::Ablate(a) => {
            let vocab = a.vocab.load()?;
            let cfg = a.config.resolve()?;
            eprintln!("resolved config:\n{}", cfg.to_toml());
            let arms: Vec<Arm> = if a.weight_grid {
                weight_grid()
            } else {
                a.variants
                    .iter()
                    .map(|v| Variant::parse(v).map(Arm::variant))
                    .collect::<Result<_>>()?
            };
            let corpus = load_corpus(&a.corpus, &vocab)?;
            let sources = a.sources.load(&vocab)?;
            let report = run_ablation(&cfg, &arms, &a.seeds, &corpus, &vocab, &sources)?;
            for arm in &report.arms {
                println!(
                    "{:<28} intent acc {:.4} ± {:.4}  reason subset {:.4} ± {:.4}  reason macro-F1 {:.4} ± {:.4}",
                    arm.arm.label,
                    arm.intent_accuracy.mean,
                    arm.intent_accuracy.std,
                    arm.reason_subset_accuracy.mean,
                    arm.reason_subset_accuracy.std,
                    arm.reason_macro_f1.mean,
                    arm.reason_macro_f1.std
                );
            }
            write_json(&resolve_output(&a.out), &report)
        }
        Command::Gradcheck(a) => {
            let report = run_gradcheck(a.seed, Variant::parse(&a.variant)?, a.step, a.tolerance)?;
            for g in &report.groups {
                println!(
                    "{:<16} {:>6} entries  max rel. error {:.3e}  max abs. error {:.3e}  ({})",
                    g.group, g.entries, g.max_relative_error, g.max_absolute_error, g.worst_parameter
                );
            }
            println!(
                "max relative error {:.3e} (tolerance {:.0e}) in {:.1}s",
                report.max_relative_error, report.tolerance, report.seconds
            );
            if report.passed() {
                Ok(())
            } else {
                Err(Error::Diverged(format!(
                    "gradient check exceeded tolerance: {:.3e} > {:.0e}",
                    report.max_relative_error, report.tolerance
                )))
            }
        }
        Command::Plot(a) => {
            let svg = match (&a.ablation, &a.log) {
                (Some(p), _) => {
                    let text = crossing_intent::io::read_to_string(p)?;
                    let report: AblationReport =
                        serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", p.display())))?;
                    ablation_svg(&report)
                }
                (None, Some(p)) => {
                    let text = crossing_intent::io::read_to_string(p)?;
                    let log = text
                        .lines()
                        .filter(|l| !l.trim().is_empty())
                        .enumerate()
                        .map(|(i, l)| {
                            serde_json::from_str::<EpochLog>(l)
                                .map_err(|e| Error::Validation(format!("{}: line {}: {e}", p.display(), i + 1)))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    training_svg(&log)
                }
                (None, None) => return Err(Error::Usage("give --ablation or --log".into())),
            };
            write_atomic(&resolve_output(&a.out), svg.as_bytes())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
