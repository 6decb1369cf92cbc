//! Command-line interface: corpus ingestion, training, evaluation, and the
//! fusion-weight ablation grid.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training
//! failure.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use config::{bundle, Resolver};
use hiegat::error::{HiegatError, Result};
use hiegat::model::HieGat;
use hiegat::text::{ingest_corpus, read_cache, write_cache, Corpus, Split};
use hiegat::train::{evaluate, prepare, run_ablation_grid, train, ABLATION_ROWS};

#[derive(Parser)]
#[command(
    name = "hiegat",
    version,
    about = "Hierarchical graph attention text classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// One of the bundled benchmark corpora (mr, r8, r52, ohsumed, 20ng)
    #[arg(long)]
    dataset: Option<String>,
    /// Metadata file (doc_id<TAB>split<TAB>label per line)
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Corpus text file, one document per line, aligned with the metadata
    #[arg(long)]
    text: Option<PathBuf>,
    /// Directory holding the corpus files
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Sentence segmentation: punct or chunk
    #[arg(long)]
    mode: Option<String>,
    /// Window size for chunked sentence segmentation
    #[arg(long)]
    chunk_size: Option<usize>,
    /// Tokenized-corpus cache produced by `ingest` (used instead of raw files)
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// TOML config file ([data]/[model]/[train] sections)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// adam or sgd
    #[arg(long)]
    optimizer: Option<String>,
    /// Fixed fusion weights "d,s,w" (zeros allowed), or "schedule"
    #[arg(long)]
    lambda: Option<String>,
    /// per_sample or batch_mean
    #[arg(long)]
    lambda_policy: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a corpus, build its vocabulary, and write a cache + stats
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Train a model and write reports + best checkpoint
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Also print the machine-readable JSON report to stdout
        #[arg(long)]
        json: bool,
    },
    /// Evaluate a checkpoint on a corpus split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// train or test
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        json: bool,
    },
    /// Run the fusion-weight ablation grid
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Comma-separated row names (default: all seven)
        #[arg(long)]
        rows: Option<String>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own message; usage errors exit 1
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(err: &HiegatError) -> u8 {
    match err {
        HiegatError::Config(_) | HiegatError::InvalidInput { .. } => 1,
        HiegatError::Format { .. }
        | HiegatError::Io(_)
        | HiegatError::Checkpoint(_)
        | HiegatError::DimensionMismatch { .. } => 2,
        HiegatError::Diverged { .. } => 3,
    }
}

/// Builds the resolved configuration with layering
/// defaults < dataset bundle < config file < flags.
fn resolve(data: &DataArgs, targs: Option<&TrainArgs>) -> Result<Resolver> {
    let mut resolver = Resolver::with_defaults();
    let file_entries = match targs.and_then(|t| t.config.as_ref()) {
        Some(path) => resolver.load_file(path)?,
        None => Vec::new(),
    };
    // the dataset may be named by flag (wins) or by the config file; its
    // bundle sits below explicit config-file keys either way
    let dataset_name = data.dataset.clone().or_else(|| {
        file_entries
            .iter()
            .find(|(k, _)| k == "data.dataset")
            .map(|(_, v)| v.clone())
    });
    if let Some(name) = dataset_name.as_deref().filter(|n| !n.is_empty()) {
        let b = bundle(name).ok_or_else(|| {
            let known: Vec<&str> = config::BUNDLES.iter().map(|b| b.name).collect();
            HiegatError::Config(format!(
                "unknown dataset '{name}' (bundled: {})",
                known.join(", ")
            ))
        })?;
        resolver.apply_bundle(b);
    }
    resolver.apply_entries(&file_entries, "config-file");
    apply_data_flags(&mut resolver, data);
    if let Some(t) = targs {
        apply_train_flags(&mut resolver, t);
    }
    Ok(resolver)
}

fn apply_data_flags(resolver: &mut Resolver, data: &DataArgs) {
    if let Some(name) = &data.dataset {
        resolver.set("data.dataset", name, "flag");
    }
    if let Some(p) = &data.data_dir {
        resolver.set("data.data_dir", p.display().to_string(), "flag");
    }
    if let Some(p) = &data.meta {
        resolver.set("data.meta", p.display().to_string(), "flag");
        resolver.set("data.data_dir", "", "flag");
    }
    if let Some(p) = &data.text {
        resolver.set("data.text", p.display().to_string(), "flag");
    }
    if let Some(m) = &data.mode {
        resolver.set("data.mode", m, "flag");
    }
    if let Some(c) = data.chunk_size {
        resolver.set("data.chunk_size", c.to_string(), "flag");
    }
}

fn apply_train_flags(resolver: &mut Resolver, args: &TrainArgs) {
    let flag: &'static str = "flag";
    if let Some(v) = args.learning_rate {
        resolver.set("train.learning_rate", v.to_string(), flag);
    }
    if let Some(v) = args.batch_size {
        resolver.set("train.batch_size", v.to_string(), flag);
    }
    if let Some(v) = args.max_epochs {
        resolver.set("train.max_epochs", v.to_string(), flag);
    }
    if let Some(v) = args.patience {
        resolver.set("train.patience", v.to_string(), flag);
    }
    if let Some(v) = args.validation_fraction {
        resolver.set("train.validation_fraction", v.to_string(), flag);
    }
    if let Some(v) = args.embedding_dim {
        resolver.set("model.embedding_dim", v.to_string(), flag);
    }
    if let Some(v) = args.dropout {
        resolver.set("model.dropout", v.to_string(), flag);
    }
    if let Some(v) = &args.optimizer {
        resolver.set("train.optimizer", v, flag);
    }
    if let Some(v) = &args.lambda {
        resolver.set("train.lambda", v, flag);
    }
    if let Some(v) = &args.lambda_policy {
        resolver.set("model.lambda_policy", v, flag);
    }
    if let Some(v) = args.seed {
        resolver.set("run.seed", v.to_string(), flag);
    }
}

fn load_corpus(resolver: &Resolver, data: &DataArgs) -> Result<Corpus> {
    if let Some(cache) = &data.cache {
        return read_cache(cache);
    }
    let meta = resolver.meta_path()?;
    let text = resolver.text_path()?;
    ingest_corpus(&meta, &text, resolver.sentence_mode()?)
}

/// Writes the fully resolved manifest before any compute starts.
fn write_manifest(out_dir: &Path, command: &str, resolver: &Resolver) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let epoch = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let corpus_id = {
        let ds = resolver.get("data.dataset").unwrap_or("");
        if ds.is_empty() {
            resolver.get("data.meta").unwrap_or("(unset)").to_string()
        } else {
            ds.to_string()
        }
    };
    let mut s = String::new();
    let _ = writeln!(s, "command = {command}");
    let _ = writeln!(s, "corpus = {corpus_id}");
    let _ = writeln!(s, "timestamp_unix = {epoch}");
    s.push_str(&resolver.render());
    fs::write(out_dir.join("manifest.txt"), s)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { data, out_dir } => {
            let resolver = resolve(&data, None)?;
            write_manifest(&out_dir, "ingest", &resolver)?;
            let corpus = load_corpus(&resolver, &data)?;
            let stats = corpus.stats.render();
            write_cache(&corpus, &out_dir.join("corpus.cache"))?;
            fs::write(out_dir.join("stats.txt"), &stats)?;
            print!("{stats}");
            Ok(())
        }
        Command::Train {
            data,
            train: targs,
            out_dir,
            json,
        } => {
            let resolver = resolve(&data, Some(&targs))?;
            write_manifest(&out_dir, "train", &resolver)?;
            let corpus = load_corpus(&resolver, &data)?;
            let model_config = resolver.model_config(corpus.labels.len())?;
            let train_config = resolver.train_config()?;
            let mut model = HieGat::new(model_config, corpus.vocab.size())?;
            let report = train(&mut model, &corpus, &train_config)?;
            model.save_checkpoint(&out_dir.join("checkpoint.bin"))?;
            fs::write(out_dir.join("report.txt"), report.render_text())?;
            fs::write(out_dir.join("report.json"), report.to_json())?;
            if json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.render_text());
            }
            Ok(())
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            json,
        } => {
            let resolver = resolve(&data, None)?;
            let model = HieGat::load_checkpoint(&checkpoint)?;
            let corpus = load_corpus(&resolver, &data)?;
            if model.config.num_classes != corpus.labels.len() {
                return Err(HiegatError::Checkpoint(format!(
                    "class count mismatch: checkpoint has {} classes, corpus has {}",
                    model.config.num_classes,
                    corpus.labels.len()
                )));
            }
            let split = match split.as_str() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => {
                    return Err(HiegatError::Config(format!(
                        "unknown split '{other}' (expected train or test)"
                    )))
                }
            };
            let indices = corpus.split_indices(split);
            let set = prepare(&corpus, &model.config, &indices)?;
            let report = evaluate(&model, &set)?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("report json")
                );
            } else {
                println!(
                    "accuracy = {:.6} ({}/{})",
                    report.accuracy, report.correct, report.total
                );
                for (label, (correct, total)) in corpus.labels.iter().zip(&report.per_class) {
                    println!("class {label}: {correct}/{total}");
                }
            }
            Ok(())
        }
        Command::Ablate {
            data,
            train: targs,
            rows,
            out_dir,
            json,
        } => {
            let resolver = resolve(&data, Some(&targs))?;
            write_manifest(&out_dir, "ablate", &resolver)?;
            let corpus = load_corpus(&resolver, &data)?;
            let model_config = resolver.model_config(corpus.labels.len())?;
            let train_config = resolver.train_config()?;
            let all_rows: Vec<&str> = ABLATION_ROWS.iter().map(|(n, _)| *n).collect();
            let requested: Vec<String> = match &rows {
                Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
                None => all_rows.iter().map(|s| s.to_string()).collect(),
            };
            let row_refs: Vec<&str> = requested.iter().map(|s| s.as_str()).collect();
            let report = run_ablation_grid(&corpus, &model_config, &train_config, &row_refs)?;
            fs::write(out_dir.join("ablation.txt"), report.render_text())?;
            fs::write(
                out_dir.join("ablation.json"),
                serde_json::to_string_pretty(&report).expect("ablation json"),
            )?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("ablation json")
                );
            } else {
                print!("{}", report.render_text());
            }
            Ok(())
        }
    }
}
