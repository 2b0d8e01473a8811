use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use masgcn::corpus::Split;
use masgcn::harness::{self, TrainConfig};
use masgcn::synth;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "masgcn",
    about = "Multi-view attention syntactic GCN for aspect-based sentiment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// JSON config file; defaults apply for absent keys or a missing flag.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> anyhow::Result<TrainConfig> {
        match &self.config {
            Some(path) => Ok(TrainConfig::from_file(path)?),
            None => Ok(TrainConfig::default()),
        }
    }
}

#[derive(Args)]
struct CacheArg {
    /// Feature cache directory; falls back to $MASGCN_CACHE_DIR, then ./cache.
    #[arg(long)]
    cache: Option<PathBuf>,
}

impl CacheArg {
    fn dir(&self) -> PathBuf {
        harness::resolve_cache_dir(self.cache.clone())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark-shaped dataset and word vectors.
    Synth {
        /// Profile name: rest14, laptop14, twitter or rest16.
        #[arg(long, default_value = "rest14")]
        profile: String,
        /// Generate every profile into per-name subdirectories.
        #[arg(long, conflicts_with = "profile")]
        all: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Word-vector dimensionality to emit.
        #[arg(long, default_value_t = 300)]
        dim: usize,
    },
    /// Tokenize datasets and write the feature cache.
    Prepare {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        cache: CacheArg,
    },
    /// Train a model from a prepared cache.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        cache: CacheArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        cache: CacheArg,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train the full model and the two single-component ablations.
    Ablate {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        cache: CacheArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid over view counts and entropy weights.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Comma-separated view counts, e.g. 1,5,10.
        #[arg(long, value_delimiter = ',')]
        views: Vec<usize>,
        /// Comma-separated entropy weights, e.g. 0,0.005,0.01.
        #[arg(long, value_delimiter = ',')]
        gammas: Vec<f64>,
        #[command(flatten)]
        cache: CacheArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump one sentence's attention and adjacency matrices as JSON.
    ExportMatrices {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        cache: CacheArg,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_split(name: &str) -> anyhow::Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => bail!("unknown split {:?}, expected train or test", other),
    }
}

fn print_eval(eval: &harness::Evaluation) {
    println!("examples:  {}", eval.n);
    println!("accuracy:  {:.4}", eval.accuracy);
    println!("macro-f1:  {:.4}", eval.macro_f1);
    println!(
        "per-class f1: positive {:.4}  negative {:.4}  neutral {:.4}",
        eval.per_class_f1[0], eval.per_class_f1[1], eval.per_class_f1[2]
    );
    println!("confusion (rows gold, cols predicted):");
    for (g, row) in eval.confusion.iter().enumerate() {
        let name = ["positive", "negative", "neutral"][g];
        println!("  {:<9} {:>5} {:>5} {:>5}", name, row[0], row[1], row[2]);
    }
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Synth {
            profile,
            all,
            out,
            seed,
            dim,
        } => {
            let targets: Vec<&synth::Profile> = if all {
                synth::PROFILES.iter().collect()
            } else {
                vec![synth::profile(&profile).with_context(|| {
                    format!(
                        "unknown profile {:?}; expected one of rest14, laptop14, twitter, rest16",
                        profile
                    )
                })?]
            };
            for p in targets {
                let dir = if all { out.join(p.name) } else { out.clone() };
                let paths = synth::write_dataset(p, seed, dim, &dir)?;
                println!(
                    "{}: train {:?} test {:?} -> {}",
                    p.name,
                    p.train,
                    p.test,
                    paths.train.parent().unwrap().display()
                );
            }
        }
        Command::Prepare {
            train,
            test,
            config,
            cache,
        } => {
            let config = config.load()?;
            let summary = harness::prepare(&train, &test, &config, &cache.dir())?;
            println!(
                "train: positive {} negative {} neutral {} ({} examples)",
                summary.train_counts[0],
                summary.train_counts[1],
                summary.train_counts[2],
                summary.train_examples
            );
            println!(
                "test:  positive {} negative {} neutral {} ({} examples)",
                summary.test_counts[0],
                summary.test_counts[1],
                summary.test_counts[2],
                summary.test_examples
            );
            println!(
                "vocab: {} words, {} pos tags, {} dependency types",
                summary.words, summary.pos_tags, summary.dep_types
            );
            println!("feature hash: {}", summary.hash_hex);
        }
        Command::Train { config, cache, out } => {
            let config = config.load()?;
            let data = harness::load_cache(&cache.dir(), &config)?;
            let outcome = harness::train(&config, &data, &out)?;
            println!(
                "best epoch {} of {}:",
                outcome.report.best_epoch, outcome.report.epochs_run
            );
            print_eval(&outcome.report.best);
            println!("checkpoint: {}", outcome.report.checkpoint);
        }
        Command::Eval {
            checkpoint,
            config,
            cache,
            split,
        } => {
            let config = config.load()?;
            let split = parse_split(&split)?;
            let data = harness::load_cache(&cache.dir(), &config)?;
            let params = harness::checkpoint::load(&checkpoint)?;
            let bundles = match split {
                Split::Train => &data.train,
                Split::Test => &data.test,
            };
            let (eval, _) = harness::evaluate_model(&params, bundles, &config)?;
            println!("{} split:", split);
            print_eval(&eval);
        }
        Command::Ablate { config, cache, out } => {
            let config = config.load()?;
            let data = harness::load_cache(&cache.dir(), &config)?;
            let rows = harness::ablate(&config, &data, &out)?;
            println!("{:<18} {:>9} {:>9}", "variant", "accuracy", "macro-f1");
            for row in &rows {
                println!(
                    "{:<18} {:>9.4} {:>9.4}",
                    row.variant, row.accuracy, row.macro_f1
                );
            }
        }
        Command::Sweep {
            config,
            train,
            test,
            views,
            gammas,
            cache,
            out,
        } => {
            let config = config.load()?;
            let rows = harness::sweep(&config, &train, &test, &views, &gammas, &cache.dir(), &out)?;
            println!(
                "{:>6} {:>8} {:>9} {:>9}",
                "views", "gamma", "accuracy", "macro-f1"
            );
            for row in &rows {
                println!(
                    "{:>6} {:>8} {:>9.4} {:>9.4}",
                    row.views, row.gamma, row.accuracy, row.macro_f1
                );
            }
        }
        Command::ExportMatrices {
            checkpoint,
            config,
            cache,
            split,
            index,
            out,
        } => {
            let config = config.load()?;
            let split = parse_split(&split)?;
            let data = harness::load_cache(&cache.dir(), &config)?;
            let params = harness::checkpoint::load(&checkpoint)?;
            let value = harness::export_matrices(&params, &data, &config, split, index)?;
            let text = serde_json::to_string_pretty(&value)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, text)
                        .with_context(|| format!("writing {}", path.display()))?;
                    println!("wrote {}", path.display());
                }
                None => println!("{}", text),
            }
        }
    }
    Ok(())
}
