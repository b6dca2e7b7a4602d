mod commands;
mod config;
mod reproduce;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use modaladapt::adaptation::AdaptationMode;
use modaladapt::training::Strategy;

use crate::config::ExperimentConfig;
use crate::reproduce::Profile;

/// Multimodal multi-speaker acoustic model: corpus generation, training,
/// speaker adaptation and evaluation.
#[derive(Parser, Debug)]
#[command(name = "modaladapt", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment config (TOML); built-in defaults otherwise.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed for corpus generation and training.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Hidden width 1024 and embedding 128 instead of 128 and 16.
    #[arg(long, global = true)]
    paper_dims: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus into --out.
    GenData,
    /// Train a model; writes model.mmck, history.csv and config.toml.
    Train {
        /// VL, SS, JG, TL, JG+TL or STOCH; other than the configured one
        /// means that strategy's standard loss weights.
        #[arg(long, value_name = "NAME")]
        strategy: Option<Strategy>,
        /// Existing corpus (directory or manifest.toml).
        #[arg(long, value_name = "PATH")]
        corpus: Option<PathBuf>,
    },
    /// Adapt embeddings for the held-out speakers at each size.
    Adapt {
        /// Defaults to <out>/model.mmck.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        corpus: Option<PathBuf>,
        /// Only this mode; both by default.
        #[arg(long, value_name = "supervised|unsupervised")]
        mode: Option<AdaptationMode>,
        /// Adaptation utterance counts, e.g. 10,40,160.
        #[arg(long, value_name = "CSV", value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Parallel adaptation jobs.
        #[arg(long, value_name = "N")]
        workers: Option<usize>,
    },
    /// Score a checkpoint (and optional adapted embeddings) on the test split.
    Eval {
        /// Defaults to <out>/model.mmck.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        corpus: Option<PathBuf>,
        /// Adapted embedding file; repeatable.
        #[arg(long = "embedding", value_name = "PATH")]
        embeddings: Vec<PathBuf>,
    },
    /// Run a whole experiment profile over several seeds; resumable.
    Reproduce {
        profile: Profile,
        /// Only this strategy instead of the configured list.
        #[arg(long, value_name = "NAME")]
        strategy: Option<Strategy>,
        #[arg(long, value_name = "CSV", value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Adaptation utterance counts (adaptation-sweep only).
        #[arg(long, value_name = "CSV", value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Parallel adaptation jobs.
        #[arg(long, value_name = "N")]
        workers: Option<usize>,
        /// Abort after this many newly completed units (for testing resume).
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Print the header of a checkpoint, embedding, feature or waveform file,
    /// or summarise a corpus manifest.
    Inspect { path: PathBuf },
}

pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

impl Context {
    fn resolve(g: &Global) -> anyhow::Result<Self> {
        let mut config = match &g.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = g.seed {
            config.seed = s;
        }
        config.paper_dims |= g.paper_dims;
        let out = g.out.clone().or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("modaladapt-out"));
        Ok(Self { config, out })
    }

    /// A strategy given on the command line other than the configured one
    /// runs with its standard loss weights.
    fn set_strategy(&mut self, strategy: Option<Strategy>) {
        if let Some(s) = strategy.filter(|&s| s != self.config.training.strategy) {
            self.config.training = self.config.training.for_strategy(s);
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut ctx = Context::resolve(&cli.global)?;
    match cli.command {
        Command::GenData => commands::gen_data(&ctx),
        Command::Train { strategy, corpus } => {
            ctx.set_strategy(strategy);
            commands::train(&ctx, corpus)
        }
        Command::Adapt {
            checkpoint,
            corpus,
            mode,
            sizes,
            workers,
        } => {
            if let Some(m) = mode {
                ctx.config.adaptation.modes = vec![m];
            }
            if let Some(s) = sizes {
                ctx.config.adaptation.sizes = s;
            }
            if let Some(w) = workers {
                ctx.config.adaptation.workers = w;
            }
            commands::adapt(&ctx, checkpoint, corpus)
        }
        Command::Eval {
            checkpoint,
            corpus,
            embeddings,
        } => commands::eval(&ctx, checkpoint, corpus, &embeddings),
        Command::Reproduce {
            profile,
            strategy,
            seeds,
            sizes,
            workers,
            stop_after,
        } => {
            if let Some(s) = strategy {
                ctx.config.reproduce.strategies = vec![s];
            }
            if let Some(s) = seeds {
                ctx.config.reproduce.seeds = s;
            }
            if let Some(s) = sizes {
                ctx.config.adaptation.sizes = s;
            }
            if let Some(w) = workers {
                ctx.config.adaptation.workers = w;
            }
            reproduce::run(&ctx, profile, stop_after)
        }
        Command::Inspect { path } => commands::inspect(&path),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MODALADAPT_LOG", "info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
