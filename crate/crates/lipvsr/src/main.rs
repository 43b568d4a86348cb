use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lipvsr::cli::{self, RunConfig};

#[derive(Parser)]
#[command(
    name = "lipvsr",
    about = "Hybrid CTC/attention lipreading on synthetic token video",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: videos, manifests, vocabulary.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output corpus directory.
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing output directory.
        #[arg(long)]
        force: bool,
    },
    /// Run curriculum training plus language-model training.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Corpus directory produced by `synth`.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and logs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a manifest with a trained checkpoint.
    Decode {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest to decode; the vocabulary and videos are resolved
        /// relative to its directory.
        #[arg(long)]
        manifest: PathBuf,
        /// Output hypothesis file.
        #[arg(long)]
        out: PathBuf,
        /// Language-model checkpoint (defaults to lm.lckp next to the
        /// model checkpoint when lm_weight > 0).
        #[arg(long)]
        lm: Option<PathBuf>,
        /// Utterance-level worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Greedy CTC decoding instead of joint beam search.
        #[arg(long)]
        greedy: bool,
    },
    /// Score a hypothesis file against a reference manifest.
    Eval {
        /// Reference manifest.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Hypothesis file from `decode`.
        #[arg(long)]
        hyp: PathBuf,
    },
    /// Finite-difference check of the full objective on a micro model.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> lipvsr::Result<RunConfig> {
    let mut cfg = RunConfig::load(path.map(|p| p.as_path()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run() -> lipvsr::Result<String> {
    match Cli::parse().command {
        Command::Synth {
            config,
            seed,
            out,
            force,
        } => {
            let cfg = load_config(config.as_ref(), seed)?;
            eprintln!("{}", cfg.dump());
            cli::cmd_synth(&cfg, &out, force)
        }
        Command::Train {
            config,
            seed,
            data,
            out,
        } => {
            let cfg = load_config(config.as_ref(), seed)?;
            eprintln!("{}", cfg.dump());
            cli::cmd_train(&cfg, &data, &out)
        }
        Command::Decode {
            config,
            seed,
            checkpoint,
            manifest,
            out,
            lm,
            jobs,
            greedy,
        } => {
            let cfg = load_config(config.as_ref(), seed)?;
            eprintln!("{}", cfg.dump());
            cli::cmd_decode(&cfg, &checkpoint, &manifest, &out, lm.as_deref(), jobs, greedy)
        }
        Command::Eval { reference, hyp } => cli::cmd_eval(&reference, &hyp),
        Command::Gradcheck { config, seed } => {
            let cfg = load_config(config.as_ref(), seed)?;
            cli::cmd_gradcheck(&cfg)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
