//! `acdc`: synthesize data, train, evaluate, check gradients and export
//! attention for the attentional cascade.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Failure, Outcome, Precision};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "acdc", version, about = "Facial landmark and head pose cascade")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run config (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Replace the training seed and derive new dataset seeds from it.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Run root, overriding `output` in the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut cfg = RunConfig::load(&self.config).map_err(Failure::Usage)?;
        if let Some(seed) = self.seed {
            cfg.reseed(seed);
        }
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate every dataset of the config under `<out>/data/`.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train and write `<out>/train/{run.json,train_log.csv,model.acdc}`.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "f32")]
        precision: Precision,
    },
    /// Evaluate a checkpoint and write `<out>/eval/{report,pose_mae}.csv`.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/train/model.acdc`.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "f32")]
        precision: Precision,
    },
    /// Finite-difference check of every operator and of a whole model.
    Gradcheck {
        /// Use this config's model for the end-to-end check instead of the
        /// built-in small cascade.
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "N", default_value_t = 0)]
        seed: u64,
        /// Also write `<DIR>/gradcheck/report.csv`.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "f64")]
        precision: Precision,
        /// Register an operator with a deliberately wrong backward rule.
        #[arg(long, hide = true)]
        inject_faulty_backward: bool,
    },
    /// Write fused masks, excitations and landmarks for one eval sample.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Index into the eval dataset.
        #[arg(long, value_name = "N", default_value_t = 0)]
        sample: usize,
    },
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Synth { common } => commands::synth(&common.resolve()?),
        Command::Train { common, precision } => commands::train(&common.resolve()?, precision),
        Command::Eval {
            common,
            checkpoint,
            precision,
        } => {
            let cfg = common.resolve()?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.final_checkpoint());
            commands::eval(&cfg, &ckpt, precision)
        }
        Command::Gradcheck {
            config,
            seed,
            out,
            precision,
            inject_faulty_backward,
        } => {
            if precision != Precision::F64 {
                return Err(Failure::Usage("gradcheck runs at f64 only".into()));
            }
            let cfg = config
                .map(|p| RunConfig::load(&p).map_err(Failure::Usage))
                .transpose()?;
            commands::gradcheck(cfg.as_ref(), seed, out.as_deref(), inject_faulty_backward)
        }
        Command::Export {
            common,
            checkpoint,
            sample,
        } => {
            let cfg = common.resolve()?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.final_checkpoint());
            commands::export(&cfg, &ckpt, sample, &commands::export_dir(&cfg))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
