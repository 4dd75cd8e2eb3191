use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mgtraj::commands::{cmd_ablate, cmd_eval, cmd_plot, cmd_pretrain_goal, cmd_train, Sweep};
use mgtraj::config::{ExperimentConfig, Overrides, Preset};
use mgtraj::AppResult;

#[derive(Parser)]
#[command(name = "mgtraj", version, about = "Goal-guided multi-granularity trajectory prediction")]
struct Cli {
    /// TOML configuration layered over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base preset: desk or paper.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.epochs=10`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Pretrain the goal predictor (next-frame stage, then goal stage).
    PretrainGoal {
        /// Stage-one checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the refinement stack against a frozen goal predictor.
    Train {
        /// Pretrained goal checkpoint; overrides `goal_checkpoint`.
        #[arg(long)]
        goal: Option<PathBuf>,
        /// Training checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a training checkpoint on the configured split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run an ablation sweep: gl, fusion, velocity or all.
    Ablate {
        #[arg(long, default_value = "all")]
        sweep: String,
    },
    /// Draw SVG plots of evaluation windows.
    Plot {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated window indices; defaults to `eval.plot_samples`.
        #[arg(long, value_delimiter = ',')]
        samples: Option<Vec<usize>>,
    },
}

fn run(cli: Cli) -> AppResult<()> {
    let overrides = Overrides {
        seed: cli.seed,
        output_dir: cli.out,
        set: cli.set,
    };
    let mut cfg = ExperimentConfig::load(Preset::parse(&cli.preset)?, cli.config.as_deref(), std::env::vars(), &overrides)?;
    match cli.command {
        Cmd::PretrainGoal { resume } => {
            let out = cmd_pretrain_goal(&cfg, resume.as_deref())?;
            println!("{}", out.stage1_path.display());
            println!("{}", out.stage2_path.display());
        }
        Cmd::Train { goal, resume } => {
            if goal.is_some() {
                cfg.goal_checkpoint = goal;
            }
            let out = cmd_train(&cfg, resume.as_deref())?;
            if let Some(last) = out.checkpoint.history.last() {
                println!("step {} loss {} ade {} fde {}", last.step, last.loss, last.ade, last.fde);
            }
            println!("{}", out.checkpoint_path.display());
        }
        Cmd::Eval { checkpoint } => {
            let r = cmd_eval(&checkpoint, &cfg)?;
            println!("ade {} fde {} samples {}", r.ade, r.fde, r.samples);
        }
        Cmd::Ablate { sweep } => {
            for row in cmd_ablate(&cfg, Sweep::parse(&sweep)?)? {
                println!("{}", row.csv());
            }
        }
        Cmd::Plot { checkpoint, samples } => {
            let samples = samples.unwrap_or_else(|| cfg.eval.plot_samples.clone());
            for path in cmd_plot(&checkpoint, &cfg, &samples)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mgtraj: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
