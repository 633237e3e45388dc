use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use glasspipe::coevo::CoevoConfig;
use glasspipe::minipong::EnvConfig;
use glasspipe_cli::eval::{evaluate, parse_frame_skip, EvalOptions, PipelineArtifact};
use glasspipe_cli::inspect::inspect;
use glasspipe_cli::plot::plot;
use glasspipe_cli::render::{render, RenderOptions};
use glasspipe_cli::train::{train, TrainOptions, OUTPUT_ROOT_VAR};
use glasspipe_cli::{config, Result};

#[derive(Debug, Parser)]
#[command(name = "glasspipe", version, about = "Co-evolve interpretable vision/decision-tree pipelines on MiniPong")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run (or resume) a co-evolution.
    #[command(after_help = format!("Runs go to $${OUTPUT_ROOT_VAR}/<config stem>-seed<seed> (default root: runs)."))]
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from the run's latest checkpoint.
        #[arg(long)]
        resume: bool,
        /// Worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Run directory, overriding the default location.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a saved pipeline on held-out episodes.
    Eval {
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// none, stochastic, or stochastic:MIN:MAX.
        #[arg(long)]
        frame_skip: Option<String>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Print the simplified tree, complexity metrics and kernel summaries.
    Inspect {
        #[arg(long)]
        pipeline: PathBuf,
    },
    /// Draw fitness and evaluation charts from one or more run directories.
    Plot {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output directory (default: the first run's plots/).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump PPM frames and a CSV trace of one episode.
    Render {
        /// Pipeline to play; NOP when omitted.
        #[arg(long)]
        pipeline: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        every: usize,
        #[arg(long)]
        processed: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a config file with every key at its default.
    Config {
        /// The small-population, 30-generation configuration.
        #[arg(long)]
        desk: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            resume,
            workers,
            out,
        } => {
            let outcome = train(&TrainOptions {
                config,
                resume,
                workers,
                run_dir: out,
            })?;
            println!("run      {}", outcome.layout.root.display());
            if let Some(last) = outcome.history.last() {
                println!("best     {:.3} (training)", last.best_so_far);
            }
            println!("held-out {}", outcome.held_out.summary_line());
        }
        Command::Eval {
            pipeline,
            episodes,
            seed,
            frame_skip,
            json,
        } => {
            let artifact = PipelineArtifact::load(&pipeline)?;
            let frame_skip = frame_skip.as_deref().map(parse_frame_skip).transpose()?;
            let report = evaluate(
                &artifact,
                &EvalOptions {
                    episodes,
                    seed,
                    frame_skip,
                },
            )?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{report}");
            }
        }
        Command::Inspect { pipeline } => {
            print!("{}", inspect(&PipelineArtifact::load(&pipeline)?)?);
        }
        Command::Plot { runs, out } => {
            for p in plot(&runs, out.as_deref())? {
                println!("{}", p.display());
            }
        }
        Command::Render {
            pipeline,
            seed,
            steps,
            every,
            processed,
            out,
        } => {
            let artifact = pipeline.as_deref().map(PipelineArtifact::load).transpose()?;
            let outcome = render(
                artifact.as_ref(),
                EnvConfig::default(),
                &RenderOptions {
                    seed,
                    steps,
                    every,
                    processed,
                    out,
                },
            )?;
            println!(
                "{} frames, {} steps, reward {}, trace {}",
                outcome.frames.len(),
                outcome.steps,
                outcome.total_reward,
                outcome.trace.display()
            );
        }
        Command::Config { desk, seed } => {
            let cfg = if desk {
                CoevoConfig::desk(seed)
            } else {
                CoevoConfig {
                    seed,
                    ..CoevoConfig::default()
                }
            };
            print!("{}", config::to_toml(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
