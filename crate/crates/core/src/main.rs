use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use uaddpg::agent::Checkpoint;
use uaddpg::envs::EnvConfig;
use uaddpg::harness::{self, LogFormat, RunConfig};

#[derive(Parser)]
#[command(name = "uaddpg", version, about = "Uncertainty-aware distributional DDPG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one or more seeds of a configuration.
    Train {
        /// TOML config file, or a built-in preset name.
        #[arg(long)]
        config: String,
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Comma-separated seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        log_format: Option<LogFormat>,
        /// Override run.total_steps.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Train every config matching a glob and print a comparison table.
    Sweep {
        #[arg(long)]
        configs: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log_format: Option<LogFormat>,
    },
    /// Greedy rollouts of a checkpoint with uncertainty warnings.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "cube")]
        env: String,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        #[arg(long)]
        umax: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write per-step uncertainty records as JSON lines.
        #[arg(long)]
        steps_out: Option<PathBuf>,
    },
    /// Print the fully resolved configuration.
    Config {
        #[arg(long)]
        config: String,
    },
}

fn resolve(config: &str) -> Result<RunConfig> {
    if harness::PRESETS.contains(&config) && !std::path::Path::new(config).exists() {
        return Ok(RunConfig::preset(config)?);
    }
    Ok(harness::load_config(config.as_ref())?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            seeds,
            out,
            log_format,
            steps,
        } => {
            let mut cfg = resolve(&config)?;
            if let Some(s) = seed {
                cfg.run.seeds = vec![s];
            }
            if let Some(s) = seeds {
                cfg.run.seeds = s;
            }
            if let Some(f) = log_format {
                cfg.run.log_format = f;
            }
            if let Some(n) = steps {
                cfg.run.total_steps = n;
            }
            cfg.validate()?;
            let out = out.unwrap_or_else(|| cfg.run.out_dir.clone());
            for &seed in &cfg.run.seeds {
                let o = harness::run_training(&cfg, seed, &out).with_context(|| format!("seed {seed}"))?;
                println!("seed {seed}: metrics {} checkpoint {}", o.metrics.display(), o.checkpoint.display());
            }
        }
        Command::Sweep {
            configs,
            out,
            log_format,
        } => {
            let mut cfgs: Vec<RunConfig> = harness::load_configs(&configs)?.into_iter().map(|(_, c)| c).collect();
            if let Some(f) = log_format {
                cfgs.iter_mut().for_each(|c| c.run.log_format = f);
            }
            let rows = harness::run_sweep(&cfgs, &out)?;
            print!("{}", harness::summary_table(&rows));
        }
        Command::Eval {
            checkpoint,
            env,
            episodes,
            umax,
            seed,
            steps_out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let env = EnvConfig::from_id(&env)?;
            let report = harness::run_inference(&ckpt, &env, episodes, umax, seed)?;
            if let Some(path) = steps_out {
                let mut text = String::new();
                for s in &report.steps {
                    text.push_str(&serde_json::to_string(s)?);
                    text.push('\n');
                }
                std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            }
            for (i, (r, l)) in report.returns.iter().zip(&report.lengths).enumerate() {
                println!("episode {i}: return {r:.4} length {l}");
            }
            println!("mean return {:.4}", report.mean_return);
            println!("warnings: {} of {} steps", report.warned_steps, report.total_steps);
            if report.warned_steps > 0 {
                log::warn!("epistemic uncertainty exceeded the threshold on {} steps", report.warned_steps);
            }
        }
        Command::Config { config } => {
            let cfg = resolve(&config)?;
            print!("{}", cfg.to_toml_string()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
