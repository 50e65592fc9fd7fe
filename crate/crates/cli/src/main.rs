use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use hica_cli::{run_charlm, run_gradcheck, run_replay_demo, run_skinner, Policy, SkinnerOptions};
use hica_core::agent::Ablation;
use hica_core::config::RunConfig;
use hica_core::experiments::GRADCHECK_TOLERANCE;

#[derive(Parser)]
#[command(name = "hica", version, about = "Heterarchical prediction memory experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run config; the shipped template is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.output.dir = out.clone();
        }
        Ok(config)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Hica,
    Random,
    Oracle,
}

#[derive(Subcommand)]
enum Command {
    /// Character-level language modelling on a text corpus.
    Charlm {
        #[command(flatten)]
        common: Common,
        /// Worker threads for the graph (1 = sequential order).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Foraging phase, then the lever-and-light conditioning phase.
    Skinner {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        no_preplay: bool,
        #[arg(long)]
        no_modulation: bool,
        /// Skip foraging and load the instincts from this checkpoint.
        #[arg(long, value_name = "PATH")]
        phase2_only: Option<PathBuf>,
        /// Lever-phase policy; random and oracle are controls.
        #[arg(long, value_enum, default_value = "hica")]
        policy: PolicyArg,
        /// Run every trial instead of stopping at criterion.
        #[arg(long)]
        all_trials: bool,
    },
    /// Finite-difference check of every unit's backward pass.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Next-step accuracy on a stored episode before and after replay.
    ReplayDemo {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Charlm { common, workers } => {
            let mut config = common.load()?;
            if let Some(w) = workers {
                config.charlm.workers = w;
            }
            let s = run_charlm(&config, &config.output.dir)?;
            println!("ticks {}  unigram baseline {:.4}", s.ticks, s.baseline);
            for t in &s.trends {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                println!(
                    "{:<8} points {:>3}  first {}  last {}  trend p {}",
                    t.series,
                    t.points,
                    fmt(t.first),
                    fmt(t.last),
                    t.p_increasing.map_or("-".to_string(), |p| format!("{p:.3e}"))
                );
            }
            println!("metrics {}\ncheckpoint {}", s.metrics.display(), s.checkpoint.display());
        }
        Command::Skinner {
            common,
            no_preplay,
            no_modulation,
            phase2_only,
            policy,
            all_trials,
        } => {
            let config = common.load()?;
            let opts = SkinnerOptions {
                policy: match policy {
                    PolicyArg::Hica => Policy::Hica,
                    PolicyArg::Random => Policy::Random,
                    PolicyArg::Oracle => Policy::Oracle,
                },
                ablation: Ablation {
                    preplay: !no_preplay,
                    modulation: !no_modulation,
                },
                phase2_only,
                run_all_trials: all_trials,
            };
            let s = run_skinner(&config, &config.output.dir, &opts)?;
            for r in &s.seeds {
                let ttc = r.trials_to_criterion.map_or("not reached".to_string(), |t| t.to_string());
                println!("seed {:>3}  trials to criterion {ttc}", r.seed);
            }
            println!("median {}", s.median_trials(config.skinner.max_trials));
            println!("trials {}\nsummary {}", s.trials.display(), s.summary.display());
            if let Some(c) = &s.checkpoint {
                println!("checkpoint {}", c.display());
            }
        }
        Command::Gradcheck {
            common,
            corrupt_gradient,
        } => {
            common.load()?;
            let report = run_gradcheck(corrupt_gradient)?;
            let worst = report.worst_row().expect("sweep is non-empty");
            println!(
                "worst relative error {:.3e} ({} seed {} epsilon {:e})",
                worst.error, worst.unit, worst.seed, worst.epsilon
            );
            if !report.passed() {
                eprintln!("gradient check failed: {:.3e} >= {GRADCHECK_TOLERANCE:e}", worst.error);
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::ReplayDemo { common } => {
            let config = common.load()?;
            let r = run_replay_demo(&config, &config.output.dir)?;
            for run in &r.runs {
                println!("seed {:>3}  before {:.3}  after {:.3}", run.seed, run.before, run.after);
            }
            println!("median before {:.3}  after {:.3}", r.median_before, r.median_after);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HICA_LOG_LEVEL", "info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
