use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use execlab::harness::{
    diagnose_dir, eval_checkpoints, load_config, parse_config, run_experiment, write_json,
    ExperimentConfig, ExperimentKind, ExperimentSummary, OpponentSchedule, TABLE1_PRESET,
};
use execlab::market::Convention;
use execlab::nn::Variant;
use execlab::schedule::LearnerVariant;

#[derive(Parser)]
#[command(
    name = "execlab",
    version,
    about = "Two-player liquidation game laboratory"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); defaults to the built-in Table 1 preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Worker threads for independent runs (0 = all cores).
    #[arg(long)]
    parallel: Option<usize>,
    /// Experiment name (output subdirectory).
    #[arg(long)]
    name: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Env {
    Agg,
    Own,
}

#[derive(Clone, Copy, ValueEnum)]
enum Learner {
    Mf,
    Mb,
}

#[derive(Clone, Copy, ValueEnum)]
enum Opponent {
    AggNash,
    OwnNash,
    Twap,
}

#[derive(Clone, Copy, ValueEnum)]
enum QVariant {
    Baseline,
    Film,
    History,
}

impl QVariant {
    fn variant(self) -> Variant {
        match self {
            QVariant::Baseline => Variant::BaselineQ,
            QVariant::Film => Variant::FilmQ,
            QVariant::History => Variant::HistoryQ,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Benchmark constants, schedules and shortfalls.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Ex-ante schedule learning.
    ScheduleLearn {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        env: Option<Env>,
        #[arg(long, value_enum)]
        variant: Option<Learner>,
        /// Hold player 1 at a benchmark schedule.
        #[arg(long, value_enum)]
        fix_opponent: Option<Opponent>,
        #[arg(long)]
        updates: Option<usize>,
    },
    /// Joint DDQN training followed by greedy testing.
    DqnTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        variant: Option<QVariant>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, value_enum)]
        env: Option<Env>,
    },
    /// Greedy re-evaluation of a trained run's checkpoints.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Run directory holding checkpoint_p0.bin and checkpoint_p1.bin.
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, default_value_t = 500)]
        episodes: usize,
    },
    /// Recomputes diagnostics for an experiment directory.
    Diagnose {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Training-horizon sweep of DDQN agents.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        variant: Option<QVariant>,
        /// Comma-separated training horizons.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
    },
}

fn base_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => {
            parse_config(TABLE1_PRESET, std::env::vars()).context("loading the built-in preset")?
        }
    };
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.base_seed = s;
    }
    if let Some(r) = common.runs {
        cfg.runs = r;
    }
    if let Some(w) = common.parallel {
        cfg.parallel = w;
    }
    Ok(cfg)
}

fn finish(
    mut cfg: ExperimentConfig,
    common: &Common,
    default_name: String,
) -> Result<ExperimentSummary> {
    if let Some(n) = &common.name {
        cfg.name = n.clone();
    } else if common.config.is_none() {
        cfg.name = default_name;
    }
    cfg.validate()?;
    let summary = run_experiment(&cfg)?;
    eprintln!(
        "{}: {} runs, {} failed; outputs in {}",
        summary.name,
        summary.runs.len(),
        summary.failures,
        cfg.experiment_dir().display()
    );
    for r in summary.runs.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "  run {} (seed {}): {}",
            r.run,
            r.seed,
            r.error.as_deref().unwrap_or_default()
        );
    }
    Ok(summary)
}

fn convention(e: Env) -> Convention {
    match e {
        Env::Agg => Convention::Aggregate,
        Env::Own => Convention::Own,
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Bench { common } => {
            let mut cfg = base_config(&common)?;
            cfg.kind = ExperimentKind::Bench;
            let s = finish(cfg, &common, "bench".into())?;
            println!("{}", serde_json::to_string_pretty(&s.benchmarks)?);
        }
        Cmd::ScheduleLearn {
            common,
            env,
            variant,
            fix_opponent,
            updates,
        } => {
            let mut cfg = base_config(&common)?;
            cfg.kind = ExperimentKind::Schedule;
            if let Some(e) = env {
                cfg.market.convention = convention(e);
            }
            if let Some(v) = variant {
                cfg.schedule.learner.variant = match v {
                    Learner::Mf => LearnerVariant::ModelFree,
                    Learner::Mb => LearnerVariant::ModelBased,
                };
            }
            if let Some(o) = fix_opponent {
                cfg.schedule.fix_opponent = Some(match o {
                    Opponent::AggNash => OpponentSchedule::AggNash,
                    Opponent::OwnNash => OpponentSchedule::OwnNash,
                    Opponent::Twap => OpponentSchedule::Twap,
                });
            }
            if let Some(u) = updates {
                cfg.schedule.learner.n_updates = u;
            }
            let name = format!(
                "schedule_{}{}",
                match cfg.market.convention {
                    Convention::Aggregate => "agg",
                    Convention::Own => "own",
                },
                if cfg.schedule.fix_opponent.is_some() {
                    "_fixed"
                } else {
                    ""
                }
            );
            finish(cfg, &common, name)?;
        }
        Cmd::DqnTrain {
            common,
            variant,
            episodes,
            env,
        } => {
            let mut cfg = base_config(&common)?;
            cfg.kind = ExperimentKind::Dqn;
            if let Some(v) = variant {
                cfg.dqn.variant = v.variant();
                cfg.dqn.network = None;
            }
            if let Some(e) = episodes {
                cfg.dqn.training_episodes = e;
            }
            if let Some(e) = env {
                cfg.market.convention = convention(e);
            }
            let name = format!("dqn_{:?}", cfg.dqn.variant).to_lowercase();
            finish(cfg, &common, name)?;
        }
        Cmd::Eval {
            common,
            run_dir,
            episodes,
        } => {
            let cfg = match &common.config {
                Some(_) => base_config(&common)?,
                None => {
                    let exp = run_dir
                        .ancestors()
                        .skip(1)
                        .find(|d| d.join("config.cfg").is_file());
                    let Some(exp) = exp else {
                        bail!("no config.cfg above {}; pass --config", run_dir.display());
                    };
                    let text = std::fs::read_to_string(exp.join("config.cfg"))?;
                    parse_config(&text, std::env::vars())?
                }
            };
            let seed = common.seed.unwrap_or(cfg.base_seed);
            let stats = eval_checkpoints(&run_dir, &cfg, episodes, seed)?;
            let path = run_dir.join("eval_stats.json");
            write_json(&path, &stats)?;
            println!(
                "centroid (IS/N) = [{}, {}]; written to {}",
                stats.centroid[0],
                stats.centroid[1],
                path.display()
            );
        }
        Cmd::Diagnose { dir } => {
            let rows = diagnose_dir(&dir)?;
            println!("E,d_N,d_T");
            for r in rows {
                println!("{},{},{}", r.episodes, r.d_nash, r.d_twap);
            }
        }
        Cmd::Sweep {
            common,
            variant,
            horizons,
        } => {
            let mut cfg = base_config(&common)?;
            cfg.kind = ExperimentKind::Sweep;
            if let Some(v) = variant {
                cfg.dqn.variant = v.variant();
                cfg.dqn.network = None;
            } else if common.config.is_none() {
                cfg.dqn.variant = Variant::HistoryQ;
            }
            if let Some(h) = horizons {
                cfg.sweep.horizons = h;
            }
            let s = finish(cfg, &common, "sweep".into())?;
            println!("E,d_N,d_T");
            for r in s.distances {
                println!("{},{},{}", r.episodes, r.d_nash, r.d_twap);
            }
        }
    }
    Ok(())
}
