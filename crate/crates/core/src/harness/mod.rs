//! Experiment orchestration: runs seeds in a worker pool, persists every
//! artifact under `<output_dir>/<name>/` and writes an aggregate `summary.json`.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmarks::BenchmarkTable;
use crate::diagnostics::{
    centroid_distances, classify_quadrant, rolling_share, tail_transition_stats, Quadrant,
};
use crate::dqn::{train_ddqn_pair, DqnConfig, RunResult};
use crate::error::{Error, Result};
use crate::market::MarketParams;
use crate::schedule::{train_schedule_run, FixedOpponent, ScheduleTrainingLog};

pub use config::{
    apply_env_overrides, load_config, parse_config, ExperimentConfig, ExperimentKind,
    OpponentSchedule, ScheduleSection, SweepConfig, ENV_PREFIX, TABLE1_PRESET,
};
pub use output::{diagnose_dir, eval_checkpoints, write_dqn_run, write_json, write_schedule_run};

/// Rolling window and threshold used in the per-run share summary.
pub const SHARE_WINDOW: usize = 20;
pub const SHARE_THRESHOLD: f64 = 0.35;
/// Training episodes summarized by the transition statistics.
pub const TRANSITION_TAIL: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleMetrics {
    pub final_is: Vec<f64>,
    pub quadrant: Quadrant,
    /// L2 distance of each player's schedule to the aggregate- and own-impact Nash grid paths.
    pub l2_agg_nash: Vec<f64>,
    pub l2_own_nash: Vec<f64>,
    pub stopped_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnMetrics {
    /// Test centroid in `IS / N` units.
    pub centroid: [f64; 2],
    pub d_nash: f64,
    pub d_twap: f64,
    pub test_quadrant: Quadrant,
    /// Mean rolling supra-competitive share after the epsilon floor.
    pub rolling_share_mean: f64,
    /// Fraction of post-floor episodes whose rolling share is below the threshold.
    pub rolling_share_frac_below: f64,
    /// SW occupancy over the last training episodes.
    pub tail_sw_occupancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RunMetrics {
    Schedule(ScheduleMetrics),
    Dqn(DqnMetrics),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub horizon: Option<usize>,
    pub dir: PathBuf,
    pub error: Option<String>,
    pub metrics: Option<RunMetrics>,
}

/// One aggregate row of a horizon sweep (or of a single DDQN experiment).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub episodes: usize,
    pub d_nash: f64,
    pub d_twap: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub kind: ExperimentKind,
    pub base_seed: u64,
    pub benchmarks: BenchmarkTable,
    pub runs: Vec<RunSummary>,
    pub distances: Vec<DistanceRow>,
    pub failures: usize,
}

/// Seed of run `index`.
pub fn run_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

fn pool(width: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(width)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
}

/// Benchmarks in `IS / N` units: `(nash, twap)`.
pub fn benchmark_points(table: &BenchmarkTable, params: &MarketParams) -> ([f64; 2], [f64; 2]) {
    let (nash, twap) = table.points_for(params.convention);
    let n = params.n_slices as f64;
    ([nash / n; 2], [twap / n; 2])
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn schedule_metrics(
    log: &ScheduleTrainingLog,
    table: &BenchmarkTable,
    params: &MarketParams,
) -> ScheduleMetrics {
    let nash = table.points_for(params.convention).0;
    ScheduleMetrics {
        final_is: log.final_is.clone(),
        quadrant: classify_quadrant([log.final_is[0], log.final_is[1]], [nash, nash]),
        l2_agg_nash: log
            .final_schedules
            .iter()
            .map(|s| l2(s, &table.schedules.agg_nash))
            .collect(),
        l2_own_nash: log
            .final_schedules
            .iter()
            .map(|s| l2(s, &table.schedules.own_nash))
            .collect(),
        stopped_at: log.stopped_at,
    }
}

pub fn dqn_metrics(
    r: &RunResult,
    cfg: &DqnConfig,
    table: &BenchmarkTable,
    params: &MarketParams,
) -> Result<DqnMetrics> {
    let (nash, twap) = benchmark_points(table, params);
    let d = centroid_distances(&[r.test.is_pairs.clone()], params.n_slices, nash, twap)?;
    let labels: Vec<Quadrant> = r.episodes.iter().map(|e| e.quadrant).collect();
    let share = rolling_share(&labels, SHARE_WINDOW)?;
    let post = &share[cfg.eps_floor_episode.min(share.len())..];
    let (mean, below) = if post.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let n = post.len() as f64;
        (
            post.iter().sum::<f64>() / n,
            post.iter().filter(|s| **s < SHARE_THRESHOLD).count() as f64 / n,
        )
    };
    let tail = if labels.len() >= 2 {
        Some(tail_transition_stats(&labels, TRANSITION_TAIL)?)
    } else {
        None
    };
    Ok(DqnMetrics {
        centroid: r.test.centroid,
        d_nash: d.d_nash,
        d_twap: d.d_twap,
        test_quadrant: classify_quadrant(r.test.centroid, nash),
        rolling_share_mean: mean,
        rolling_share_frac_below: below,
        tail_sw_occupancy: tail.map_or(f64::NAN, |t| t.occupancy[Quadrant::SW.index()]),
    })
}

fn fixed_opponent(cfg: &ExperimentConfig, table: &BenchmarkTable) -> Option<FixedOpponent> {
    cfg.schedule.fix_opponent.map(|o| FixedOpponent {
        player: cfg.schedule.fixed_player,
        schedule: match o {
            OpponentSchedule::AggNash => table.schedules.agg_nash.clone(),
            OpponentSchedule::OwnNash => table.schedules.own_nash.clone(),
            OpponentSchedule::Twap => table.schedules.twap.clone(),
        },
    })
}

struct Job {
    run: usize,
    horizon: Option<usize>,
    dir: PathBuf,
}

fn run_job(cfg: &ExperimentConfig, table: &BenchmarkTable, job: &Job) -> Result<RunMetrics> {
    let seed = run_seed(cfg.base_seed, job.run);
    std::fs::create_dir_all(&job.dir)?;
    match cfg.kind {
        ExperimentKind::Schedule => {
            let fixed = fixed_opponent(cfg, table);
            let log = train_schedule_run(&cfg.market, &cfg.schedule.learner, seed, fixed.as_ref())?;
            write_schedule_run(&job.dir, &log, &cfg.market)?;
            Ok(RunMetrics::Schedule(schedule_metrics(
                &log,
                table,
                &cfg.market,
            )))
        }
        ExperimentKind::Dqn | ExperimentKind::Sweep => {
            let mut dqn = cfg.dqn.clone();
            if let Some(e) = job.horizon {
                dqn.training_episodes = e;
            }
            let r = train_ddqn_pair(&cfg.market, &dqn, seed)?;
            write_dqn_run(&job.dir, &r)?;
            Ok(RunMetrics::Dqn(dqn_metrics(&r, &dqn, table, &cfg.market)?))
        }
        ExperimentKind::Bench => Err(Error::Config("benchmark experiments have no runs".into())),
    }
}

fn distance_rows(cfg: &ExperimentConfig, runs: &[RunSummary]) -> Vec<DistanceRow> {
    let horizons: Vec<usize> = match cfg.kind {
        ExperimentKind::Sweep => cfg.sweep.horizons.clone(),
        ExperimentKind::Dqn => vec![cfg.dqn.training_episodes],
        _ => return Vec::new(),
    };
    horizons
        .into_iter()
        .filter_map(|e| {
            let ms: Vec<&DqnMetrics> = runs
                .iter()
                .filter(|r| r.horizon.unwrap_or(cfg.dqn.training_episodes) == e)
                .filter_map(|r| match &r.metrics {
                    Some(RunMetrics::Dqn(m)) => Some(m),
                    _ => None,
                })
                .collect();
            if ms.is_empty() {
                return None;
            }
            let n = ms.len() as f64;
            Some(DistanceRow {
                episodes: e,
                d_nash: ms.iter().map(|m| m.d_nash).sum::<f64>() / n,
                d_twap: ms.iter().map(|m| m.d_twap).sum::<f64>() / n,
                runs: ms.len(),
            })
        })
        .collect()
}

/// Executes every run of `cfg`, persists outputs and returns the aggregate summary.
/// A failing run is recorded and the remaining runs continue.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let root = cfg.experiment_dir();
    std::fs::create_dir_all(&root)?;
    cfg.save(&root.join("config.cfg"))?;
    let table = BenchmarkTable::compute(&cfg.market)?;
    output::write_json(&root.join("benchmarks.json"), &table)?;

    let mut jobs = Vec::new();
    match cfg.kind {
        ExperimentKind::Bench => {}
        ExperimentKind::Schedule | ExperimentKind::Dqn => {
            for run in 0..cfg.runs {
                jobs.push(Job {
                    run,
                    horizon: None,
                    dir: root.join(format!("run{run:03}")),
                });
            }
        }
        ExperimentKind::Sweep => {
            for &e in &cfg.sweep.horizons {
                for run in 0..cfg.runs {
                    jobs.push(Job {
                        run,
                        horizon: Some(e),
                        dir: root.join(format!("E{e}")).join(format!("run{run:03}")),
                    });
                }
            }
        }
    }
    let results: Vec<Result<RunMetrics>> =
        pool(cfg.parallel)?.install(|| jobs.par_iter().map(|j| run_job(cfg, &table, j)).collect());

    let runs: Vec<RunSummary> = jobs
        .iter()
        .zip(results)
        .map(|(j, r)| {
            let dir = j
                .dir
                .strip_prefix(&root)
                .map(Path::to_path_buf)
                .unwrap_or_else(|_| j.dir.clone());
            let (metrics, error) = match r {
                Ok(m) => (Some(m), None),
                Err(e) => (None, Some(e.to_string())),
            };
            RunSummary {
                run: j.run,
                seed: run_seed(cfg.base_seed, j.run),
                horizon: j.horizon,
                dir,
                error,
                metrics,
            }
        })
        .collect();
    let distances = distance_rows(cfg, &runs);
    if !distances.is_empty() {
        output::write_distances(&root.join("distances.csv"), &distances)?;
    }
    let summary = ExperimentSummary {
        name: cfg.name.clone(),
        kind: cfg.kind,
        base_seed: cfg.base_seed,
        benchmarks: table,
        failures: runs.iter().filter(|r| r.error.is_some()).count(),
        runs,
        distances,
    };
    output::write_json(&root.join("summary.json"), &summary)?;
    Ok(summary)
}
