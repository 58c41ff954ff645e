//! On-disk artifacts: CSV tables with header rows and pretty JSON documents.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{parse_config, ExperimentConfig};
use super::{benchmark_points, DistanceRow, SHARE_WINDOW, TRANSITION_TAIL};
use crate::benchmarks::BenchmarkTable;
use crate::diagnostics::{
    centroid_distances, rolling_share, tail_transition_stats, Quadrant, TransitionStats,
};
use crate::dqn::{greedy_eval, DqnAgent, RunResult, TestStats};
use crate::error::{Error, Result};
use crate::market::MarketParams;
use crate::nn::{load_checkpoint, save_checkpoint};
use crate::schedule::ScheduleTrainingLog;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct ScheduleArtifact<'a> {
    seed: u64,
    final_schedules: &'a [Vec<f64>],
    final_is: &'a [f64],
    inventory_paths: Vec<Vec<f64>>,
    stopped_at: Option<usize>,
}

pub fn write_schedule_run(
    dir: &Path,
    log: &ScheduleTrainingLog,
    params: &MarketParams,
) -> Result<()> {
    log.write_csv(BufWriter::new(File::create(dir.join("training_log.csv"))?))?;
    let paths = (0..log.final_schedules.len())
        .map(|k| log.final_inventory_path(k, params.q0[k]))
        .collect();
    write_json(
        &dir.join("schedules.json"),
        &ScheduleArtifact {
            seed: log.seed,
            final_schedules: &log.final_schedules,
            final_is: &log.final_is,
            inventory_paths: paths,
            stopped_at: log.stopped_at,
        },
    )
}

pub fn write_training_log(path: &Path, r: &RunResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "episode", "eps", "is_p0", "is_p1", "quadrant", "loss_p0", "loss_p1",
    ])?;
    for e in &r.episodes {
        w.write_record([
            e.episode.to_string(),
            e.eps.to_string(),
            e.is[0].to_string(),
            e.is[1].to_string(),
            e.quadrant.to_string(),
            opt(e.loss[0]),
            opt(e.loss[1]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ig_series(path: &Path, r: &RunResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["update", "A_price", "A_inv", "A_time"])?;
    for g in &r.ig {
        w.write_record([
            g.episode.to_string(),
            g.summary.a_price.to_string(),
            g.summary.a_inv.to_string(),
            g.summary.a_time.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_paths(path: &Path, test: &TestStats) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..test.inventory_paths.len()).map(|k| format!("q_p{k}")));
    w.write_record(&header)?;
    let len = test.inventory_paths.first().map_or(0, Vec::len);
    for t in 0..len {
        let mut row = vec![t.to_string()];
        row.extend(test.inventory_paths.iter().map(|p| p[t].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_distances(path: &Path, rows: &[DistanceRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["E", "d_N", "d_T"])?;
    for r in rows {
        w.write_record([
            r.episodes.to_string(),
            r.d_nash.to_string(),
            r.d_twap.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TransitionsArtifact<'a> {
    tail: usize,
    quadrants: [&'static str; 4],
    stats: &'a TransitionStats,
}

/// Quadrant labels with the rolling share, tail transitions and mean test paths.
pub fn write_diagnostics(dir: &Path, r: &RunResult) -> Result<()> {
    let labels: Vec<Quadrant> = r.episodes.iter().map(|e| e.quadrant).collect();
    let share = rolling_share(&labels, SHARE_WINDOW)?;
    let mut w = csv_writer(&dir.join("quadrants.csv"))?;
    w.write_record(["episode", "quadrant", "rolling_share"])?;
    for (e, s) in r.episodes.iter().zip(&share) {
        w.write_record([e.episode.to_string(), e.quadrant.to_string(), s.to_string()])?;
    }
    w.flush()?;
    if labels.len() >= 2 {
        let stats = tail_transition_stats(&labels, TRANSITION_TAIL)?;
        write_json(
            &dir.join("transitions.json"),
            &TransitionsArtifact {
                tail: TRANSITION_TAIL.min(labels.len()),
                quadrants: Quadrant::ALL.map(Quadrant::as_str),
                stats: &stats,
            },
        )?;
    }
    write_paths(&dir.join("paths.csv"), &r.test)
}

pub fn write_dqn_run(dir: &Path, r: &RunResult) -> Result<()> {
    write_training_log(&dir.join("training_log.csv"), r)?;
    write_json(&dir.join("test_stats.json"), &r.test)?;
    if !r.ig.is_empty() {
        write_ig_series(&dir.join("ig_series.csv"), r)?;
    }
    for (k, p) in r.params.iter().enumerate() {
        save_checkpoint(&dir.join(format!("checkpoint_p{k}.bin")), &r.spec, p)?;
    }
    write_json(&dir.join("run.json"), r)?;
    write_diagnostics(dir, r)
}

fn run_dirs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join("run.json").is_file() {
        out.push(dir.to_path_buf());
    }
    let mut children: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    children.sort();
    for c in children {
        run_dirs(&c, out)?;
    }
    Ok(())
}

fn read_run(dir: &Path) -> Result<RunResult> {
    let text = std::fs::read_to_string(dir.join("run.json"))?;
    Ok(serde_json::from_str(&text)?)
}

/// Recomputes per-run diagnostics below an experiment directory and writes
/// `distances.csv` grouped by training horizon.
pub fn diagnose_dir(experiment_dir: &Path) -> Result<Vec<DistanceRow>> {
    let cfg_path = experiment_dir.join("config.cfg");
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| {
        Error::Config(format!(
            "{} is not an experiment directory: {e}",
            experiment_dir.display()
        ))
    })?;
    let cfg = parse_config(&text, std::iter::empty())?;
    let table = BenchmarkTable::compute(&cfg.market)?;
    let (nash, twap) = benchmark_points(&table, &cfg.market);

    let mut dirs = Vec::new();
    run_dirs(experiment_dir, &mut dirs)?;
    let mut groups: Vec<(usize, Vec<Vec<[f64; 2]>>)> = Vec::new();
    for d in &dirs {
        let r = read_run(d)?;
        write_diagnostics(d, &r)?;
        if !r.ig.is_empty() {
            write_ig_series(&d.join("ig_series.csv"), &r)?;
        }
        let e = r.episodes.len();
        match groups.iter_mut().find(|g| g.0 == e) {
            Some(g) => g.1.push(r.test.is_pairs),
            None => groups.push((e, vec![r.test.is_pairs])),
        }
    }
    groups.sort_by_key(|g| g.0);
    let rows = groups
        .into_iter()
        .map(|(e, runs)| {
            let d = centroid_distances(&runs, cfg.market.n_slices, nash, twap)?;
            Ok(DistanceRow {
                episodes: e,
                d_nash: d.d_nash,
                d_twap: d.d_twap,
                runs: runs.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if !rows.is_empty() {
        write_distances(&experiment_dir.join("distances.csv"), &rows)?;
    }
    Ok(rows)
}

/// Greedy re-evaluation of the checkpoints stored in a run directory.
pub fn eval_checkpoints(
    run_dir: &Path,
    cfg: &ExperimentConfig,
    episodes: usize,
    seed: u64,
) -> Result<TestStats> {
    let mut agents = Vec::new();
    let mut dqn = cfg.dqn.clone();
    for k in 0..cfg.market.n_players() {
        let (spec, params) = load_checkpoint(&run_dir.join(format!("checkpoint_p{k}.bin")))?;
        dqn.variant = spec.variant;
        dqn.network = Some(spec.clone());
        let mut a = DqnAgent::new(&spec, &dqn, k, seed)?;
        if params.values.len() != a.net.n_params() {
            return Err(Error::Corruption(format!(
                "checkpoint for player {k} does not match its architecture"
            )));
        }
        a.online = params;
        agents.push(a);
    }
    greedy_eval(&mut agents, &cfg.market, &dqn, episodes, seed)
}
