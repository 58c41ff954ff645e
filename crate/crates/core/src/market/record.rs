use std::io::Write;

use serde::{Deserialize, Serialize};

use super::env::{EnvState, MarketEnv, NoiseStream, StepOutcome};
use super::params::MarketParams;
use crate::error::{Error, Result};

/// Absolute tolerance on `sum(schedule) - q0` before the terminal slice is
/// corrected to liquidate exactly.
pub const SCHEDULE_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    /// Slice index of the decision (0-based).
    pub t: usize,
    /// Midprice after the slice.
    pub mid: f64,
    pub inv: Vec<f64>,
    pub cash: Vec<f64>,
    #[serde(flatten)]
    pub outcome: StepOutcome,
}

/// Full trace of one rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub params: MarketParams,
    pub steps: Vec<EpisodeStep>,
    /// Implementation shortfall per player; empty until the episode is complete.
    pub is: Vec<f64>,
}

impl EpisodeRecord {
    pub fn new(params: MarketParams) -> Self {
        Self {
            params,
            steps: Vec::new(),
            is: Vec::new(),
        }
    }

    pub fn push(&mut self, t: usize, next: &EnvState, outcome: StepOutcome) {
        self.steps.push(EpisodeStep {
            t,
            mid: next.mid,
            inv: next.inv.clone(),
            cash: next.cash.clone(),
            outcome,
        });
        if self.is_complete() {
            self.is = (0..self.params.n_players())
                .map(|k| implementation_shortfall(self, k).expect("complete record"))
                .collect();
        }
    }

    pub fn is_complete(&self) -> bool {
        self.steps.len() == self.params.n_slices
    }

    /// Inventory of `player` at t = 0..=N.
    pub fn inventory_path(&self, player: usize) -> Vec<f64> {
        let mut path = Vec::with_capacity(self.steps.len() + 1);
        path.push(self.params.q0[player]);
        path.extend(self.steps.iter().map(|s| s.inv[player]));
        path
    }

    pub fn trades(&self, player: usize) -> Vec<f64> {
        self.steps
            .iter()
            .map(|s| s.outcome.trades[player])
            .collect()
    }

    pub fn total_reward(&self, player: usize) -> f64 {
        self.steps.iter().map(|s| s.outcome.reward[player]).sum()
    }

    pub fn noise(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.outcome.xi).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-step CSV: `t, mid, xi, v_k.., exec_k.., cash_k.., reward_k..`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let k = self.params.n_players();
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "mid".into(), "xi".into()];
        for prefix in ["v", "exec", "cash", "reward"] {
            header.extend((0..k).map(|i| format!("{prefix}_{i}")));
        }
        out.write_record(&header)?;
        for s in &self.steps {
            let mut row = vec![s.t.to_string(), s.mid.to_string(), s.outcome.xi.to_string()];
            row.extend(s.outcome.trades.iter().map(f64::to_string));
            row.extend(s.outcome.exec_price.iter().map(f64::to_string));
            row.extend(s.cash.iter().map(f64::to_string));
            row.extend(s.outcome.reward.iter().map(f64::to_string));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `q0 S0 - sum_m v_m * exec_m` for one player of a complete record.
pub fn implementation_shortfall(record: &EpisodeRecord, player: usize) -> Result<f64> {
    if !record.is_complete() {
        return Err(Error::IncompleteRecord {
            steps: record.steps.len(),
            expected: record.params.n_slices,
        });
    }
    let revenue: f64 = record
        .steps
        .iter()
        .map(|s| s.outcome.trades[player] * s.outcome.exec_price[player])
        .sum();
    Ok(record.params.q0[player] * record.params.s0 - revenue)
}

/// Checks non-negativity, length and the liquidation sum of one schedule.
pub fn check_schedule(params: &MarketParams, player: usize, schedule: &[f64]) -> Result<()> {
    let fail = |reason: String| Err(Error::InfeasibleSchedule { player, reason });
    if schedule.len() != params.n_slices {
        return fail(format!(
            "length {} != N = {}",
            schedule.len(),
            params.n_slices
        ));
    }
    if let Some((t, v)) = schedule
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0)
    {
        return fail(format!("slice {t} is {v}"));
    }
    let sum: f64 = schedule.iter().sum();
    if (sum - params.q0[player]).abs() > SCHEDULE_SUM_TOL {
        return fail(format!("sums to {sum}, expected {}", params.q0[player]));
    }
    Ok(())
}

/// Executes fixed schedules (one per player) against the given noise stream.
pub fn run_schedules(
    params: &MarketParams,
    schedules: &[&[f64]],
    noise: NoiseStream,
) -> Result<EpisodeRecord> {
    run_schedules_in(MarketEnv::new(params.clone(), noise)?, schedules)
}

/// As [`run_schedules`] but without positivity checks on the impact coefficients.
pub fn run_schedules_relaxed(
    params: &MarketParams,
    schedules: &[&[f64]],
    noise: NoiseStream,
) -> Result<EpisodeRecord> {
    run_schedules_in(MarketEnv::new_relaxed(params.clone(), noise)?, schedules)
}

fn run_schedules_in(env: MarketEnv, schedules: &[&[f64]]) -> Result<EpisodeRecord> {
    let params = env.params().clone();
    if schedules.len() != params.n_players() {
        return Err(Error::Shape(format!(
            "{} schedules for {} players",
            schedules.len(),
            params.n_players()
        )));
    }
    for (k, s) in schedules.iter().enumerate() {
        check_schedule(&params, k, s)?;
    }
    let n = params.n_slices;
    let mut record = EpisodeRecord::new(params);
    let mut state = env.initial_state();
    let mut actions = vec![0.0; schedules.len()];
    for t in 0..n {
        for (k, s) in schedules.iter().enumerate() {
            // sum tolerance is absorbed here; the last slice takes what is left
            actions[k] = if t + 1 == n {
                state.inv[k]
            } else {
                s[t].min(state.inv[k])
            };
        }
        let (next, outcome) = env.step(&state, &actions)?;
        record.push(t, &next, outcome);
        state = next;
    }
    Ok(record)
}

/// Two-player convenience wrapper: episode 0 of `seed`.
pub fn run_schedule_pair(
    params: &MarketParams,
    schedules: [&[f64]; 2],
    seed: u64,
) -> Result<EpisodeRecord> {
    run_schedules(params, &schedules, NoiseStream::new(seed, 0))
}
