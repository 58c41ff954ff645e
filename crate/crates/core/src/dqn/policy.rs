//! Admissible trades, exploration schedule, greedy selection and double-Q targets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::obs::{history_batch, Obs};
use super::replay::Transition;
use crate::error::{Error, Result};
use crate::nn::{Network, NetworkParams, QBatch};

const INV_TOL: f64 = 1e-9;

/// Discrete trades: multiples of `q0 / steps` up to the remaining inventory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionGrid {
    pub q0: f64,
    pub n_slices: usize,
    pub steps: usize,
}

impl ActionGrid {
    pub fn admissible(&self, inv: f64, t: usize) -> Vec<f64> {
        admissible_actions(inv, t, self)
    }

    pub fn normalize(&self, a: f64) -> f64 {
        a / self.q0
    }
}

/// The final slice must liquidate everything; earlier slices choose from the
/// grid, filtered to at most the remaining inventory.
pub fn admissible_actions(inv: f64, t: usize, grid: &ActionGrid) -> Vec<f64> {
    if !inv.is_finite() || inv < -INV_TOL || t >= grid.n_slices {
        return Vec::new();
    }
    if t + 1 == grid.n_slices {
        return vec![inv.max(0.0)];
    }
    let step = grid.q0 / grid.steps as f64;
    (0..=grid.steps)
        .map(|k| k as f64 * step)
        .filter(|a| *a <= inv + INV_TOL)
        .map(|a| a.min(inv.max(0.0)))
        .collect()
}

/// `max(eps_min, eps_start * r^episode)` with `r = (eps_min / eps_start)^(1 / floor_episode)`.
pub fn epsilon_at(episode: usize, eps_start: f64, eps_min: f64, floor_episode: usize) -> f64 {
    if episode >= floor_episode || eps_start <= eps_min {
        return eps_min;
    }
    let r = (eps_min / eps_start).powf(1.0 / floor_episode as f64);
    (eps_start * r.powi(episode as i32)).max(eps_min)
}

/// Q-values for `(observation, normalized action)` pairs.
pub trait QFunction {
    /// `pairs[i] = (index into obs, normalized action)`.
    fn q_pairs(&self, obs: &[&Obs], pairs: &[(usize, f64)]) -> Result<Vec<f64>>;
}

/// A network with one parameter set.
pub struct NetQ<'a> {
    pub net: &'a Network,
    pub params: &'a NetworkParams,
}

impl QFunction for NetQ<'_> {
    fn q_pairs(&self, obs: &[&Obs], pairs: &[(usize, f64)]) -> Result<Vec<f64>> {
        let mut feats = Vec::with_capacity(4 * pairs.len());
        for &(i, a) in pairs {
            feats.extend_from_slice(&obs[i].features(a));
        }
        let idx: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let hist = if self.net.history().is_some() {
            Some(history_batch(obs).ok_or_else(|| {
                Error::Shape("history-aware network needs observation histories".into())
            })?)
        } else {
            None
        };
        let batch = QBatch {
            features: &feats,
            history: hist.as_ref().map(|h| (h, idx.as_slice())),
        };
        self.net.q_values(self.params, &batch)
    }
}

/// First index of the maximum; actions are ascending, so ties go to the smallest trade.
fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate().skip(1) {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy over `actions` (ascending raw trades). Returns the chosen trade.
pub fn select_action<R: Rng>(
    q: &dyn QFunction,
    obs: &Obs,
    actions: &[f64],
    grid: &ActionGrid,
    eps: f64,
    rng: &mut R,
) -> Result<f64> {
    match actions.len() {
        0 => {
            return Err(Error::InfeasibleAction {
                player: 0,
                t: obs.t,
                reason: "empty admissible set".into(),
            })
        }
        1 => return Ok(actions[0]),
        _ => {}
    }
    if eps > 0.0 && rng.gen::<f64>() < eps {
        return Ok(actions[rng.gen_range(0..actions.len())]);
    }
    let pairs: Vec<(usize, f64)> = actions.iter().map(|a| (0, grid.normalize(*a))).collect();
    let v = q.q_pairs(&[obs], &pairs)?;
    Ok(actions[argmax(&v)])
}

/// `y = r + (1 - d) gamma Q_target(s', argmax_a' Q_online(s', a'))`.
pub fn ddqn_target(
    batch: &[&Transition],
    online: &dyn QFunction,
    target: &dyn QFunction,
    gamma: f64,
    grid: &ActionGrid,
) -> Result<Vec<f64>> {
    let mut y: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].done).collect();
    if live.is_empty() {
        return Ok(y);
    }
    let next: Vec<&Obs> = live.iter().map(|&i| &batch[i].next).collect();
    let mut pairs = Vec::new();
    let mut spans = Vec::with_capacity(live.len());
    for (j, o) in next.iter().enumerate() {
        let acts = grid.admissible(o.inv, o.t);
        if acts.is_empty() {
            return Err(Error::Corruption(format!(
                "empty admissible set at non-terminal next state (t = {}, inv = {})",
                o.t, o.inv
            )));
        }
        spans.push((pairs.len(), acts.len()));
        pairs.extend(acts.iter().map(|a| (j, grid.normalize(*a))));
    }
    let q_on = online.q_pairs(&next, &pairs)?;
    let chosen: Vec<(usize, f64)> = spans
        .iter()
        .map(|&(s, n)| pairs[s + argmax(&q_on[s..s + n])])
        .collect();
    let q_tg = target.q_pairs(&next, &chosen)?;
    for (k, &i) in live.iter().enumerate() {
        y[i] += gamma * q_tg[k];
    }
    Ok(y)
}
