use serde::{Deserialize, Serialize};

use super::params::{Convention, MarketParams};
use crate::error::{Error, Result};
use crate::seed::{counter_normal, derive_seed, Purpose};

/// Per-episode noise stream: the draw for slice `t` is a pure function of
/// `(run seed, episode, t)`, so paired rollouts share identical shocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseStream {
    key: u64,
}

impl NoiseStream {
    pub fn new(run_seed: u64, episode: u64) -> Self {
        Self::with_purpose(run_seed, episode, Purpose::EnvNoise)
    }

    pub fn with_purpose(run_seed: u64, episode: u64, purpose: Purpose) -> Self {
        Self {
            key: derive_seed(run_seed, episode, purpose),
        }
    }

    pub fn xi(&self, t: usize) -> f64 {
        counter_normal(self.key, t as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    /// Slice index, 0..=N.
    pub t: usize,
    pub mid: f64,
    pub inv: Vec<f64>,
    pub cash: Vec<f64>,
}

impl EnvState {
    pub fn is_done(&self, n_slices: usize) -> bool {
        self.t >= n_slices
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub exec_price: Vec<f64>,
    pub trades: Vec<f64>,
    pub reward: Vec<f64>,
    pub xi: f64,
}

/// The discrete execution environment for one episode.
#[derive(Debug, Clone)]
pub struct MarketEnv {
    params: MarketParams,
    noise: NoiseStream,
}

impl MarketEnv {
    pub fn new(params: MarketParams, noise: NoiseStream) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, noise })
    }

    /// Accepts zero impact coefficients (used for no-impact sanity checks).
    pub fn new_relaxed(params: MarketParams, noise: NoiseStream) -> Result<Self> {
        params.validate_structure()?;
        Ok(Self { params, noise })
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn noise(&self) -> &NoiseStream {
        &self.noise
    }

    pub fn initial_state(&self) -> EnvState {
        let k = self.params.n_players();
        EnvState {
            t: 0,
            mid: self.params.s0,
            inv: self.params.q0.clone(),
            cash: vec![0.0; k],
        }
    }

    /// Advances one slice with simultaneous trades `actions` (one per player).
    pub fn step(&self, state: &EnvState, actions: &[f64]) -> Result<(EnvState, StepOutcome)> {
        let p = &self.params;
        let n = p.n_slices;
        if state.t >= n {
            return Err(Error::EpisodeFinished(state.t));
        }
        if actions.len() != p.n_players() {
            return Err(Error::Shape(format!(
                "expected {} actions, got {}",
                p.n_players(),
                actions.len()
            )));
        }
        let last = state.t + 1 == n;
        for (k, (&v, &q)) in actions.iter().zip(&state.inv).enumerate() {
            let reason = if !v.is_finite() {
                Some(format!("non-finite trade {v}"))
            } else if v < 0.0 {
                Some(format!("negative trade {v}"))
            } else if v > q {
                Some(format!("trade {v} exceeds inventory {q}"))
            } else if last && v != q {
                Some(format!(
                    "final slice must liquidate the remaining {q}, got {v}"
                ))
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(Error::InfeasibleAction {
                    player: k,
                    t: state.t,
                    reason,
                });
            }
        }

        let tau = p.tau();
        let total: f64 = actions.iter().sum();
        let xi = self.noise.xi(state.t);
        let exec_price: Vec<f64> = match p.convention {
            Convention::Aggregate => {
                let s = state.mid - p.a * total / tau;
                vec![s; actions.len()]
            }
            Convention::Own => actions.iter().map(|v| state.mid - p.a * v / tau).collect(),
        };
        let reward: Vec<f64> = actions
            .iter()
            .zip(&exec_price)
            .enumerate()
            .map(|(k, (&v, &s))| step_reward(s, v, p, k))
            .collect();
        let mid = state.mid - p.kappa * total + p.sigma * tau.sqrt() * xi;
        let inv = state
            .inv
            .iter()
            .zip(actions)
            .map(|(q, v)| if last { 0.0 } else { q - v })
            .collect();
        let cash = state
            .cash
            .iter()
            .zip(actions.iter().zip(&exec_price))
            .map(|(c, (v, s))| c + v * s)
            .collect();
        let next = EnvState {
            t: state.t + 1,
            mid,
            inv,
            cash,
        };
        Ok((
            next,
            StepOutcome {
                exec_price,
                trades: actions.to_vec(),
                reward,
                xi,
            },
        ))
    }
}

/// Initializes an environment for episode 0 of `seed` and returns its start state.
pub fn env_init(params: MarketParams, seed: u64) -> Result<(MarketEnv, EnvState)> {
    let env = MarketEnv::new(params, NoiseStream::new(seed, 0))?;
    let s = env.initial_state();
    Ok((env, s))
}

/// Per-step reward: `-S0 q0 / N + S_exec * v - a v^2` (the last term only
/// when `reward_penalty` is on).
pub fn step_reward(exec_price: f64, v: f64, params: &MarketParams, player: usize) -> f64 {
    let alloc = params.s0 * params.q0[player] / params.n_slices as f64;
    let penalty = if params.reward_penalty {
        params.a * v * v
    } else {
        0.0
    };
    -alloc + exec_price * v - penalty
}
