//! Two independent double-DQN agents trained jointly with simultaneous moves.

pub mod agent;
pub mod obs;
pub mod policy;
pub mod replay;
pub mod run;

#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{NetworkSpec, Variant};

pub use agent::{polyak, train_step, DqnAgent};
pub use obs::{HistoryTracker, Normalizer, Obs, ObsHistory};
pub use policy::{
    admissible_actions, ddqn_target, epsilon_at, select_action, ActionGrid, NetQ, QFunction,
};
pub use replay::{ReplayBuffer, Transition};
pub use run::{
    greedy_eval, probe_points, train_ddqn_pair, EpisodeLog, IgRecord, RunResult, TestStats,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub tau_polyak: f64,
    pub eps_start: f64,
    pub eps_min: f64,
    /// Episode at which epsilon reaches `eps_min`.
    pub eps_floor_episode: usize,
    pub training_episodes: usize,
    pub test_episodes: usize,
    pub runs: usize,
    /// Actions are multiples of `q0 / action_steps`.
    pub action_steps: usize,
    pub variant: Variant,
    /// Overrides the default architecture of `variant`.
    #[serde(default)]
    pub network: Option<NetworkSpec>,
    pub include_price_history: bool,
    pub include_action_history: bool,
    /// Attribution cadence in episodes; 0 disables it.
    pub ig_every: usize,
    pub ig_steps: usize,
    pub probe_prices: usize,
    pub probe_inventories: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            learning_rate: 2e-4,
            replay_capacity: 15_000,
            batch_size: 128,
            tau_polyak: 5e-3,
            eps_start: 1.0,
            eps_min: 0.05,
            eps_floor_episode: 4_000,
            training_episodes: 10_000,
            test_episodes: 500,
            runs: 10,
            action_steps: 20,
            variant: Variant::BaselineQ,
            network: None,
            include_price_history: true,
            include_action_history: true,
            ig_every: 100,
            ig_steps: 64,
            probe_prices: 9,
            probe_inventories: 9,
        }
    }
}

impl DqnConfig {
    /// Per-variant training lengths: 10k baseline, 20k price-conditioned and
    /// history-aware, with the epsilon floor fixed at episode 4000.
    pub fn for_variant(variant: Variant) -> Self {
        let episodes = match variant {
            Variant::BaselineQ => 10_000,
            _ => 20_000,
        };
        Self {
            variant,
            training_episodes: episodes,
            ..Self::default()
        }
    }

    pub fn network_spec(&self, n_slices: usize) -> NetworkSpec {
        self.network
            .clone()
            .unwrap_or_else(|| NetworkSpec::for_variant(self.variant, n_slices))
    }

    pub fn validate(&self, n_slices: usize) -> Result<()> {
        let mut errs = Vec::new();
        if !(0.0..=1.0).contains(&self.gamma) {
            errs.push(format!("gamma must lie in [0, 1] (got {})", self.gamma));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            errs.push("learning_rate must be > 0".to_string());
        }
        if !(self.tau_polyak > 0.0 && self.tau_polyak <= 1.0) {
            errs.push(format!(
                "tau_polyak must lie in (0, 1] (got {})",
                self.tau_polyak
            ));
        }
        if !(0.0 <= self.eps_min && self.eps_min <= self.eps_start && self.eps_start <= 1.0) {
            errs.push(format!(
                "need 0 <= eps_min <= eps_start <= 1 (got {} and {})",
                self.eps_min, self.eps_start
            ));
        }
        if self.eps_floor_episode == 0 {
            errs.push("eps_floor_episode must be >= 1".to_string());
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            errs.push(format!(
                "need 1 <= batch_size <= replay_capacity (got {} and {})",
                self.batch_size, self.replay_capacity
            ));
        }
        if self.action_steps == 0 {
            errs.push("action_steps must be >= 1".to_string());
        }
        if !self.variant.is_q() {
            errs.push(format!("{:?} is not a Q-network variant", self.variant));
        }
        if self.ig_every > 0
            && (self.ig_steps == 0 || self.probe_prices == 0 || self.probe_inventories == 0)
        {
            errs.push("attribution needs ig_steps and probe grid sizes >= 1".to_string());
        }
        let spec = self.network_spec(n_slices);
        if spec.variant != self.variant {
            errs.push("network override has a different variant".to_string());
        }
        if let Err(Error::Config(e)) = spec.validate() {
            errs.push(e);
        }
        if self.variant == Variant::HistoryQ && spec.n_positions != n_slices {
            errs.push(format!(
                "history positions ({}) must equal N ({n_slices})",
                spec.n_positions
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("dqn: {}", errs.join("; "))))
        }
    }
}
