//! Agent observations: normalized core features plus an optional episode history.

use serde::{Deserialize, Serialize};

use crate::market::MarketParams;
use crate::nn::HistoryBatch;

/// Affine feature scaling: price `(S - S0)/S0`, inventory `q/q0`, time `t/N`, action `a/q0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub s0: f64,
    pub q0: f64,
    pub n_slices: usize,
}

impl Normalizer {
    pub fn new(params: &MarketParams, player: usize) -> Self {
        Self {
            s0: params.s0,
            q0: params.q0[player],
            n_slices: params.n_slices,
        }
    }

    pub fn price(&self, s: f64) -> f64 {
        (s - self.s0) / self.s0
    }
    pub fn inventory(&self, q: f64) -> f64 {
        q / self.q0
    }
    pub fn time(&self, t: usize) -> f64 {
        t as f64 / self.n_slices as f64
    }
    pub fn action(&self, a: f64) -> f64 {
        a / self.q0
    }

    pub fn state(&self, s: f64, q: f64, t: usize) -> [f64; 3] {
        [self.price(s), self.inventory(q), self.time(t)]
    }

    /// Inverse of [`Normalizer::state`] and [`Normalizer::action`] on `(price, inv, time, action)`.
    pub fn denormalize(&self, x: &[f64; 4]) -> [f64; 4] {
        [
            self.s0 + self.s0 * x[0],
            x[1] * self.q0,
            x[2] * self.n_slices as f64,
            x[3] * self.q0,
        ]
    }
}

/// Episode-local tokens `(p_l, u_{l-1})` with `mask[l] = l <= t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsHistory {
    pub tokens: Vec<f64>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obs {
    /// Normalized price, inventory and time.
    pub x: [f64; 3],
    /// Raw remaining inventory, for the admissible set.
    pub inv: f64,
    pub t: usize,
    pub history: Option<ObsHistory>,
}

impl Obs {
    pub fn features(&self, action_norm: f64) -> [f64; 4] {
        [self.x[0], self.x[1], self.x[2], action_norm]
    }
}

/// Packs the histories of `obs` into one batch (states in the given order).
pub fn history_batch(obs: &[&Obs]) -> Option<HistoryBatch> {
    let first = obs.first()?.history.as_ref()?;
    let mut b = HistoryBatch::new(first.mask.len());
    for o in obs {
        let h = o.history.as_ref()?;
        b.push(&h.tokens, &h.mask);
    }
    Some(b)
}

/// Accumulates one agent's observed prices and own trades during an episode.
#[derive(Debug, Clone)]
pub struct HistoryTracker {
    n_slices: usize,
    prices: Vec<f64>,
    actions: Vec<f64>,
    use_price: bool,
    use_action: bool,
}

impl HistoryTracker {
    pub fn new(n_slices: usize, use_price: bool, use_action: bool) -> Self {
        Self {
            n_slices,
            prices: Vec::with_capacity(n_slices),
            actions: Vec::with_capacity(n_slices),
            use_price,
            use_action,
        }
    }

    /// Records the normalized price observed at the start of the next slice.
    pub fn observe_price(&mut self, p: f64) {
        self.prices.push(p);
    }

    pub fn record_action(&mut self, a_norm: f64) {
        self.actions.push(a_norm);
    }

    /// History block at slice `t = prices.len() - 1`.
    pub fn snapshot(&self) -> ObsHistory {
        let n = self.n_slices;
        let mut tokens = vec![0.0; 2 * n];
        let mut mask = vec![false; n];
        for (l, &p) in self.prices.iter().enumerate().take(n) {
            mask[l] = true;
            if self.use_price {
                tokens[2 * l] = p;
            }
            if self.use_action && l > 0 {
                tokens[2 * l + 1] = self.actions[l - 1];
            }
        }
        ObsHistory { tokens, mask }
    }
}
