use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which flow the temporary-impact term of the execution price charges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// Every player receives `S_{t-1} - a * V_t / tau` with `V_t` the total slice flow.
    Aggregate,
    /// Player `k` receives `S_{t-1} - a * v_t^k / tau`.
    Own,
}

impl std::fmt::Display for Convention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Convention::Aggregate => f.write_str("aggregate"),
            Convention::Own => f.write_str("own"),
        }
    }
}

/// Impact, volatility and grid constants of the liquidation game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Permanent impact per share.
    pub kappa: f64,
    /// Temporary impact per unit trading rate.
    pub a: f64,
    pub sigma: f64,
    pub s0: f64,
    /// Horizon in time units.
    pub horizon: f64,
    /// Number of trading slices.
    pub n_slices: usize,
    /// Initial inventory of each player.
    pub q0: Vec<f64>,
    pub convention: Convention,
    #[serde(default)]
    pub lambda_risk: f64,
    /// Subtract the extra own quadratic term `a * v^2` from the per-step reward.
    #[serde(default = "default_true")]
    pub reward_penalty: bool,
}

fn default_true() -> bool {
    true
}

impl MarketParams {
    /// Baseline two-player parameters: kappa = 0.001, a = 0.002, sigma = 1e-9,
    /// S0 = 10, T = N = 10, q0 = (100, 100).
    pub fn table1(convention: Convention) -> Self {
        Self {
            kappa: 0.001,
            a: 0.002,
            sigma: 1e-9,
            s0: 10.0,
            horizon: 10.0,
            n_slices: 10,
            q0: vec![100.0, 100.0],
            convention,
            lambda_risk: 0.0,
            reward_penalty: true,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_convention(mut self, convention: Convention) -> Self {
        self.convention = convention;
        self
    }

    /// Grid spacing `T / N`.
    pub fn tau(&self) -> f64 {
        self.horizon / self.n_slices as f64
    }

    pub fn n_players(&self) -> usize {
        self.q0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            bad.push(format!("kappa must be > 0 (got {})", self.kappa));
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            bad.push(format!("a must be > 0 (got {})", self.a));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            bad.push(format!("sigma must be >= 0 (got {})", self.sigma));
        }
        if !self.s0.is_finite() {
            bad.push("s0 must be finite".into());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            bad.push(format!("horizon must be > 0 (got {})", self.horizon));
        }
        if self.n_slices == 0 {
            bad.push("n_slices must be >= 1".into());
        }
        if self.q0.is_empty() {
            bad.push("q0 must list at least one player".into());
        }
        for (k, q) in self.q0.iter().enumerate() {
            if !(*q > 0.0 && q.is_finite()) {
                bad.push(format!("q0[{k}] must be > 0 (got {q})"));
            }
        }
        if !(self.lambda_risk >= 0.0) {
            bad.push(format!(
                "lambda_risk must be >= 0 (got {})",
                self.lambda_risk
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Same parameters without any positivity checks on the impact
    /// coefficients. Used for zero-impact sanity runs.
    pub(crate) fn validate_structure(&self) -> Result<()> {
        if self.n_slices == 0 || self.q0.iter().any(|q| !(*q > 0.0)) || !(self.horizon > 0.0) {
            return Err(Error::Config("structural parameters invalid".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table1_is_valid() {
        let p = MarketParams::table1(Convention::Aggregate);
        p.validate().unwrap();
        assert_eq!(p.tau(), 1.0);
    }

    #[test]
    fn rejects_zero_inventory() {
        let mut p = MarketParams::table1(Convention::Own);
        p.q0[0] = 0.0;
        let err = p.validate().unwrap_err().to_string();
        assert!(err.contains("q0[0]"), "{err}");
    }
}
