//! Closed-form benchmark schedules and costs.
//!
//! The aggregate-impact competitive benchmark is the grid implementation of
//! the two-player open-loop Nash inventory path; the own-impact benchmark is
//! the geometric constant-kernel discrete equilibrium; TWAP is the cooperative
//! reference. Benchmark *points* are always simulator-evaluated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{run_schedules, Convention, MarketParams, NoiseStream};

/// Exponent clamp used by the hyperbolic helpers.
const EXP_CLAMP: f64 = 350.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    AggNashGrid,
    OwnNashGrid,
    Twap,
    Learned,
    Custom,
}

/// A length-N trade vector for one player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub trades: Vec<f64>,
    pub player: usize,
    pub provenance: Provenance,
}

impl Schedule {
    pub fn new(trades: Vec<f64>, player: usize, provenance: Provenance) -> Self {
        Self {
            trades,
            player,
            provenance,
        }
    }

    /// Remaining inventory at t = 0..=N.
    pub fn inventory_path(&self, q0: f64) -> Vec<f64> {
        let mut path = Vec::with_capacity(self.trades.len() + 1);
        let mut q = q0;
        path.push(q);
        for v in &self.trades {
            q -= v;
            path.push(q);
        }
        if let Some(last) = path.last_mut() {
            *last = 0.0;
        }
        path
    }

    pub fn for_player(mut self, player: usize) -> Self {
        self.player = player;
        self
    }
}

impl std::ops::Deref for Schedule {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.trades
    }
}

/// Derived equilibrium constants of the two-player game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumParams {
    pub beta_agg: f64,
    pub beta_own: f64,
    #[serde(rename = "Lambda")]
    pub lambda: f64,
    pub rho: f64,
    pub nu_sigma: f64,
    pub nu_delta: f64,
    #[serde(rename = "Q")]
    pub q_sum: f64,
    #[serde(rename = "Qtilde")]
    pub q_diff: f64,
}

impl EquilibriumParams {
    pub fn new(p: &MarketParams) -> Result<Self> {
        if p.n_players() != 2 {
            return Err(Error::Config(format!(
                "equilibrium constants need 2 players, got {}",
                p.n_players()
            )));
        }
        let (kappa, a, l, s2) = (p.kappa, p.a, p.lambda_risk, p.sigma * p.sigma);
        let lambda = 2.0 * a / (kappa * p.tau()) + 0.5;
        Ok(Self {
            beta_agg: kappa / (3.0 * a),
            beta_own: kappa / (2.0 * a),
            lambda,
            rho: 1.0 - 1.0 / lambda,
            nu_sigma: (kappa * kappa + 12.0 * a * l * s2).sqrt() / (6.0 * a),
            nu_delta: (kappa * kappa + 4.0 * a * l * s2).sqrt() / (2.0 * a),
            q_sum: p.q0[0] + p.q0[1],
            q_diff: p.q0[0] - p.q0[1],
        })
    }
}

/// `exp(shift) * sinh((T - t) nu) / sinh(T nu)` evaluated without forming
/// the (possibly overflowing) factors separately.
fn shifted_sinh_ratio(t: f64, horizon: f64, nu: f64, shift: f64) -> f64 {
    if nu * horizon < 1e-12 {
        return shift.clamp(-EXP_CLAMP, EXP_CLAMP).exp() * (horizon - t) / horizon;
    }
    // sinh((T-t)nu)/sinh(T nu) = exp(-t nu) (1 - e^{-2(T-t)nu}) / (1 - e^{-2 T nu})
    let num = -(-2.0 * (horizon - t) * nu).clamp(-EXP_CLAMP, 0.0).exp_m1();
    let den = -(-2.0 * horizon * nu).clamp(-EXP_CLAMP, 0.0).exp_m1();
    (shift - t * nu).clamp(-EXP_CLAMP, EXP_CLAMP).exp() * num / den
}

/// Hyperbolic cotangent with the argument clamped to avoid overflow.
pub fn coth(x: f64) -> f64 {
    1.0 / x.clamp(-EXP_CLAMP, EXP_CLAMP).tanh()
}

/// General two-player open-loop Nash inventories `(q1(t), q2(t))` for
/// arbitrary risk aversion and asymmetric initial inventories.
pub fn sz_general_inventory(t: f64, p: &MarketParams, q10: f64, q20: f64) -> Result<(f64, f64)> {
    let horizon = p.horizon;
    if !(horizon > 0.0) {
        return Err(Error::Degenerate("horizon T must be > 0".into()));
    }
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::Config(format!("t = {t} outside [0, {horizon}]")));
    }
    let (kappa, a, l, s2) = (p.kappa, p.a, p.lambda_risk, p.sigma * p.sigma);
    let nu_sigma = (kappa * kappa + 12.0 * a * l * s2).sqrt() / (6.0 * a);
    let nu_delta = (kappa * kappa + 4.0 * a * l * s2).sqrt() / (2.0 * a);
    let sigma_t = (q10 + q20) * shifted_sinh_ratio(t, horizon, nu_sigma, -kappa * t / (6.0 * a));
    let delta_t = (q10 - q20) * shifted_sinh_ratio(t, horizon, nu_delta, kappa * t / (2.0 * a));
    Ok((0.5 * (sigma_t + delta_t), 0.5 * (sigma_t - delta_t)))
}

/// Symmetric risk-neutral aggregate Nash inventory
/// `q0 (e^{beta (T - t)} - 1) / (e^{beta T} - 1)` with `beta = kappa / (3a)`.
pub fn agg_ct_inventory(t: f64, p: &MarketParams, q0: f64) -> f64 {
    exp_inventory(t, p.horizon, p.kappa / (3.0 * p.a), q0)
}

/// Symmetric risk-neutral own-impact continuous Nash inventory (`beta = kappa / (2a)`).
pub fn own_ct_inventory(t: f64, p: &MarketParams, q0: f64) -> f64 {
    exp_inventory(t, p.horizon, p.kappa / (2.0 * p.a), q0)
}

fn exp_inventory(t: f64, horizon: f64, beta: f64, q0: f64) -> f64 {
    if beta * horizon < 1e-12 {
        return q0 * (horizon - t) / horizon;
    }
    // (e^{b(T-t)} - 1)/(e^{bT} - 1) = e^{-bt} (1 - e^{-b(T-t)})/(1 - e^{-bT})
    let num = -(-beta * (horizon - t)).max(-EXP_CLAMP).exp_m1();
    let den = -(-beta * horizon).max(-EXP_CLAMP).exp_m1();
    q0 * (-beta * t).max(-EXP_CLAMP).exp() * num / den
}

/// Continuous aggregate Nash liquidation rate `-dq/dt`.
pub fn agg_ct_rate(t: f64, p: &MarketParams, q0: f64) -> f64 {
    let beta = p.kappa / (3.0 * p.a);
    if beta * p.horizon < 1e-12 {
        return q0 / p.horizon;
    }
    let den = -(-beta * p.horizon).max(-EXP_CLAMP).exp_m1();
    beta * q0 * (-beta * t).max(-EXP_CLAMP).exp() / den
}

fn require_symmetric_neutral(p: &MarketParams) -> Result<f64> {
    if p.n_players() != 2 || p.q0[0] != p.q0[1] {
        return Err(Error::Config(
            "benchmark requires two players with equal initial inventories".into(),
        ));
    }
    if p.lambda_risk != 0.0 {
        return Err(Error::Config("benchmark requires lambda_risk = 0".into()));
    }
    Ok(p.q0[0])
}

/// Forces the trade vector to sum to `q0` by correcting the final slice.
fn terminal_correct(mut v: Vec<f64>, q0: f64) -> Vec<f64> {
    if let Some((last, head)) = v.split_last_mut() {
        *last = q0 - head.iter().sum::<f64>();
    }
    v
}

/// Grid-implemented aggregate Nash schedule (forward differences of the
/// continuous inventory path).
pub fn agg_nash_grid_schedule(p: &MarketParams) -> Result<Schedule> {
    let q0 = require_symmetric_neutral(p)?;
    let beta = p.kappa / (3.0 * p.a);
    let (horizon, tau, n) = (p.horizon, p.tau(), p.n_slices);
    let trades: Vec<f64> = (1..=n)
        .map(|m| {
            let tm = m as f64 * tau;
            if beta * horizon < 1e-12 {
                q0 / n as f64
            } else {
                // e^{b(T - t_m)} (e^{b tau} - 1) / (e^{b T} - 1)
                let den = (-beta * horizon).max(-EXP_CLAMP).exp_m1();
                let num = (beta * tau).exp_m1() * (-beta * tm).max(-EXP_CLAMP).exp();
                q0 * num / -den
            }
        })
        .collect();
    Ok(Schedule::new(
        terminal_correct(trades, q0),
        0,
        Provenance::AggNashGrid,
    ))
}

/// Continuous-time aggregate Nash cost `kappa q0^2 [1 + coth(kappa T / 6a) / 3]`.
pub fn agg_nash_continuous_is(p: &MarketParams) -> Result<f64> {
    let q0 = require_symmetric_neutral(p)?;
    Ok(p.kappa * q0 * q0 * (1.0 + coth(p.kappa * p.horizon / (6.0 * p.a)) / 3.0))
}

/// Continuous-time TWAP expected cost in the aggregate game
/// (`kappa q0^2 + 2 a q0^2 / T`).
pub fn twap_continuous_is(p: &MarketParams) -> Result<f64> {
    let q0 = require_symmetric_neutral(p)?;
    Ok(p.kappa * q0 * q0 + 2.0 * p.a * q0 * q0 / p.horizon)
}

/// Geometric own-impact discrete Nash trades `q0 (1 - rho) rho^{m-1} / (1 - rho^N)`.
pub fn own_nash_grid_schedule(p: &MarketParams) -> Result<Schedule> {
    let q0 = require_symmetric_neutral(p)?;
    let eq = EquilibriumParams::new(p)?;
    if !(eq.lambda > 1.0) {
        return Err(Error::Degenerate(format!(
            "own-impact ratio needs Lambda > 1, got {}",
            eq.lambda
        )));
    }
    let rho = eq.rho;
    let n = p.n_slices;
    let norm = 1.0 - rho.powi(n as i32);
    let trades = (0..n)
        .map(|m| q0 * (1.0 - rho) * rho.powi(m as i32) / norm)
        .collect();
    Ok(Schedule::new(
        terminal_correct(trades, q0),
        0,
        Provenance::OwnNashGrid,
    ))
}

pub fn twap_schedule(p: &MarketParams) -> Schedule {
    let n = p.n_slices;
    let q0 = p.q0[0];
    Schedule::new(vec![q0 / n as f64; n], 0, Provenance::Twap)
}

/// Closed-form symmetric TWAP implementation shortfall.
pub fn twap_is_closed_form(p: &MarketParams, convention: Convention) -> Result<f64> {
    let q0 = require_symmetric_neutral(p)?;
    let n = p.n_slices as f64;
    let perm = p.kappa * q0 * q0 * (n - 1.0) / n;
    let temp = match convention {
        Convention::Aggregate => 2.0 * p.a * q0 * q0 / p.horizon,
        Convention::Own => p.a * q0 * q0 / p.horizon,
    };
    Ok(perm + temp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsStats {
    pub mean: f64,
    pub std: f64,
}

/// Monte-Carlo implementation shortfall of fixed schedules over seeded episodes.
pub fn evaluate_schedule_is(
    p: &MarketParams,
    schedules: &[&[f64]],
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<IsStats>> {
    if n_episodes == 0 {
        return Err(Error::Config("n_episodes must be >= 1".into()));
    }
    let k = p.n_players();
    let mut samples = vec![Vec::with_capacity(n_episodes); k];
    for e in 0..n_episodes {
        let rec = run_schedules(p, schedules, NoiseStream::new(seed, e as u64))?;
        for (i, is) in rec.is.iter().enumerate() {
            samples[i].push(*is);
        }
    }
    Ok(samples
        .into_iter()
        .map(|xs| {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            IsStats {
                mean,
                std: var.sqrt(),
            }
        })
        .collect())
}

/// Simulator shortfall of symmetric play of `schedule` at sigma = 0.
pub fn symmetric_point(p: &MarketParams, schedule: &[f64], convention: Convention) -> Result<f64> {
    let det = p.clone().with_sigma(0.0).with_convention(convention);
    let stats = evaluate_schedule_is(&det, &[schedule, schedule], 1, 0)?;
    Ok(stats[0].mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsPoints {
    pub agg_nash: f64,
    pub own_nash: f64,
    pub twap_agg: f64,
    pub twap_own: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSchedules {
    pub agg_nash: Vec<f64>,
    pub own_nash: Vec<f64>,
    pub twap: Vec<f64>,
}

/// Everything the `bench` subcommand reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub beta_agg: f64,
    pub beta_own: f64,
    #[serde(rename = "Lambda")]
    pub lambda: f64,
    pub rho: f64,
    pub schedules: BenchmarkSchedules,
    /// Per-player implementation shortfall at each benchmark (sigma = 0 simulator).
    pub is_points: IsPoints,
    pub continuous_is: f64,
}

impl BenchmarkTable {
    pub fn compute(p: &MarketParams) -> Result<Self> {
        let eq = EquilibriumParams::new(p)?;
        let agg = agg_nash_grid_schedule(p)?;
        let own = own_nash_grid_schedule(p)?;
        let twap = twap_schedule(p);
        Ok(Self {
            beta_agg: eq.beta_agg,
            beta_own: eq.beta_own,
            lambda: eq.lambda,
            rho: eq.rho,
            is_points: IsPoints {
                agg_nash: symmetric_point(p, &agg, Convention::Aggregate)?,
                own_nash: symmetric_point(p, &own, Convention::Own)?,
                twap_agg: symmetric_point(p, &twap, Convention::Aggregate)?,
                twap_own: symmetric_point(p, &twap, Convention::Own)?,
            },
            continuous_is: agg_nash_continuous_is(p)?,
            schedules: BenchmarkSchedules {
                agg_nash: agg.trades,
                own_nash: own.trades,
                twap: twap.trades,
            },
        })
    }

    /// `(Nash, TWAP)` benchmark shortfalls for the given convention.
    pub fn points_for(&self, convention: Convention) -> (f64, f64) {
        match convention {
            Convention::Aggregate => (self.is_points.agg_nash, self.is_points.twap_agg),
            Convention::Own => (self.is_points.own_nash, self.is_points.twap_own),
        }
    }

    pub fn nash_schedule_for(&self, convention: Convention) -> &[f64] {
        match convention {
            Convention::Aggregate => &self.schedules.agg_nash,
            Convention::Own => &self.schedules.own_nash,
        }
    }
}
