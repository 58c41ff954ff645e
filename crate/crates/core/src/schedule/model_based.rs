//! TWAP-anchored schedules and exact gradients of the deterministic
//! (noise-free) cumulative reward via a backward adjoint pass.

use crate::market::{Convention, MarketParams};

/// Raw schedule of the model-based parameterization; negative slices are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct MbSchedule {
    pub raw: Vec<f64>,
}

impl MbSchedule {
    pub fn is_feasible(&self) -> bool {
        self.raw.iter().all(|v| *v >= 0.0)
    }

    /// Sum of squared negative parts.
    pub fn violation(&self) -> f64 {
        self.raw.iter().map(|v| v.min(0.0).powi(2)).sum()
    }
}

/// `U_t = q0/N + z_t` for `t < N-1`, last slice takes the remainder.
pub fn mb_schedule_from_offsets(offsets: &[f64], q0: f64) -> MbSchedule {
    let n = offsets.len() + 1;
    let mut raw: Vec<f64> = offsets.iter().map(|z| q0 / n as f64 + z).collect();
    let used: f64 = raw.iter().sum();
    raw.push(q0 - used);
    MbSchedule { raw }
}

/// Jacobians `(A, B)` of the private transition `(q, S) -> (q - u, S - kappa (u + u_opp))`.
pub fn mb_local_dynamics(params: &MarketParams) -> ([[f64; 2]; 2], [f64; 2]) {
    ([[1.0, 0.0], [0.0, 1.0]], [-1.0, -params.kappa])
}

pub fn deterministic_transition(x: [f64; 2], u: f64, u_opp: f64, kappa: f64) -> [f64; 2] {
    [x[0] - u, x[1] - kappa * (u + u_opp)]
}

fn temp_flow(params: &MarketParams, u: f64, u_opp: f64) -> f64 {
    match params.convention {
        Convention::Aggregate => u + u_opp,
        Convention::Own => u,
    }
}

fn stage_reward(params: &MarketParams, q0: f64, s: f64, u: f64, u_opp: f64) -> f64 {
    let tau = params.tau();
    let exec = s - params.a * temp_flow(params, u, u_opp) / tau;
    let pen = if params.reward_penalty {
        params.a * u * u
    } else {
        0.0
    };
    -params.s0 * q0 / params.n_slices as f64 + exec * u - pen
}

/// Partial derivatives `(dr/dS, dr/du)` of the stage reward.
fn stage_partials(params: &MarketParams, s: f64, u: f64, u_opp: f64) -> (f64, f64) {
    let tau = params.tau();
    let exec = s - params.a * temp_flow(params, u, u_opp) / tau;
    let pen = if params.reward_penalty {
        2.0 * params.a * u
    } else {
        0.0
    };
    (u, exec - params.a * u / tau - pen)
}

/// Deterministic cumulative reward of `own` against `opp`.
pub fn deterministic_reward(params: &MarketParams, player: usize, own: &[f64], opp: &[f64]) -> f64 {
    let q0 = params.q0[player];
    let mut x = [q0, params.s0];
    let mut total = 0.0;
    for t in 0..own.len() {
        total += stage_reward(params, q0, x[1], own[t], opp[t]);
        x = deterministic_transition(x, own[t], opp[t], params.kappa);
    }
    total
}

/// Exact `dR/dU` of the deterministic reward by the adjoint recursion
/// `lambda_t = dr_t/dx_t + A^T lambda_{t+1}`, `g_t = dr_t/du_t + B^T lambda_{t+1}`.
pub fn mb_reward_gradient(
    params: &MarketParams,
    player: usize,
    own: &[f64],
    opp: &[f64],
) -> Vec<f64> {
    let n = own.len();
    let (a_mat, b) = mb_local_dynamics(params);
    let mut s = Vec::with_capacity(n);
    let mut x = [params.q0[player], params.s0];
    for t in 0..n {
        s.push(x[1]);
        x = deterministic_transition(x, own[t], opp[t], params.kappa);
    }
    let mut lam = [0.0, 0.0];
    let mut g = vec![0.0; n];
    for t in (0..n).rev() {
        let (dr_ds, dr_du) = stage_partials(params, s[t], own[t], opp[t]);
        g[t] = dr_du + b[0] * lam[0] + b[1] * lam[1];
        lam = [
            a_mat[0][0] * lam[0] + a_mat[1][0] * lam[1],
            dr_ds + a_mat[0][1] * lam[0] + a_mat[1][1] * lam[1],
        ];
    }
    g
}

/// Gradient of `-penalty * sum min(U_t, 0)^2` w.r.t. the schedule.
pub fn feasibility_penalty_gradient(raw: &[f64], weight: f64) -> Vec<f64> {
    raw.iter().map(|v| -2.0 * weight * v.min(0.0)).collect()
}

/// Pulls a schedule-space gradient back to the `N-1` offsets.
pub fn mb_offsets_backward(du: &[f64]) -> Vec<f64> {
    let last = du[du.len() - 1];
    du[..du.len() - 1].iter().map(|d| d - last).collect()
}
