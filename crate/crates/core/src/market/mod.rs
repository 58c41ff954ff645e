//! Discrete-time K-player Almgren-Chriss execution environment.
//!
//! Both temporary-impact conventions share the same state law
//! `S_t = S_{t-1} - kappa V_t + sigma sqrt(tau) xi_t`, `q_t = q_{t-1} - v_t`;
//! they differ only in the execution price.

mod env;
mod params;
mod record;

pub use env::{env_init, step_reward, EnvState, MarketEnv, NoiseStream, StepOutcome};
pub use params::{Convention, MarketParams};
pub use record::{
    check_schedule, implementation_shortfall, run_schedule_pair, run_schedules,
    run_schedules_relaxed, EpisodeRecord, EpisodeStep, SCHEDULE_SUM_TOL,
};
