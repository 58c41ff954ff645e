//! Ex-ante schedule learners: each player commits to a full trade vector
//! before the episode and improves it between episodes, either from
//! perturbation rollouts (model-free) or from an exact gradient of the
//! deterministic dynamics (model-based).

pub mod model_based;
pub mod model_free;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{run_schedules, EpisodeRecord, MarketParams, NoiseStream};
use crate::nn::{AdamState, Network, NetworkParams, NetworkSpec};
use crate::seed::{stream, Purpose};

pub use model_based::{
    deterministic_reward, deterministic_transition, mb_local_dynamics, mb_reward_gradient,
    mb_schedule_from_offsets, MbSchedule,
};
pub use model_free::{
    apply_perturbation, clip_rebalance, estimate_gradient, project_zero_sum, sample_perturbations,
    schedule_from_z,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateScheme {
    Simultaneous,
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerVariant {
    ModelFree,
    ModelBased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleLearnerConfig {
    pub n_perturbations: usize,
    /// Standard deviation of each perturbation component, in shares.
    pub perturbation_scale: f64,
    pub ridge_lambda: f64,
    pub learning_rate: f64,
    pub n_updates: usize,
    pub scheme: UpdateScheme,
    pub variant: LearnerVariant,
    pub early_stop_tol: f64,
    pub early_stop_patience: usize,
    /// Weight of the quadratic penalty on negative model-based slices.
    pub infeasibility_penalty: f64,
    pub hidden: Vec<usize>,
}

impl Default for ScheduleLearnerConfig {
    fn default() -> Self {
        Self {
            n_perturbations: 16,
            perturbation_scale: 0.5,
            ridge_lambda: 1e-6,
            learning_rate: 1e-3,
            n_updates: 2000,
            scheme: UpdateScheme::Simultaneous,
            variant: LearnerVariant::ModelFree,
            early_stop_tol: 1e-4,
            early_stop_patience: 50,
            infeasibility_penalty: 1e3,
            hidden: vec![64, 64],
        }
    }
}

impl ScheduleLearnerConfig {
    pub fn validate(&self, n_slices: usize) -> Result<()> {
        let mut errs = Vec::new();
        if self.n_perturbations < n_slices {
            errs.push(format!(
                "n_perturbations ({}) must be >= N ({n_slices})",
                self.n_perturbations
            ));
        }
        if !(self.perturbation_scale > 0.0) {
            errs.push("perturbation_scale must be > 0".to_string());
        }
        if !(self.ridge_lambda >= 0.0) {
            errs.push("ridge_lambda must be >= 0".to_string());
        }
        if !(self.learning_rate > 0.0) {
            errs.push("learning_rate must be > 0".to_string());
        }
        if self.n_updates == 0 {
            errs.push("n_updates must be >= 1".to_string());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            errs.push("hidden must list positive widths".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "schedule learner: {}",
                errs.join("; ")
            )))
        }
    }
}

/// One player held at an exogenous schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedOpponent {
    pub player: usize,
    pub schedule: Vec<f64>,
}

/// A time-only network whose outputs parameterize one player's schedule.
#[derive(Debug, Clone)]
pub struct ScheduleLearner {
    pub variant: LearnerVariant,
    pub net: Network,
    pub params: NetworkParams,
    pub adam: AdamState,
    pub q0: f64,
}

impl ScheduleLearner {
    pub fn new(
        variant: LearnerVariant,
        n_slices: usize,
        q0: f64,
        config: &ScheduleLearnerConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut spec = match variant {
            LearnerVariant::ModelFree => NetworkSpec::time_only_schedule(n_slices),
            LearnerVariant::ModelBased => NetworkSpec::model_based_schedule(n_slices),
        };
        spec.hidden = config.hidden.clone();
        let net = Network::build(&spec)?;
        let params = net.init(&mut stream(seed, 0, Purpose::Init));
        let adam = AdamState::new(net.n_params(), config.learning_rate);
        Ok(Self {
            variant,
            net,
            params,
            adam,
            q0,
        })
    }

    fn outputs(&self) -> Vec<f64> {
        self.net
            .schedule_forward(&self.params)
            .expect("schedule network")
            .0
    }

    /// The schedule as parameterized; model-based slices may be negative.
    pub fn raw_schedule(&self) -> Vec<f64> {
        let z = self.outputs();
        match self.variant {
            LearnerVariant::ModelFree => schedule_from_z(&z, self.q0),
            LearnerVariant::ModelBased => mb_schedule_from_offsets(&z, self.q0).raw,
        }
    }

    /// The executed schedule: non-negative and summing to `q0`.
    pub fn schedule(&self) -> Vec<f64> {
        clip_rebalance(&self.raw_schedule())
    }

    /// Parameter gradient of `L = -g . U / N`.
    pub fn surrogate_gradient(&self, g: &[f64]) -> Vec<f64> {
        let n = g.len() as f64;
        let du: Vec<f64> = g.iter().map(|v| -v / n).collect();
        let (z, cache) = self
            .net
            .schedule_forward(&self.params)
            .expect("schedule network");
        let dz = match self.variant {
            LearnerVariant::ModelFree => model_free::schedule_from_z_backward(&z, self.q0, &du),
            LearnerVariant::ModelBased => model_based::mb_offsets_backward(&du),
        };
        let mut grads = vec![0.0; self.net.n_params()];
        self.net
            .schedule_backward(&self.params, &cache, &dz, &mut grads)
            .expect("gradient shape");
        grads
    }

    pub fn surrogate_loss(&self, g: &[f64]) -> f64 {
        let u = self.raw_schedule();
        -g.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / g.len() as f64
    }
}

/// One Adam step on the surrogate loss for the estimated gradient `g`.
pub fn ea_update(learner: &mut ScheduleLearner, g: &[f64]) {
    let grads = learner.surrogate_gradient(g);
    learner.adam.step(&mut learner.params.values, &grads);
}

/// Analytic gradient of the deterministic reward plus the feasibility penalty.
pub fn mb_gradient(
    learner: &ScheduleLearner,
    player: usize,
    opponent: &[f64],
    params: &MarketParams,
    penalty: f64,
) -> Vec<f64> {
    let raw = learner.raw_schedule();
    let mut g = mb_reward_gradient(params, player, &raw, opponent);
    for (gi, pi) in g
        .iter_mut()
        .zip(model_based::feasibility_penalty_gradient(&raw, penalty))
    {
        *gi += pi;
    }
    g
}

pub fn mb_update(
    learner: &mut ScheduleLearner,
    player: usize,
    opponent: &[f64],
    params: &MarketParams,
    penalty: f64,
) -> Vec<f64> {
    let g = mb_gradient(learner, player, opponent, params, penalty);
    ea_update(learner, &g);
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    pub schedules: Vec<Vec<f64>>,
    pub is: Vec<f64>,
    pub grads: Vec<Vec<f64>>,
    /// Sup norm of the zero-sum component of each gradient.
    pub grad_norm: Vec<f64>,
    pub loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTrainingLog {
    pub seed: u64,
    pub updates: Vec<UpdateRecord>,
    pub final_schedules: Vec<Vec<f64>>,
    /// Shortfalls of the final schedules in the noise-free simulator.
    pub final_is: Vec<f64>,
    pub stopped_at: Option<usize>,
}

impl ScheduleTrainingLog {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["update", "is_p0", "is_p1", "grad_norm_p0", "grad_norm_p1"])?;
        for u in &self.updates {
            out.write_record(&[
                u.update.to_string(),
                u.is[0].to_string(),
                u.is[1].to_string(),
                u.grad_norm[0].to_string(),
                u.grad_norm[1].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn final_inventory_path(&self, player: usize, q0: f64) -> Vec<f64> {
        let mut q = q0;
        let mut path = vec![q];
        for v in &self.final_schedules[player] {
            q -= v;
            path.push(q);
        }
        path
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Fits player `i`'s gradient from perturbed rollouts sharing `base`'s noise.
fn model_free_gradient(
    params: &MarketParams,
    config: &ScheduleLearnerConfig,
    schedules: &[Vec<f64>],
    base: &EpisodeRecord,
    noise: NoiseStream,
    player: usize,
    rng_index: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = stream(seed, rng_index, Purpose::Perturbation);
    let eps = sample_perturbations(
        config.n_perturbations,
        config.perturbation_scale,
        params.n_slices,
        &mut rng,
    );
    let base_noise = base.noise();
    let mut effective = Vec::with_capacity(eps.len());
    let mut rewards = Vec::with_capacity(eps.len());
    for e in &eps {
        let (pert, eff) = apply_perturbation(&schedules[player], e);
        let mut pair: Vec<&[f64]> = schedules.iter().map(|s| s.as_slice()).collect();
        pair[player] = &pert;
        let rec = run_schedules(params, &pair, noise)?;
        if rec.noise() != base_noise {
            return Err(Error::Corruption(
                "perturbed rollout did not reuse the base noise".into(),
            ));
        }
        rewards.push(rec.total_reward(player));
        effective.push(eff);
    }
    estimate_gradient(
        base.total_reward(player),
        &rewards,
        &effective,
        config.ridge_lambda,
    )
}

/// Trains one pair of learners (or one learner against a fixed opponent).
pub fn train_schedule_run(
    params: &MarketParams,
    config: &ScheduleLearnerConfig,
    seed: u64,
    fixed: Option<&FixedOpponent>,
) -> Result<ScheduleTrainingLog> {
    params.validate()?;
    config.validate(params.n_slices)?;
    let k = params.n_players();
    if let Some(f) = fixed {
        if f.player >= k {
            return Err(Error::Config(format!(
                "fixed opponent player {} out of range",
                f.player
            )));
        }
        crate::market::check_schedule(params, f.player, &f.schedule)?;
    }
    let mut learners = (0..k)
        .map(|i| {
            ScheduleLearner::new(
                config.variant,
                params.n_slices,
                params.q0[i],
                config,
                crate::seed::derive_seed(seed, i as u64, Purpose::Init),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let is_fixed = |i: usize| fixed.is_some_and(|f| f.player == i);
    let current = |learners: &[ScheduleLearner]| -> Vec<Vec<f64>> {
        (0..k)
            .map(|i| match fixed {
                Some(f) if f.player == i => f.schedule.clone(),
                _ => learners[i].schedule(),
            })
            .collect()
    };

    let mut log = ScheduleTrainingLog {
        seed,
        updates: Vec::new(),
        final_schedules: Vec::new(),
        final_is: Vec::new(),
        stopped_at: None,
    };
    let mut calm = 0usize;
    for update in 0..config.n_updates {
        let noise = NoiseStream::new(seed, update as u64);
        let mut schedules = current(&learners);
        let mut base = run_schedules(
            params,
            &schedules.iter().map(|s| s.as_slice()).collect::<Vec<_>>(),
            noise,
        )?;
        let record_schedules = schedules.clone();
        let record_is = base.is.clone();
        let mut grads = vec![vec![0.0; params.n_slices]; k];
        let mut losses = vec![0.0; k];
        let mut pending: Vec<(usize, Vec<f64>)> = Vec::new();
        for i in 0..k {
            if is_fixed(i) {
                continue;
            }
            if config.scheme == UpdateScheme::Alternating && !pending.is_empty() {
                for (j, g) in pending.drain(..) {
                    ea_update(&mut learners[j], &g);
                }
                schedules = current(&learners);
                base = run_schedules(
                    params,
                    &schedules.iter().map(|s| s.as_slice()).collect::<Vec<_>>(),
                    noise,
                )?;
            }
            let g = match config.variant {
                LearnerVariant::ModelFree => {
                    let idx = (update * k + i) as u64;
                    model_free_gradient(params, config, &schedules, &base, noise, i, idx, seed)?
                }
                LearnerVariant::ModelBased => {
                    let opp_flow: Vec<f64> = (0..params.n_slices)
                        .map(|t| (0..k).filter(|&j| j != i).map(|j| schedules[j][t]).sum())
                        .collect();
                    mb_gradient(
                        &learners[i],
                        i,
                        &opp_flow,
                        params,
                        config.infeasibility_penalty,
                    )
                }
            };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite gradient for player {i} at update {update}"
                )));
            }
            losses[i] = learners[i].surrogate_loss(&g);
            if !losses[i].is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss for player {i} at update {update}"
                )));
            }
            grads[i] = g.clone();
            pending.push((i, g));
        }
        for (j, g) in pending.drain(..) {
            ea_update(&mut learners[j], &g);
        }
        let grad_norm: Vec<f64> = grads
            .iter()
            .map(|g| sup_norm(&project_zero_sum(g)))
            .collect();
        let quiet = (0..k)
            .filter(|&i| !is_fixed(i))
            .all(|i| grad_norm[i] < config.early_stop_tol);
        log.updates.push(UpdateRecord {
            update,
            schedules: record_schedules,
            is: record_is,
            grads,
            grad_norm,
            loss: losses,
        });
        calm = if quiet { calm + 1 } else { 0 };
        if calm >= config.early_stop_patience {
            log.stopped_at = Some(update);
            break;
        }
    }
    log.final_schedules = current(&learners);
    let det = params.clone().with_sigma(0.0);
    let rec = run_schedules(
        &det,
        &log.final_schedules
            .iter()
            .map(|s| s.as_slice())
            .collect::<Vec<_>>(),
        NoiseStream::new(seed, 0),
    )?;
    log.final_is = rec.is;
    Ok(log)
}

/// Independent runs, one per seed, in parallel on the current rayon pool.
pub fn train_schedule_learners(
    params: &MarketParams,
    config: &ScheduleLearnerConfig,
    seeds: &[u64],
    fixed: Option<&FixedOpponent>,
) -> Vec<Result<ScheduleTrainingLog>> {
    seeds
        .par_iter()
        .map(|&s| train_schedule_run(params, config, s, fixed))
        .collect()
}
