//! One DDQN learner: online and target parameters, optimizer, buffer and RNG streams.

use rand_chacha::ChaCha8Rng;

use super::obs::{history_batch, Obs};
use super::policy::{ddqn_target, ActionGrid, NetQ};
use super::replay::ReplayBuffer;
use super::DqnConfig;
use crate::error::{Error, Result};
use crate::nn::{AdamState, Network, NetworkParams, NetworkSpec, QBatch};
use crate::seed::{stream, Purpose};

#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub player: usize,
    pub net: Network,
    pub online: NetworkParams,
    pub target: NetworkParams,
    pub adam: AdamState,
    pub buffer: ReplayBuffer,
    pub explore_rng: ChaCha8Rng,
    pub replay_rng: ChaCha8Rng,
}

impl DqnAgent {
    /// Streams are keyed by `(seed, player)` so the two agents never share draws.
    pub fn new(spec: &NetworkSpec, cfg: &DqnConfig, player: usize, seed: u64) -> Result<Self> {
        let net = Network::build(spec)?;
        let online = net.init(&mut stream(seed, player as u64, Purpose::Init));
        Ok(Self {
            player,
            target: online.clone(),
            adam: AdamState::new(net.n_params(), cfg.learning_rate),
            net,
            online,
            buffer: ReplayBuffer::new(cfg.replay_capacity),
            explore_rng: stream(seed, player as u64, Purpose::Exploration),
            replay_rng: stream(seed, player as u64, Purpose::Replay),
        })
    }

    pub fn online_q(&self) -> NetQ<'_> {
        NetQ {
            net: &self.net,
            params: &self.online,
        }
    }

    pub fn target_q(&self) -> NetQ<'_> {
        NetQ {
            net: &self.net,
            params: &self.target,
        }
    }
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn polyak(target: &mut NetworkParams, online: &NetworkParams, tau: f64) {
    for (t, o) in target.values.iter_mut().zip(&online.values) {
        *t += tau * (o - *t);
    }
}

/// One minibatch of mean-squared Bellman error, one Adam step, one Polyak blend.
pub fn train_step(agent: &mut DqnAgent, cfg: &DqnConfig, grid: &ActionGrid) -> Result<f64> {
    let batch = agent.buffer.sample(cfg.batch_size, &mut agent.replay_rng)?;
    let y = ddqn_target(
        &batch,
        &agent.online_q(),
        &agent.target_q(),
        cfg.gamma,
        grid,
    )?;

    let states: Vec<&Obs> = batch.iter().map(|t| &t.state).collect();
    let mut feats = Vec::with_capacity(4 * batch.len());
    for t in &batch {
        feats.extend_from_slice(&t.state.features(grid.normalize(t.action)));
    }
    let idx: Vec<usize> = (0..batch.len()).collect();
    let hist = if agent.net.history().is_some() {
        history_batch(&states)
    } else {
        None
    };
    let qb = QBatch {
        features: &feats,
        history: hist.as_ref().map(|h| (h, idx.as_slice())),
    };
    let (q, cache) = agent.net.q_forward(&agent.online, &qb)?;

    let n = batch.len() as f64;
    let resid: Vec<f64> = q.iter().zip(&y).map(|(a, b)| a - b).collect();
    let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!(
            "player {}: non-finite Bellman loss after {} optimizer steps",
            agent.player, agent.adam.step
        )));
    }
    let upstream: Vec<f64> = resid.iter().map(|r| 2.0 * r / n).collect();
    let mut grads = vec![0.0; agent.net.n_params()];
    agent
        .net
        .q_backward(&agent.online, &cache, &upstream, &mut grads, false)?;
    drop(batch);
    agent.adam.step(&mut agent.online.values, &grads);
    polyak(&mut agent.target, &agent.online, cfg.tau_polyak);
    Ok(loss)
}
