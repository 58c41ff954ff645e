//! Joint training of two agents and greedy out-of-sample evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::{train_step, DqnAgent};
use super::obs::{HistoryTracker, Normalizer, Obs, ObsHistory};
use super::policy::{epsilon_at, select_action, ActionGrid, NetQ};
use super::replay::Transition;
use super::DqnConfig;
use crate::benchmarks::BenchmarkTable;
use crate::diagnostics::{
    average_inventory_paths, centroid, classify_quadrant, ig_summary, IgSummary, ProbeGrid,
    ProbePoint, Quadrant,
};
use crate::error::{Error, Result};
use crate::market::{MarketEnv, MarketParams, NoiseStream};
use crate::nn::{HistoryBatch, NetworkParams, NetworkSpec, Variant};
use crate::seed::Purpose;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub eps: f64,
    pub is: [f64; 2],
    pub quadrant: Quadrant,
    /// Mean Bellman loss over the episode's updates; `None` before training starts.
    pub loss: [Option<f64>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgRecord {
    pub episode: usize,
    pub summary: IgSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestStats {
    pub is_pairs: Vec<[f64; 2]>,
    /// Per-player mean `IS / N`.
    pub centroid: [f64; 2],
    /// Mean inventory path per player, `t = 0..=N`.
    pub inventory_paths: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub episodes: Vec<EpisodeLog>,
    pub ig: Vec<IgRecord>,
    pub test: TestStats,
    pub spec: NetworkSpec,
    /// Final online parameters per player.
    #[serde(skip)]
    pub params: Vec<NetworkParams>,
}

fn check_two_players(params: &MarketParams) -> Result<()> {
    if params.n_players() != 2 {
        return Err(Error::Config(format!(
            "the DDQN game needs two players, got {}",
            params.n_players()
        )));
    }
    Ok(())
}

/// Per-agent observation builder for one episode.
struct Observer {
    norm: Normalizer,
    tracker: Option<HistoryTracker>,
}

impl Observer {
    fn new(params: &MarketParams, player: usize, cfg: &DqnConfig) -> Self {
        let tracker = (cfg.variant == Variant::HistoryQ).then(|| {
            HistoryTracker::new(
                params.n_slices,
                cfg.include_price_history,
                cfg.include_action_history,
            )
        });
        Self {
            norm: Normalizer::new(params, player),
            tracker,
        }
    }

    fn observe(&mut self, mid: f64, inv: f64, t: usize) -> Obs {
        let history = self.tracker.as_mut().map(|h| {
            h.observe_price(self.norm.price(mid));
            h.snapshot()
        });
        Obs {
            x: self.norm.state(mid, inv, t),
            inv,
            t,
            history,
        }
    }

    fn act(&mut self, a: f64) {
        if let Some(h) = self.tracker.as_mut() {
            h.record_action(self.norm.action(a));
        }
    }
}

struct Episode {
    is: [f64; 2],
    paths: [Vec<f64>; 2],
    loss: [Option<f64>; 2],
}

/// Plays one episode. With `learn`, transitions are stored and each agent
/// takes one train step per slice once its buffer holds a batch.
fn play_episode(
    agents: &mut [DqnAgent],
    params: &MarketParams,
    cfg: &DqnConfig,
    noise: NoiseStream,
    eps: f64,
    learn: bool,
) -> Result<Episode> {
    let env = MarketEnv::new(params.clone(), noise)?;
    let grids: Vec<ActionGrid> = (0..2)
        .map(|k| ActionGrid {
            q0: params.q0[k],
            n_slices: params.n_slices,
            steps: cfg.action_steps,
        })
        .collect();
    let mut observers: Vec<Observer> = (0..2).map(|k| Observer::new(params, k, cfg)).collect();
    let mut state = env.initial_state();
    let mut obs: Vec<Obs> = (0..2)
        .map(|k| observers[k].observe(state.mid, state.inv[k], 0))
        .collect();
    let mut revenue = [0.0; 2];
    let mut paths = [vec![params.q0[0]], vec![params.q0[1]]];
    let mut loss_sum = [0.0; 2];
    let mut loss_n = [0usize; 2];
    // Greedy evaluation never draws from the exploration streams.
    let mut greedy_rng = ChaCha8Rng::seed_from_u64(0);

    while !state.is_done(params.n_slices) {
        let mut actions = [0.0; 2];
        for k in 0..2 {
            let admissible = grids[k].admissible(state.inv[k], state.t);
            let a = &mut agents[k];
            let q = NetQ {
                net: &a.net,
                params: &a.online,
            };
            let rng = if learn {
                &mut a.explore_rng
            } else {
                &mut greedy_rng
            };
            actions[k] = select_action(&q, &obs[k], &admissible, &grids[k], eps, rng).map_err(
                |e| match e {
                    Error::InfeasibleAction { t, reason, .. } => Error::InfeasibleAction {
                        player: k,
                        t,
                        reason,
                    },
                    e => e,
                },
            )?;
        }
        let (next, out) = env.step(&state, &actions)?;
        let done = next.is_done(params.n_slices);
        for k in 0..2 {
            revenue[k] += out.trades[k] * out.exec_price[k];
            paths[k].push(next.inv[k]);
            observers[k].act(actions[k]);
        }
        if done {
            let terminal: Vec<Obs> = (0..2)
                .map(|k| {
                    let norm = Normalizer::new(params, k);
                    let history = obs[k].history.as_ref().map(|_| ObsHistory {
                        tokens: vec![0.0; 2 * params.n_slices],
                        mask: vec![false; params.n_slices],
                    });
                    Obs {
                        x: norm.state(next.mid, 0.0, next.t),
                        inv: 0.0,
                        t: next.t,
                        history,
                    }
                })
                .collect();
            if learn {
                for k in 0..2 {
                    agents[k].buffer.push(Transition {
                        state: obs[k].clone(),
                        action: actions[k],
                        reward: out.reward[k],
                        next: terminal[k].clone(),
                        done: true,
                    });
                }
            }
        } else {
            let next_obs: Vec<Obs> = (0..2)
                .map(|k| observers[k].observe(next.mid, next.inv[k], next.t))
                .collect();
            if learn {
                for k in 0..2 {
                    agents[k].buffer.push(Transition {
                        state: obs[k].clone(),
                        action: actions[k],
                        reward: out.reward[k],
                        next: next_obs[k].clone(),
                        done: false,
                    });
                }
            }
            obs = next_obs;
        }
        if learn {
            for k in 0..2 {
                if agents[k].buffer.len() >= cfg.batch_size {
                    loss_sum[k] += train_step(&mut agents[k], cfg, &grids[k])?;
                    loss_n[k] += 1;
                }
            }
        }
        state = next;
    }
    let is = [
        params.q0[0] * params.s0 - revenue[0],
        params.q0[1] * params.s0 - revenue[1],
    ];
    let loss = [0, 1].map(|k| (loss_n[k] > 0).then(|| loss_sum[k] / loss_n[k] as f64));
    Ok(Episode { is, paths, loss })
}

/// Probe states of the attribution grid with the agent's greedy action.
/// History-aware probes carry a constant price path and uniform past trades.
pub fn probe_points(
    agent: &DqnAgent,
    params: &MarketParams,
    cfg: &DqnConfig,
) -> Result<Vec<ProbePoint>> {
    let n = params.n_slices;
    let q0 = params.q0[agent.player];
    let lo = -params.kappa * params.q0.iter().sum::<f64>() / params.s0;
    let grid = ProbeGrid::uniform(cfg.probe_prices, cfg.probe_inventories, n, lo, 0.0);
    let agrid = ActionGrid {
        q0,
        n_slices: n,
        steps: cfg.action_steps,
    };
    let history = agent.net.history().is_some();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::new();
    for [p, q, tn] in grid.states() {
        let t = (tn * n as f64).round() as usize;
        let h = history.then(|| {
            let mut tokens = vec![0.0; 2 * n];
            let mut mask = vec![false; n];
            let u = if t > 0 { (1.0 - q) / t as f64 } else { 0.0 };
            for l in 0..=t.min(n - 1) {
                mask[l] = true;
                if cfg.include_price_history {
                    tokens[2 * l] = p;
                }
                if cfg.include_action_history && l > 0 {
                    tokens[2 * l + 1] = u;
                }
            }
            ObsHistory { tokens, mask }
        });
        let obs = Obs {
            x: [p, q, tn],
            inv: q * q0,
            t,
            history: h,
        };
        let acts = agrid.admissible(obs.inv, t);
        let a = select_action(&agent.online_q(), &obs, &acts, &agrid, 0.0, &mut rng)?;
        let features = obs.features(agrid.normalize(a));
        let history = obs.history.map(|h| {
            let mut b = HistoryBatch::new(n);
            b.push(&h.tokens, &h.mask);
            b
        });
        out.push(ProbePoint { features, history });
    }
    Ok(out)
}

/// Trains both agents for `cfg.training_episodes`, then evaluates them greedily.
pub fn train_ddqn_pair(params: &MarketParams, cfg: &DqnConfig, seed: u64) -> Result<RunResult> {
    check_two_players(params)?;
    params.validate()?;
    cfg.validate(params.n_slices)?;
    let spec = cfg.network_spec(params.n_slices);
    let mut agents = vec![
        DqnAgent::new(&spec, cfg, 0, seed)?,
        DqnAgent::new(&spec, cfg, 1, seed)?,
    ];
    let nash = BenchmarkTable::compute(params)?
        .points_for(params.convention)
        .0;

    let mut episodes = Vec::with_capacity(cfg.training_episodes);
    let mut ig = Vec::new();
    for ep in 0..cfg.training_episodes {
        let eps = epsilon_at(ep, cfg.eps_start, cfg.eps_min, cfg.eps_floor_episode);
        let e = play_episode(
            &mut agents,
            params,
            cfg,
            NoiseStream::new(seed, ep as u64),
            eps,
            true,
        )?;
        episodes.push(EpisodeLog {
            episode: ep,
            eps,
            is: e.is,
            quadrant: classify_quadrant(e.is, [nash, nash]),
            loss: e.loss,
        });
        if cfg.ig_every > 0 && (ep + 1) % cfg.ig_every == 0 {
            let probes = probe_points(&agents[0], params, cfg)?;
            let summary = ig_summary(&agents[0].net, &agents[0].online, &probes, cfg.ig_steps)?;
            ig.push(IgRecord {
                episode: ep,
                summary,
            });
        }
    }
    let test = greedy_eval(&mut agents, params, cfg, cfg.test_episodes, seed)?;
    Ok(RunResult {
        seed,
        episodes,
        ig,
        test,
        spec,
        params: agents.into_iter().map(|a| a.online).collect(),
    })
}

/// Epsilon-zero rollouts on the test noise streams of `seed`.
pub fn greedy_eval(
    agents: &mut [DqnAgent],
    params: &MarketParams,
    cfg: &DqnConfig,
    m: usize,
    seed: u64,
) -> Result<TestStats> {
    check_two_players(params)?;
    if m == 0 {
        return Err(Error::Config(
            "greedy evaluation needs at least one episode".into(),
        ));
    }
    let mut is_pairs = Vec::with_capacity(m);
    let mut paths: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for ep in 0..m {
        let noise = NoiseStream::with_purpose(seed, ep as u64, Purpose::TestNoise);
        let e = play_episode(agents, params, cfg, noise, 0.0, false)?;
        is_pairs.push(e.is);
        let [p0, p1] = e.paths;
        paths[0].push(p0);
        paths[1].push(p1);
    }
    Ok(TestStats {
        centroid: centroid(&is_pairs, params.n_slices)?,
        inventory_paths: vec![
            average_inventory_paths(&paths[0])?,
            average_inventory_paths(&paths[1])?,
        ],
        is_pairs,
    })
}
