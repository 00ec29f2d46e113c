//! Central-driver vs per-agent-driver equivalence for distributed training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    ascend, estimate_gradient, initial_controller, stream_rng, streams, train_observed, Controller,
    HistorySlot, ReplayStore, Sample, TrainConfig,
};
use crate::environment::{EpisodeRecord, EpisodeStep, Game};
use crate::error::{Error, Result};
use crate::policy::ControllerKind;
use rand::seq::SliceRandom;

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    /// Parameter updates compared (offline and online).
    pub updates: usize,
    /// Largest absolute parameter difference over all compared updates.
    pub max_divergence: f64,
    /// Every parameter of every update matched bit for bit.
    pub bit_identical: bool,
    /// Largest difference between the one-pass joint score gradient and the
    /// concatenated per-agent gradients.
    pub factorization_error: f64,
    /// Same comparison with one agent's action stream reseeded.
    pub negative_control_divergence: f64,
    pub negative_control_first_update: Option<usize>,
}

/// Agent-local learner: one network, its own action stream, and a replay of
/// its own actions and the broadcast rewards.
struct AgentNode {
    controller: Controller,
    store: ReplayStore,
    act: ChaCha8Rng,
    replay: ChaCha8Rng,
    dropout: ChaCha8Rng,
    window: Vec<HistorySlot>,
    pre: Vec<HistorySlot>,
    record: EpisodeRecord,
}

impl AgentNode {
    fn decide(&mut self, uniform: bool) -> Result<usize> {
        if uniform {
            let k = self.controller.action_sizes()[0];
            Ok(self.act.random_range(0..k))
        } else {
            let (a, _, _) = self.controller.act(&self.window, std::slice::from_mut(&mut self.act))?;
            Ok(a[0])
        }
    }

    fn observe(&mut self, action: usize, reward: f64, h: usize) {
        self.window.push(HistorySlot {
            actions: vec![action],
            reward,
        });
        if self.window.len() > h {
            self.window.remove(0);
        }
        self.record.push(EpisodeStep {
            actions: vec![action],
            reward,
            log_probs: vec![0.0],
        });
    }

    fn update(&mut self, config: &TrainConfig, batch: &[usize]) -> Result<()> {
        let samples: Vec<&Sample> = batch.iter().map(|&i| self.store.get(i)).collect();
        let est = estimate_gradient(
            &self.controller,
            &samples,
            config.mu,
            config.gradient_form,
            Some(std::slice::from_mut(&mut self.dropout)),
        )?;
        ascend(&mut self.controller, &est.grad, config.learning_rate);
        Ok(())
    }
}

fn agent_episode(
    agents: &mut [AgentNode],
    game: &mut dyn Game,
    env: &mut ChaCha8Rng,
    config: &TrainConfig,
    uniform: bool,
) -> Result<()> {
    let h = config.shape.history;
    if !config.continuing {
        game.reset(env)?;
        for a in agents.iter_mut() {
            a.window.clear();
        }
    }
    for a in agents.iter_mut() {
        a.pre = a.window.clone();
        a.record = EpisodeRecord::new();
    }
    for _ in 0..config.horizon {
        let actions = agents
            .iter_mut()
            .map(|a| a.decide(uniform))
            .collect::<Result<Vec<_>>>()?;
        let reward = game.step(&actions, env)?;
        for (a, &act) in agents.iter_mut().zip(&actions) {
            a.observe(act, reward, h);
        }
    }
    for a in agents.iter_mut() {
        let sample = Sample {
            pre: std::mem::take(&mut a.pre),
            episode: std::mem::take(&mut a.record),
        };
        a.store.push(sample);
    }
    Ok(())
}

/// The per-agent driver: every agent learns from its own data only; the
/// game is the only shared object. Returns the concatenated parameters after
/// every update.
fn per_agent_run(
    config: &TrainConfig,
    game: &mut dyn Game,
    start: &Controller,
    act_seed_override: Option<(usize, u64)>,
) -> Result<Vec<Vec<f64>>> {
    let mut agents: Vec<AgentNode> = start
        .nets()
        .iter()
        .enumerate()
        .map(|(m, net)| {
            let act_seed = match act_seed_override {
                Some((k, s)) if k == m => s,
                _ => config.seed,
            };
            Ok(AgentNode {
                controller: Controller::new(ControllerKind::Distributed, vec![net.clone()], start.rate_norm())?,
                store: ReplayStore::new(config.replay_capacity),
                act: stream_rng(act_seed, streams::ACT + m as u64),
                replay: stream_rng(config.seed, streams::REPLAY),
                dropout: stream_rng(config.seed, streams::DROPOUT + m as u64),
                window: Vec::new(),
                pre: Vec::new(),
                record: EpisodeRecord::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut env = stream_rng(config.seed, streams::ENV);
    let snapshot = |agents: &[AgentNode]| -> Vec<f64> {
        agents.iter().flat_map(|a| a.controller.flat_params()).collect()
    };
    let mut out = Vec::new();

    for _ in 0..config.seed_samples {
        agent_episode(&mut agents, game, &mut env, config, true)?;
    }
    if !agents[0].store.is_empty() {
        for _ in 0..config.offline_epochs {
            let mut orders = Vec::with_capacity(agents.len());
            for a in agents.iter_mut() {
                let mut order: Vec<usize> = (0..a.store.len()).collect();
                order.shuffle(&mut a.replay);
                orders.push(order);
            }
            let chunks = orders[0].len().div_ceil(config.minibatch);
            for c in 0..chunks {
                for (a, order) in agents.iter_mut().zip(&orders) {
                    let hi = ((c + 1) * config.minibatch).min(order.len());
                    a.update(config, &order[c * config.minibatch..hi])?;
                }
                out.push(snapshot(&agents));
            }
        }
    }
    for _ in 0..config.max_updates {
        for _ in 0..config.episodes_per_update {
            agent_episode(&mut agents, game, &mut env, config, false)?;
        }
        for a in agents.iter_mut() {
            let batch = a.store.sample_indices(config.minibatch, &mut a.replay);
            a.update(config, &batch)?;
        }
        out.push(snapshot(&agents));
    }
    Ok(out)
}

/// Max |joint - concatenated per-agent| over the score gradients of `samples`.
pub fn gradient_factorization_error(controller: &Controller, samples: &[Sample]) -> Result<f64> {
    if controller.kind() != ControllerKind::Distributed {
        return Err(Error::InvalidConfig("factorization needs a distributed controller".into()));
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    // With mu = 0 each sample is weighted by its return on both paths.
    let joint = estimate_gradient(controller, &refs, 0.0, Default::default(), None)?.grad;
    let mut concat = Vec::with_capacity(joint.len());
    for (m, net) in controller.nets().iter().enumerate() {
        let own = Controller::new(ControllerKind::Distributed, vec![net.clone()], controller.rate_norm())?;
        let projected: Vec<Sample> = samples.iter().map(|s| s.project(m)).collect();
        let prefs: Vec<&Sample> = projected.iter().collect();
        concat.extend(estimate_gradient(&own, &prefs, 0.0, Default::default(), None)?.grad);
    }
    Ok(joint
        .iter()
        .zip(&concat)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

fn compare(a: &[Vec<f64>], b: &[Vec<f64>]) -> (f64, bool, Option<usize>) {
    let mut max = 0.0f64;
    let mut identical = a.len() == b.len();
    let mut first = None;
    for (u, (x, y)) in a.iter().zip(b).enumerate() {
        for (p, q) in x.iter().zip(y) {
            if p.to_bits() != q.to_bits() {
                identical = false;
                first.get_or_insert(u + 1);
            }
            max = max.max((p - q).abs());
        }
    }
    (max, identical, first)
}

/// Train the same distributed configuration twice, once through [`train`]
/// (one driver holding every network) and once with independent per-agent
/// learners, and compare the parameters after every update. Gradient
/// clipping couples the agents through the global norm, so it is turned off
/// here.
///
/// [`train`]: super::train
pub fn equivalence_harness<G: Game + Clone>(config: &TrainConfig, game: &G, updates: usize) -> Result<EquivalenceReport> {
    let config = TrainConfig {
        mode: ControllerKind::Distributed,
        clip_norm: None,
        convergence_tol: 0.0,
        max_updates: updates,
        ..config.clone()
    };
    config.validate()?;
    let start = initial_controller(&config, &game.action_sizes())?;

    let mut central = Vec::new();
    let mut g = game.clone();
    train_observed(&config, &mut g, Some(start.clone()), &mut |c| central.push(c.flat_params()))?;

    let mut g = game.clone();
    let local = per_agent_run(&config, &mut g, &start, None)?;
    let (max_divergence, bit_identical, _) = compare(&central, &local);

    let mut g = game.clone();
    let perturbed = per_agent_run(&config, &mut g, &start, Some((0, config.seed ^ 0x9e37_79b9)))?;
    let (negative_control_divergence, _, negative_control_first_update) = compare(&central, &perturbed);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut g = game.clone();
    let mut rollout = super::RolloutRngs {
        env: stream_rng(rng.random(), streams::ENV),
        agents: (0..start.agent_count())
            .map(|m| stream_rng(config.seed ^ 0x5eed, streams::ACT + m as u64))
            .collect(),
    };
    let mut samples = Vec::new();
    let mut pre = Vec::new();
    for _ in 0..8 {
        g.reset(&mut rollout.env)?;
        let (episode, after, _) =
            super::collect_episode(&mut g, &start, config.horizon, &pre, &mut rollout, super::RolloutMode::Sample)?;
        samples.push(Sample { pre, episode });
        pre = after;
    }
    let factorization_error = gradient_factorization_error(&start, &samples)?;

    Ok(EquivalenceReport {
        updates: central.len(),
        max_divergence,
        bit_identical,
        factorization_error,
        negative_control_divergence,
        negative_control_first_update,
    })
}
