//! Score-function training of the controllers: offline passes over a
//! random-rollout seed set, then an online collect / sample / ascend loop.

mod controller;
mod equivalence;

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::environment::{EpisodeRecord, EpisodeStep, Game};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::policy::ControllerKind;
use crate::risk::{gradient_weight, population_variance, surrogate_return, GradientForm, RiskConfig};

pub use controller::{Controller, HistorySlot, NetShape};
pub use equivalence::{gradient_factorization_error, equivalence_harness, EquivalenceReport};

/// Named RNG streams derived from one master seed.
pub mod streams {
    pub const ENV: u64 = 0;
    pub const REPLAY: u64 = 1;
    pub const INIT: u64 = 100;
    pub const ACT: u64 = 200;
    pub const DROPOUT: u64 = 300;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: ControllerKind,
    pub mu: f64,
    pub horizon: usize,
    pub shape: NetShape,
    pub learning_rate: f64,
    /// Size `S` of the random-rollout seed set.
    pub seed_samples: usize,
    /// Minibatch size `S_b`.
    pub minibatch: usize,
    pub offline_epochs: usize,
    pub episodes_per_update: usize,
    /// Keep only the most recent samples; `None` lets the store grow.
    pub replay_capacity: Option<usize>,
    pub max_updates: usize,
    pub convergence_window: usize,
    /// Relative change of the moving-average J below which training stops;
    /// 0 disables the rule.
    pub convergence_tol: f64,
    pub gradient_form: GradientForm,
    pub clip_norm: Option<f64>,
    /// Rates are divided by this before entering the networks.
    pub rate_norm: f64,
    /// Carry the last `H` slots across episodes instead of resetting the game
    /// and starting from an empty history.
    pub continuing: bool,
    pub divergence_limit: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: ControllerKind::Distributed,
            mu: 0.0,
            horizon: 2,
            shape: NetShape::new(16),
            learning_rate: 0.01,
            seed_samples: 64,
            minibatch: 32,
            offline_epochs: 20,
            episodes_per_update: 1,
            replay_capacity: None,
            max_updates: 500,
            convergence_window: 50,
            convergence_tol: 1e-3,
            gradient_form: GradientForm::Surrogate,
            clip_norm: Some(10.0),
            rate_norm: 1.0,
            continuing: false,
            divergence_limit: 1e6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale profile: on-policy batches of 256 episodes, no offline
    /// phase and a tight gradient clip. Without a baseline the score weights
    /// are dominated by the common rate level, so smaller batches random-walk
    /// into an arbitrary beam.
    pub fn desk() -> Self {
        Self {
            mode: ControllerKind::Distributed,
            horizon: 2,
            shape: NetShape::new(16),
            learning_rate: 0.1,
            seed_samples: 0,
            offline_epochs: 0,
            minibatch: 256,
            episodes_per_update: 256,
            replay_capacity: Some(256),
            max_updates: 400,
            convergence_tol: 0.0,
            clip_norm: Some(2.0),
            rate_norm: 20.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        RiskConfig::new(self.mu, self.horizon).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.minibatch == 0 {
            return bad("minibatch must be >= 1".into());
        }
        if self.episodes_per_update == 0 {
            return bad("episodes_per_update must be >= 1".into());
        }
        if self.replay_capacity == Some(0) {
            return bad("replay_capacity must be >= 1".into());
        }
        if self.convergence_window == 0 {
            return bad("convergence_window must be >= 1".into());
        }
        if !(self.convergence_tol >= 0.0) {
            return bad(format!("convergence_tol must be >= 0, got {}", self.convergence_tol));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip_norm must be > 0, got {c}"));
            }
        }
        if !(self.rate_norm > 0.0) || !self.rate_norm.is_finite() {
            return bad(format!("rate_norm must be > 0, got {}", self.rate_norm));
        }
        if !(self.divergence_limit > 0.0) {
            return bad("divergence_limit must be > 0".into());
        }
        Ok(())
    }

    pub fn risk(&self) -> RiskConfig {
        RiskConfig {
            mu: self.mu,
            horizon: self.horizon,
        }
    }
}

/// Global history preceding an episode plus the episode itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pre: Vec<HistorySlot>,
    pub episode: EpisodeRecord,
}

impl Sample {
    /// Project onto agent `m`: its own actions and the common rewards.
    pub fn project(&self, m: usize) -> Sample {
        let pre = self
            .pre
            .iter()
            .map(|s| HistorySlot {
                actions: vec![s.actions[m]],
                reward: s.reward,
            })
            .collect();
        let mut episode = EpisodeRecord::new();
        for st in self.episode.steps() {
            episode.push(EpisodeStep {
                actions: vec![st.actions[m]],
                reward: st.reward,
                log_probs: vec![st.log_probs[m]],
            });
        }
        Sample { pre, episode }
    }
}

/// Append-only sample store with uniform minibatch draws.
#[derive(Debug, Clone, Default)]
pub struct ReplayStore {
    samples: VecDeque<Sample>,
    capacity: Option<usize>,
}

impl ReplayStore {
    pub fn new(capacity: Option<usize>) -> Self {
        Self {
            samples: VecDeque::new(),
            capacity,
        }
    }

    pub fn push(&mut self, sample: Sample) {
        if let Some(c) = self.capacity {
            while self.samples.len() >= c {
                self.samples.pop_front();
            }
        }
        self.samples.push_back(sample);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter()
    }

    /// `size` distinct indices drawn uniformly (every index when the store
    /// holds fewer samples), in draw order.
    pub fn sample_indices(&self, size: usize, rng: &mut dyn RngCore) -> Vec<usize> {
        let n = self.samples.len();
        if size >= n {
            return (0..n).collect();
        }
        index::sample(rng, n, size).into_vec()
    }
}

/// The last `h` slots of a history.
fn tail(pre: &[HistorySlot], h: usize) -> Vec<HistorySlot> {
    pre[pre.len().saturating_sub(h)..].to_vec()
}

fn push_slot(window: &mut Vec<HistorySlot>, actions: &[usize], reward: f64) {
    window.push(HistorySlot {
        actions: actions.to_vec(),
        reward,
    });
}

/// Per-episode randomness: the game's stream plus one action stream per agent.
#[derive(Debug, Clone)]
pub struct RolloutRngs {
    pub env: ChaCha8Rng,
    pub agents: Vec<ChaCha8Rng>,
}

impl RolloutRngs {
    pub fn from_seed(seed: u64, agents: usize) -> Self {
        Self {
            env: stream_rng(seed, streams::ENV),
            agents: (0..agents).map(|m| stream_rng(seed, streams::ACT + m as u64)).collect(),
        }
    }
}

/// How actions are chosen during a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    Sample,
    Greedy,
    /// Uniform over each codebook, ignoring the controller.
    Uniform,
}

/// Play `horizon` slots. Returns the record, the history after the episode
/// (last `H` slots) and the number of probability-floor hits.
pub fn collect_episode(
    game: &mut dyn Game,
    controller: &Controller,
    horizon: usize,
    pre: &[HistorySlot],
    rngs: &mut RolloutRngs,
    mode: RolloutMode,
) -> Result<(EpisodeRecord, Vec<HistorySlot>, usize)> {
    if game.action_sizes() != controller.action_sizes() {
        return Err(Error::ShapeMismatch(format!(
            "game codebooks {:?}, controller heads {:?}",
            game.action_sizes(),
            controller.action_sizes()
        )));
    }
    let h = controller.history_len();
    let mut window = tail(pre, h);
    let mut record = EpisodeRecord::new();
    let mut clamps = 0;
    for _ in 0..horizon {
        let (actions, log_probs) = match mode {
            RolloutMode::Sample => {
                let (a, lp, c) = controller.act(&window, &mut rngs.agents)?;
                clamps += c;
                (a, lp)
            }
            RolloutMode::Greedy => {
                let a = controller.greedy(&window)?;
                let dists = controller.distributions(&window)?;
                let lp = a
                    .iter()
                    .zip(&dists)
                    .map(|(&a, d)| crate::policy::log_prob_clamped(d, a).0)
                    .collect();
                (a, lp)
            }
            RolloutMode::Uniform => {
                let sizes = controller.action_sizes();
                let a: Vec<usize> = sizes
                    .iter()
                    .zip(rngs.agents.iter_mut())
                    .map(|(&k, rng)| rng.random_range(0..k))
                    .collect();
                let lp = sizes.iter().map(|&k| -(k as f64).ln()).collect();
                (a, lp)
            }
        };
        let reward = game.step(&actions, &mut rngs.env)?;
        push_slot(&mut window, &actions, reward);
        record.push(EpisodeStep {
            actions,
            reward,
            log_probs,
        });
        if window.len() > h {
            window.remove(0);
        }
    }
    Ok((record, window, clamps))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    pub returns: Vec<f64>,
    pub mean_return: f64,
}

/// `(1/n) sum_s grad log Pi(sample s) * weight(R_s, batch mean, mu)`.
/// Dropout masks are drawn from one stream per network when given.
pub fn estimate_gradient(
    controller: &Controller,
    samples: &[&Sample],
    mu: f64,
    form: GradientForm,
    mut dropout_rngs: Option<&mut [ChaCha8Rng]>,
) -> Result<GradientEstimate> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("empty minibatch".into()));
    }
    let returns: Vec<f64> = samples.iter().map(|s| s.episode.episode_return()).collect();
    let n = returns.len() as f64;
    let mean_return = returns.iter().sum::<f64>() / n;
    let mut grad = vec![0.0; controller.param_count()];
    let h = controller.history_len();
    for (s, &ret) in samples.iter().zip(&returns) {
        let w = gradient_weight(ret, mean_return, mu, form) / n;
        let mut window = tail(&s.pre, h);
        for st in s.episode.steps() {
            controller.accumulate(&window, &st.actions, w, dropout_rngs.as_deref_mut(), &mut grad)?;
            push_slot(&mut window, &st.actions, st.reward);
            if window.len() > h {
                window.remove(0);
            }
        }
    }
    Ok(GradientEstimate {
        grad,
        returns,
        mean_return,
    })
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescale to `max_norm` when longer; reports whether it did.
pub fn clip_gradient(grad: &mut [f64], max_norm: Option<f64>) -> bool {
    let Some(c) = max_norm else {
        return false;
    };
    let norm = l2_norm(grad);
    if norm > c {
        let s = c / norm;
        grad.iter_mut().for_each(|g| *g *= s);
        true
    } else {
        false
    }
}

/// `theta <- theta + alpha * grad` on each network's own block.
pub fn ascend(controller: &mut Controller, grad: &[f64], learning_rate: f64) {
    let offsets = controller.offsets();
    for (k, net) in controller.nets_mut().iter_mut().enumerate() {
        let g = &grad[offsets[k]..offsets[k + 1]];
        for (p, d) in net.params.values_mut().iter_mut().zip(g) {
            *p += learning_rate * d;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub update: usize,
    pub j_estimate: f64,
    pub mean_rate: f64,
    pub rate_variance: f64,
    pub grad_norm: f64,
    pub clamps: usize,
}

pub const CURVE_HEADER: &str = "update,J_estimate,mean_rate,rate_variance,grad_norm,clamps";

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{}\n",
            r.update, r.j_estimate, r.mean_rate, r.rate_variance, r.grad_norm, r.clamps
        ));
    }
    out
}

pub fn write_curve(rows: &[CurveRow], path: &Path) -> Result<()> {
    write_atomic(path, curve_csv(rows).as_bytes())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub controller: Controller,
    pub curve: Vec<CurveRow>,
    pub offline_updates: usize,
    pub updates: usize,
    pub converged: bool,
    /// Updates whose gradient was rescaled by the norm guard.
    pub clipped: usize,
}

/// The learner's mutable state between updates; shared by `train` and the
/// per-agent driver so both consume randomness identically.
pub(crate) struct Learner {
    pub controller: Controller,
    pub store: ReplayStore,
    pub rollout: RolloutRngs,
    pub replay: ChaCha8Rng,
    pub dropout: Vec<ChaCha8Rng>,
    pub history: Vec<HistorySlot>,
}

impl Learner {
    pub fn new(config: &TrainConfig, controller: Controller, agents: usize, nets: usize) -> Self {
        Self {
            controller,
            store: ReplayStore::new(config.replay_capacity),
            rollout: RolloutRngs::from_seed(config.seed, agents),
            replay: stream_rng(config.seed, streams::REPLAY),
            dropout: (0..nets)
                .map(|k| stream_rng(config.seed, streams::DROPOUT + k as u64))
                .collect(),
            history: Vec::new(),
        }
    }

    /// One episode appended to the store.
    pub fn collect(&mut self, config: &TrainConfig, game: &mut dyn Game, mode: RolloutMode) -> Result<usize> {
        if !config.continuing {
            game.reset(&mut self.rollout.env)?;
            self.history.clear();
        }
        let pre = self.history.clone();
        let (episode, after, clamps) =
            collect_episode(game, &self.controller, config.horizon, &pre, &mut self.rollout, mode)?;
        self.history = after;
        self.store.push(Sample { pre, episode });
        Ok(clamps)
    }

    pub fn step(&mut self, config: &TrainConfig, batch: &[usize]) -> Result<(GradientEstimate, f64, bool)> {
        let samples: Vec<&Sample> = batch.iter().map(|&i| self.store.get(i)).collect();
        let mut est = estimate_gradient(
            &self.controller,
            &samples,
            config.mu,
            config.gradient_form,
            Some(&mut self.dropout[..]),
        )?;
        let norm = l2_norm(&est.grad);
        let clipped = clip_gradient(&mut est.grad, config.clip_norm);
        ascend(&mut self.controller, &est.grad, config.learning_rate);
        Ok((est, norm, clipped))
    }
}

fn check_divergence(controller: &Controller, limit: f64, update: usize) -> Result<()> {
    let m = controller.max_abs_param();
    if !(m <= limit) {
        return Err(Error::Diverged { update, magnitude: m });
    }
    Ok(())
}

pub fn initial_controller(config: &TrainConfig, action_sizes: &[usize]) -> Result<Controller> {
    let nets = config
        .shape
        .architectures(config.mode, action_sizes)?
        .into_iter()
        .enumerate()
        .map(|(k, arch)| {
            let mut rng = stream_rng(config.seed, streams::INIT + k as u64);
            crate::policy::PolicyNet::random(arch, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Controller::new(config.mode, nets, config.rate_norm)
}

/// Offline passes over `S` uniform-random episodes, then online updates until
/// `max_updates` or convergence.
pub fn train(config: &TrainConfig, game: &mut dyn Game, initial: Option<Controller>) -> Result<TrainOutcome> {
    train_observed(config, game, initial, &mut |_| {})
}

/// [`train`] with a callback after every parameter update (offline and
/// online, in order).
pub fn train_observed(
    config: &TrainConfig,
    game: &mut dyn Game,
    initial: Option<Controller>,
    observer: &mut dyn FnMut(&Controller),
) -> Result<TrainOutcome> {
    config.validate()?;
    let sizes = game.action_sizes();
    let controller = match initial {
        Some(c) => {
            if c.action_sizes() != sizes.as_slice() || c.kind() != config.mode {
                return Err(Error::InvalidConfig(format!(
                    "initial {} controller with heads {:?} does not fit game {:?} in {} mode",
                    c.kind().as_str(),
                    c.action_sizes(),
                    sizes,
                    config.mode.as_str()
                )));
            }
            c
        }
        None => initial_controller(config, &sizes)?,
    };
    let nets = controller.nets().len();
    let mut learner = Learner::new(config, controller, sizes.len(), nets);
    let mut clipped = 0;

    for _ in 0..config.seed_samples {
        learner.collect(config, game, RolloutMode::Uniform)?;
    }
    let mut offline_updates = 0;
    if !learner.store.is_empty() {
        for _ in 0..config.offline_epochs {
            let mut order: Vec<usize> = (0..learner.store.len()).collect();
            order.shuffle(&mut learner.replay);
            for chunk in order.chunks(config.minibatch) {
                let (_, _, c) = learner.step(config, chunk)?;
                clipped += c as usize;
                offline_updates += 1;
                check_divergence(&learner.controller, config.divergence_limit, 0)?;
                observer(&learner.controller);
            }
        }
    }

    let mut curve = Vec::with_capacity(config.max_updates);
    let mut converged = false;
    let w = config.convergence_window;
    for update in 1..=config.max_updates {
        let mut clamps = 0;
        for _ in 0..config.episodes_per_update {
            clamps += learner.collect(config, game, RolloutMode::Sample)?;
        }
        let batch = learner.store.sample_indices(config.minibatch, &mut learner.replay);
        let (est, norm, c) = learner.step(config, &batch)?;
        clipped += c as usize;
        check_divergence(&learner.controller, config.divergence_limit, update)?;
        observer(&learner.controller);
        curve.push(CurveRow {
            update,
            j_estimate: surrogate_return(&est.returns, config.mu)?,
            mean_rate: est.mean_return / config.horizon as f64,
            rate_variance: population_variance(&est.returns),
            grad_norm: norm,
            clamps,
        });
        if config.convergence_tol > 0.0 && curve.len() >= 2 * w {
            let n = curve.len();
            let avg = |r: &[CurveRow]| r.iter().map(|x| x.j_estimate).sum::<f64>() / w as f64;
            let now = avg(&curve[n - w..]);
            let before = avg(&curve[n - 2 * w..n - w]);
            if (now - before).abs() < config.convergence_tol * before.abs().max(1e-12) {
                converged = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        updates: curve.len(),
        controller: learner.controller,
        curve,
        offline_updates,
        converged,
        clipped,
    })
}

/// Roll out a fixed controller for `episodes` episodes (no learning).
pub fn evaluate(
    controller: &Controller,
    game: &mut dyn Game,
    horizon: usize,
    episodes: usize,
    seed: u64,
    mode: RolloutMode,
    continuing: bool,
) -> Result<Vec<EpisodeRecord>> {
    let mut rngs = RolloutRngs::from_seed(seed, controller.agent_count());
    let mut history = Vec::new();
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        if !continuing {
            game.reset(&mut rngs.env)?;
            history.clear();
        }
        let (rec, after, _) = collect_episode(game, controller, horizon, &history, &mut rngs, mode)?;
        history = after;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_lines(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "{header}")?;
    for r in rows {
        writeln!(buf, "{r}")?;
    }
    write_atomic(path, &buf)
}
