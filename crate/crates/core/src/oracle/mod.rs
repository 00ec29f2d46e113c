//! Brute-force ground truth on games small enough to enumerate.

mod bench;

use std::collections::HashMap;

use rand::{Rng, RngCore, SeedableRng};

use crate::channel::{build_phase_codebook, BeamCodebook};
use crate::environment::{Cell, EnvConfig, Environment, Game, Mobility, OccupancyGrid, Scenario};
use crate::error::{Error, Result};
use crate::policy::ControllerKind;
use crate::trainer::{Controller, HistorySlot};

pub use bench::{complexity_bench, fit_exponent, forward_macs, BenchPoint, BenchRow};

/// Largest trajectory count the enumerators accept.
pub const ENUMERATION_BOUND: f64 = 1e7;
/// Largest number of deterministic policies a search may visit.
pub const POLICY_BOUND: f64 = 1e6;

/// A finite identical-payoff game: per-state reward tables over joint
/// actions (row-major over the agents' codebooks), an initial state
/// distribution and, for stochastic toys, a transition table. Without
/// transitions the state drawn at reset is kept for the whole episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGameSpec {
    pub action_sizes: Vec<usize>,
    pub horizon: usize,
    pub initial: Vec<f64>,
    pub rewards: Vec<Vec<f64>>,
    /// `transitions[s][j][s']`.
    pub transitions: Option<Vec<Vec<Vec<f64>>>>,
}

impl ToyGameSpec {
    /// One state, no dynamics.
    pub fn frozen(action_sizes: Vec<usize>, horizon: usize, rewards: Vec<f64>) -> Result<Self> {
        let spec = Self {
            action_sizes,
            horizon,
            initial: vec![1.0],
            rewards: vec![rewards],
            transitions: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Freeze an environment at its current state.
    pub fn from_environment(env: &Environment, horizon: usize) -> Result<Self> {
        Self::frozen(env.scenario().action_sizes(), horizon, env.reward_table()?)
    }

    pub fn joint_count(&self) -> usize {
        self.action_sizes.iter().product()
    }

    pub fn state_count(&self) -> usize {
        self.initial.len()
    }

    pub fn is_frozen(&self) -> bool {
        self.transitions.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.action_sizes.is_empty() || self.action_sizes.contains(&0) {
            return bad(format!("bad action sizes {:?}", self.action_sizes));
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1".into());
        }
        let n = self.state_count();
        let j = self.joint_count();
        let is_dist = |p: &[f64]| p.iter().all(|&x| x >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if n == 0 || !is_dist(&self.initial) {
            return bad("initial distribution must be a probability vector".into());
        }
        if self.rewards.len() != n || self.rewards.iter().any(|r| r.len() != j || r.iter().any(|v| !v.is_finite())) {
            return bad(format!("rewards must be {n} x {j} finite values"));
        }
        if let Some(t) = &self.transitions {
            let ok = t.len() == n && t.iter().all(|row| row.len() == j && row.iter().all(|p| p.len() == n && is_dist(p)));
            if !ok {
                return bad(format!("transitions must be {n} x {j} probability vectors over {n} states"));
            }
        }
        Ok(())
    }

    /// Number of trajectories a full enumeration visits.
    pub fn trajectory_count(&self) -> f64 {
        let per_slot = self.joint_count() as f64;
        let t = self.horizon as i32;
        let states = self.state_count() as f64;
        let state_paths = if self.is_frozen() { states } else { states.powi(t) };
        per_slot.powi(t) * state_paths
    }

    pub fn check_enumerable(&self) -> Result<()> {
        self.validate()?;
        let count = self.trajectory_count();
        if count > ENUMERATION_BOUND {
            return Err(Error::NotEnumerable {
                count,
                bound: ENUMERATION_BOUND,
            });
        }
        Ok(())
    }

    pub fn decode_joint(&self, mut j: usize) -> Vec<usize> {
        let mut out = vec![0; self.action_sizes.len()];
        for (a, &s) in out.iter_mut().zip(&self.action_sizes).rev() {
            *a = j % s;
            j /= s;
        }
        out
    }

    pub fn encode_joint(&self, actions: &[usize]) -> usize {
        actions.iter().zip(&self.action_sizes).fold(0, |acc, (&a, &s)| acc * s + a)
    }
}

/// A single-RIS desk room frozen at one drawn user state, with explicit AP
/// beam angles and RIS steering azimuths. `rays` is the number of rays per
/// link (1 = LoS only).
pub fn channel_toy(
    beam_angles: Vec<f64>,
    phase_directions: &[f64],
    rays: usize,
    horizon: usize,
    seed: u64,
) -> Result<(ToyGameSpec, Environment)> {
    let (w, h) = (5, 5);
    let ap = Cell::new(0, 2);
    let ris = Cell::new(2, 4);
    let mut weights = vec![1.0; w * h];
    weights[ap.y * w + ap.x] = 0.0;
    weights[ris.y * w + ris.x] = 0.0;
    let grid = OccupancyGrid::new(w, h, 1.0, weights, vec![false; w * h], ap, vec![ris])?;
    let config = EnvConfig {
        frozen: true,
        rays_per_link: rays,
        ..EnvConfig::desk()
    };
    let phases = build_phase_codebook(&config.geometry, config.phase_step, config.phase_range, phase_directions)?;
    let beams = BeamCodebook::new(beam_angles)?;
    let scenario = Scenario::with_codebooks(grid, config, beams, phases, Mobility::RandomWalk)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let env = Environment::new(scenario, &mut rng);
    Ok((ToyGameSpec::from_environment(&env, horizon)?, env))
}

/// Playable instance of a [`ToyGameSpec`].
#[derive(Debug, Clone)]
pub struct ToyGame {
    spec: ToyGameSpec,
    state: usize,
}

fn draw(p: &[f64], rng: &mut dyn RngCore) -> usize {
    crate::policy::sample_index(p, rng.random::<f64>())
}

impl ToyGame {
    pub fn new(spec: ToyGameSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, state: 0 })
    }

    pub fn spec(&self) -> &ToyGameSpec {
        &self.spec
    }

    pub fn state(&self) -> usize {
        self.state
    }
}

impl Game for ToyGame {
    fn action_sizes(&self) -> Vec<usize> {
        self.spec.action_sizes.clone()
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Result<()> {
        self.state = if self.spec.initial.len() == 1 {
            0
        } else {
            draw(&self.spec.initial, rng)
        };
        Ok(())
    }

    fn step(&mut self, actions: &[usize], rng: &mut dyn RngCore) -> Result<f64> {
        for (m, (&a, &k)) in actions.iter().zip(&self.spec.action_sizes).enumerate() {
            if a >= k {
                return Err(Error::ActionOutOfRange { agent: m, index: a, size: k });
            }
        }
        if actions.len() != self.spec.action_sizes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} actions for {} agents",
                actions.len(),
                self.spec.action_sizes.len()
            )));
        }
        let j = self.spec.encode_joint(actions);
        let r = self.spec.rewards[self.state][j];
        if let Some(t) = &self.spec.transitions {
            self.state = draw(&t[self.state][j], rng);
        }
        Ok(r)
    }
}

/// Per-agent action distributions as a function of the in-episode global
/// history.
pub type PolicyFn<'a> = dyn Fn(&[HistorySlot]) -> Result<Vec<Vec<f64>>> + 'a;

/// Visit every trajectory with positive probability: `(probability, return,
/// global history)`.
pub fn enumerate_trajectories(
    spec: &ToyGameSpec,
    policy: &PolicyFn<'_>,
    visit: &mut dyn FnMut(f64, f64, &[HistorySlot]) -> Result<()>,
) -> Result<()> {
    spec.check_enumerable()?;
    let mut history = Vec::with_capacity(spec.horizon);
    for (s, &p) in spec.initial.iter().enumerate() {
        if p > 0.0 {
            walk(spec, policy, s, p, 0.0, &mut history, visit)?;
        }
    }
    Ok(())
}

fn walk(
    spec: &ToyGameSpec,
    policy: &PolicyFn<'_>,
    state: usize,
    prob: f64,
    ret: f64,
    history: &mut Vec<HistorySlot>,
    visit: &mut dyn FnMut(f64, f64, &[HistorySlot]) -> Result<()>,
) -> Result<()> {
    if history.len() == spec.horizon {
        return visit(prob, ret, history);
    }
    let dists = policy(history)?;
    if dists.len() != spec.action_sizes.len()
        || dists.iter().zip(&spec.action_sizes).any(|(d, &k)| d.len() != k)
    {
        return Err(Error::ShapeMismatch("policy heads do not match the game".into()));
    }
    for j in 0..spec.joint_count() {
        let actions = spec.decode_joint(j);
        let p: f64 = actions.iter().zip(&dists).map(|(&a, d)| d[a]).product();
        if p == 0.0 {
            continue;
        }
        let r = spec.rewards[state][j];
        history.push(HistorySlot { actions, reward: r });
        match &spec.transitions {
            None => walk(spec, policy, state, prob * p, ret + r, history, visit)?,
            Some(t) => {
                for (next, &q) in t[state][j].iter().enumerate() {
                    if q > 0.0 {
                        walk(spec, policy, next, prob * p * q, ret + r, history, visit)?;
                    }
                }
            }
        }
        history.pop();
    }
    Ok(())
}

/// Total probability, `E[R]` and `E[R^2]` over all trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mass: f64,
    pub mean: f64,
    pub second: f64,
}

impl Moments {
    pub fn variance(&self) -> f64 {
        self.second - self.mean * self.mean
    }

    pub fn surrogate(&self, mu: f64) -> f64 {
        self.mean - 0.5 * mu * self.variance()
    }
}

pub fn exact_moments(spec: &ToyGameSpec, policy: &PolicyFn<'_>) -> Result<Moments> {
    let mut m = Moments {
        mass: 0.0,
        mean: 0.0,
        second: 0.0,
    };
    enumerate_trajectories(spec, policy, &mut |p, r, _| {
        m.mass += p;
        m.mean += p * r;
        m.second += p * r * r;
        Ok(())
    })?;
    Ok(m)
}

pub fn controller_policy(controller: &Controller) -> impl Fn(&[HistorySlot]) -> Result<Vec<Vec<f64>>> + '_ {
    move |h| controller.distributions(h)
}

/// `E[R] - (mu/2) Var[R]` under the controller, by full enumeration.
pub fn enumerate_exact_j(spec: &ToyGameSpec, controller: &Controller, mu: f64) -> Result<f64> {
    Ok(exact_moments(spec, &controller_policy(controller))?.surrogate(mu))
}

/// Exact gradient of the surrogate J: the expectation of the score times
/// `(1 + mu E[R]) R - (mu/2) R^2`, over every trajectory.
pub fn exact_gradient(spec: &ToyGameSpec, controller: &Controller, mu: f64) -> Result<Vec<f64>> {
    let policy = controller_policy(controller);
    let m = exact_moments(spec, &policy)?;
    let mut grad = vec![0.0; controller.param_count()];
    enumerate_trajectories(spec, &policy, &mut |p, r, history| {
        let w = p * ((1.0 + mu * m.mean) * r - 0.5 * mu * r * r);
        for t in 0..history.len() {
            controller.accumulate(&history[..t], &history[t].actions, w, None, &mut grad)?;
        }
        Ok(())
    })?;
    Ok(grad)
}

/// Central differences of `f` around `params`, one coordinate at a time.
pub fn finite_difference_gradient(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    params: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!("step must be > 0, got {step}")));
    }
    let mut x = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        x[i] = params[i] + step;
        let up = f(&x)?;
        x[i] = params[i] - step;
        let down = f(&x)?;
        x[i] = params[i];
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Finite-difference gradient of the exact surrogate J in the controller's
/// concatenated parameters.
pub fn exact_j_fd_gradient(spec: &ToyGameSpec, controller: &Controller, mu: f64, step: f64) -> Result<Vec<f64>> {
    let mut probe = controller.clone();
    let params = controller.flat_params();
    finite_difference_gradient(
        &mut |x| {
            probe.set_flat_params(x)?;
            enumerate_exact_j(spec, &probe, mu)
        },
        &params,
        step,
    )
}

/// Key of a history: actions and the exact bits of each reward.
pub type HistoryKey = Vec<(Vec<usize>, u64)>;

pub fn history_key(history: &[HistorySlot]) -> HistoryKey {
    history.iter().map(|s| (s.actions.clone(), s.reward.to_bits())).collect()
}

/// Best deterministic policy. For games without dynamics the search runs over
/// open-loop joint action sequences; otherwise over maps from reachable
/// global histories to joint actions.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalPolicy {
    pub j: f64,
    /// Open-loop joint action per slot (games without dynamics).
    pub sequence: Option<Vec<Vec<usize>>>,
    rules: HashMap<HistoryKey, Vec<usize>>,
    action_sizes: Vec<usize>,
}

impl OptimalPolicy {
    pub fn action_for(&self, history: &[HistorySlot]) -> Option<Vec<usize>> {
        match &self.sequence {
            Some(seq) => seq.get(history.len()).cloned(),
            None => self.rules.get(&history_key(history)).cloned(),
        }
    }

    /// One-hot distributions; histories off the policy's support get the
    /// all-zero action.
    pub fn distributions(&self, history: &[HistorySlot]) -> Vec<Vec<f64>> {
        let actions = self
            .action_for(history)
            .unwrap_or_else(|| vec![0; self.action_sizes.len()]);
        one_hot(&actions, &self.action_sizes)
    }

    /// Histories visited with positive probability when following the policy.
    pub fn support_histories(&self, spec: &ToyGameSpec) -> Result<Vec<Vec<HistorySlot>>> {
        let mut out: Vec<Vec<HistorySlot>> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        enumerate_trajectories(spec, &|h| Ok(self.distributions(h)), &mut |_, _, history| {
            for t in 0..history.len() {
                if seen.insert(history_key(&history[..t])) {
                    out.push(history[..t].to_vec());
                }
            }
            Ok(())
        })?;
        Ok(out)
    }
}

fn one_hot(actions: &[usize], sizes: &[usize]) -> Vec<Vec<f64>> {
    actions
        .iter()
        .zip(sizes)
        .map(|(&a, &k)| {
            let mut d = vec![0.0; k];
            d[a] = 1.0;
            d
        })
        .collect()
}

/// Reachable decision points, ordered by depth then discovery, under a policy
/// that explores every action. `key` maps a global history to what the
/// decider conditions on.
fn decision_points(
    spec: &ToyGameSpec,
    policy: &PolicyFn<'_>,
    key: &dyn Fn(&[HistorySlot]) -> HistoryKey,
) -> Result<Vec<HistoryKey>> {
    let mut by_depth: Vec<Vec<HistoryKey>> = vec![Vec::new(); spec.horizon];
    let mut seen = std::collections::HashSet::new();
    enumerate_trajectories(spec, policy, &mut |_, _, history| {
        for t in 0..history.len() {
            let k = key(&history[..t]);
            if seen.insert(k.clone()) {
                by_depth[t].push(k);
            }
        }
        Ok(())
    })?;
    Ok(by_depth.into_iter().flatten().collect())
}

/// Iterate every assignment of `choices` options to `points` slots in
/// lexicographic order.
fn for_each_assignment(
    points: usize,
    choices: usize,
    f: &mut dyn FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    let count = (choices as f64).powi(points as i32);
    if count > POLICY_BOUND {
        return Err(Error::NotEnumerable {
            count,
            bound: POLICY_BOUND,
        });
    }
    let mut digits = vec![0usize; points];
    loop {
        f(&digits)?;
        let mut i = points;
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < choices {
                break;
            }
            digits[i] = 0;
        }
    }
}

/// Exhaustive search for the deterministic policy with the highest exact J;
/// ties go to the lexicographically smallest action list.
pub fn optimal_policy(spec: &ToyGameSpec, mu: f64) -> Result<OptimalPolicy> {
    spec.check_enumerable()?;
    let joint = spec.joint_count();
    let sizes = spec.action_sizes.clone();
    let mut best: Option<(f64, Vec<usize>)> = None;
    if spec.is_frozen() {
        for_each_assignment(spec.horizon, joint, &mut |seq| {
            let m = exact_moments(spec, &|h: &[HistorySlot]| Ok(one_hot(&spec.decode_joint(seq[h.len()]), &sizes)))?;
            let j = m.surrogate(mu);
            if best.as_ref().is_none_or(|(b, _)| j > *b) {
                best = Some((j, seq.to_vec()));
            }
            Ok(())
        })?;
        let (j, seq) = best.expect("at least one sequence");
        return Ok(OptimalPolicy {
            j,
            sequence: Some(seq.iter().map(|&k| spec.decode_joint(k)).collect()),
            rules: HashMap::new(),
            action_sizes: sizes,
        });
    }
    let uniform: Vec<Vec<f64>> = sizes.iter().map(|&k| vec![1.0 / k as f64; k]).collect();
    let points = decision_points(spec, &|_| Ok(uniform.clone()), &|h| history_key(h))?;
    let index: HashMap<HistoryKey, usize> = points.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
    for_each_assignment(points.len(), joint, &mut |assign| {
        let policy = |h: &[HistorySlot]| -> Result<Vec<Vec<f64>>> {
            let i = index[&history_key(h)];
            Ok(one_hot(&spec.decode_joint(assign[i]), &sizes))
        };
        let j = exact_moments(spec, &policy)?.surrogate(mu);
        if best.as_ref().is_none_or(|(b, _)| j > *b) {
            best = Some((j, assign.to_vec()));
        }
        Ok(())
    })?;
    let (j, assign) = best.expect("at least one policy");
    let rules = points
        .into_iter()
        .zip(assign)
        .map(|(k, a)| (k, spec.decode_joint(a)))
        .collect();
    Ok(OptimalPolicy {
        j,
        sequence: None,
        rules,
        action_sizes: sizes,
    })
}

/// Root-mean-square difference of two policies' probability vectors over a
/// set of histories, in percent.
pub fn policy_rmse(a: &PolicyFn<'_>, b: &PolicyFn<'_>, histories: &[Vec<HistorySlot>]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for h in histories {
        let (da, db) = (a(h)?, b(h)?);
        if da.len() != db.len() || da.iter().zip(&db).any(|(x, y)| x.len() != y.len()) {
            return Err(Error::ShapeMismatch("policies have different action spaces".into()));
        }
        for (x, y) in da.iter().zip(&db) {
            for (p, q) in x.iter().zip(y) {
                sum += (p - q) * (p - q);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Ok(0.0);
    }
    Ok(100.0 * (sum / n as f64).sqrt())
}

/// Greedy joint actions of a controller along the game's own trajectory
/// (games without dynamics and a single state).
pub fn greedy_sequence(spec: &ToyGameSpec, controller: &Controller) -> Result<Vec<Vec<usize>>> {
    if !spec.is_frozen() || spec.state_count() != 1 {
        return Err(Error::InvalidConfig("greedy sequence needs a single frozen state".into()));
    }
    let mut history = Vec::new();
    let mut out = Vec::new();
    for _ in 0..spec.horizon {
        let a = controller.greedy(&history)?;
        let r = spec.rewards[0][spec.encode_joint(&a)];
        history.push(HistorySlot { actions: a.clone(), reward: r });
        out.push(a);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashReport {
    pub j: f64,
    /// Best exact J reachable by each agent alone, minus `j` (never negative).
    pub improvements: Vec<f64>,
    pub max_improvement: f64,
}

impl NashReport {
    pub fn is_equilibrium(&self, tol: f64) -> bool {
        self.max_improvement <= tol
    }
}

/// For each agent, hold the others fixed and search all deterministic maps
/// from what that agent observes (its own actions and the rewards when
/// distributed, the global history when centralized) to its actions.
pub fn nash_check(spec: &ToyGameSpec, controller: &Controller, mu: f64) -> Result<NashReport> {
    let base = controller_policy(controller);
    let j = exact_moments(spec, &base)?.surrogate(mu);
    let distributed = controller.kind() == ControllerKind::Distributed;
    let mut improvements = Vec::with_capacity(spec.action_sizes.len());
    for m in 0..spec.action_sizes.len() {
        let k = spec.action_sizes[m];
        let view = move |h: &[HistorySlot]| -> HistoryKey {
            if distributed {
                h.iter()
                    .map(|s| (vec![s.actions[m]], s.reward.to_bits()))
                    .collect()
            } else {
                history_key(h)
            }
        };
        let explore = |h: &[HistorySlot]| -> Result<Vec<Vec<f64>>> {
            let mut d = controller.distributions(h)?;
            d[m] = vec![1.0 / k as f64; k];
            Ok(d)
        };
        let points = decision_points(spec, &explore, &view)?;
        let index: HashMap<HistoryKey, usize> = points.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        let mut best = f64::NEG_INFINITY;
        for_each_assignment(points.len(), k, &mut |assign| {
            let policy = |h: &[HistorySlot]| -> Result<Vec<Vec<f64>>> {
                let mut d = controller.distributions(h)?;
                let mut own = vec![0.0; k];
                own[assign[index[&view(h)]]] = 1.0;
                d[m] = own;
                Ok(d)
            };
            best = best.max(exact_moments(spec, &policy)?.surrogate(mu));
            Ok(())
        })?;
        improvements.push((best - j).max(0.0));
    }
    let max_improvement = improvements.iter().copied().fold(0.0, f64::max);
    Ok(NashReport {
        j,
        improvements,
        max_improvement,
    })
}
