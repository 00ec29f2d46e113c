//! Python bindings: the desk room, toy games, training, evaluation and the
//! oracle checks.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyTypeError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rislab::environment::{EnvConfig, Environment, Game, Mobility, OccupancyGrid, Scenario};
use rislab::oracle::{self, ToyGameSpec};
use rislab::policy::{read_controller, write_controller, ControllerCheckpoint, ControllerKind};
use rislab::risk;
use rislab::trainer::{self, HistorySlot, NetShape, RolloutMode};

create_exception!(rislab_py, RislabError, PyException);

fn err(e: rislab::Error) -> PyErr {
    RislabError::new_err(e.to_string())
}

fn to_slots(slots: Vec<(Vec<usize>, f64)>) -> Vec<HistorySlot> {
    slots.into_iter().map(|(actions, reward)| HistorySlot { actions, reward }).collect()
}

/// The built-in desk office with three agents (AP beam, two RIS phase
/// codebooks). Rewards are in bits/s/Hz.
#[pyclass(module = "rislab_py", skip_from_py_object)]
#[derive(Clone)]
pub struct DeskEnvironment {
    env: Environment,
    rng: ChaCha8Rng,
}

#[pymethods]
impl DeskEnvironment {
    #[new]
    #[pyo3(signature = (seed = 0, frozen = false))]
    fn new(seed: u64, frozen: bool) -> PyResult<Self> {
        let config = EnvConfig { frozen, ..EnvConfig::desk() };
        let scenario = Scenario::new(OccupancyGrid::office(), config, Mobility::RandomWalk).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = Environment::new(scenario, &mut rng);
        Ok(Self { env, rng })
    }

    fn action_sizes(&self) -> Vec<usize> {
        self.env.action_sizes()
    }

    fn reset(&mut self) -> PyResult<()> {
        self.env.reset(&mut self.rng).map_err(err)
    }

    fn step(&mut self, actions: Vec<usize>) -> PyResult<f64> {
        self.env.step(&actions, &mut self.rng).map_err(err)
    }

    /// `(x, y)` grid cell of the user.
    fn position(&self) -> (usize, usize) {
        let p = self.env.state().position;
        (p.x, p.y)
    }
}

/// A frozen identical-payoff game over an explicit joint reward table.
#[pyclass(module = "rislab_py", skip_from_py_object)]
#[derive(Clone)]
pub struct ToyGame {
    spec: ToyGameSpec,
    game: oracle::ToyGame,
    rng: ChaCha8Rng,
}

#[pymethods]
impl ToyGame {
    #[new]
    #[pyo3(signature = (action_sizes, horizon, rewards, seed = 0))]
    fn new(action_sizes: Vec<usize>, horizon: usize, rewards: Vec<f64>, seed: u64) -> PyResult<Self> {
        let spec = ToyGameSpec::frozen(action_sizes, horizon, rewards).map_err(err)?;
        let game = oracle::ToyGame::new(spec.clone()).map_err(err)?;
        Ok(Self {
            spec,
            game,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn action_sizes(&self) -> Vec<usize> {
        self.spec.action_sizes.clone()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    fn step(&mut self, actions: Vec<usize>) -> PyResult<f64> {
        self.game.step(&actions, &mut self.rng).map_err(err)
    }

    /// `(J, joint action per slot)` of the brute-force optimum.
    #[pyo3(signature = (mu = 0.0))]
    fn optimal(&self, mu: f64) -> PyResult<(f64, Option<Vec<Vec<usize>>>)> {
        let opt = oracle::optimal_policy(&self.spec, mu).map_err(err)?;
        Ok((opt.j, opt.sequence))
    }

    /// Exact surrogate J of a controller by enumeration.
    #[pyo3(signature = (controller, mu = 0.0))]
    fn exact_j(&self, controller: &Controller, mu: f64) -> PyResult<f64> {
        oracle::enumerate_exact_j(&self.spec, &controller.inner, mu).map_err(err)
    }

    /// RMSE (percent) between the controller and the optimal policy over the
    /// optimum's reachable histories.
    #[pyo3(signature = (controller, mu = 0.0))]
    fn policy_rmse(&self, controller: &Controller, mu: f64) -> PyResult<f64> {
        let opt = oracle::optimal_policy(&self.spec, mu).map_err(err)?;
        let support = opt.support_histories(&self.spec).map_err(err)?;
        let optimal = |h: &[HistorySlot]| Ok(opt.distributions(h));
        oracle::policy_rmse(&optimal, &oracle::controller_policy(&controller.inner), &support).map_err(err)
    }

    /// Largest unilateral improvement of J any single agent can reach.
    #[pyo3(signature = (controller, mu = 0.0))]
    fn nash_improvement(&self, controller: &Controller, mu: f64) -> PyResult<f64> {
        Ok(oracle::nash_check(&self.spec, &controller.inner, mu).map_err(err)?.max_improvement)
    }

    fn greedy_sequence(&self, controller: &Controller) -> PyResult<Vec<Vec<usize>>> {
        oracle::greedy_sequence(&self.spec, &controller.inner).map_err(err)
    }
}

/// Training hyperparameters. `profile` is "desk" or "default".
#[pyclass(module = "rislab_py", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
pub struct TrainConfig {
    mode: String,
    mu: f64,
    horizon: usize,
    history: usize,
    learning_rate: f64,
    seed_samples: usize,
    minibatch: usize,
    offline_epochs: usize,
    episodes_per_update: usize,
    replay_capacity: Option<usize>,
    max_updates: usize,
    clip_norm: Option<f64>,
    rate_norm: f64,
    seed: u64,
}

#[pymethods]
impl TrainConfig {
    #[new]
    #[pyo3(signature = (profile = "desk"))]
    fn new(profile: &str) -> PyResult<Self> {
        let c = match profile {
            "desk" => trainer::TrainConfig::desk(),
            "default" => trainer::TrainConfig::default(),
            other => return Err(PyTypeError::new_err(format!("unknown profile '{other}'"))),
        };
        Ok(Self {
            mode: c.mode.as_str().to_string(),
            mu: c.mu,
            horizon: c.horizon,
            history: c.shape.history,
            learning_rate: c.learning_rate,
            seed_samples: c.seed_samples,
            minibatch: c.minibatch,
            offline_epochs: c.offline_epochs,
            episodes_per_update: c.episodes_per_update,
            replay_capacity: c.replay_capacity,
            max_updates: c.max_updates,
            clip_norm: c.clip_norm,
            rate_norm: c.rate_norm,
            seed: c.seed,
        })
    }
}

impl TrainConfig {
    fn resolve(&self) -> PyResult<trainer::TrainConfig> {
        let mode: ControllerKind = self.mode.parse().map_err(err)?;
        Ok(trainer::TrainConfig {
            mode,
            mu: self.mu,
            horizon: self.horizon,
            shape: NetShape::new(self.history),
            learning_rate: self.learning_rate,
            seed_samples: self.seed_samples,
            minibatch: self.minibatch,
            offline_epochs: self.offline_epochs,
            episodes_per_update: self.episodes_per_update,
            replay_capacity: self.replay_capacity,
            max_updates: self.max_updates,
            convergence_tol: 0.0,
            clip_norm: self.clip_norm,
            rate_norm: self.rate_norm,
            seed: self.seed,
            ..trainer::TrainConfig::default()
        })
    }
}

/// A trained (or loaded) set of policy networks.
#[pyclass(module = "rislab_py", skip_from_py_object)]
#[derive(Clone)]
pub struct Controller {
    inner: trainer::Controller,
    mu: f64,
    horizon: usize,
    seed: u64,
}

#[pymethods]
impl Controller {
    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().as_str()
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.mu
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn action_sizes(&self) -> Vec<usize> {
        self.inner.action_sizes().to_vec()
    }

    /// Per-agent action distributions after `(joint actions, reward)` slots.
    #[pyo3(signature = (history = Vec::new()))]
    fn distributions(&self, history: Vec<(Vec<usize>, f64)>) -> PyResult<Vec<Vec<f64>>> {
        self.inner.distributions(&to_slots(history)).map_err(err)
    }

    #[pyo3(signature = (history = Vec::new()))]
    fn greedy(&self, history: Vec<(Vec<usize>, f64)>) -> PyResult<Vec<usize>> {
        self.inner.greedy(&to_slots(history)).map_err(err)
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        let ckpt = ControllerCheckpoint {
            mu: self.mu,
            horizon: self.horizon,
            seed: self.seed,
            nets: self.inner.nets().to_vec(),
        };
        write_controller(&ckpt, &path).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, rate_norm = 20.0))]
    fn load(path: std::path::PathBuf, rate_norm: f64) -> PyResult<Self> {
        let ckpt = read_controller(&path).map_err(err)?;
        let kind = ckpt.nets[0].arch.kind;
        let inner = trainer::Controller::new(kind, ckpt.nets, rate_norm).map_err(err)?;
        Ok(Self {
            inner,
            mu: ckpt.mu,
            horizon: ckpt.horizon,
            seed: ckpt.seed,
        })
    }
}

/// Borrow the Rust game behind a Python game object.
fn with_game<R>(game: &Bound<'_, PyAny>, f: impl FnOnce(&mut dyn Game) -> PyResult<R>) -> PyResult<R> {
    if let Ok(mut desk) = game.extract::<PyRefMut<'_, DeskEnvironment>>() {
        return f(&mut desk.env);
    }
    if let Ok(mut toy) = game.extract::<PyRefMut<'_, ToyGame>>() {
        return f(&mut toy.game);
    }
    Err(PyTypeError::new_err("game must be a DeskEnvironment or a ToyGame"))
}

/// Train a controller. Returns it with its learning curve as a list of
/// `(update, J_estimate, mean_rate, rate_variance, grad_norm)`.
#[pyfunction]
fn train(
    config: &TrainConfig,
    game: &Bound<'_, PyAny>,
) -> PyResult<(Controller, Vec<(usize, f64, f64, f64, f64)>)> {
    let c = config.resolve()?;
    with_game(game, |g| {
        let out = trainer::train(&c, g, None).map_err(err)?;
        let curve = out
            .curve
            .iter()
            .map(|r| (r.update, r.j_estimate, r.mean_rate, r.rate_variance, r.grad_norm))
            .collect();
        let controller = Controller {
            inner: out.controller,
            mu: c.mu,
            horizon: c.horizon,
            seed: c.seed,
        };
        Ok((controller, curve))
    })
}

/// Episode returns of a fixed controller.
#[pyfunction]
#[pyo3(signature = (controller, game, episodes, seed = 0, greedy = false))]
fn evaluate(
    controller: &Controller,
    game: &Bound<'_, PyAny>,
    episodes: usize,
    seed: u64,
    greedy: bool,
) -> PyResult<Vec<f64>> {
    let mode = if greedy { RolloutMode::Greedy } else { RolloutMode::Sample };
    with_game(game, |g| {
        let recs = trainer::evaluate(&controller.inner, g, controller.horizon, episodes, seed, mode, false)
            .map_err(err)?;
        Ok(recs.iter().map(|r| r.episode_return()).collect())
    })
}

#[pyfunction]
fn surrogate_return(returns: Vec<f64>, mu: f64) -> PyResult<f64> {
    risk::surrogate_return(&returns, mu).map_err(err)
}

#[pyfunction]
fn evar_literal(returns: Vec<f64>, mu: f64) -> PyResult<f64> {
    risk::evar_literal(&returns, mu).map_err(err)
}

#[pyfunction]
fn population_variance(values: Vec<f64>) -> f64 {
    risk::population_variance(&values)
}

#[pymodule]
fn rislab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RislabError", m.py().get_type::<RislabError>())?;
    m.add_class::<DeskEnvironment>()?;
    m.add_class::<ToyGame>()?;
    m.add_class::<TrainConfig>()?;
    m.add_class::<Controller>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(surrogate_return, m)?)?;
    m.add_function(wrap_pyfunction!(evar_literal, m)?)?;
    m.add_function(wrap_pyfunction!(population_variance, m)?)?;
    Ok(())
}
