//! Experiment configuration: a built-in profile, optionally overridden by a
//! TOML file, then by command-line flags.
//!
//! Schema (version 1). Every key is optional; unknown keys are rejected.
//!
//! ```toml
//! version = 1
//! profile = "desk"          # desk | paper | toy
//! seed = 0
//! out = "runs/desk"
//! scenario = "office.txt"   # scenario file; default is the profile's room
//! dataset = "walks.csv"     # trajectories to replay instead of a random walk
//!
//! [channel]   # carrier_freq, bandwidth (Hz), tx_power_dbm, noise_dbm (total
//!             # over the band), n_ap, n_ue, ris_h, ris_v, rays_per_link,
//!             # exponent_los, exponent_nlos, scatter_power, p_block_direct,
//!             # p_unblock_direct, p_block_reflected, p_unblock_reflected,
//!             # frozen
//! [codebook]  # beams, phase_step, phase_directions
//! [train]     # mode, mu, horizon, history, dense_width, dropout_lstm,
//!             # dropout_dense, learning_rate, seed_samples, minibatch,
//!             # offline_epochs, episodes_per_update, replay_capacity,
//!             # max_updates, convergence_window, convergence_tol, clip_norm,
//!             # rate_norm, continuing, divergence_limit
//! [sweep]     # mu = [..], horizon = [..]
//! [evaluate]  # episodes, seed, greedy, obstacle_counts, obstacle_layouts,
//!             # block_size
//! [generate]  # trajectories, length
//! [toy]       # action_sizes, rewards (row-major joint table)
//! [bench]     # mode, history, horizons, agents, codebook, repeats,
//!             # min_seconds
//! ```

use std::path::{Path, PathBuf};

use rislab::channel::{dbm_to_watts, ArrayGeometry};
use rislab::environment::{BlockageModel, EnvConfig};
use rislab::policy::ControllerKind;
use rislab::trainer::{NetShape, TrainConfig};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
    Toy,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            "toy" => Ok(Self::Toy),
            other => Err(format!("unknown profile '{other}' (expected desk, paper or toy)")),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    version: Option<u32>,
    profile: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    scenario: Option<PathBuf>,
    dataset: Option<PathBuf>,
    #[serde(default)]
    channel: ChannelSection,
    #[serde(default)]
    codebook: CodebookSection,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    sweep: SweepSection,
    #[serde(default)]
    evaluate: EvaluateSection,
    #[serde(default)]
    generate: GenerateSection,
    toy: Option<ToySection>,
    #[serde(default)]
    bench: BenchSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSection {
    carrier_freq: Option<f64>,
    bandwidth: Option<f64>,
    tx_power_dbm: Option<f64>,
    noise_dbm: Option<f64>,
    n_ap: Option<usize>,
    n_ue: Option<usize>,
    ris_h: Option<usize>,
    ris_v: Option<usize>,
    rays_per_link: Option<usize>,
    exponent_los: Option<f64>,
    exponent_nlos: Option<f64>,
    scatter_power: Option<f64>,
    p_block_direct: Option<f64>,
    p_unblock_direct: Option<f64>,
    p_block_reflected: Option<f64>,
    p_unblock_reflected: Option<f64>,
    frozen: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookSection {
    beams: Option<usize>,
    phase_step: Option<f64>,
    phase_directions: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    mode: Option<String>,
    mu: Option<f64>,
    horizon: Option<usize>,
    history: Option<usize>,
    dense_width: Option<usize>,
    dropout_lstm: Option<f64>,
    dropout_dense: Option<f64>,
    learning_rate: Option<f64>,
    seed_samples: Option<usize>,
    minibatch: Option<usize>,
    offline_epochs: Option<usize>,
    episodes_per_update: Option<usize>,
    /// 0 = unbounded.
    replay_capacity: Option<usize>,
    max_updates: Option<usize>,
    convergence_window: Option<usize>,
    convergence_tol: Option<f64>,
    /// 0 = no clipping.
    clip_norm: Option<f64>,
    rate_norm: Option<f64>,
    continuing: Option<bool>,
    divergence_limit: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    mu: Option<Vec<f64>>,
    horizon: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateSection {
    episodes: Option<usize>,
    seed: Option<u64>,
    greedy: Option<bool>,
    obstacle_counts: Option<Vec<usize>>,
    obstacle_layouts: Option<usize>,
    block_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateSection {
    trajectories: Option<usize>,
    length: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToySection {
    action_sizes: Option<Vec<usize>>,
    rewards: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchSection {
    mode: Option<String>,
    history: Option<Vec<usize>>,
    horizons: Option<Vec<usize>>,
    agents: Option<usize>,
    codebook: Option<usize>,
    repeats: Option<usize>,
    min_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub episodes: usize,
    pub seed: u64,
    pub greedy: bool,
    pub obstacle_counts: Vec<usize>,
    pub obstacle_layouts: usize,
    pub block_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySettings {
    pub action_sizes: Vec<usize>,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    pub mode: ControllerKind,
    pub history: Vec<usize>,
    pub horizons: Vec<usize>,
    pub agents: usize,
    pub codebook: usize,
    pub repeats: usize,
    pub min_seconds: f64,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub profile: Profile,
    pub seed: u64,
    pub out: PathBuf,
    pub scenario: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub sweep_mu: Vec<f64>,
    pub sweep_horizon: Vec<usize>,
    pub eval: EvalSettings,
    pub generate: (usize, usize),
    /// Set when the game is an explicit reward table instead of the room.
    pub toy: Option<ToySettings>,
    pub bench: BenchSettings,
}

/// Flags that override both the profile and the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Experiment {
    pub fn from_profile(profile: Profile) -> Self {
        let paper = profile == Profile::Paper;
        let env = if paper { EnvConfig::paper() } else { EnvConfig::desk() };
        let train = match profile {
            Profile::Desk => TrainConfig::desk(),
            Profile::Paper => TrainConfig {
                shape: NetShape {
                    dropout_lstm: 0.2,
                    dropout_dense: 0.4,
                    ..NetShape::new(16)
                },
                rate_norm: 20.0,
                ..TrainConfig::default()
            },
            Profile::Toy => TrainConfig {
                shape: NetShape::new(4),
                learning_rate: 0.5,
                seed_samples: 0,
                minibatch: 32,
                episodes_per_update: 32,
                replay_capacity: Some(32),
                max_updates: 2000,
                convergence_tol: 0.0,
                rate_norm: 4.0,
                ..TrainConfig::default()
            },
        };
        Self {
            profile,
            seed: 0,
            out: PathBuf::from("out"),
            scenario: None,
            dataset: None,
            env,
            sweep_mu: vec![train.mu],
            sweep_horizon: vec![train.horizon],
            train,
            eval: EvalSettings {
                episodes: if paper { 1000 } else { 2000 },
                seed: 999,
                greedy: false,
                obstacle_counts: if profile == Profile::Toy { Vec::new() } else { vec![0, 1, 2, 3] },
                obstacle_layouts: 5,
                block_size: 3,
            },
            generate: if paper { (1600, 56) } else { (100, 20) },
            toy: (profile == Profile::Toy).then(|| ToySettings {
                action_sizes: vec![2, 2],
                rewards: vec![2.5, 4.0, 1.0, 2.0],
            }),
            bench: BenchSettings {
                mode: ControllerKind::Centralized,
                history: vec![16],
                horizons: vec![1, 2, 4, 8, 16],
                agents: 3,
                codebook: 8,
                repeats: 3,
                min_seconds: 0.2,
            },
        }
    }

    /// Resolve a config file (if any) against its profile and the flags.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let (text, file) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                let file: ConfigFile = toml::from_str(&text)
                    .map_err(|e| CliError::config(format!("{}: {}", p.display(), e.to_string().trim_end())))?;
                (text, file)
            }
            None => (String::new(), ConfigFile::default()),
        };
        let origin = path.map(|p| p.display().to_string()).unwrap_or_else(|| "<flags>".into());
        let err = |section: Option<&str>, key: &str, msg: String| {
            let at = key_line(&text, section, key).map(|l| format!(" line {l}")).unwrap_or_default();
            let name = section.map(|s| format!("{s}.{key}")).unwrap_or_else(|| key.to_string());
            CliError::config(format!("{origin}{at}: {name}: {msg}"))
        };
        if let Some(v) = file.version {
            if v != SCHEMA_VERSION {
                return Err(err(None, "version", format!("unsupported schema version {v} (expected {SCHEMA_VERSION})")));
            }
        }
        let profile = match (overrides.profile, &file.profile) {
            (Some(p), _) => p,
            (None, Some(s)) => s.parse().map_err(|m| err(None, "profile", m))?,
            (None, None) => Profile::Desk,
        };
        let mut x = Self::from_profile(profile);
        x.seed = overrides.seed.or(file.seed).unwrap_or(0);
        if let Some(out) = overrides.out.clone().or(file.out) {
            x.out = out;
        }
        let base = path.and_then(Path::parent).unwrap_or(Path::new(""));
        x.scenario = file.scenario.map(|p| base.join(p));
        x.dataset = file.dataset.map(|p| base.join(p));

        let c = &file.channel;
        let e = &mut x.env;
        set(&mut e.carrier_freq, c.carrier_freq);
        set(&mut e.budget.bandwidth, c.bandwidth);
        if let Some(p) = c.tx_power_dbm {
            e.budget.tx_power = dbm_to_watts(p);
        }
        let noise_total = c.noise_dbm.map(dbm_to_watts);
        set(&mut e.exponent_los, c.exponent_los);
        set(&mut e.exponent_nlos, c.exponent_nlos);
        set(&mut e.rays_per_link, c.rays_per_link);
        set(&mut e.scatter_power, c.scatter_power);
        set(&mut e.frozen, c.frozen);
        e.blockage_direct = BlockageModel {
            p_block: c.p_block_direct.unwrap_or(e.blockage_direct.p_block),
            p_unblock: c.p_unblock_direct.unwrap_or(e.blockage_direct.p_unblock),
        };
        e.blockage_reflected = BlockageModel {
            p_block: c.p_block_reflected.unwrap_or(e.blockage_reflected.p_block),
            p_unblock: c.p_unblock_reflected.unwrap_or(e.blockage_reflected.p_unblock),
        };
        if let Some(n) = noise_total {
            e.budget.noise_density = n / e.budget.bandwidth;
        }
        let g = e.geometry;
        e.geometry = ArrayGeometry::new(
            c.n_ap.unwrap_or(g.n_ap),
            c.n_ue.unwrap_or(g.n_ue),
            c.ris_h.unwrap_or(g.ris_h),
            c.ris_v.unwrap_or(g.ris_v),
        )
        .map_err(|m| err(Some("channel"), first_set(&[("n_ap", c.n_ap), ("n_ue", c.n_ue), ("ris_h", c.ris_h), ("ris_v", c.ris_v)]), m.to_string()))?;
        set(&mut e.beam_count, file.codebook.beams);
        set(&mut e.phase_step, file.codebook.phase_step);
        set(&mut e.phase_directions, file.codebook.phase_directions);

        let t = &file.train;
        let tc = &mut x.train;
        if let Some(m) = &t.mode {
            tc.mode = m
                .parse()
                .map_err(|_| err(Some("train"), "mode", format!("unknown mode '{m}' (expected centralized or distributed)")))?;
        }
        set(&mut tc.mu, t.mu);
        set(&mut tc.horizon, t.horizon);
        if let Some(h) = t.history {
            tc.shape.history = h;
            tc.shape.dense_width = h;
        }
        set(&mut tc.shape.dense_width, t.dense_width);
        set(&mut tc.shape.dropout_lstm, t.dropout_lstm);
        set(&mut tc.shape.dropout_dense, t.dropout_dense);
        set(&mut tc.learning_rate, t.learning_rate);
        set(&mut tc.seed_samples, t.seed_samples);
        set(&mut tc.minibatch, t.minibatch);
        set(&mut tc.offline_epochs, t.offline_epochs);
        set(&mut tc.episodes_per_update, t.episodes_per_update);
        if let Some(c) = t.replay_capacity {
            tc.replay_capacity = (c > 0).then_some(c);
        }
        set(&mut tc.max_updates, t.max_updates);
        set(&mut tc.convergence_window, t.convergence_window);
        set(&mut tc.convergence_tol, t.convergence_tol);
        if let Some(c) = t.clip_norm {
            tc.clip_norm = (c > 0.0).then_some(c);
        }
        set(&mut tc.rate_norm, t.rate_norm);
        set(&mut tc.continuing, t.continuing);
        set(&mut tc.divergence_limit, t.divergence_limit);
        tc.seed = x.seed;

        x.sweep_mu = file.sweep.mu.clone().unwrap_or_else(|| vec![x.train.mu]);
        x.sweep_horizon = file.sweep.horizon.clone().unwrap_or_else(|| vec![x.train.horizon]);

        let v = &file.evaluate;
        set(&mut x.eval.episodes, v.episodes);
        set(&mut x.eval.seed, v.seed);
        set(&mut x.eval.greedy, v.greedy);
        set(&mut x.eval.obstacle_counts, v.obstacle_counts.clone());
        set(&mut x.eval.obstacle_layouts, v.obstacle_layouts);
        set(&mut x.eval.block_size, v.block_size);
        set(&mut x.generate.0, file.generate.trajectories);
        set(&mut x.generate.1, file.generate.length);

        if let Some(toy) = &file.toy {
            let base = x.toy.clone().unwrap_or(ToySettings {
                action_sizes: vec![2, 2],
                rewards: vec![2.5, 4.0, 1.0, 2.0],
            });
            x.toy = Some(ToySettings {
                action_sizes: toy.action_sizes.clone().unwrap_or(base.action_sizes),
                rewards: toy.rewards.clone().unwrap_or(base.rewards),
            });
        }

        let b = &file.bench;
        if let Some(m) = &b.mode {
            x.bench.mode = m
                .parse()
                .map_err(|_| err(Some("bench"), "mode", format!("unknown mode '{m}' (expected centralized or distributed)")))?;
        }
        set(&mut x.bench.history, b.history.clone());
        set(&mut x.bench.horizons, b.horizons.clone());
        set(&mut x.bench.agents, b.agents);
        set(&mut x.bench.codebook, b.codebook);
        set(&mut x.bench.repeats, b.repeats);
        set(&mut x.bench.min_seconds, b.min_seconds);

        x.check(&err)?;
        Ok(x)
    }

    fn check(&self, err: &dyn Fn(Option<&str>, &str, String) -> CliError) -> Result<()> {
        let ch = Some("channel");
        let positive = [
            ("carrier_freq", self.env.carrier_freq),
            ("bandwidth", self.env.budget.bandwidth),
            ("exponent_los", self.env.exponent_los),
            ("exponent_nlos", self.env.exponent_nlos),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(err(ch, k, format!("must be > 0, got {v}")));
            }
        }
        if self.env.rays_per_link == 0 {
            return Err(err(ch, "rays_per_link", "must be >= 1".into()));
        }
        if !(self.env.scatter_power >= 0.0) {
            return Err(err(ch, "scatter_power", "must be >= 0".into()));
        }
        for (k, p) in [
            ("p_block_direct", self.env.blockage_direct.p_block),
            ("p_unblock_direct", self.env.blockage_direct.p_unblock),
            ("p_block_reflected", self.env.blockage_reflected.p_block),
            ("p_unblock_reflected", self.env.blockage_reflected.p_unblock),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(err(ch, k, format!("must be in [0, 1], got {p}")));
            }
        }
        let cb = Some("codebook");
        if self.env.beam_count < 2 {
            return Err(err(cb, "beams", "need at least 2 beams".into()));
        }
        if !(self.env.phase_step > 0.0) {
            return Err(err(cb, "phase_step", "must be > 0".into()));
        }
        if self.env.phase_directions == 0 {
            return Err(err(cb, "phase_directions", "must be >= 1".into()));
        }
        self.env.validate().map_err(|e| err(ch, "", e.to_string()))?;

        let tr = Some("train");
        let t = &self.train;
        if t.shape.history == 0 || t.shape.history % 4 != 0 {
            return Err(err(tr, "history", format!("must be a positive multiple of 4, got {}", t.shape.history)));
        }
        if t.shape.dense_width == 0 {
            return Err(err(tr, "dense_width", "must be >= 1".into()));
        }
        for (k, p) in [("dropout_lstm", t.shape.dropout_lstm), ("dropout_dense", t.shape.dropout_dense)] {
            if !(0.0..1.0).contains(&p) {
                return Err(err(tr, k, format!("must be in [0, 1), got {p}")));
            }
        }
        let mus = std::iter::once(t.mu).chain(self.sweep_mu.iter().copied());
        for mu in mus {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(err(tr, "mu", format!("must be >= 0, got {mu}")));
            }
        }
        for &h in std::iter::once(&t.horizon).chain(&self.sweep_horizon) {
            if h == 0 {
                return Err(err(tr, "horizon", "must be >= 1".into()));
            }
        }
        if self.sweep_mu.is_empty() || self.sweep_horizon.is_empty() {
            return Err(err(Some("sweep"), "mu", "sweep lists must not be empty".into()));
        }
        if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
            return Err(err(tr, "learning_rate", format!("must be >= 0, got {}", t.learning_rate)));
        }
        for (k, v) in [
            ("minibatch", t.minibatch),
            ("episodes_per_update", t.episodes_per_update),
            ("convergence_window", t.convergence_window),
        ] {
            if v == 0 {
                return Err(err(tr, k, "must be >= 1".into()));
            }
        }
        if !(t.convergence_tol >= 0.0) {
            return Err(err(tr, "convergence_tol", "must be >= 0".into()));
        }
        if !(t.rate_norm > 0.0 && t.rate_norm.is_finite()) {
            return Err(err(tr, "rate_norm", format!("must be > 0, got {}", t.rate_norm)));
        }
        if !(t.divergence_limit > 0.0) {
            return Err(err(tr, "divergence_limit", "must be > 0".into()));
        }
        t.validate().map_err(|e| err(tr, "", e.to_string()))?;

        let ev = Some("evaluate");
        if self.eval.block_size == 0 {
            return Err(err(ev, "block_size", "must be >= 1".into()));
        }
        if !self.eval.obstacle_counts.is_empty() && self.eval.obstacle_layouts == 0 {
            return Err(err(ev, "obstacle_layouts", "must be >= 1 when obstacle_counts is set".into()));
        }
        let ge = Some("generate");
        if self.generate.0 == 0 {
            return Err(err(ge, "trajectories", "must be >= 1".into()));
        }
        if self.generate.1 == 0 {
            return Err(err(ge, "length", "must be >= 1".into()));
        }
        if let Some(toy) = &self.toy {
            if toy.action_sizes.is_empty() || toy.action_sizes.contains(&0) {
                return Err(err(Some("toy"), "action_sizes", "every agent needs at least one action".into()));
            }
            let joint: usize = toy.action_sizes.iter().product();
            if toy.rewards.len() != joint || toy.rewards.iter().any(|r| !r.is_finite()) {
                return Err(err(
                    Some("toy"),
                    "rewards",
                    format!("need {joint} finite entries, got {}", toy.rewards.len()),
                ));
            }
        }
        let be = Some("bench");
        let b = &self.bench;
        if b.history.is_empty() || b.history.iter().any(|&h| h == 0 || h % 4 != 0) {
            return Err(err(be, "history", "need positive multiples of 4".into()));
        }
        if b.horizons.is_empty() || b.horizons.contains(&0) {
            return Err(err(be, "horizons", "need positive horizons".into()));
        }
        if b.agents == 0 || b.codebook == 0 || b.repeats == 0 {
            return Err(err(be, "agents", "agents, codebook and repeats must be >= 1".into()));
        }
        if !(b.min_seconds >= 0.0) {
            return Err(err(be, "min_seconds", "must be >= 0".into()));
        }
        Ok(())
    }

    /// Hash of everything that determines the results (the output directory
    /// is excluded).
    pub fn config_hash(&self) -> String {
        let canonical = format!("{:?}", Self { out: PathBuf::new(), ..self.clone() });
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn first_set(keys: &[(&'static str, Option<usize>)]) -> &'static str {
    keys.iter().find(|(_, v)| v.is_some()).map(|(k, _)| *k).unwrap_or("n_ap")
}

/// 1-based line of `key = ...` inside `[section]` (or at top level).
pub fn key_line(text: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    let mut section_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = Some(rest.trim_end_matches(']').trim().to_string());
            if current.as_deref() == section {
                section_line = Some(i + 1);
            }
            continue;
        }
        if current.as_deref() != section || key.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix(key) {
            if rest.trim_start().starts_with('=') {
                return Some(i + 1);
            }
        }
    }
    section_line
}
