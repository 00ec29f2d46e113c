//! Indoor RIS-assisted downlink as a multi-agent identical-payoff game.
//!
//! Agent 0 picks the AP beam, agent `g + 1` picks the phase configuration of
//! RIS `g`. Every agent observes the same reward: the achievable rate of the
//! slot.

mod dataset;
mod grid;
mod history;
mod scenario_file;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::channel::{
    achievable_rate, apply_ap_beam, build_phase_codebook, cascaded_channel, channel_ap_to_ris,
    channel_ap_to_ue, channel_ris_to_ue, dbm_to_watts, half_plane_directions, ray_path_gains,
    wrap_angle, ArrayGeometry, BeamCodebook, CMatrix, LinkBudget, PathGainProfile, PhaseCodebook,
    Ray, RisPath,
};
use crate::error::{Error, Result};

pub use dataset::{
    generate_dataset, generate_trajectories, ingest_dataset, read_trajectories, write_trajectories,
    IngestedDataset, TrajectoryRow, TrajectoryTable,
};
pub use grid::{compute_dark_areas, Cell, DarkAreaMap, OccupancyGrid};
pub use history::{EpisodeRecord, EpisodeStep, HistoryBuffer};
pub use scenario_file::{parse_scenario, read_scenario, render_scenario, write_scenario};

/// Two-state Markov self-blockage chain of one LoS ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockageModel {
    pub p_block: f64,
    pub p_unblock: f64,
}

impl Default for BlockageModel {
    fn default() -> Self {
        Self {
            p_block: 0.1,
            p_unblock: 0.4,
        }
    }
}

impl BlockageModel {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_block", self.p_block), ("p_unblock", self.p_unblock)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }

    /// Long-run blocked fraction.
    pub fn stationary_blocked(&self) -> f64 {
        let total = self.p_block + self.p_unblock;
        if total == 0.0 {
            0.0
        } else {
            self.p_block / total
        }
    }

    pub fn step(&self, blocked: bool, rng: &mut dyn RngCore) -> bool {
        let u: f64 = rng.random();
        if blocked {
            u >= self.p_unblock
        } else {
            u < self.p_block
        }
    }
}

/// Radio and dynamics parameters of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub geometry: ArrayGeometry,
    pub budget: LinkBudget,
    /// Hz
    pub carrier_freq: f64,
    pub exponent_los: f64,
    pub exponent_nlos: f64,
    /// Rays per link, the first one being the geometric LoS ray.
    pub rays_per_link: usize,
    /// Variance of the complex gain of each scattered ray.
    pub scatter_power: f64,
    /// Self-blockage of the AP→UE LoS ray.
    pub blockage_direct: BlockageModel,
    /// Self-blockage of each RIS→UE LoS ray.
    pub blockage_reflected: BlockageModel,
    /// Half-width of the uniform per-slot orientation increment (radians).
    pub orientation_jitter: f64,
    /// meters
    pub min_distance: f64,
    pub beam_count: usize,
    pub phase_step: f64,
    pub phase_range: (f64, f64),
    pub phase_directions: usize,
    /// No mobility, blockage or gain dynamics: the state never changes.
    pub frozen: bool,
}

impl EnvConfig {
    /// Full-size constants: 73 GHz, 1 GHz, 46 dBm, -88 dBm of noise over the
    /// band (-178 dBm/Hz), 128/64 antennas, 8x8 surfaces, pi/5 phase step.
    pub fn paper() -> Self {
        Self {
            geometry: ArrayGeometry::new(128, 64, 8, 8).expect("static geometry"),
            budget: LinkBudget {
                tx_power: dbm_to_watts(46.0),
                bandwidth: 1e9,
                noise_density: dbm_to_watts(-88.0) / 1e9,
            },
            carrier_freq: 73e9,
            exponent_los: 2.0,
            exponent_nlos: 4.0,
            rays_per_link: 3,
            scatter_power: 0.1,
            blockage_direct: BlockageModel::default(),
            blockage_reflected: BlockageModel::default(),
            orientation_jitter: PI / 12.0,
            min_distance: 0.5,
            beam_count: 8,
            phase_step: PI / 5.0,
            phase_range: (-PI / 2.0, PI / 2.0),
            phase_directions: 11,
            frozen: false,
        }
    }

    /// Desk-scale profile: 8/4 antennas and 4x4 surfaces.
    pub fn desk() -> Self {
        Self {
            geometry: ArrayGeometry::new(8, 4, 4, 4).expect("static geometry"),
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.budget.validate()?;
        let positive = [
            ("carrier_freq", self.carrier_freq),
            ("exponent_los", self.exponent_los),
            ("exponent_nlos", self.exponent_nlos),
            ("min_distance", self.min_distance),
            ("phase_step", self.phase_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.rays_per_link == 0 {
            return Err(Error::InvalidConfig("rays_per_link must be >= 1".into()));
        }
        if !(self.scatter_power >= 0.0) || !(self.orientation_jitter >= 0.0) {
            return Err(Error::InvalidConfig(
                "scatter_power and orientation_jitter must be >= 0".into(),
            ));
        }
        self.blockage_direct.validate()?;
        self.blockage_reflected.validate()?;
        Ok(())
    }

    pub fn beam_codebook(&self) -> Result<BeamCodebook> {
        BeamCodebook::uniform(self.beam_count)
    }

    pub fn phase_codebook(&self) -> Result<PhaseCodebook> {
        build_phase_codebook(
            &self.geometry,
            self.phase_step,
            self.phase_range,
            &half_plane_directions(self.phase_directions),
        )
    }
}

/// How the user moves between slots.
#[derive(Debug, Clone, PartialEq)]
pub enum Mobility {
    /// Presence-weighted random walk.
    RandomWalk,
    /// Replays recorded cell sequences; a finished trajectory is followed by
    /// a uniformly drawn new one.
    Replay(Vec<Vec<Cell>>),
}

/// Candidate next cells (3x3 block incl. stay, row-major) and their
/// presence weights. Obstacles carry zero weight.
pub fn mobility_candidates(grid: &OccupancyGrid, position: Cell) -> Vec<(Cell, f64)> {
    grid.neighborhood(position)
        .map(|c| (c, if grid.is_obstacle(c) { 0.0 } else { grid.presence(c) }))
        .collect()
}

/// One random-walk step: a candidate with probability proportional to its
/// presence weight, or stay when all weights are zero.
pub fn mobility_step(grid: &OccupancyGrid, position: Cell, rng: &mut dyn RngCore) -> Cell {
    let candidates = mobility_candidates(grid, position);
    let total: f64 = candidates.iter().map(|(_, w)| w).sum();
    if !(total > 0.0) {
        return position;
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = position;
    for (c, w) in candidates {
        if w > 0.0 {
            acc += w;
            last = c;
            if u < acc {
                return c;
            }
        }
    }
    last
}

/// Draw a cell from the presence distribution.
pub fn sample_presence(grid: &OccupancyGrid, rng: &mut dyn RngCore) -> Cell {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (i, &p) in grid.presence_map().iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = Some(i);
            if u < acc {
                return grid.cell(i);
            }
        }
    }
    grid.cell(last.expect("grid has presence mass"))
}

/// Position in a replayed trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayCursor {
    pub trajectory: usize,
    pub slot: usize,
}

/// Full hidden state of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub position: Cell,
    pub orientation: f64,
    /// Self-blockage of the AP→UE LoS ray followed by each RIS→UE LoS ray.
    pub self_blocked: Vec<bool>,
    pub direct: Vec<Ray>,
    pub ap_ris: Vec<Vec<Ray>>,
    pub ris_ue: Vec<Vec<Ray>>,
    pub replay: Option<ReplayCursor>,
}

/// Joint action: beam index followed by one phase index per RIS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionProfile<'a> {
    pub beam: usize,
    pub phases: &'a [usize],
}

impl<'a> ActionProfile<'a> {
    /// Split a flat per-agent action vector.
    pub fn from_slice(actions: &'a [usize]) -> Result<Self> {
        match actions.split_first() {
            Some((&beam, phases)) => Ok(Self { beam, phases }),
            None => Err(Error::ShapeMismatch("empty action profile".into())),
        }
    }
}

/// Immutable description of an environment: room, radio setup, codebooks
/// and mobility model.
#[derive(Debug, Clone)]
pub struct Scenario {
    grid: OccupancyGrid,
    dark: DarkAreaMap,
    config: EnvConfig,
    beams: BeamCodebook,
    phases: PhaseCodebook,
    mobility: Mobility,
    ap_axis: f64,
    ris_axes: Vec<f64>,
    /// Per RIS: static blockage of the LoS ray from the RIS to each cell.
    ris_shadow: Vec<Vec<bool>>,
    ap_ris_blocked: Vec<bool>,
}

impl Scenario {
    pub fn new(grid: OccupancyGrid, config: EnvConfig, mobility: Mobility) -> Result<Self> {
        config.validate()?;
        let beams = config.beam_codebook()?;
        let phases = config.phase_codebook()?;
        Self::with_codebooks(grid, config, beams, phases, mobility)
    }

    pub fn with_codebooks(
        grid: OccupancyGrid,
        config: EnvConfig,
        beams: BeamCodebook,
        phases: PhaseCodebook,
        mobility: Mobility,
    ) -> Result<Self> {
        config.validate()?;
        if phases.entries().iter().any(|e| e.len() != config.geometry.n_ris()) {
            return Err(Error::InvalidCodebook(format!(
                "phase entries must have {} elements",
                config.geometry.n_ris()
            )));
        }
        if let Mobility::Replay(trajs) = &mobility {
            if trajs.is_empty() || trajs.iter().any(|t| t.is_empty()) {
                return Err(Error::Dataset("replay needs nonempty trajectories".into()));
            }
            for c in trajs.iter().flatten() {
                if !grid.contains(*c) || grid.is_obstacle(*c) {
                    return Err(Error::Dataset(format!("replay cell {c:?} is not a free cell")));
                }
            }
        }
        let dark = compute_dark_areas(&grid);
        let ap_axis = grid.wall_axis(grid.ap());
        let ris_axes = grid.ris().iter().map(|&r| grid.wall_axis(r)).collect();
        let n = grid.width() * grid.height();
        let ris_shadow = grid
            .ris()
            .iter()
            .map(|&r| (0..n).map(|i| grid.segment_blocked(r, grid.cell(i))).collect())
            .collect();
        let ap_ris_blocked = grid
            .ris()
            .iter()
            .map(|&r| grid.segment_blocked(grid.ap(), r))
            .collect();
        Ok(Self {
            grid,
            dark,
            config,
            beams,
            phases,
            mobility,
            ap_axis,
            ris_axes,
            ris_shadow,
            ap_ris_blocked,
        })
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn dark_areas(&self) -> &DarkAreaMap {
        &self.dark
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn beams(&self) -> &BeamCodebook {
        &self.beams
    }

    pub fn phases(&self) -> &PhaseCodebook {
        &self.phases
    }

    pub fn mobility(&self) -> &Mobility {
        &self.mobility
    }

    pub fn ris_count(&self) -> usize {
        self.grid.ris().len()
    }

    /// Codebook size of each agent: `[A, B, .., B]`.
    pub fn action_sizes(&self) -> Vec<usize> {
        std::iter::once(self.beams.len())
            .chain(std::iter::repeat_n(self.phases.len(), self.ris_count()))
            .collect()
    }

    pub fn check_actions(&self, actions: &[usize]) -> Result<()> {
        let sizes = self.action_sizes();
        if actions.len() != sizes.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} actions, got {}",
                sizes.len(),
                actions.len()
            )));
        }
        for (agent, (&index, &size)) in actions.iter().zip(&sizes).enumerate() {
            if index >= size {
                return Err(Error::ActionOutOfRange { agent, index, size });
            }
        }
        Ok(())
    }

    /// Draw an initial state: position from the presence distribution (or
    /// the start of a random replay trajectory), uniform orientation, no
    /// self-blockage.
    pub fn initial_state(&self, rng: &mut dyn RngCore) -> EnvState {
        let (position, replay) = match &self.mobility {
            Mobility::RandomWalk => (sample_presence(&self.grid, rng), None),
            Mobility::Replay(trajs) => {
                let trajectory = rng.random_range(0..trajs.len());
                (trajs[trajectory][0], Some(ReplayCursor { trajectory, slot: 0 }))
            }
        };
        let orientation = rng.random_range(-PI..PI);
        let self_blocked = vec![false; 1 + self.ris_count()];
        self.sample_rays(position, orientation, self_blocked, replay, rng)
    }

    /// Build the ray sets for a user at `position`. LoS blockage combines the
    /// static geometry with the self-blockage flags; scattered rays are
    /// always NLoS with fresh random gains and angles.
    pub fn sample_rays(
        &self,
        position: Cell,
        orientation: f64,
        self_blocked: Vec<bool>,
        replay: Option<ReplayCursor>,
        rng: &mut dyn RngCore,
    ) -> EnvState {
        let grid = &self.grid;
        let ap = grid.ap();
        let cell = grid.index(position);

        let direct_los = Ray::planar(
            self.dark.is_dark(position) || self_blocked[0],
            Complex64::new(1.0, 0.0),
            grid.bearing(ap, position) - self.ap_axis,
            grid.bearing(position, ap) - orientation,
        );
        let direct = self.with_scatter(direct_los, rng);

        let mut ap_ris = Vec::with_capacity(self.ris_count());
        let mut ris_ue = Vec::with_capacity(self.ris_count());
        for (g, &ris) in grid.ris().iter().enumerate() {
            let axis = self.ris_axes[g];
            let feed = Ray::planar(
                self.ap_ris_blocked[g],
                Complex64::new(1.0, 0.0),
                grid.bearing(ap, ris) - self.ap_axis,
                grid.bearing(ris, ap) - axis,
            );
            ap_ris.push(self.with_scatter(feed, rng));
            let reflect = Ray::planar(
                self.ris_shadow[g][cell] || self_blocked[1 + g],
                Complex64::new(1.0, 0.0),
                grid.bearing(ris, position) - axis,
                grid.bearing(position, ris) - orientation,
            );
            ris_ue.push(self.with_scatter(reflect, rng));
        }
        EnvState {
            position,
            orientation,
            self_blocked,
            direct,
            ap_ris,
            ris_ue,
            replay,
        }
    }

    fn with_scatter(&self, los: Ray, rng: &mut dyn RngCore) -> Vec<Ray> {
        let sd = (self.config.scatter_power / 2.0).sqrt();
        let mut rays = Vec::with_capacity(self.config.rays_per_link);
        rays.push(los);
        for _ in 1..self.config.rays_per_link {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            let aod = rng.random_range(-PI..PI);
            let aoa = rng.random_range(-PI..PI);
            rays.push(Ray::planar(true, Complex64::new(re * sd, im * sd), aod, aoa));
        }
        rays
    }

    fn profile(&self, from: Cell, to: Cell) -> PathGainProfile {
        PathGainProfile {
            distance: self.grid.distance(from, to).max(self.config.min_distance),
            carrier_freq: self.config.carrier_freq,
            exponent_los: self.config.exponent_los,
            exponent_nlos: self.config.exponent_nlos,
        }
    }

    /// Beamformed end-to-end channel for the given state and joint action.
    pub fn channel(&self, state: &EnvState, actions: &[usize]) -> Result<CMatrix> {
        self.check_actions(actions)?;
        let profile = ActionProfile::from_slice(actions)?;
        let geometry = &self.config.geometry;
        let grid = &self.grid;
        let ap = grid.ap();

        let rho = ray_path_gains(&self.profile(ap, state.position), &state.direct)?;
        let direct = channel_ap_to_ue(&state.direct, &rho, geometry)?;
        let mut paths = Vec::with_capacity(self.ris_count());
        for (g, &ris) in grid.ris().iter().enumerate() {
            let rho_in = ray_path_gains(&self.profile(ap, ris), &state.ap_ris[g])?;
            let rho_out = ray_path_gains(&self.profile(ris, state.position), &state.ris_ue[g])?;
            paths.push(RisPath {
                ap_ris: channel_ap_to_ris(&state.ap_ris[g], &rho_in, geometry)?,
                phases: self
                    .phases
                    .diagonal(profile.phases[g])
                    .expect("index checked above"),
                ris_ue: channel_ris_to_ue(&state.ris_ue[g], &rho_out, geometry)?,
            });
        }
        let h = cascaded_channel(&direct, &paths)?.h;
        let beam = self.beams.angle(profile.beam).expect("index checked above");
        Ok(apply_ap_beam(&h, beam))
    }

    /// Achievable rate (bits/s) of the slot.
    pub fn reward(&self, state: &EnvState, actions: &[usize]) -> Result<f64> {
        achievable_rate(&self.channel(state, actions)?, &self.config.budget)
    }

    /// Advance the hidden state one slot: mobility, self-blockage chains,
    /// orientation jitter, fresh scattered rays. Frozen scenarios return the
    /// state unchanged.
    pub fn transition(&self, state: &EnvState, rng: &mut dyn RngCore) -> EnvState {
        if self.config.frozen {
            return state.clone();
        }
        let (position, replay) = match (&self.mobility, state.replay) {
            (Mobility::Replay(trajs), Some(cursor)) => {
                let next = if cursor.slot + 1 < trajs[cursor.trajectory].len() {
                    ReplayCursor {
                        trajectory: cursor.trajectory,
                        slot: cursor.slot + 1,
                    }
                } else {
                    ReplayCursor {
                        trajectory: rng.random_range(0..trajs.len()),
                        slot: 0,
                    }
                };
                (trajs[next.trajectory][next.slot], Some(next))
            }
            _ => (mobility_step(&self.grid, state.position, rng), None),
        };
        let self_blocked = blockage_step(
            &state.self_blocked,
            &self.config.blockage_direct,
            &self.config.blockage_reflected,
            rng,
        );
        let jitter = self.config.orientation_jitter;
        let orientation = if jitter > 0.0 {
            wrap_angle(state.orientation + rng.random_range(-jitter..=jitter))
        } else {
            state.orientation
        };
        self.sample_rays(position, orientation, self_blocked, replay, rng)
    }
}

/// Advance the self-blockage chains: entry 0 uses the direct-link model, the
/// rest the reflected-link model.
pub fn blockage_step(
    blocked: &[bool],
    direct: &BlockageModel,
    reflected: &BlockageModel,
    rng: &mut dyn RngCore,
) -> Vec<bool> {
    blocked
        .iter()
        .enumerate()
        .map(|(i, &b)| if i == 0 { direct } else { reflected }.step(b, rng))
        .collect()
}

/// Reward for the current slot followed by the transition.
pub fn env_step(
    scenario: &Scenario,
    state: &EnvState,
    actions: &[usize],
    rng: &mut dyn RngCore,
) -> Result<(f64, EnvState)> {
    let reward = scenario.reward(state, actions)?;
    Ok((reward, scenario.transition(state, rng)))
}

/// A repeated game with one codebook per agent and a common scalar reward.
pub trait Game {
    fn action_sizes(&self) -> Vec<usize>;

    /// Start a new episode.
    fn reset(&mut self, rng: &mut dyn RngCore) -> Result<()>;

    /// Play one slot and return the common reward.
    fn step(&mut self, actions: &[usize], rng: &mut dyn RngCore) -> Result<f64>;

    fn agent_count(&self) -> usize {
        self.action_sizes().len()
    }
}

/// A stateful scenario instance. Rewards are reported in bits/s scaled by
/// `reward_scale` (by default 1/w, i.e. bits/s/Hz).
#[derive(Debug, Clone)]
pub struct Environment {
    scenario: Scenario,
    state: EnvState,
    reward_scale: f64,
}

impl Environment {
    pub fn new(scenario: Scenario, rng: &mut dyn RngCore) -> Self {
        let state = scenario.initial_state(rng);
        let reward_scale = 1.0 / scenario.config().budget.bandwidth;
        Self {
            scenario,
            state,
            reward_scale,
        }
    }

    pub fn with_state(scenario: Scenario, state: EnvState) -> Self {
        let reward_scale = 1.0 / scenario.config().budget.bandwidth;
        Self {
            scenario,
            state,
            reward_scale,
        }
    }

    pub fn set_reward_scale(&mut self, scale: f64) {
        self.reward_scale = scale;
    }

    pub fn reward_scale(&self) -> f64 {
        self.reward_scale
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Scaled reward of every joint action in the current state, indexed in
    /// row-major order over the agents' codebooks.
    pub fn reward_table(&self) -> Result<Vec<f64>> {
        let sizes = self.scenario.action_sizes();
        let total: usize = sizes.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut actions = vec![0; sizes.len()];
        for mut k in 0..total {
            for (a, &s) in actions.iter_mut().zip(&sizes).rev() {
                *a = k % s;
                k /= s;
            }
            out.push(self.scenario.reward(&self.state, &actions)? * self.reward_scale);
        }
        Ok(out)
    }
}

impl Game for Environment {
    fn action_sizes(&self) -> Vec<usize> {
        self.scenario.action_sizes()
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Result<()> {
        if !self.scenario.config().frozen {
            self.state = self.scenario.initial_state(rng);
        }
        Ok(())
    }

    fn step(&mut self, actions: &[usize], rng: &mut dyn RngCore) -> Result<f64> {
        let (reward, next) = env_step(&self.scenario, &self.state, actions, rng)?;
        self.state = next;
        Ok(reward * self.reward_scale)
    }
}
