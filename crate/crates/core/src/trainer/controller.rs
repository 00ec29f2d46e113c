use rand::RngCore;

use crate::error::{Error, Result};
use crate::policy::{
    encode_history, init_params, log_prob_clamped, sample_action, ControllerKind, Dropout,
    NetworkArchitecture, PolicyNet,
};

/// One slot of the global history: every agent's action and the common
/// reward (unnormalized).
#[derive(Debug, Clone, PartialEq)]
pub struct HistorySlot {
    pub actions: Vec<usize>,
    pub reward: f64,
}

/// Per-agent policy: either one network with one head per agent, or one
/// single-head network per agent that only sees its own actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    kind: ControllerKind,
    nets: Vec<PolicyNet>,
    action_sizes: Vec<usize>,
    /// History rates are divided by this before entering a network.
    rate_norm: f64,
}

/// Shape shared by every network of a controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetShape {
    pub history: usize,
    pub dense_width: usize,
    pub dropout_lstm: f64,
    pub dropout_dense: f64,
}

impl NetShape {
    pub fn new(history: usize) -> Self {
        Self {
            history,
            dense_width: history,
            dropout_lstm: 0.0,
            dropout_dense: 0.0,
        }
    }

    pub fn architectures(&self, kind: ControllerKind, action_sizes: &[usize]) -> Result<Vec<NetworkArchitecture>> {
        let build = |heads: Vec<usize>| {
            NetworkArchitecture::new(
                kind,
                self.history,
                heads,
                self.dense_width,
                self.dropout_lstm,
                self.dropout_dense,
            )
        };
        match kind {
            ControllerKind::Centralized => Ok(vec![build(action_sizes.to_vec())?]),
            ControllerKind::Distributed => action_sizes.iter().map(|&k| build(vec![k])).collect(),
        }
    }
}

impl Controller {
    pub fn new(kind: ControllerKind, nets: Vec<PolicyNet>, rate_norm: f64) -> Result<Self> {
        if !(rate_norm > 0.0) || !rate_norm.is_finite() {
            return Err(Error::InvalidConfig(format!("rate_norm must be > 0, got {rate_norm}")));
        }
        let action_sizes: Vec<usize> = match kind {
            ControllerKind::Centralized => {
                if nets.len() != 1 {
                    return Err(Error::InvalidArchitecture(
                        "a centralized controller has exactly one network".into(),
                    ));
                }
                nets[0].arch.heads.clone()
            }
            ControllerKind::Distributed => {
                if nets.is_empty() {
                    return Err(Error::InvalidArchitecture("no agent networks".into()));
                }
                nets.iter().map(|n| n.arch.heads[0]).collect()
            }
        };
        let history = nets[0].arch.history;
        for n in &nets {
            if n.arch.kind != kind {
                return Err(Error::InvalidArchitecture(format!(
                    "{} network in a {} controller",
                    n.arch.kind.as_str(),
                    kind.as_str()
                )));
            }
            if n.arch.history != history {
                return Err(Error::InvalidArchitecture("networks disagree on history length".into()));
            }
        }
        Ok(Self {
            kind,
            nets,
            action_sizes,
            rate_norm,
        })
    }

    /// Freshly initialized networks; distributed nets draw from the rng in
    /// agent order.
    pub fn random(
        kind: ControllerKind,
        action_sizes: &[usize],
        shape: NetShape,
        rate_norm: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let nets = shape
            .architectures(kind, action_sizes)?
            .into_iter()
            .map(|arch| {
                let params = init_params(&arch, rng)?;
                PolicyNet::new(arch, params)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(kind, nets, rate_norm)
    }

    pub fn kind(&self) -> ControllerKind {
        self.kind
    }

    pub fn nets(&self) -> &[PolicyNet] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [PolicyNet] {
        &mut self.nets
    }

    pub fn into_nets(self) -> Vec<PolicyNet> {
        self.nets
    }

    pub fn action_sizes(&self) -> &[usize] {
        &self.action_sizes
    }

    pub fn agent_count(&self) -> usize {
        self.action_sizes.len()
    }

    pub fn history_len(&self) -> usize {
        self.nets[0].arch.history
    }

    pub fn rate_norm(&self) -> f64 {
        self.rate_norm
    }

    /// Offsets of each network's block in the concatenated parameter vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nets.len() + 1);
        let mut acc = 0;
        out.push(0);
        for n in &self.nets {
            acc += n.params.len();
            out.push(acc);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.nets.iter().map(|n| n.params.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.nets
            .iter()
            .flat_map(|n| n.params.values().iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                values.len(),
                self.param_count()
            )));
        }
        let offsets = self.offsets();
        for (k, net) in self.nets.iter_mut().enumerate() {
            net.params
                .values_mut()
                .copy_from_slice(&values[offsets[k]..offsets[k + 1]]);
        }
        Ok(())
    }

    pub fn max_abs_param(&self) -> f64 {
        self.nets.iter().map(|n| n.params.max_abs()).fold(0.0, f64::max)
    }

    /// Encoded input of network `k` for a history window (oldest first; only
    /// the last `H` slots are used).
    pub fn input(&self, k: usize, window: &[HistorySlot]) -> Result<Vec<f64>> {
        let arch = &self.nets[k].arch;
        let norm = self.rate_norm;
        let start = window.len().saturating_sub(arch.history);
        let slots = &window[start..];
        match self.kind {
            ControllerKind::Centralized => encode_history(
                arch,
                slots.iter().map(|s| (s.actions.as_slice(), s.reward / norm)),
            ),
            ControllerKind::Distributed => encode_history(
                arch,
                slots
                    .iter()
                    .map(|s| (std::slice::from_ref(&s.actions[k]), s.reward / norm)),
            ),
        }
    }

    /// Every agent's action distribution (dropout off).
    pub fn distributions(&self, window: &[HistorySlot]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(self.agent_count());
        for k in 0..self.nets.len() {
            let input = self.input(k, window)?;
            out.extend(self.nets[k].distributions(&input)?);
        }
        Ok(out)
    }

    /// Sample one action per agent from its own stream. Returns actions,
    /// log-probabilities and the number of probability-floor hits.
    pub fn act(
        &self,
        window: &[HistorySlot],
        agent_rngs: &mut [impl RngCore],
    ) -> Result<(Vec<usize>, Vec<f64>, usize)> {
        if agent_rngs.len() != self.agent_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} rng streams for {} agents",
                agent_rngs.len(),
                self.agent_count()
            )));
        }
        let dists = self.distributions(window)?;
        let mut actions = Vec::with_capacity(dists.len());
        let mut log_probs = Vec::with_capacity(dists.len());
        let mut clamps = 0;
        for (d, rng) in dists.iter().zip(agent_rngs.iter_mut()) {
            let a = sample_action(d, rng);
            let (lp, hit) = log_prob_clamped(d, a);
            clamps += hit as usize;
            actions.push(a);
            log_probs.push(lp);
        }
        Ok((actions, log_probs, clamps))
    }

    /// Most likely action per agent (lowest index on ties).
    pub fn greedy(&self, window: &[HistorySlot]) -> Result<Vec<usize>> {
        Ok(self
            .distributions(window)?
            .iter()
            .map(|d| {
                d.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
                    .0
            })
            .collect())
    }

    /// Accumulate `weight * grad log pi(actions | window)` of network `k`
    /// into `grad` (that network's own block).
    pub fn accumulate_net(
        &self,
        k: usize,
        window: &[HistorySlot],
        actions: &[usize],
        weight: f64,
        dropout_rng: Option<&mut dyn RngCore>,
        grad: &mut [f64],
    ) -> Result<()> {
        let net = &self.nets[k];
        let input = self.input(k, window)?;
        let cache = match dropout_rng {
            Some(rng) => net.forward(&input, Dropout::Sample(rng))?,
            None => net.forward(&input, Dropout::Off)?,
        };
        match self.kind {
            ControllerKind::Centralized => net.backward(&cache, actions, weight, grad),
            ControllerKind::Distributed => net.backward(&cache, &actions[k..k + 1], weight, grad),
        }
    }

    /// Accumulate the gradient of the joint log-probability of one slot into
    /// the concatenated gradient vector.
    pub fn accumulate(
        &self,
        window: &[HistorySlot],
        actions: &[usize],
        weight: f64,
        dropout_rngs: Option<&mut [rand_chacha::ChaCha8Rng]>,
        grad: &mut [f64],
    ) -> Result<()> {
        let offsets = self.offsets();
        let mut rngs = dropout_rngs;
        for k in 0..self.nets.len() {
            let rng: Option<&mut dyn RngCore> = match rngs.as_deref_mut() {
                Some(r) => Some(&mut r[k]),
                None => None,
            };
            self.accumulate_net(k, window, actions, weight, rng, &mut grad[offsets[k]..offsets[k + 1]])?;
        }
        Ok(())
    }

    /// Sum of every agent's log-probability of `actions` given `window`.
    pub fn joint_log_prob(&self, window: &[HistorySlot], actions: &[usize]) -> Result<f64> {
        let dists = self.distributions(window)?;
        let mut total = 0.0;
        for (d, &a) in dists.iter().zip(actions) {
            total += crate::policy::log_prob(d, a)?;
        }
        Ok(total)
    }
}
