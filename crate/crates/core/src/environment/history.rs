use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Fixed-capacity window of one agent's `(action, normalized rate)` pairs.
/// Pushing into a full buffer evicts the oldest pair.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    capacity: usize,
    entries: VecDeque<(usize, f64)>,
}

impl HistoryBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("history length must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn push(&mut self, action: usize, rate: f64) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((action, rate));
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Oldest first.
    pub fn iter(&self) -> impl ExactSizeIterator<Item = &(usize, f64)> + '_ {
        self.entries.iter()
    }
}

/// One slot of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub actions: Vec<usize>,
    pub reward: f64,
    /// Log-probability of each agent's action under the behavior policy.
    pub log_probs: Vec<f64>,
}

/// A `T`-slot trajectory and its return.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeRecord {
    steps: Vec<EpisodeStep>,
    ret: f64,
}

impl EpisodeRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: EpisodeStep) {
        self.ret += step.reward;
        self.steps.push(step);
    }

    pub fn steps(&self) -> &[EpisodeStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Sum of the per-slot rewards.
    pub fn episode_return(&self) -> f64 {
        self.ret
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.reward)
    }
}
