//! Wall-clock cost of the controllers' decision pass.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::policy::{ControllerKind, NetworkArchitecture};
use crate::trainer::{Controller, HistorySlot, NetShape};

/// One configuration: `agents` codebooks of `codebook` entries each, history
/// `H`, and an episode of `horizon` decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchPoint {
    pub kind: ControllerKind,
    pub history: usize,
    pub agents: usize,
    pub codebook: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub point: BenchPoint,
    /// Seconds to produce every decision of one episode (best of the repeats).
    pub seconds: f64,
    /// Multiply-accumulates for the same work.
    pub macs: u64,
}

/// Multiply-accumulates of one forward pass.
pub fn forward_macs(arch: &NetworkArchitecture) -> u64 {
    let h = arch.history as u64;
    let mut macs = 0;
    let mut n_in = arch.input_width() as u64;
    for n in arch.lstm_sizes() {
        let n = n as u64;
        macs += h * 4 * n * (n_in + n);
        n_in = n;
    }
    for d in arch.hidden_dense() {
        macs += n_in * d as u64;
        n_in = d as u64;
    }
    macs + arch.heads.iter().map(|&k| n_in * k as u64).sum::<u64>()
}

fn episode_decisions(controller: &Controller, horizon: usize) -> Result<f64> {
    let mut window: Vec<HistorySlot> = Vec::with_capacity(horizon);
    let mut checksum = 0.0;
    for t in 0..horizon {
        let d = controller.distributions(&window)?;
        checksum += d[0][0];
        window.push(HistorySlot {
            actions: controller.action_sizes().iter().map(|&k| t % k).collect(),
            reward: 1.0,
        });
    }
    Ok(checksum)
}

/// Time the decision pass of each point. Every repeat runs enough episodes to
/// fill at least `min_seconds`.
pub fn complexity_bench(points: &[BenchPoint], repeats: usize, min_seconds: f64) -> Result<Vec<BenchRow>> {
    let mut out = Vec::with_capacity(points.len());
    for &p in points {
        let sizes = vec![p.codebook; p.agents];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let controller = Controller::random(p.kind, &sizes, NetShape::new(p.history), 1.0, &mut rng)?;
        let macs = p.horizon as u64 * controller.nets().iter().map(|n| forward_macs(&n.arch)).sum::<u64>();
        let mut best = f64::INFINITY;
        let mut sink = 0.0;
        for _ in 0..repeats.max(1) {
            let start = Instant::now();
            let mut runs = 0u64;
            loop {
                sink += episode_decisions(&controller, p.horizon)?;
                runs += 1;
                let el = start.elapsed().as_secs_f64();
                if el >= min_seconds {
                    best = best.min(el / runs as f64);
                    break;
                }
            }
        }
        std::hint::black_box(sink);
        out.push(BenchRow {
            point: p,
            seconds: best,
            macs,
        });
    }
    Ok(out)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_exponent(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidConfig("need at least two matching points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidConfig("exponent fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("exponent fit needs distinct x values".into()));
    }
    Ok(sxy / sxx)
}
