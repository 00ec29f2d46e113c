use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rislab::environment::{
    generate_trajectories, ingest_dataset, read_scenario, render_scenario, Environment, EpisodeRecord, Game,
    Mobility, OccupancyGrid, Scenario,
};
use rislab::oracle::{
    complexity_bench, controller_policy, enumerate_exact_j, fit_exponent, greedy_sequence, nash_check,
    optimal_policy, policy_rmse, BenchPoint, ToyGame, ToyGameSpec,
};
use rislab::policy::{read_controller, ControllerCheckpoint};
use rislab::risk::population_variance;
use rislab::trainer::{curve_csv, evaluate, stream_rng, train, Controller, HistorySlot, RolloutMode, TrainConfig};

use crate::config::{Experiment, Profile};
use crate::error::{CliError, Result};
use crate::output::{csv, gnuplot, OutputDir};

/// Stream of the obstacle-layout draws (one per count and layout).
const OBSTACLE_STREAM: u64 = 400;

fn base_grid(x: &Experiment) -> Result<OccupancyGrid> {
    match &x.scenario {
        Some(p) => Ok(read_scenario(p)?),
        None if x.profile == Profile::Paper => Ok(OccupancyGrid::office_large()),
        None => Ok(OccupancyGrid::office()),
    }
}

fn mobility(x: &Experiment, grid: &OccupancyGrid) -> Result<Mobility> {
    match &x.dataset {
        Some(p) => {
            let data = ingest_dataset(p, grid)?;
            if data.clamped + data.relocated > 0 {
                eprintln!(
                    "dataset {}: {} points clamped to the grid, {} moved off obstacles",
                    p.display(),
                    data.clamped,
                    data.relocated
                );
            }
            Ok(Mobility::Replay(data.trajectories))
        }
        None => Ok(Mobility::RandomWalk),
    }
}

fn environment(x: &Experiment, grid: OccupancyGrid, mobility: Mobility) -> Result<Environment> {
    let scenario = Scenario::new(grid, x.env.clone(), mobility)?;
    Ok(Environment::new(scenario, &mut ChaCha8Rng::seed_from_u64(x.seed)))
}

fn toy_spec(x: &Experiment, horizon: usize) -> Result<Option<ToyGameSpec>> {
    match &x.toy {
        Some(t) => Ok(Some(ToyGameSpec::frozen(t.action_sizes.clone(), horizon, t.rewards.clone())?)),
        None => Ok(None),
    }
}

fn game(x: &Experiment, horizon: usize) -> Result<Box<dyn Game>> {
    if let Some(spec) = toy_spec(x, horizon)? {
        return Ok(Box::new(ToyGame::new(spec)?));
    }
    let grid = base_grid(x)?;
    let m = mobility(x, &grid)?;
    Ok(Box::new(environment(x, grid, m)?))
}

fn returns(records: &[EpisodeRecord]) -> Vec<f64> {
    records.iter().map(|r| r.episode_return()).collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

// ------------------------------------------------------------------ generate

pub fn generate(x: &Experiment) -> Result<PathBuf> {
    let grid = base_grid(x)?;
    let (n, len) = x.generate;
    let mut rng = stream_rng(x.seed, 0);
    let table = generate_trajectories(&grid, n, len, &mut rng)?;
    let mut out = OutputDir::new(&x.out, "generate", &x.config_hash(), x.seed)?;
    out.write("trajectories.csv", &table.to_csv()?)?;
    out.write("scenario.txt", render_scenario(&grid).as_bytes())?;
    eprintln!("generated {n} trajectories of {len} slots");
    out.finish()
}

// ------------------------------------------------------------------ train

fn run_dir(x: &Experiment, mu: f64, horizon: usize) -> PathBuf {
    if x.sweep_mu.len() * x.sweep_horizon.len() == 1 {
        x.out.clone()
    } else {
        x.out.join(format!("mu{mu}_T{horizon}"))
    }
}

fn eval_mode(x: &Experiment) -> RolloutMode {
    if x.eval.greedy {
        RolloutMode::Greedy
    } else {
        RolloutMode::Sample
    }
}

pub fn train_all(x: &Experiment) -> Result<PathBuf> {
    let hash = x.config_hash();
    let mut sweep_rows = Vec::new();
    for &horizon in &x.sweep_horizon {
        for &mu in &x.sweep_mu {
            let config = TrainConfig {
                mu,
                horizon,
                ..x.train.clone()
            };
            let dir = run_dir(x, mu, horizon);
            let (m, v) = train_one(x, &config, &dir, &hash)?;
            sweep_rows.push(format!("{mu:?},{horizon},{m:?},{v:?}"));
        }
    }
    let mut out = OutputDir::new(&x.out, "train", &hash, x.seed)?;
    out.write(
        "sweep.csv",
        csv("mu,horizon,eval_mean_return,eval_return_variance", sweep_rows).as_bytes(),
    )?;
    out.finish()
}

fn train_one(x: &Experiment, config: &TrainConfig, dir: &Path, hash: &str) -> Result<(f64, f64)> {
    let mut g = game(x, config.horizon)?;
    eprintln!(
        "training {} controller, mu {}, T {}, {} updates",
        config.mode.as_str(),
        config.mu,
        config.horizon,
        config.max_updates
    );
    let outcome = train(config, g.as_mut(), None)?;
    let mut out = OutputDir::new(dir, "train", hash, x.seed)?;
    out.write("curve.csv", curve_csv(&outcome.curve).as_bytes())?;
    out.write(
        "curve.gp",
        gnuplot("curve.csv", "learning curve", "update", "value", &[(2, "J estimate"), (3, "mean rate")], "lines")
            .as_bytes(),
    )?;
    let ckpt = ControllerCheckpoint {
        mu: config.mu,
        horizon: config.horizon,
        seed: config.seed,
        nets: outcome.controller.nets().to_vec(),
    };
    out.write("controller.ckpt", &rislab::policy::encode_controller(&ckpt))?;

    let records = evaluate(
        &outcome.controller,
        g.as_mut(),
        config.horizon,
        x.eval.episodes,
        x.eval.seed,
        eval_mode(x),
        config.continuing,
    )?;
    let r = returns(&records);
    let (m, v) = (mean(&r), population_variance(&r));
    let summary = [
        ("mode", config.mode.as_str().to_string()),
        ("mu", format!("{:?}", config.mu)),
        ("horizon", config.horizon.to_string()),
        ("offline_updates", outcome.offline_updates.to_string()),
        ("updates", outcome.updates.to_string()),
        ("converged", outcome.converged.to_string()),
        ("clipped_updates", outcome.clipped.to_string()),
        ("eval_episodes", records.len().to_string()),
        ("eval_mean_return", format!("{m:?}")),
        ("eval_return_variance", format!("{v:?}")),
    ];
    out.write(
        "summary.csv",
        csv("key,value", summary.iter().map(|(k, v)| format!("{k},{v}"))).as_bytes(),
    )?;
    out.finish()?;
    eprintln!("  mean return {m:.4}, variance {v:.4} over {} episodes", records.len());
    Ok((m, v))
}

// ------------------------------------------------------------------ evaluate

pub fn load_controller(x: &Experiment, path: &Path) -> Result<(Controller, ControllerCheckpoint)> {
    let ckpt = read_controller(path).map_err(|e| match e {
        rislab::Error::Io(io) => CliError::io(path, io),
        other => CliError::config(format!("{}: {other}", path.display())),
    })?;
    let kind = ckpt.nets[0].arch.kind;
    let controller = Controller::new(kind, ckpt.nets.clone(), x.train.rate_norm)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok((controller, ckpt))
}

fn check_architecture(path: &Path, controller: &Controller, game: &dyn Game) -> Result<()> {
    let want = game.action_sizes();
    if controller.action_sizes() != want.as_slice() {
        return Err(CliError::config(format!(
            "{}: checkpoint controls codebooks {:?} but the configured game has {:?}",
            path.display(),
            controller.action_sizes(),
            want
        )));
    }
    Ok(())
}

pub fn evaluate_all(x: &Experiment, checkpoints: &[PathBuf]) -> Result<PathBuf> {
    let hash = x.config_hash();
    let mode = eval_mode(x);
    let mut series = Vec::new();
    let mut variance = Vec::new();
    let mut histogram = Vec::new();
    let mut obstacles = Vec::new();
    let mut layouts = Vec::new();
    for (ci, path) in checkpoints.iter().enumerate() {
        let (controller, ckpt) = load_controller(x, path)?;
        let t = ckpt.horizon;
        let mut g = game(x, t)?;
        check_architecture(path, &controller, g.as_ref())?;
        let records = evaluate(&controller, g.as_mut(), t, x.eval.episodes, x.eval.seed, mode, x.train.continuing)?;
        let r = returns(&records);
        for (e, ret) in r.iter().enumerate() {
            series.push(format!("{ci},{:?},{e},{ret:?},{:?}", ckpt.mu, ret / t as f64));
        }
        if !r.is_empty() {
            let v = population_variance(&r);
            variance.push(format!("{ci},{:?},{t},{},{:?},{v:?},{:?}", ckpt.mu, r.len(), mean(&r), v.sqrt()));
        }
        for (m, &k) in controller.action_sizes().iter().enumerate() {
            let mut counts = vec![0usize; k];
            for rec in &records {
                for s in rec.steps() {
                    counts[s.actions[m]] += 1;
                }
            }
            let total: usize = counts.iter().sum();
            if total == 0 {
                continue;
            }
            for (a, c) in counts.iter().enumerate() {
                histogram.push(format!("{ci},{m},{a},{c},{:?}", *c as f64 / total as f64));
            }
        }
        if x.toy.is_none() && !x.eval.obstacle_counts.is_empty() && x.eval.episodes > 0 {
            obstacle_sweep(x, ci, &controller, t, mode, &mut obstacles, &mut layouts)?;
        }
    }

    let mut out = OutputDir::new(&x.out, "evaluate", &hash, x.seed)?;
    out.write("returns.csv", csv("checkpoint,mu,episode,return,mean_rate", series).as_bytes())?;
    out.write(
        "variance_mu.csv",
        csv("checkpoint,mu,horizon,episodes,mean_return,return_variance,return_std", variance).as_bytes(),
    )?;
    out.write("policy_histogram.csv", csv("checkpoint,agent,action,count,frequency", histogram).as_bytes())?;
    out.write("obstacles.csv", csv("checkpoint,obstacles,mean_return,deviation_pct", obstacles).as_bytes())?;
    out.write(
        "obstacle_layouts.csv",
        csv("checkpoint,obstacles,layout,mean_return,deviation_pct", layouts).as_bytes(),
    )?;
    out.write(
        "returns.gp",
        gnuplot("returns.csv", "episode return", "checkpoint", "return", &[(4, "R_T")], "points").as_bytes(),
    )?;
    out.write(
        "variance_mu.gp",
        "set datafile separator ','\nset title 'return variance vs risk level'\nset xlabel 'mu'\nset ylabel 'variance'\nset grid\nplot 'variance_mu.csv' using 2:6 every ::1 with linespoints title 'variance'\n"
            .as_bytes(),
    )?;
    out.write(
        "policy_histogram.gp",
        "set datafile separator ','\nset title 'action frequencies'\nset xlabel 'action'\nset ylabel 'frequency'\nset style data histograms\nset style fill solid\nplot 'policy_histogram.csv' using 5 every ::1 title 'frequency'\n"
            .as_bytes(),
    )?;
    out.write(
        "obstacles.gp",
        "set datafile separator ','\nset title 'rate deviation vs obstacles'\nset xlabel 'obstacle blocks'\nset ylabel 'deviation (%)'\nset grid\nplot 'obstacles.csv' using 2:4 every ::1 with linespoints title 'deviation'\n"
            .as_bytes(),
    )?;
    out.finish()
}

/// Mean return on rooms with extra random obstacle blocks, relative to the
/// unobstructed room under the same evaluation seed. Obstacles move the
/// user, so these rollouts always use the random walk.
fn obstacle_sweep(
    x: &Experiment,
    ci: usize,
    controller: &Controller,
    horizon: usize,
    mode: RolloutMode,
    summary: &mut Vec<String>,
    layouts: &mut Vec<String>,
) -> Result<()> {
    let grid = base_grid(x)?;
    let mean_on = |g: OccupancyGrid| -> Result<f64> {
        let mut env = environment(x, g, Mobility::RandomWalk)?;
        let recs = evaluate(controller, &mut env, horizon, x.eval.episodes, x.eval.seed, mode, x.train.continuing)?;
        Ok(mean(&returns(&recs)))
    };
    let baseline = mean_on(grid.clone())?;
    for &count in &x.eval.obstacle_counts {
        let mut means = Vec::new();
        let mut devs = Vec::new();
        for l in 0..x.eval.obstacle_layouts {
            let mut rng = stream_rng(x.seed, OBSTACLE_STREAM + (count * x.eval.obstacle_layouts + l) as u64);
            let g = if count == 0 {
                grid.clone()
            } else {
                grid.with_random_blocks(count, x.eval.block_size, &mut rng)?
            };
            let m = if count == 0 { baseline } else { mean_on(g)? };
            let d = 100.0 * (m - baseline).abs() / baseline.abs().max(f64::MIN_POSITIVE);
            layouts.push(format!("{ci},{count},{l},{m:?},{d:?}"));
            means.push(m);
            devs.push(d);
        }
        summary.push(format!("{ci},{count},{:?},{:?}", mean(&means), mean(&devs)));
    }
    Ok(())
}

// ------------------------------------------------------------------ compare

pub fn compare(x: &Experiment, checkpoint: &Path) -> Result<PathBuf> {
    let (controller, ckpt) = load_controller(x, checkpoint)?;
    let spec = toy_spec(x, ckpt.horizon)?.ok_or_else(|| {
        CliError::config("compare needs an enumerable toy game: use --profile toy or a [toy] section")
    })?;
    let game = ToyGame::new(spec.clone())?;
    check_architecture(checkpoint, &controller, &game)?;
    let mu = ckpt.mu;
    let opt = optimal_policy(&spec, mu)?;
    let support = opt.support_histories(&spec)?;
    let optimal = |h: &[HistorySlot]| Ok(opt.distributions(h));
    let rmse = policy_rmse(&optimal, &controller_policy(&controller), &support)?;
    let j = enumerate_exact_j(&spec, &controller, mu)?;
    let greedy = greedy_sequence(&spec, &controller)?;
    let matches = opt.sequence.as_ref() == Some(&greedy);
    let nash = nash_check(&spec, &controller, mu)?;
    let gap = opt.j - j;
    let seq = |s: &[Vec<usize>]| {
        s.iter()
            .map(|a| a.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("-"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let rows = [
        ("mu", format!("{mu:?}")),
        ("horizon", ckpt.horizon.to_string()),
        ("policy_rmse_pct", format!("{rmse:?}")),
        ("optimal_j", format!("{:?}", opt.j)),
        ("policy_j", format!("{j:?}")),
        ("gap", format!("{gap:?}")),
        ("gap_pct", format!("{:?}", 100.0 * gap / opt.j.abs().max(f64::MIN_POSITIVE))),
        ("greedy_sequence", seq(&greedy)),
        ("optimal_sequence", opt.sequence.as_deref().map(seq).unwrap_or_default()),
        ("greedy_is_optimal", matches.to_string()),
        ("nash_max_improvement", format!("{:?}", nash.max_improvement)),
    ];
    let mut out = OutputDir::new(&x.out, "compare", &x.config_hash(), x.seed)?;
    out.write("compare.csv", csv("metric,value", rows.iter().map(|(k, v)| format!("{k},{v}"))).as_bytes())?;
    eprintln!("policy RMSE {rmse:.3}%, gap {gap:.4} ({j:.4} vs optimal {:.4})", opt.j);
    out.finish()
}

// ------------------------------------------------------------------ bench

pub fn bench(x: &Experiment) -> Result<PathBuf> {
    let b = &x.bench;
    let mut points = Vec::new();
    for &h in &b.history {
        for &t in &b.horizons {
            points.push(BenchPoint {
                kind: b.mode,
                history: h,
                agents: b.agents,
                codebook: b.codebook,
                horizon: t,
            });
        }
    }
    let rows = complexity_bench(&points, b.repeats, b.min_seconds)?;
    let table: Vec<String> = rows
        .iter()
        .map(|r| {
            let p = r.point;
            format!(
                "{},{},{},{},{},{:?},{}",
                p.kind.as_str(),
                p.history,
                p.agents,
                p.codebook,
                p.horizon,
                r.seconds,
                r.macs
            )
        })
        .collect();
    let mut fits = Vec::new();
    if b.horizons.len() >= 2 {
        for &h in &b.history {
            let sel: Vec<_> = rows.iter().filter(|r| r.point.history == h).collect();
            let xs: Vec<f64> = sel.iter().map(|r| r.point.horizon as f64).collect();
            let ys: Vec<f64> = sel.iter().map(|r| r.seconds).collect();
            fits.push(format!("horizon,history={h},{:?}", fit_exponent(&xs, &ys)?));
        }
    }
    if b.history.len() >= 2 {
        for &t in &b.horizons {
            let sel: Vec<_> = rows.iter().filter(|r| r.point.horizon == t).collect();
            let xs: Vec<f64> = sel.iter().map(|r| r.point.history as f64).collect();
            let ys: Vec<f64> = sel.iter().map(|r| r.seconds).collect();
            fits.push(format!("history,horizon={t},{:?}", fit_exponent(&xs, &ys)?));
        }
    }
    for f in &fits {
        eprintln!("exponent {f}");
    }
    let mut out = OutputDir::new(&x.out, "bench", &x.config_hash(), x.seed)?;
    out.write("bench.csv", csv("mode,history,agents,codebook,horizon,seconds,macs", table).as_bytes())?;
    out.write("bench_fit.csv", csv("variable,fixed,exponent", fits).as_bytes())?;
    out.write(
        "bench.gp",
        "set datafile separator ','\nset logscale xy\nset title 'decision cost'\nset xlabel 'T'\nset ylabel 'seconds per episode'\nset grid\nplot 'bench.csv' using 5:6 every ::1 with linespoints title 'seconds'\n"
            .as_bytes(),
    )?;
    out.finish()
}
