use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rislab::policy::{read_controller, write_controller, ControllerCheckpoint, ControllerKind, PolicyNet};
use rislab::trainer::{Controller, NetShape};

fn rislab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rislab")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = rislab(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn read_csv(p: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn metrics(p: &Path) -> BTreeMap<String, String> {
    read_csv(p).into_iter().skip(1).map(|r| (r[0].clone(), r[1].clone())).collect()
}

const SMALL_DESK: &str = r#"
profile = "desk"
[train]
history = 4
max_updates = 12
minibatch = 8
episodes_per_update = 8
replay_capacity = 8
[evaluate]
episodes = 40
obstacle_counts = [0, 1]
obstacle_layouts = 2
"#;

#[test]
fn generate_writes_schema_and_stable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["generate", "--seed", "3", "--out", path(&a)]);
    ok(&["generate", "--seed", "3", "--out", path(&b)]);
    let rows = read_csv(&a.join("trajectories.csv"));
    assert_eq!(rows[0], ["traj_id", "t", "x", "y"]);
    assert_eq!(rows.len() - 1, 100 * 20);
    let ma = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert_eq!(ma, std::fs::read_to_string(b.join("manifest.txt")).unwrap());
    assert!(ma.lines().all(|l| l.contains("seed=3") && l.contains("config=")));
    assert!(ma.lines().any(|l| l.starts_with("scenario.txt ")));
}

#[test]
fn generate_trajectory_count_and_length_follow_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[generate]\ntrajectories = 16\nlength = 56\n");
    ok(&["generate", "-c", path(&cfg), "--out", path(&dir.path().join("o"))]);
    assert_eq!(read_csv(&dir.path().join("o/trajectories.csv")).len() - 1, 16 * 56);
}

#[test]
fn train_and_evaluate_are_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_DESK);
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        ok(&["train", "-c", path(&cfg), "--seed", "7", "--out", path(&out)]);
        let ckpt = out.join("controller.ckpt");
        ok(&["evaluate", "-c", path(&cfg), "--seed", "7", "--out", path(&out), "--checkpoint", path(&ckpt)]);
        files.push(out);
    }
    for name in [
        "curve.csv",
        "summary.csv",
        "sweep.csv",
        "controller.ckpt",
        "returns.csv",
        "variance_mu.csv",
        "policy_histogram.csv",
        "obstacles.csv",
        "obstacle_layouts.csv",
        "manifest.txt",
    ] {
        let a = std::fs::read(files[0].join(name)).unwrap();
        assert_eq!(a, std::fs::read(files[1].join(name)).unwrap(), "{name}");
    }
    let curve = read_csv(&files[0].join("curve.csv"));
    assert_eq!(curve[0].join(","), "update,J_estimate,mean_rate,rate_variance,grad_norm,clamps");
    assert_eq!(curve.len() - 1, 12);
    assert_eq!(read_csv(&files[0].join("returns.csv")).len() - 1, 40);
    let manifest = std::fs::read_to_string(files[0].join("manifest.txt")).unwrap();
    for f in ["curve.csv", "returns.csv", "obstacles.gp", "controller.ckpt"] {
        assert!(manifest.lines().any(|l| l.starts_with(&format!("{f} "))), "{f}");
    }
}

#[test]
fn both_controller_modes_train() {
    let dir = tempfile::tempdir().unwrap();
    for mode in ["centralized", "distributed"] {
        let cfg = write_config(dir.path(), &format!("{SMALL_DESK}\n[sweep]\nmu = [0.0]\n"));
        let text = std::fs::read_to_string(&cfg).unwrap().replace("[train]", &format!("[train]\nmode = \"{mode}\""));
        std::fs::write(&cfg, text).unwrap();
        let out = dir.path().join(mode);
        ok(&["train", "-c", path(&cfg), "--out", path(&out)]);
        assert_eq!(read_csv(&out.join("curve.csv")).len() - 1, 12);
        assert_eq!(metrics(&out.join("summary.csv"))["mode"], mode);
    }
}

#[test]
fn sweep_writes_one_run_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL_DESK}\n[sweep]\nmu = [0.0, 0.8]\nhorizon = [1, 2]\n"));
    let out = dir.path().join("o");
    ok(&["train", "-c", path(&cfg), "--out", path(&out)]);
    for run in ["mu0_T1", "mu0.8_T1", "mu0_T2", "mu0.8_T2"] {
        assert!(out.join(run).join("controller.ckpt").exists(), "{run}");
    }
    assert_eq!(read_csv(&out.join("sweep.csv")).len() - 1, 4);
}

#[test]
fn toy_training_reaches_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy");
    ok(&["train", "--profile", "toy", "--seed", "1", "--out", path(&out)]);
    let ckpt = out.join("controller.ckpt");
    ok(&["compare", "--profile", "toy", "--out", path(&out), "--checkpoint", path(&ckpt)]);
    let m = metrics(&out.join("compare.csv"));
    assert!(m["policy_rmse_pct"].parse::<f64>().unwrap() <= 5.0, "{m:?}");
    assert_eq!(m["greedy_is_optimal"], "true");
    assert_eq!(m["optimal_sequence"], "0-1 0-1");

    // A decoded and re-encoded checkpoint gives the same report.
    let copy = dir.path().join("copy.ckpt");
    write_controller(&read_controller(&ckpt).unwrap(), &copy).unwrap();
    let out2 = dir.path().join("toy2");
    ok(&["compare", "--profile", "toy", "--out", path(&out2), "--checkpoint", path(&copy)]);
    assert_eq!(
        std::fs::read(out.join("compare.csv")).unwrap(),
        std::fs::read(out2.join("compare.csv")).unwrap()
    );
}

fn uniform_checkpoint(dir: &Path, sizes: &[usize], horizon: usize) -> PathBuf {
    let nets = NetShape::new(4)
        .architectures(ControllerKind::Distributed, sizes)
        .unwrap()
        .into_iter()
        .map(|a| PolicyNet::zeros(a).unwrap())
        .collect();
    let p = dir.join("uniform.ckpt");
    let ckpt = ControllerCheckpoint {
        mu: 0.0,
        horizon,
        seed: 0,
        nets,
    };
    write_controller(&ckpt, &p).unwrap();
    p
}

#[test]
fn uniform_policy_is_fifty_percent_from_a_deterministic_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = uniform_checkpoint(dir.path(), &[2, 2], 2);
    let out = dir.path().join("o");
    ok(&["compare", "--profile", "toy", "--out", path(&out), "--checkpoint", path(&ckpt)]);
    let rmse: f64 = metrics(&out.join("compare.csv"))["policy_rmse_pct"].parse().unwrap();
    assert!((rmse - 50.0).abs() < 1e-9, "{rmse}");
}

#[test]
fn zero_episodes_give_header_only_files() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = uniform_checkpoint(dir.path(), &[2, 2], 2);
    let out = dir.path().join("o");
    let cfg = write_config(dir.path(), "profile = \"toy\"\n[evaluate]\nepisodes = 0\n");
    ok(&["evaluate", "-c", path(&cfg), "--out", path(&out), "--checkpoint", path(&ckpt)]);
    for f in ["returns.csv", "variance_mu.csv", "policy_histogram.csv", "obstacles.csv"] {
        let text = std::fs::read_to_string(out.join(f)).unwrap();
        assert_eq!(text.lines().count(), 1, "{f}: {text}");
    }
}

#[test]
fn frozen_room_with_deterministic_policy_has_zero_variance() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c = Controller::random(ControllerKind::Distributed, &[8, 11, 11], NetShape::new(4), 20.0, &mut rng).unwrap();
    let ckpt = dir.path().join("r.ckpt");
    write_controller(
        &ControllerCheckpoint {
            mu: 0.0,
            horizon: 3,
            seed: 0,
            nets: c.nets().to_vec(),
        },
        &ckpt,
    )
    .unwrap();
    let cfg = write_config(
        dir.path(),
        "[channel]\nfrozen = true\n[train]\nhistory = 4\n[evaluate]\nepisodes = 25\ngreedy = true\nobstacle_counts = []\n",
    );
    let out = dir.path().join("o");
    ok(&["evaluate", "-c", path(&cfg), "--out", path(&out), "--checkpoint", path(&ckpt)]);
    let rows = read_csv(&out.join("variance_mu.csv"));
    assert_eq!(rows[1][5], "0.0", "{rows:?}");
}

#[test]
fn obstacle_deviation_grows_with_obstacles() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = uniform_checkpoint(dir.path(), &[8, 11, 11], 2);
    let cfg = write_config(
        dir.path(),
        "[train]\nhistory = 4\n[evaluate]\nepisodes = 300\nobstacle_counts = [0, 1, 2, 3]\nobstacle_layouts = 4\n",
    );
    let out = dir.path().join("o");
    ok(&["evaluate", "-c", path(&cfg), "--out", path(&out), "--checkpoint", path(&ckpt)]);
    let dev: Vec<f64> = read_csv(&out.join("obstacles.csv"))[1..].iter().map(|r| r[3].parse().unwrap()).collect();
    assert_eq!(dev.len(), 4);
    assert_eq!(dev[0], 0.0);
    // Nondecreasing on average: the mean of the heavier half exceeds the lighter half.
    assert!(dev[2] + dev[3] > dev[0] + dev[1], "{dev:?}");
    assert!(dev[3] > dev[0], "{dev:?}");
}

#[test]
fn bench_writes_timings_and_fits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[bench]\nhistory = [4, 8]\nhorizons = [1, 2]\nrepeats = 1\nmin_seconds = 0.0\n");
    let out = dir.path().join("o");
    ok(&["bench", "-c", path(&cfg), "--out", path(&out)]);
    assert_eq!(read_csv(&out.join("bench.csv")).len() - 1, 4);
    assert_eq!(read_csv(&out.join("bench_fit.csv")).len() - 1, 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "seed = 1\n[train]\nlearnig_rate = 0.1\n");
    let out = rislab(&["train", "-c", path(&bad), "--out", path(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learnig_rate") && err.contains("line 3"), "{err}");

    let missing = dir.path().join("nope.ckpt");
    let out = rislab(&["evaluate", "--out", path(&dir.path().join("x")), "--checkpoint", path(&missing)]);
    assert_eq!(out.status.code(), Some(4));

    let toy = uniform_checkpoint(dir.path(), &[2, 2], 2);
    let out = rislab(&["evaluate", "--out", path(&dir.path().join("x")), "--checkpoint", path(&toy)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let out = rislab(&["compare", "--out", path(&dir.path().join("x")), "--checkpoint", path(&toy)]);
    assert_eq!(out.status.code(), Some(2));

    let diverge = write_config(
        dir.path(),
        "profile = \"toy\"\n[train]\nlearning_rate = 1000.0\nclip_norm = 0\ndivergence_limit = 1.0\nmax_updates = 50\n",
    );
    let out = rislab(&["train", "-c", path(&diverge), "--out", path(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
