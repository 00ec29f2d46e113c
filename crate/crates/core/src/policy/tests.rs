use super::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::{prop_assert, proptest};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_input(arch: &NetworkArchitecture, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let slots: Vec<(Vec<usize>, f64)> = (0..arch.history)
        .map(|_| {
            (
                arch.heads.iter().map(|&k| rng.random_range(0..k)).collect(),
                rng.random::<f64>(),
            )
        })
        .collect();
    encode_history(arch, slots.iter().map(|(a, r)| (a.as_slice(), *r))).unwrap()
}

/// Matrix-based reference forward pass, written against the block names
/// only.
fn reference_forward(net: &PolicyNet, input: &[f64]) -> Vec<Vec<f64>> {
    let arch = &net.arch;
    let mat = |name: &str| {
        let b = arch.layout().into_iter().find(|b| b.name == name).unwrap();
        DMatrix::from_row_slice(b.rows, b.cols, &net.params.values()[b.range()])
    };
    let f = arch.input_width();
    let mut seq: Vec<DVector<f64>> = (0..arch.history)
        .map(|t| DVector::from_column_slice(&input[t * f..(t + 1) * f]))
        .collect();
    for (l, &h) in arch.lstm_sizes().iter().enumerate() {
        let (w, u, b) = (
            mat(&format!("lstm{l}.w")),
            mat(&format!("lstm{l}.u")),
            mat(&format!("lstm{l}.b")).column(0).into_owned(),
        );
        let mut hs = DVector::zeros(h);
        let mut cs = DVector::zeros(h);
        let mut out = Vec::new();
        for x in &seq {
            let z = &w * x + &u * &hs + &b;
            let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
            let i = z.rows(0, h).map(sig);
            let fg = z.rows(h, h).map(sig);
            let g = z.rows(2 * h, h).map(f64::tanh);
            let o = z.rows(3 * h, h).map(sig);
            cs = fg.component_mul(&cs) + i.component_mul(&g);
            hs = o.component_mul(&cs.map(f64::tanh));
            out.push(hs.clone());
        }
        seq = out;
    }
    let mut x = seq.last().unwrap().clone();
    for l in 0..arch.hidden_dense().len() {
        let z = mat(&format!("dense{l}.w")) * &x + mat(&format!("dense{l}.b")).column(0);
        x = z.map(|v| v.max(0.0));
    }
    (0..arch.heads.len())
        .map(|m| {
            let z = mat(&format!("head{m}.w")) * &x + mat(&format!("head{m}.b")).column(0);
            let max = z.max();
            let e = z.map(|v| (v - max).exp());
            let s = e.sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect()
}

fn toy_archs() -> Vec<NetworkArchitecture> {
    vec![
        NetworkArchitecture::distributed(4, 3).unwrap(),
        NetworkArchitecture::centralized(4, &[2, 3, 2]).unwrap(),
        NetworkArchitecture::distributed(8, 5).unwrap().with_dense_width(6).unwrap(),
    ]
}

#[test]
fn init_is_deterministic() {
    let arch = NetworkArchitecture::centralized(8, &[4, 3, 3]).unwrap();
    let a = init_params(&arch, &mut rng(5)).unwrap();
    let b = init_params(&arch, &mut rng(5)).unwrap();
    assert_eq!(a.values(), b.values());
    let c = init_params(&arch, &mut rng(6)).unwrap();
    assert_ne!(a.values(), c.values());
}

#[test]
fn init_biases_and_bounds() {
    let arch = NetworkArchitecture::distributed(8, 5).unwrap();
    let p = init_params(&arch, &mut rng(1)).unwrap();
    for b in arch.layout() {
        let v = &p.values()[b.range()];
        if b.name == "lstm0.b" || b.name == "lstm1.b" {
            let h = b.rows / 4;
            for (j, x) in v.iter().enumerate() {
                let expected = if (h..2 * h).contains(&j) { 1.0 } else { 0.0 };
                assert_eq!(*x, expected, "{} {j}", b.name);
            }
        } else if b.name.ends_with(".b") {
            assert!(v.iter().all(|x| *x == 0.0));
        } else {
            let s = (6.0 / (b.rows + b.cols) as f64).sqrt();
            assert!(v.iter().all(|x| x.abs() <= s));
        }
    }
}

#[test]
fn distributed_parameter_counts() {
    // Worked by hand from the layer dimensions (H = 16, dense width 16):
    // K = 8:  64*(9+16+1) + 16*(16+4+1) + 16*(4+1) + 16*(16+1) + 8*(16+1)
    // K = 11: 64*(12+16+1) + 336 + 80 + 272 + 11*17
    assert_eq!(NetworkArchitecture::distributed(16, 8).unwrap().param_count(), 2488);
    assert_eq!(NetworkArchitecture::distributed(16, 11).unwrap().param_count(), 2731);
    // Centralized, heads [8, 11, 11]: F = 31.
    // 64*(31+17) + 32*(16+8+1) + 16*(8+4+1) + 16*5 + 2*16*17 + (8+11+11)*17
    assert_eq!(
        NetworkArchitecture::centralized(16, &[8, 11, 11]).unwrap().param_count(),
        3072 + 800 + 208 + 80 + 544 + 510
    );
}

#[test]
fn invalid_architectures() {
    assert!(NetworkArchitecture::distributed(16, 0).is_err());
    assert!(NetworkArchitecture::centralized(16, &[8, 0]).is_err());
    assert!(NetworkArchitecture::distributed(6, 3).is_err());
    assert!(NetworkArchitecture::centralized(16, &[]).is_err());
    assert!(NetworkArchitecture::distributed(4, 3).unwrap().with_dropout(1.0, 0.0).is_err());
    assert!(NetworkArchitecture::new(ControllerKind::Distributed, 4, vec![2, 2], 4, 0.0, 0.0).is_err());
}

#[test]
fn zero_params_give_uniform_heads() {
    let arch = NetworkArchitecture::centralized(4, &[2, 5, 3]).unwrap();
    let net = PolicyNet::zeros(arch.clone()).unwrap();
    let input = random_input(&arch, &mut rng(3));
    for (d, &k) in net.distributions(&input).unwrap().iter().zip(&arch.heads) {
        for p in d {
            assert!((p - 1.0 / k as f64).abs() < 1e-15);
        }
    }
}

#[test]
fn eval_forward_is_deterministic() {
    let arch = NetworkArchitecture::distributed(8, 4).unwrap().with_dropout(0.2, 0.4).unwrap();
    let net = PolicyNet::random(arch.clone(), &mut rng(2)).unwrap();
    let input = random_input(&arch, &mut rng(4));
    let a = net.forward(&input, Dropout::Off).unwrap();
    let b = net.forward(&input, Dropout::Off).unwrap();
    assert_eq!(a, b);
}

#[test]
fn forward_matches_reference_implementation() {
    let mut r = rng(10);
    for arch in toy_archs() {
        for _ in 0..5 {
            let mut net = PolicyNet::random(arch.clone(), &mut r).unwrap();
            // Larger biases exercise both rectifier branches.
            for v in net.params.values_mut() {
                *v += r.random_range(-0.3..0.3);
            }
            let input = random_input(&arch, &mut r);
            let got = net.distributions(&input).unwrap();
            let want = reference_forward(&net, &input);
            for (g, w) in got.iter().flatten().zip(want.iter().flatten()) {
                assert!((g - w).abs() < 1e-10, "{g} vs {w}");
            }
        }
    }
}

#[test]
fn input_shape_is_checked() {
    let arch = NetworkArchitecture::distributed(4, 3).unwrap();
    let net = PolicyNet::zeros(arch).unwrap();
    assert!(matches!(net.forward(&[0.0; 5], Dropout::Off), Err(Error::ShapeMismatch(_))));
}

#[test]
fn sampling_conventions() {
    let mut r = rng(1);
    for _ in 0..1000 {
        assert_eq!(sample_action(&[1.0, 0.0, 0.0], &mut r), 0);
    }
    assert_eq!(sample_index(&[0.3, 0.7], 0.3), 1);
    assert_eq!(sample_index(&[0.3, 0.7], 0.2999), 0);
    assert_eq!(sample_index(&[0.5, 0.5, 0.0], 0.9999999999999999), 1);
}

#[test]
fn uniform_sampling_frequencies() {
    let mut r = rng(8);
    let mut counts = [0usize; 4];
    let n = 100_000;
    for _ in 0..n {
        counts[sample_action(&[0.25; 4], &mut r)] += 1;
    }
    for c in counts {
        assert!((c as f64 / n as f64 - 0.25).abs() < 0.01);
    }
}

#[test]
fn log_prob_cases() {
    assert!((log_prob(&[0.125; 8], 5).unwrap() - (0.125f64).ln()).abs() < 1e-15);
    assert_eq!(log_prob(&[0.0, 1.0], 1).unwrap(), 0.0);
    assert!(matches!(log_prob(&[0.0, 1.0], 0), Err(Error::NumericalSupport { action: 0 })));
    let (lp, clamped) = log_prob_clamped(&[0.0, 1.0], 0);
    assert!(clamped);
    assert_eq!(lp, PROB_FLOOR.ln());
}

#[test]
fn joint_log_prob_factorizes() {
    // T = 2 slots, M = 3 heads: the log of the product of the six selected
    // probabilities equals the sum of the per-head logs.
    let arch = NetworkArchitecture::centralized(4, &[2, 3, 2]).unwrap();
    let mut r = rng(12);
    let net = PolicyNet::random(arch.clone(), &mut r).unwrap();
    let mut product = 1.0;
    let mut sum = 0.0;
    for _ in 0..2 {
        let input = random_input(&arch, &mut r);
        let dists = net.distributions(&input).unwrap();
        for d in &dists {
            let a = sample_action(d, &mut r);
            product *= d[a];
            sum += log_prob(d, a).unwrap();
        }
    }
    assert!((product.ln() - sum).abs() < 1e-12);
}

fn objective(net: &PolicyNet, input: &[f64], actions: &[usize], masks: &ForwardCache) -> f64 {
    let c = net.forward(input, Dropout::Reuse(masks)).unwrap();
    c.distributions()
        .iter()
        .zip(actions)
        .map(|(d, &a)| d[a].ln())
        .sum()
}

fn fd_check(arch: &NetworkArchitecture, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut net = PolicyNet::random(arch.clone(), &mut r).unwrap();
    // Move every parameter off its initial value so no rectifier input sits
    // exactly on the kink (zero biases behind a fully dropped layer would).
    for v in net.params.values_mut() {
        *v += r.random_range(-0.3..0.3);
    }
    let input = random_input(arch, &mut r);
    let cache = net.forward(&input, Dropout::Sample(&mut r)).unwrap();
    let actions: Vec<usize> = arch.heads.iter().map(|&k| r.random_range(0..k)).collect();
    let mut grad = vec![0.0; net.params.len()];
    net.backward(&cache, &actions, 1.0, &mut grad).unwrap();
    let mut worst = 0.0f64;
    let h = 1e-5;
    for i in 0..net.params.len() {
        let mut plus = net.clone();
        plus.params.values_mut()[i] += h;
        let mut minus = net.clone();
        minus.params.values_mut()[i] -= h;
        let fd = (objective(&plus, &input, &actions, &cache) - objective(&minus, &input, &actions, &cache))
            / (2.0 * h);
        let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn backward_matches_finite_differences() {
    for (k, arch) in toy_archs().into_iter().enumerate() {
        let arch = arch.with_dropout(0.2, 0.3).unwrap();
        let err = fd_check(&arch, 100 + k as u64);
        assert!(err < 1e-4, "{arch:?}: {err}");
    }
}

#[test]
fn backward_weight_zero_and_linearity() {
    let arch = NetworkArchitecture::centralized(4, &[2, 2]).unwrap();
    let mut r = rng(30);
    let net = PolicyNet::random(arch.clone(), &mut r).unwrap();
    let input = random_input(&arch, &mut r);
    let cache = net.forward(&input, Dropout::Off).unwrap();
    let mut g0 = vec![0.0; net.params.len()];
    net.backward(&cache, &[1, 0], 0.0, &mut g0).unwrap();
    assert!(g0.iter().all(|g| *g == 0.0));
    let mut g1 = vec![0.0; net.params.len()];
    let mut g2 = vec![0.0; net.params.len()];
    net.backward(&cache, &[1, 0], 0.7, &mut g1).unwrap();
    net.backward(&cache, &[1, 0], 1.4, &mut g2).unwrap();
    for (a, b) in g1.iter().zip(&g2) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn backward_rejects_stale_cache() {
    let arch = NetworkArchitecture::distributed(4, 2).unwrap();
    let mut net = PolicyNet::random(arch.clone(), &mut rng(1)).unwrap();
    let cache = net.forward(&vec![0.0; 4 * arch.input_width()], Dropout::Off).unwrap();
    net.params.values_mut()[0] += 1.0;
    let mut g = vec![0.0; net.params.len()];
    assert!(matches!(net.backward(&cache, &[0], 1.0, &mut g), Err(Error::CacheMismatch(_))));
}

#[test]
fn score_function_has_zero_mean_per_head() {
    let arch = NetworkArchitecture::centralized(4, &[3, 2, 4]).unwrap();
    let mut r = rng(44);
    let net = PolicyNet::random(arch.clone(), &mut r).unwrap();
    let input = random_input(&arch, &mut r);
    let cache = net.forward(&input, Dropout::Off).unwrap();
    for head in 0..arch.heads.len() {
        let mut total = vec![0.0; net.params.len()];
        for a in 0..arch.heads[head] {
            let mut actions = vec![None; arch.heads.len()];
            actions[head] = Some(a);
            let p = cache.distributions()[head][a];
            net.backward_heads(&cache, &actions, p, &mut total).unwrap();
        }
        assert!(total.iter().all(|g| g.abs() < 1e-8));
    }
}

#[test]
fn head_gradients_add_up() {
    let arch = NetworkArchitecture::centralized(4, &[3, 2]).unwrap();
    let mut r = rng(45);
    let net = PolicyNet::random(arch.clone(), &mut r).unwrap();
    let input = random_input(&arch, &mut r);
    let cache = net.forward(&input, Dropout::Off).unwrap();
    let n = net.params.len();
    let mut joint = vec![0.0; n];
    net.backward(&cache, &[2, 1], 1.0, &mut joint).unwrap();
    let mut split = vec![0.0; n];
    net.backward_heads(&cache, &[Some(2), None], 1.0, &mut split).unwrap();
    net.backward_heads(&cache, &[None, Some(1)], 1.0, &mut split).unwrap();
    for (a, b) in joint.iter().zip(&split) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn dropout_expectation_matches_eval() {
    let arch = NetworkArchitecture::distributed(8, 4).unwrap().with_dropout(0.2, 0.4).unwrap();
    let mut r = rng(71);
    let net = PolicyNet::random(arch.clone(), &mut r).unwrap();
    let input = random_input(&arch, &mut r);
    let eval = net.forward(&input, Dropout::Off).unwrap();
    let target = &eval.dense_pre[0];
    let mut mean = vec![0.0; target.len()];
    let n = 10_000;
    for _ in 0..n {
        let c = net.forward(&input, Dropout::Sample(&mut r)).unwrap();
        for (m, v) in mean.iter_mut().zip(&c.dense_pre[0]) {
            *m += v / n as f64;
        }
    }
    let scale = target.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut checked = 0;
    for (m, t) in mean.iter().zip(target) {
        if t.abs() > 0.25 * scale {
            checked += 1;
            assert!(((m - t) / t).abs() < 0.02, "{m} vs {t}");
        }
    }
    assert!(checked > 0);
}

#[test]
fn older_history_entries_are_ignored() {
    let arch = NetworkArchitecture::distributed(4, 3).unwrap();
    let recent: Vec<(Vec<usize>, f64)> = (0..4).map(|t| (vec![t % 3], 0.1 * t as f64)).collect();
    let mut long = vec![(vec![2usize], 0.9); 6];
    long.extend(recent.iter().cloned());
    let a = encode_history(&arch, recent.iter().map(|(x, r)| (x.as_slice(), *r))).unwrap();
    let b = encode_history(&arch, long.iter().map(|(x, r)| (x.as_slice(), *r))).unwrap();
    assert_eq!(a, b);
    let short = encode_history(&arch, recent[2..].iter().map(|(x, r)| (x.as_slice(), *r))).unwrap();
    assert!(short[..2 * arch.input_width()].iter().all(|v| *v == 0.0));
    assert_eq!(short[2 * arch.input_width()..], a[2 * arch.input_width()..]);
}

proptest! {
    #[test]
    fn softmax_sums_to_one(logits in proptest::collection::vec(-700.0f64..700.0, 1..12)) {
        let p = softmax(&logits);
        let s: f64 = p.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn heads_are_distributions(seed in 0u64..1000) {
        let arch = NetworkArchitecture::centralized(4, &[3, 2]).unwrap();
        let mut r = rng(seed);
        let mut net = PolicyNet::random(arch.clone(), &mut r).unwrap();
        for v in net.params.values_mut() {
            *v *= 5.0;
        }
        let input = random_input(&arch, &mut r);
        for d in net.distributions(&input).unwrap() {
            let s: f64 = d.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
