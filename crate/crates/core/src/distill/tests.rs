use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::envs::{EnvKind, ObsNormalizer};
use crate::error::Error;
use crate::lnn::{Mode, SortNetConfig, SortNetPolicy};
use crate::numerics::{central_difference, max_relative_error, Graph, Tensor};
use crate::rng::stream;
use crate::teacher::ExpertDataset;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// Independent oracle: softmax cross-entropy written out with a max shift.
fn ce_oracle(z: &[f64], a: usize, mu: f64) -> f64 {
    let m = z.iter().map(|v| mu * v).fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|v| (mu * v - m).exp()).sum();
    m + s.ln() - mu * z[a]
}

fn rob_oracle(z: &[f64], theta: f64, y: usize) -> f64 {
    let top = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let other = z
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != y)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if z[y] < top || z[y] - other > theta {
        0.0
    } else {
        other - z[y]
    }
}

#[test]
fn ce_examples() {
    assert!(close(ce_loss(&[0.0, 0.0], 0, 1.0).unwrap(), std::f64::consts::LN_2, 1e-12));
    assert!(close(ce_loss(&[2.0, 0.0], 0, 1.0).unwrap(), 0.126928, 1e-6));
    let z = [5.0, -3.0, 40.0];
    assert!(close(ce_loss(&z, 1, 1e-12).unwrap(), 3f64.ln(), 1e-9));
    assert!(matches!(ce_loss(&z, 3, 1.0), Err(Error::Domain(_))));
}

#[test]
fn rob_examples() {
    assert_eq!(rob_loss(&[3.0, 1.0], 1.0, 0).unwrap(), 0.0);
    assert_eq!(rob_loss(&[1.0, 3.0], 1.0, 0).unwrap(), 0.0);
    assert!(close(rob_loss(&[3.0, 2.5], 1.0, 0).unwrap(), -0.5, 1e-12));
    assert!(matches!(rob_loss(&[3.0, 2.5], 1.0, 2), Err(Error::Domain(_))));
    assert!(matches!(rob_loss(&[3.0, 2.5], 0.0, 0), Err(Error::Domain(_))));
}

#[test]
fn lambda_schedule() {
    assert_eq!(lambda_at(0, 1.0, 0.1, 100), 1.0);
    assert_eq!(lambda_at(100, 1.0, 0.1, 100), 0.1);
    assert!(close(lambda_at(50, 1.0, 0.1, 100), 0.1f64.sqrt(), 1e-12));
    assert_eq!(lambda_at(37, 0.0, 0.0, 100), 0.0);
    let mut prev = f64::INFINITY;
    for t in 0..=1000 {
        let l = lambda_at(t, 2.0, 0.01, 1000);
        assert!(l <= prev);
        prev = l;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn ce_matches_oracle(z in prop::collection::vec(-50.0f64..50.0, 2..6), mu in 0.01f64..5.0, a in 0usize..6) {
        let a = a % z.len();
        let got = ce_loss(&z, a, mu).unwrap();
        prop_assert!((got - ce_oracle(&z, a, mu)).abs() <= 1e-9 * (1.0 + got.abs()));
        prop_assert!(got >= -1e-12);
    }

    #[test]
    fn rob_matches_oracle_and_range(z in prop::collection::vec(-5.0f64..5.0, 2..6), theta in 0.01f64..3.0, y in 0usize..6) {
        let y = y % z.len();
        let got = rob_loss(&z, theta, y).unwrap();
        prop_assert_eq!(got, rob_oracle(&z, theta, y));
        prop_assert!((-theta..=0.0).contains(&got));
    }
}

fn tiny_policy(seed: u64) -> SortNetPolicy {
    SortNetPolicy::new(SortNetConfig::new(3, 2, vec![6, 5]), seed).unwrap()
}

fn random_batch(n: usize, d: usize, a: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut rng = stream(seed);
    let s = (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect();
    let y = (0..n).map(|_| rng.random_range(0..a)).collect();
    (s, y)
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let (states, actions) = random_batch(8, 3, 2, 11);
    let mut policy = tiny_policy(3);
    let (lambda, theta) = (0.7, 0.4);
    for name in ["layer0.bias", "layer1.bias", "mu"] {
        let idx = policy.params().index_of(name).unwrap();
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(8, 3, states.clone()).unwrap());
        let bound = policy.params().bind(&mut g);
        let nodes =
            record_total_loss(&mut g, &mut policy, &bound, x, &actions, lambda, theta, 8.0, &mut stream(0)).unwrap();
        let analytic = g.backward(nodes.total).unwrap().get_or_zeros(bound.var(idx), policy.params().at(idx).len());
        let base = policy.params().at(idx).data().to_vec();
        let numeric = central_difference(
            |v| {
                let mut p = policy.clone();
                p.params_mut().get_mut(name).unwrap().data_mut().copy_from_slice(v);
                total_loss(&mut p, &states, &actions, lambda, theta, 8.0, &mut stream(0))
            },
            &base,
            1e-6,
        )
        .unwrap();
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "{name}: {err} {analytic:?} {numeric:?}");
    }
}

#[test]
fn total_loss_special_cases() {
    let (states, actions) = random_batch(6, 3, 2, 5);
    let mut policy = tiny_policy(1);
    assert!(matches!(
        total_loss(&mut policy, &[], &[], 1.0, 0.2, 8.0, &mut stream(0)),
        Err(Error::Usage(_))
    ));
    // θ below every margin and labels equal to the student's own decisions:
    // the hinge vanishes and only CE remains.
    let mut g = Graph::new();
    let x = g.leaf(Tensor::matrix(6, 3, states.clone()).unwrap());
    let bound = policy.params().bind(&mut g);
    let nodes = record_total_loss(&mut g, &mut policy, &bound, x, &actions, 1.0, 0.2, 8.0, &mut stream(0)).unwrap();
    let z = g.value(nodes.scores).data().to_vec();
    let own: Vec<usize> = z.chunks(2).map(crate::scorer::argmax).collect();
    let min_margin = z.chunks(2).map(|r| (r[0] - r[1]).abs()).fold(f64::INFINITY, f64::min);
    let theta = min_margin / 2.0;
    let mu = policy.mu();
    let expect: f64 = z.chunks(2).zip(&own).map(|(r, &a)| ce_oracle(r, a, mu)).sum::<f64>() / 6.0;
    let got = total_loss(&mut policy, &states, &own, 0.3, theta, 8.0, &mut stream(0)).unwrap();
    assert!(close(got, 0.3 * expect, 1e-12), "{got} {expect}");
    let pure_rob = total_loss(&mut policy, &states, &actions, 0.0, 0.2, 8.0, &mut stream(0)).unwrap();
    let rob: f64 = z.chunks(2).zip(&actions).map(|(r, &a)| rob_oracle(r, 0.2, a)).sum::<f64>() / 6.0;
    assert!(close(pure_rob, rob, 1e-12));
}

fn toy_dataset(n: usize, seed: u64) -> ExpertDataset {
    // Label is the sign of a fixed linear function of the state.
    let mut rng = stream(seed);
    let mut states = Vec::with_capacity(n * 4);
    let mut actions = Vec::with_capacity(n);
    for _ in 0..n {
        let s: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        actions.push(usize::from(s[2] + 0.5 * s[3] > 0.0));
        states.extend(s);
    }
    ExpertDataset {
        env: EnvKind::CartPole,
        num_actions: 2,
        obs_dim: 4,
        normalizer: ObsNormalizer::identity(4),
        states,
        actions,
    }
}

fn quick_config(iterations: usize) -> DistillConfig {
    DistillConfig {
        iterations,
        batch_size: 64,
        hidden_widths: vec![16, 16],
        ..DistillConfig::default()
    }
}

#[test]
fn first_step_descends() {
    let data = toy_dataset(64, 2);
    let mut descents = 0;
    for seed in 0..10 {
        let cfg = DistillConfig {
            lr: 1e-3,
            ..quick_config(1)
        };
        let (mut after, _) = distill_train(&data, &cfg, seed).unwrap();
        let mut init = SortNetPolicy::new(cfg.network(4, 2), crate::rng::derive_seed(seed, "student-init", 0)).unwrap();
        let l0 = total_loss(&mut init, &data.states, &data.actions, 1.0, 0.2, 8.0, &mut stream(0)).unwrap();
        after.set_mode(Mode::Train);
        let l1 = total_loss(&mut after, &data.states, &data.actions, 1.0, 0.2, 8.0, &mut stream(0)).unwrap();
        descents += usize::from(l1 < l0);
    }
    assert!(descents >= 9, "descended on {descents}/10 seeds");
}

#[test]
fn toy_distillation_learns_and_logs() {
    let data = toy_dataset(512, 4);
    let cfg = quick_config(300);
    let mut seen = 0;
    let (policy, log) = distill_train_with(&data, &cfg, 9, |row, p| {
        assert_eq!(row.iteration, seen);
        assert_eq!(p.mode(), Mode::Train);
        seen += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(policy.mode(), Mode::Eval);
    assert_eq!(log.rows.len(), 300);
    assert!(!log.stopped_early);
    let last = &log.rows[299];
    assert!(close(last.lambda, lambda_at(299, 1.0, 0.1, 300), 1e-15));
    let scores = policy.scores_batch(&data.states).unwrap();
    let agree = scores
        .chunks(2)
        .zip(&data.actions)
        .filter(|(z, &a)| crate::scorer::argmax(z) == a)
        .count();
    assert!(agree as f64 / 512.0 > 0.9, "agreement {agree}/512");

    let mut buf = Vec::new();
    log.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("iteration,ce,rob,lambda,p,margin_frac,agree_rate\n0,"));
    assert_eq!(text.lines().count(), 301);
}

#[test]
fn distillation_is_deterministic() {
    let data = toy_dataset(200, 1);
    let cfg = quick_config(40);
    let (a, la) = distill_train(&data, &cfg, 3).unwrap();
    let (b, lb) = distill_train(&data, &cfg, 3).unwrap();
    assert_eq!(a.to_checkpoint().unwrap().to_bytes(), b.to_checkpoint().unwrap().to_bytes());
    assert_eq!(la, lb);
    let (c, _) = distill_train(&data, &cfg, 4).unwrap();
    assert_ne!(a.to_checkpoint().unwrap().to_bytes(), c.to_checkpoint().unwrap().to_bytes());
}

#[test]
fn stochastic_mode_trains() {
    let data = toy_dataset(128, 6);
    let cfg = DistillConfig {
        forward_mode: crate::lnn::ForwardMode::Stochastic,
        ..quick_config(30)
    };
    let (_, log) = distill_train(&data, &cfg, 0).unwrap();
    assert!(log.rows[0].p == 8.0 && log.rows[29].p > log.rows[1].p);
    assert!(log.rows.iter().all(|r| r.ce.is_finite() && r.rob.is_finite()));
}

#[test]
fn early_stop_on_plateau() {
    let data = toy_dataset(256, 8);
    let cfg = DistillConfig {
        early_stop_patience: 20,
        ..quick_config(5000)
    };
    let (_, log) = distill_train(&data, &cfg, 1).unwrap();
    assert!(log.stopped_early);
    assert!(log.rows.len() < 5000);
}

#[test]
fn rejects_bad_inputs() {
    let empty = toy_dataset(0, 0);
    assert!(matches!(distill_train(&empty, &quick_config(5), 0), Err(Error::Usage(_))));
    let data = toy_dataset(16, 0);
    for cfg in [
        DistillConfig { eps: 0.0, ..quick_config(5) },
        DistillConfig { lambda_end: 2.0, ..quick_config(5) },
        DistillConfig { iterations: 0, ..quick_config(5) },
        DistillConfig { lr: -1.0, ..quick_config(5) },
    ] {
        assert!(matches!(distill_train(&data, &cfg, 0), Err(Error::Usage(_))), "{cfg:?}");
    }
}

#[test]
fn config_defaults_and_json() {
    let cfg = DistillConfig::default();
    assert_eq!(cfg.theta(), 0.2);
    assert_eq!(cfg.forward_mode, crate::lnn::ForwardMode::Exact);
    assert_eq!((cfg.batch_size, cfg.lr, cfg.weight_decay), (512, 0.02, 0.02));
    let parsed: DistillConfig = serde_json::from_str(r#"{"eps": 0.05, "hidden_widths": [8]}"#).unwrap();
    assert_eq!(parsed.theta(), 0.1);
    assert!(serde_json::from_str::<DistillConfig>(r#"{"epz": 1}"#).is_err());
}
