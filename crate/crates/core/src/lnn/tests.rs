use rand::Rng;

use super::*;
use crate::numerics::{Graph, Tensor};
use crate::rng::stream;
use crate::scorer::{argmax, Margin, Scorer};

fn small_policy(seed: u64) -> SortNetPolicy {
    let mut p = SortNetPolicy::new(SortNetConfig::new(4, 3, vec![16, 12]), seed).unwrap();
    // Non-trivial running means so Eval-mode normalization is exercised.
    let mut rng = stream(seed + 100);
    let batch: Vec<f64> = (0..64 * 4).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut g = Graph::new();
    let x = g.leaf(Tensor::matrix(64, 4, batch).unwrap());
    let bound = p.params().bind(&mut g);
    p.forward_train(&mut g, x, &bound, 8.0, &mut rng).unwrap();
    p.set_mode(Mode::Eval);
    p
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn layer_hand_value() {
    let mut p = SortNetPolicy::new(SortNetConfig::new(2, 2, vec![1]), 0).unwrap();
    p.params_mut().get_mut("layer0.bias").unwrap().data_mut().copy_from_slice(&[0.5, 0.0]);
    let out = p.raw_layer_output(&[1.0, -2.0], 0).unwrap();
    assert!((out[0] - 1.715).abs() < 1e-12, "{out:?}");
    assert!(p.raw_layer_output(&[1.0], 0).is_err());
}

#[test]
fn zero_everything_gives_zero_scores() {
    let mut p = SortNetPolicy::with_init(SortNetConfig::new(3, 2, vec![5, 5]), 0, BiasInit::Zero).unwrap();
    p.set_mode(Mode::Eval);
    assert_eq!(p.raw_layer_output(&[0.0; 3], 0).unwrap(), vec![0.0; 5]);
    assert!(p.scores(&[0.0; 3]).unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn fast_path_is_bit_identical_to_graph() {
    let p = small_policy(3);
    let mut rng = stream(4);
    for _ in 0..50 {
        let s: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut g = Graph::new();
        let x = g.vector(&s).unwrap();
        let z = p.record(&mut g, x).unwrap();
        assert_eq!(g.value(z).data(), p.scores(&s).unwrap().as_slice());
    }
}

#[test]
fn per_unit_lipschitz_fuzz() {
    let p = small_policy(5);
    let mut rng = stream(6);
    for _ in 0..10_000 {
        let a: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
        let delta = linf(&a, &b);
        let ya = p.raw_layer_output(&a, 0).unwrap();
        let yb = p.raw_layer_output(&b, 0).unwrap();
        assert!(linf(&ya, &yb) <= delta + 1e-12);
    }
}

#[test]
fn global_lipschitz_fuzz() {
    let p = small_policy(7);
    let mut rng = stream(8);
    for _ in 0..100_000 {
        let a: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let za = p.scores(&a).unwrap();
        let zb = p.scores(&b).unwrap();
        assert!(linf(&za, &zb) <= linf(&a, &b) + 1e-9);
    }
}

#[test]
fn perturbations_inside_half_margin_keep_the_action() {
    let p = small_policy(9);
    let mut rng = stream(10);
    for _ in 0..200 {
        let s: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = p.margin(&s).unwrap();
        let r = 0.49 * m.value;
        for _ in 0..200 {
            let t: Vec<f64> = s.iter().map(|v| v + rng.random_range(-r..=r)).collect();
            assert_eq!(p.act(&t).unwrap(), m.best);
        }
    }
}

#[test]
fn margin_shift_invariance_under_output_bias() {
    let mut p = small_policy(11);
    let s = [0.3, -0.2, 1.0, 0.5];
    let before = p.margin(&s).unwrap();
    p.params_mut().get_mut("out.bias").unwrap().data_mut().iter_mut().for_each(|b| *b += 4.25);
    let after = p.margin(&s).unwrap();
    assert_eq!((before.best, before.runner_up), (after.best, after.runner_up));
    assert!((before.value - after.value).abs() < 1e-12);
    assert_eq!(p.act(&s).unwrap(), argmax(&p.scores(&s).unwrap()));
}

#[test]
fn eval_mode_is_deterministic_and_round_trip_preserves_means() {
    let mut p = small_policy(12);
    let s = [0.1, 0.2, -0.3, 0.4];
    assert_eq!(p.scores(&s).unwrap(), p.scores(&s).unwrap());
    let means = p.norm().running_means.clone();
    p.set_mode(Mode::Train);
    p.set_mode(Mode::Eval);
    p.set_mode(Mode::Train);
    assert_eq!(p.norm().running_means, means);
}

#[test]
fn running_mean_converges_to_constant_batch_mean() {
    let mut p = SortNetPolicy::new(SortNetConfig::new(2, 2, vec![3]), 1).unwrap();
    let batch = vec![0.5, -1.0, 1.5, 0.25, -0.75, 2.0];
    let mut rng = stream(0);
    let target = {
        let rows: Vec<Vec<f64>> = batch.chunks(2).map(|r| p.raw_layer_output(r, 0).unwrap()).collect();
        (0..3).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / 3.0).collect::<Vec<_>>()
    };
    for _ in 0..2000 {
        p.layer_forward(&batch, 3, 0, ForwardMode::Exact, 8.0, &mut rng).unwrap();
    }
    for (m, t) in p.norm().running_means[0].iter().zip(&target) {
        assert!((m - t).abs() < 1e-8, "{m} vs {t}");
    }
    assert_eq!(p.norm().last_batch_means[0], target);
    // Eval with the converged mean centres the same batch exactly as Train does.
    p.set_mode(Mode::Eval);
    let out = p.layer_forward(&batch, 3, 0, ForwardMode::Exact, 8.0, &mut rng).unwrap();
    let col_sum: f64 = (0..3).map(|r| out[r * 3]).sum();
    assert!(col_sum.abs() < 1e-7);
}

#[test]
fn checkpoint_round_trip_preserves_scores() {
    let p = small_policy(13);
    let ck = p.to_checkpoint().unwrap();
    assert_eq!(ck.entries.get_index(0).unwrap().0, "__config__");
    let q = SortNetPolicy::from_checkpoint(&crate::numerics::Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
    assert_eq!(q.mode(), Mode::Eval);
    let s = [0.9, -0.1, 0.0, 2.0];
    assert_eq!(p.scores(&s).unwrap(), q.scores(&s).unwrap());
    assert_eq!(q.config().hidden_widths, vec![16, 12]);
}

#[test]
fn stochastic_layer_mean_approaches_exact_layer() {
    let mut p = SortNetPolicy::new(SortNetConfig::new(3, 2, vec![2]), 21).unwrap();
    let x = [0.4, -0.7, 1.1];
    let exact = p.raw_layer_output(&x, 0).unwrap();
    p.set_mode(Mode::Eval);
    // zero running means: Eval output equals the raw stochastic output
    let mut rng = stream(22);
    let n = 40_000;
    let mut acc = [0.0; 2];
    for _ in 0..n {
        let y = p.layer_forward(&x, 1, 0, ForwardMode::Stochastic, 1e3, &mut rng).unwrap();
        acc[0] += y[0];
        acc[1] += y[1];
    }
    for k in 0..2 {
        assert!((acc[k] / n as f64 - exact[k]).abs() < 0.02, "{} vs {}", acc[k] / n as f64, exact[k]);
    }
}

#[test]
fn shape_errors() {
    let p = small_policy(1);
    assert!(p.scores(&[1.0, 2.0]).is_err());
    assert!(Margin::of(&[1.0]).is_err());
}
