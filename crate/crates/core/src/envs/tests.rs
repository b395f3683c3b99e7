use super::*;
use crate::adversary::AttackConfig;
use crate::lnn::{Mode, SortNetConfig, SortNetPolicy};
use crate::scorer::LinearScorer;

fn run_actions(env: &mut dyn Env, seed: u64, actions: &[usize]) -> Vec<Vec<f64>> {
    let mut out = vec![env.reset(seed)];
    for &a in actions {
        let step = env.step(a).unwrap();
        out.push(step.obs.clone());
        if step.done() {
            break;
        }
    }
    out
}

#[test]
fn cartpole_two_euler_steps_from_rest() {
    // Independent transcription of the Euler update, evaluated by hand.
    let g = 9.8;
    let (mc, mp, l, f, tau) = (1.0, 0.1, 0.5, 10.0, 0.02);
    let m = mc + mp;
    let acc = |th: f64, thd: f64, force: f64| {
        let temp = (force + mp * l * thd * thd * th.sin()) / m;
        let tha = (g * th.sin() - th.cos() * temp) / (l * (4.0 / 3.0 - mp * th.cos() * th.cos() / m));
        (temp - mp * l * tha * th.cos() / m, tha)
    };
    let mut s = [0.0f64; 4];
    let mut env = CartPole::new();
    env.reset_to(s);
    for (i, force) in [f, -f].into_iter().enumerate() {
        let (xa, tha) = acc(s[2], s[3], force);
        s = [s[0] + tau * s[1], s[1] + tau * xa, s[2] + tau * s[3], s[3] + tau * tha];
        let step = env.step(if force > 0.0 { 1 } else { 0 }).unwrap();
        assert!(!step.done(), "done at step {i}");
        for (a, b) in step.obs.iter().zip(&s) {
            assert!((a - b).abs() < 1e-15, "{:?} vs {s:?}", step.obs);
        }
    }
    // First push: theta_acc = -(10/1.1) / (0.5 (4/3 - 0.1/1.1)) ≈ -14.634.
    let (_, tha) = acc(0.0, 0.0, f);
    assert!((tha + 14.634146).abs() < 1e-5);
    assert!(s[2].abs() < cartpole::THETA_THRESHOLD);
}

#[test]
fn cartpole_terminates_on_angle() {
    let (_, _, done) = cartpole_step([0.0, 0.0, 0.2095, 1.0], 1).unwrap();
    assert!(done);
    let (_, _, done) = cartpole_step([2.39, 1.0, 0.0, 0.0], 1).unwrap();
    assert!(done);
}

#[test]
fn mountaincar_goal_is_terminal() {
    let (s, r, done) = mountaincar_step([0.5, 0.01], 1).unwrap();
    assert!(s[0] >= mountaincar::GOAL_POSITION && done);
    assert_eq!(r, -1.0);
    let (_, _, done) = mountaincar_step([-0.5, 0.0], 2).unwrap();
    assert!(!done);
    // Left wall stops the car.
    let (s, _, _) = mountaincar_step([-1.2, -0.05], 0).unwrap();
    assert_eq!(s, [-1.2, 0.0]);
}

#[test]
fn acrobot_swing_up_terminal_and_reward() {
    // Both links pointing up.
    let (_, r, done) = acrobot_step([PI_F, 0.0, 0.0, 0.0], 1).unwrap();
    assert!(done);
    assert_eq!(r, 0.0);
    let (s, r, done) = acrobot_step([0.0; 4], 1).unwrap();
    assert!(!done && r == -1.0);
    assert!(s.iter().all(|v| v.abs() < 1e-12), "rest is an equilibrium: {s:?}");
}

const PI_F: f64 = std::f64::consts::PI;

#[test]
fn invalid_action_and_step_order_errors() {
    for kind in [EnvKind::CartPole, EnvKind::Acrobot, EnvKind::MountainCar] {
        let mut env = kind.make();
        assert!(matches!(env.step(0), Err(Error::Usage(_))));
        env.reset(3);
        assert!(matches!(env.step(env.num_actions()), Err(Error::Domain(_))));
    }
    let mut env = CartPole::new();
    env.reset_to([0.0, 0.0, 0.3, 0.0]);
    assert!(env.step(0).unwrap().terminated);
    assert!(matches!(env.step(0), Err(Error::Usage(_))));
}

#[test]
fn same_seed_same_actions_bit_identical() {
    for kind in [EnvKind::CartPole, EnvKind::Acrobot, EnvKind::MountainCar] {
        let actions: Vec<usize> = (0..300).map(|i| (i * 7 + i / 3) % kind.make().num_actions()).collect();
        let a = run_actions(kind.make().as_mut(), 42, &actions);
        let b = run_actions(kind.make().as_mut(), 42, &actions);
        let bits = |v: &Vec<Vec<f64>>| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b), "{kind}");
        let c = run_actions(kind.make().as_mut(), 43, &actions);
        assert_ne!(bits(&a), bits(&c), "{kind}");
    }
}

#[test]
fn step_caps_are_respected() {
    for (kind, action, cap) in [(EnvKind::Acrobot, 1, 500), (EnvKind::MountainCar, 1, 200)] {
        let mut env = kind.make();
        env.reset(0);
        let mut n = 0;
        loop {
            let s = env.step(action).unwrap();
            n += 1;
            if s.done() {
                assert!(s.truncated && !s.terminated);
                break;
            }
        }
        assert_eq!(n, cap, "{kind}");
    }
}

#[test]
fn env_names_round_trip() {
    for name in EnvKind::NAMES {
        assert_eq!(make_env(name).unwrap().name(), name);
    }
    let err = match make_env("lunarlander") {
        Err(e) => e.to_string(),
        Ok(_) => panic!("unknown name accepted"),
    };
    assert!(err.contains("cartpole") && err.contains("mountaincar"), "{err}");
}

#[test]
fn normalizer_statistics_and_affinity() {
    let mut n = ObsNormalizer::new(2);
    let xs: Vec<[f64; 2]> = (0..2000).map(|i| [(i % 10) as f64, 3.0 - (i % 4) as f64 * 0.5]).collect();
    for x in &xs {
        n.observe(x).unwrap();
    }
    let mean0 = xs.iter().map(|x| x[0]).sum::<f64>() / xs.len() as f64;
    let var0 = xs.iter().map(|x| (x[0] - mean0).powi(2)).sum::<f64>() / xs.len() as f64;
    assert!((n.mean()[0] - mean0).abs() < 1e-6);
    assert!((n.var()[0] - var0).abs() < 1e-3);
    n.freeze();
    let before = n.clone();
    n.observe(&[100.0, 100.0]).unwrap();
    assert_eq!(n, before);

    let (s1, s2, a) = ([1.5, -2.0], [-0.25, 4.0], 0.3);
    let mix: Vec<f64> = (0..2).map(|i| a * s1[i] + (1.0 - a) * s2[i]).collect();
    let t1 = n.transform(&s1).unwrap();
    let t2 = n.transform(&s2).unwrap();
    let tm = n.transform(&mix).unwrap();
    for i in 0..2 {
        assert!((tm[i] - (a * t1[i] + (1.0 - a) * t2[i])).abs() < 1e-12);
    }
    let expected = (1.5 - n.mean()[0]) / (n.var()[0] + 1e-8).sqrt();
    assert_eq!(t1[0], expected);
    assert!(n.transform(&[1.0]).is_err());
}

#[test]
fn normalizer_checkpoint_round_trip() {
    let mut n = ObsNormalizer::new(3);
    n.observe(&[1.0, 2.0, 3.0]).unwrap();
    n.observe(&[0.0, -2.0, 5.0]).unwrap();
    n.freeze();
    let mut ck = crate::numerics::Checkpoint::new();
    n.write_into(&mut ck).unwrap();
    let back = ObsNormalizer::read_from(&crate::numerics::Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
    assert_eq!(back.mean(), n.mean());
    assert_eq!(back.var(), n.var());
    assert!(back.is_frozen());
}

fn eval_policy(seed: u64) -> SortNetPolicy {
    let mut p = SortNetPolicy::new(SortNetConfig::new(4, 2, vec![16, 16]), seed).unwrap();
    p.set_mode(Mode::Eval);
    p
}

#[test]
fn rollout_without_adversary_matches_zero_budget() {
    let policy = eval_policy(1);
    let norm = ObsNormalizer::identity(4);
    let mut env = CartPole::new();
    let clean = rollout(&policy, &mut env, &norm, None, 11).unwrap();
    let zero = rollout(&policy, &mut env, &norm, Some(&AttackConfig::pgd(0.0)), 11).unwrap();
    assert_eq!(clean, zero);
    assert_eq!(clean.total_return, clean.steps.iter().map(|s| s.reward).sum::<f64>());
    assert!(clean.len() <= cartpole::MAX_STEPS);
}

#[test]
fn certified_trajectory_is_attack_invariant() {
    let policy = eval_policy(5);
    let norm = ObsNormalizer::identity(4);
    let mut env = CartPole::new();
    let clean = rollout(&policy, &mut env, &norm, None, 2).unwrap();
    let min_margin = clean.steps.iter().map(|s| s.margin).fold(f64::INFINITY, f64::min);
    assert!(min_margin > 0.0);
    let eps = 0.49 * min_margin;
    for cfg in [AttackConfig::pgd(eps), AttackConfig::ri_fgsm_multi(eps, 5)] {
        let attacked = rollout(&policy, &mut env, &norm, Some(&cfg), 2).unwrap();
        assert_eq!(attacked.actions(), clean.actions());
        assert_eq!(attacked.flip_count(), 0);
    }
}

#[test]
fn rollout_rejects_mismatched_shapes_and_train_mode() {
    let norm = ObsNormalizer::identity(4);
    let mut env = CartPole::new();
    let wrong = LinearScorer::new(2, 3, vec![0.0; 6], vec![0.0; 2]).unwrap();
    assert!(matches!(rollout(&wrong, &mut env, &norm, None, 0), Err(Error::Shape(_))));
    let train = SortNetPolicy::new(SortNetConfig::new(4, 2, vec![8]), 0).unwrap();
    assert!(rollout(&train, &mut env, &norm, None, 0).is_ok());
    let r = rollout(&train, &mut env, &norm, Some(&AttackConfig::pgd(0.1)), 0);
    assert!(matches!(r, Err(Error::Usage(_))));
}
