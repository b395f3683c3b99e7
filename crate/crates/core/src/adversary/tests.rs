use proptest::prelude::*;

use super::*;
use crate::envs::{rollout, EnvKind, ObsNormalizer};
use crate::error::Error;
use crate::lnn::{Mode, SortNetConfig, SortNetPolicy};
use crate::numerics::central_difference;
use crate::rng::{stream, derive_seed};
use crate::scorer::{LinearScorer, Scorer};
use rand::Rng;

/// g(s) = [s, -s]
fn mirror() -> LinearScorer {
    LinearScorer::new(2, 1, vec![1.0, -1.0], vec![0.0, 0.0]).unwrap()
}

fn eval_policy(seed: u64) -> SortNetPolicy {
    let mut p = SortNetPolicy::new(SortNetConfig::new(4, 2, vec![16, 16]), seed).unwrap();
    p.set_mode(Mode::Eval);
    p
}

#[test]
fn zero_budget_is_identity() {
    let p = eval_policy(0);
    let s = [0.1, -0.2, 0.3, 0.05];
    for cfg in [AttackConfig::pgd(0.0), AttackConfig::ri_fgsm(0.0), AttackConfig::ri_fgsm_multi(0.0, 4)] {
        let out = attack(&p, &s, &cfg).unwrap();
        assert_eq!(out.perturbed, s.to_vec());
        assert!(!out.flipped);
    }
}

#[test]
fn mirror_scorer_small_budget_stops_at_boundary_of_box() {
    let cfg = AttackConfig {
        steps: 10,
        step_ratio: 0.1,
        ..AttackConfig::pgd(0.5)
    };
    let out = pgd_attack(&mirror(), &[1.0], &cfg).unwrap();
    assert!((out.perturbed[0] - 0.5).abs() < 1e-12, "{:?}", out.perturbed);
    assert!(!out.flipped);
    assert_eq!(out.clean_action, 0);
    assert!(out.loss_after > out.loss_before);
}

#[test]
fn mirror_scorer_large_budget_flips() {
    let cfg = AttackConfig {
        steps: 20,
        step_ratio: 0.1,
        ..AttackConfig::pgd(2.0)
    };
    let out = pgd_attack(&mirror(), &[1.0], &cfg).unwrap();
    assert!(out.perturbed[0] < 0.0);
    assert!(out.flipped && out.attacked_action == 1);
    assert!((out.perturbed[0] - 1.0).abs() <= 2.0);
}

#[test]
fn negative_budget_is_domain_error() {
    for cfg in [AttackConfig::pgd(-0.1), AttackConfig::ri_fgsm(-1.0)] {
        assert!(matches!(attack(&mirror(), &[1.0], &cfg), Err(Error::Domain(_))));
    }
}

#[test]
fn train_mode_policy_is_rejected() {
    let p = SortNetPolicy::new(SortNetConfig::new(4, 2, vec![8]), 0).unwrap();
    assert!(matches!(pgd_attack(&p, &[0.0; 4], &AttackConfig::pgd(0.1)), Err(Error::Usage(_))));
}

#[test]
fn input_gradient_matches_finite_differences() {
    let p = eval_policy(3);
    let mut rng = stream(8);
    for _ in 0..20 {
        let s: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target = rng.random_range(0..2);
        let (_, g) = ce_input_gradient(&p, &s, target).unwrap();
        let num = central_difference(
            |x| {
                let z = p.scores(x)?;
                Ok(crate::numerics::lse(&z) - z[target])
            },
            &s,
            1e-6,
        )
        .unwrap();
        for (a, b) in g.iter().zip(&num) {
            assert!((a - b).abs() < 1e-5 * b.abs().max(1.0), "{g:?} vs {num:?}");
        }
    }
}

#[test]
fn flip_flag_matches_reevaluation_and_is_deterministic() {
    let p = eval_policy(4);
    let mut rng = stream(12);
    for i in 0..50 {
        let s: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cfg = AttackConfig::ri_fgsm_multi(0.3, 3).with_seed(i);
        let a = attack(&p, &s, &cfg).unwrap();
        let b = attack(&p, &s, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.flipped, p.act(&s).unwrap() != p.act(&a.perturbed).unwrap());
        let pgd = pgd_attack(&p, &s, &AttackConfig::pgd(0.3)).unwrap();
        assert_eq!(pgd.flipped, p.act(&s).unwrap() != p.act(&pgd.perturbed).unwrap());
    }
}

#[test]
fn multi_with_one_restart_equals_single() {
    let p = eval_policy(6);
    let s = [0.3, 0.1, -0.4, 0.2];
    let single = ri_fgsm(&p, &s, &AttackConfig::ri_fgsm(0.2).with_seed(9)).unwrap();
    let multi = ri_fgsm(&p, &s, &AttackConfig::ri_fgsm_multi(0.2, 1).with_seed(9)).unwrap();
    assert_eq!(single, multi);
}

#[test]
fn certified_state_survives_many_restarts() {
    let p = eval_policy(7);
    let s = [0.2, -0.1, 0.05, 0.3];
    let m = p.margin(&s).unwrap();
    assert!(m.value > 0.0);
    let eps = m.value / 2.0;
    let out = ri_fgsm(&p, &s, &AttackConfig::ri_fgsm_multi(eps, 1000)).unwrap();
    assert!(!out.flipped);
    let pgd = pgd_attack(&p, &s, &AttackConfig { steps: 100, step_ratio: 0.04, ..AttackConfig::pgd(eps) }).unwrap();
    assert!(!pgd.flipped);
}

#[test]
fn family_names_parse() {
    for f in [AttackFamily::Pgd, AttackFamily::RiFgsm, AttackFamily::RiFgsmMulti] {
        assert_eq!(f.tag().parse::<AttackFamily>().unwrap(), f);
    }
    assert!("fgsm".parse::<AttackFamily>().is_err());
    let json = serde_json::to_string(&AttackConfig::ri_fgsm_multi(0.1, 3)).unwrap();
    assert!(json.contains("\"rifgsm_multi\""), "{json}");
}

#[test]
fn zero_budget_sweep_equals_clean_rollouts() {
    let p = eval_policy(2);
    let norm = ObsNormalizer::identity(4);
    let rows = sweep_epsilon(&p, EnvKind::CartPole, &norm, &[0.0], 6, &AttackConfig::pgd(0.0), 77).unwrap();
    let mut env = EnvKind::CartPole.make();
    let clean: Vec<f64> = (0..6)
        .map(|i| rollout(&p, env.as_mut(), &norm, None, episode_seed(77, i)).unwrap().total_return)
        .collect();
    assert_eq!(rows[0].returns, clean);
    assert_eq!(rows[0].mean_reward, clean.iter().sum::<f64>() / 6.0);
    assert_eq!(rows[0].flip_rate, 0.0);

    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("env,attack,eps,episodes,mean_reward,std_err,flip_rate,mean_margin\ncartpole,pgd,0,6,"));
}

#[test]
fn standard_error_shrinks_with_more_samples() {
    let mut rng = stream(1);
    let draw = |n: usize, rng: &mut crate::rng::Stream| (0..n).map(|_| rng.random::<f64>()).collect::<Vec<_>>();
    let (_, se1) = mean_and_se(&draw(20_000, &mut rng));
    let (_, se2) = mean_and_se(&draw(40_000, &mut rng));
    let ratio = se1 / se2;
    assert!((ratio - 2f64.sqrt()).abs() < 0.05, "{ratio}");
    assert_eq!(mean_and_se(&[3.0]), (3.0, 0.0));
}

#[test]
fn warm_started_flips_are_monotone() {
    let p = eval_policy(11);
    let mut rng = stream(derive_seed(4, "states", 0));
    let states: Vec<Vec<f64>> = (0..40).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 * 0.02).collect();
    let flips = warm_start_flips(&p, &states, &grid, &AttackConfig::pgd(0.0)).unwrap();
    for w in flips.windows(2) {
        assert!(w[0].iter().zip(&w[1]).all(|(before, after)| !before || *after));
    }
    assert!(flips[0].iter().all(|f| !f));
    assert!(warm_start_flips(&p, &states, &[0.1, 0.05], &AttackConfig::pgd(0.0)).is_err());
}

proptest! {
    #[test]
    fn projection_is_exact(
        center in prop::collection::vec(-1e3f64..1e3, 1..8),
        offsets in prop::collection::vec(-1e3f64..1e3, 8),
        eps in 0.0f64..10.0,
    ) {
        let mut x: Vec<f64> = center.iter().zip(&offsets).map(|(c, o)| c + o).collect();
        project(&center, &mut x, eps);
        for (v, c) in x.iter().zip(&center) {
            prop_assert!((v - c).abs() <= eps);
        }
    }

    #[test]
    fn attacks_stay_in_the_box(seed in 0u64..1000, eps in 0.0f64..0.5) {
        let p = eval_policy(seed % 5);
        let mut rng = stream(seed);
        let s: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        for cfg in [AttackConfig::pgd(eps), AttackConfig::ri_fgsm_multi(eps, 2)] {
            let out = attack(&p, &s, &cfg.with_seed(seed)).unwrap();
            for (v, c) in out.perturbed.iter().zip(&s) {
                prop_assert!((v - c).abs() <= eps);
            }
        }
    }
}
