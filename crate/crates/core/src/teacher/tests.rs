use super::*;
use crate::envs::{rollout, EnvKind};
use crate::error::Error;
use crate::numerics::{grad_check, Graph, Tensor};
use crate::rng::stream;
use crate::scorer::Scorer;
use rand::Rng;

fn quick_config(steps: usize) -> TeacherConfig {
    TeacherConfig {
        hidden: vec![16],
        total_steps: steps,
        learning_starts: 200,
        eval_interval: 500,
        eval_episodes: 2,
        target_sync: 250,
        target_return: Some(f64::NEG_INFINITY),
        ..TeacherConfig::default()
    }
}

#[test]
fn qnetwork_fast_path_matches_graph() {
    let net = QNetwork::new(4, &[8, 8], 2, 3).unwrap();
    let mut rng = stream(1);
    for _ in 0..20 {
        let s: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let fast = net.scores(&s).unwrap();
        let mut g = Graph::new();
        let x = g.vector(&s).unwrap();
        let z = net.record(&mut g, x).unwrap();
        assert_eq!(fast, g.value(z).data());
        assert!(fast.iter().all(|v| v.is_finite()));
    }
    assert!(matches!(net.scores(&[0.0; 3]), Err(Error::Shape(_))));
}

#[test]
fn qnetwork_input_gradient_check() {
    let net = QNetwork::new(3, &[6], 3, 9).unwrap();
    let x = Tensor::vector(vec![0.3, -0.7, 1.1]).unwrap();
    let err = grad_check(
        |g, x| {
            let z = net.record(g, x)?;
            g.log_sum_exp(z)
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn replay_ring_and_sampling() {
    let mut buf = ReplayBuffer::new(3).unwrap();
    for i in 0..5 {
        buf.push(Experience {
            state: vec![i as f64],
            action: 0,
            reward: 0.0,
            next_state: vec![0.0],
            terminated: false,
        });
    }
    assert_eq!(buf.len(), 3);
    let kept: Vec<f64> = (0..200)
        .flat_map(|_| buf.sample(1, &mut stream(0)).unwrap().into_iter().map(|e| e.state[0]))
        .collect();
    assert!(kept.iter().all(|v| *v >= 2.0));
    let a: Vec<f64> = buf.sample(16, &mut stream(5)).unwrap().iter().map(|e| e.state[0]).collect();
    let b: Vec<f64> = buf.sample(16, &mut stream(5)).unwrap().iter().map(|e| e.state[0]).collect();
    assert_eq!(a, b);
    assert!(ReplayBuffer::new(0).is_err());
    assert!(ReplayBuffer::new(2).unwrap().sample(1, &mut stream(0)).is_err());
}

#[test]
fn epsilon_schedule_is_linear_then_flat() {
    let c = TeacherConfig {
        total_steps: 1000,
        eps_fraction: 0.1,
        ..TeacherConfig::default()
    };
    assert_eq!(c.epsilon_at(0), 1.0);
    assert!((c.epsilon_at(50) - 0.525).abs() < 1e-12);
    assert_eq!(c.epsilon_at(100), 0.05);
    assert_eq!(c.epsilon_at(999), 0.05);
}

#[test]
fn scripted_expert_balances() {
    let t = scripted_cartpole(10, 4).unwrap();
    assert_eq!(t.eval_return, Some(500.0));
    assert!(t.is_trained());
}

#[test]
fn untrained_teacher_cannot_build_a_dataset() {
    let (t, log) = train_teacher(EnvKind::CartPole, &quick_config(0), 1).unwrap();
    assert!(log.is_empty() && !t.is_trained());
    assert!(matches!(build_dataset(&t, 10, 0), Err(Error::Usage(_))));
}

#[test]
fn unreachable_target_is_a_training_failure() {
    let cfg = TeacherConfig {
        target_return: Some(1e9),
        ..quick_config(600)
    };
    assert!(matches!(train_teacher(EnvKind::CartPole, &cfg, 1), Err(Error::TrainingFailed(_))));
}

#[test]
fn training_is_deterministic() {
    let cfg = quick_config(700);
    let (a, log_a) = train_teacher(EnvKind::CartPole, &cfg, 21).unwrap();
    let (b, log_b) = train_teacher(EnvKind::CartPole, &cfg, 21).unwrap();
    assert_eq!(a.to_checkpoint().unwrap().to_bytes(), b.to_checkpoint().unwrap().to_bytes());
    assert_eq!(log_a, log_b);
    assert!(a.normalizer.is_frozen());
    let (c, _) = train_teacher(EnvKind::CartPole, &cfg, 22).unwrap();
    assert_ne!(a.to_checkpoint().unwrap().to_bytes(), c.to_checkpoint().unwrap().to_bytes());
}

#[test]
fn teacher_checkpoint_round_trip() {
    let (t, _) = train_teacher(EnvKind::Acrobot, &quick_config(500), 2).unwrap();
    let back = Teacher::from_checkpoint(&crate::numerics::Checkpoint::from_bytes(&t.to_checkpoint().unwrap().to_bytes()).unwrap())
        .unwrap();
    assert_eq!(back.env, EnvKind::Acrobot);
    assert_eq!(back.net.dims(), t.net.dims());
    assert_eq!(back.eval_return, t.eval_return);
    let s = [0.1, 0.9, -0.2, 0.3, 0.5, -1.0];
    assert_eq!(back.scores(&s).unwrap(), t.scores(&s).unwrap());
}

#[test]
fn dataset_is_self_consistent_and_replayable() {
    let teacher = scripted_cartpole(5, 0).unwrap();
    let ds = build_dataset(&teacher, 1200, 8).unwrap();
    assert_eq!(ds.len(), 1200);
    assert!(ds.actions.iter().all(|&a| a < 2));
    for i in 0..ds.len() {
        assert_eq!(teacher.act(ds.state(i)).unwrap(), ds.actions[i]);
    }
    // The first episode reaches the cap, so it alone fills the first 500 rows.
    let mut env = EnvKind::CartPole.make();
    let traj = rollout(&teacher, env.as_mut(), &teacher.normalizer, None, dataset_episode_seed(8, 0)).unwrap();
    for (k, t) in traj.steps.iter().enumerate() {
        assert_eq!(ds.state(k), &t.state[..]);
    }
    let empty = build_dataset(&teacher, 0, 8).unwrap();
    assert!(empty.is_empty());
}

#[test]
fn dataset_file_round_trip_and_errors() {
    let teacher = scripted_cartpole(3, 1).unwrap();
    let ds = build_dataset(&teacher, 50, 2).unwrap();
    let bytes = ds.to_bytes();
    assert_eq!(&bytes[..4], b"SRTD");
    assert_eq!(ExpertDataset::from_bytes(&bytes).unwrap(), ds);
    assert!(ExpertDataset::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(ExpertDataset::from_bytes(&bad).is_err());
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        ExpertDataset::load(&dir.path().join("missing.srtd")),
        Err(Error::MissingArtifact(_))
    ));

    let mut csv = Vec::new();
    ds.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "kind,action,s0,s1,s2,s3");
    assert_eq!(lines[1], "meta,2,cartpole,,,");
    assert!(lines[2].starts_with("mean,,"));
    assert_eq!(lines.len(), 4 + 50);
    let first: Vec<f64> = lines[4].split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    assert_eq!(first, ds.state(0));
}
