use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::qnet::QNetwork;
use super::replay::{Experience, ReplayBuffer};
use crate::envs::{cartpole, evaluate_returns, rollout, EnvKind, ObsNormalizer};
use crate::error::{Error, Result};
use crate::numerics::{adamw_step, AdamWConfig, AdamWState, Checkpoint, Graph, Tensor};
use crate::rng::{derive_seed, stream};
use crate::scorer::{argmax, Scorer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub hidden: Vec<usize>,
    /// Environment steps; zero returns an untrained network.
    pub total_steps: usize,
    pub lr: f64,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub learning_starts: usize,
    pub train_freq: usize,
    pub target_sync: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of `total_steps` over which exploration decays linearly.
    pub eps_fraction: f64,
    pub huber_delta: f64,
    pub grad_clip: f64,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Observation statistics stop updating after this many steps;
    /// zero keeps them updating for the whole run.
    pub norm_freeze_after: usize,
    /// Greedy mean return that ends training early and that the final
    /// teacher must reach. `None` uses the environment default.
    pub target_return: Option<f64>,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            total_steps: 150_000,
            lr: 1e-3,
            gamma: 0.99,
            buffer_capacity: 100_000,
            batch_size: 64,
            learning_starts: 1_000,
            train_freq: 1,
            target_sync: 1_000,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_fraction: 0.1,
            huber_delta: 1.0,
            grad_clip: 10.0,
            eval_interval: 5_000,
            eval_episodes: 20,
            norm_freeze_after: 1_000,
            target_return: None,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("train_freq", self.train_freq),
            ("target_sync", self.target_sync),
            ("eval_interval", self.eval_interval),
            ("eval_episodes", self.eval_episodes),
            ("buffer_capacity", self.buffer_capacity),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("teacher {name} must be positive")));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("teacher lr must be positive, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.eps_end) || !(0.0..=1.0).contains(&self.eps_start) {
            return Err(Error::Config("exploration rates must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn epsilon_at(&self, step: usize) -> f64 {
        let span = (self.eps_fraction * self.total_steps as f64).max(1.0);
        let frac = step as f64 / span;
        if frac >= 1.0 {
            return self.eps_end;
        }
        self.eps_start + frac * (self.eps_end - self.eps_start)
    }
}

/// Greedy mean return a teacher must reach on each task.
pub fn default_target_return(env: EnvKind) -> f64 {
    match env {
        EnvKind::CartPole => 475.0,
        EnvKind::Acrobot => -100.0,
        EnvKind::MountainCar => -150.0,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherSource {
    #[default]
    Dqn,
    /// Pole angle plus half the angular velocity decides the push.
    Scripted,
}

/// A greedy expert acting on normalized observations.
#[derive(Debug, Clone)]
pub struct Teacher {
    pub env: EnvKind,
    pub source: TeacherSource,
    pub net: QNetwork,
    pub normalizer: ObsNormalizer,
    pub train_steps: usize,
    /// Greedy mean return measured when the teacher was selected.
    pub eval_return: Option<f64>,
}

/// One periodic greedy evaluation during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherLogRow {
    pub step: usize,
    pub episodes_done: usize,
    pub epsilon: f64,
    pub mean_loss: f64,
    pub eval_return: f64,
}

impl Teacher {
    pub fn is_trained(&self) -> bool {
        self.source == TeacherSource::Scripted || self.train_steps > 0
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut header = vec![
            env_index(self.env),
            match self.source {
                TeacherSource::Dqn => 0.0,
                TeacherSource::Scripted => 1.0,
            },
            self.train_steps as f64,
            self.eval_return.map_or(0.0, |_| 1.0),
            self.eval_return.unwrap_or(0.0),
        ];
        header.extend(self.net.dims().iter().map(|&d| d as f64));
        let mut ck = Checkpoint::new();
        ck.push("__teacher__", Tensor::vector(header)?)?;
        ck.extend_from("q.", self.net.params())?;
        self.normalizer.write_into(&mut ck)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let h = ck.get("__teacher__")?.data();
        if h.len() < 7 {
            return Err(Error::Format("teacher header is too short".into()));
        }
        let env = match h[0] as usize {
            0 => EnvKind::CartPole,
            1 => EnvKind::Acrobot,
            2 => EnvKind::MountainCar,
            other => return Err(Error::Format(format!("unknown environment index {other}"))),
        };
        let source = if h[1] == 0.0 { TeacherSource::Dqn } else { TeacherSource::Scripted };
        let dims: Vec<usize> = h[5..].iter().map(|&d| d as usize).collect();
        let mut net = QNetwork::new(dims[0], &dims[1..dims.len() - 1], dims[dims.len() - 1], 0)?;
        ck.restore_into("q.", net.params_mut())?;
        Ok(Self {
            env,
            source,
            net,
            normalizer: ObsNormalizer::read_from(ck)?,
            train_steps: h[2] as usize,
            eval_return: (h[3] != 0.0).then_some(h[4]),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Greedy clean returns on `episodes` episodes.
    pub fn evaluate(&self, episodes: usize, seed: u64) -> Result<Vec<f64>> {
        let mut env = self.env.make();
        evaluate_returns(&self.net, env.as_mut(), &self.normalizer, episodes, |i| {
            derive_seed(seed, "teacher-eval", i as u64)
        })
    }
}

fn env_index(env: EnvKind) -> f64 {
    match env {
        EnvKind::CartPole => 0.0,
        EnvKind::Acrobot => 1.0,
        EnvKind::MountainCar => 2.0,
    }
}

impl Scorer for Teacher {
    fn input_dim(&self) -> usize {
        self.net.input_dim()
    }
    fn num_actions(&self) -> usize {
        self.net.num_actions()
    }
    fn scores(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.net.scores(s)
    }
    fn record(&self, g: &mut Graph, x: crate::numerics::Var) -> Result<crate::numerics::Var> {
        self.net.record(g, x)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Double DQN with a target network, Huber TD loss and ε-greedy exploration.
///
/// Observation statistics accumulate during the first `norm_freeze_after`
/// steps. The returned teacher is the best greedy snapshot seen at
/// evaluation time; training stops early once a snapshot reaches the target
/// on two disjoint batches of evaluation episodes.
pub fn train_teacher(env_kind: EnvKind, config: &TeacherConfig, seed: u64) -> Result<(Teacher, Vec<TeacherLogRow>)> {
    train_teacher_with(env_kind, config, seed, |_| {})
}

/// [`train_teacher`] with a callback per evaluation row.
pub fn train_teacher_with(
    env_kind: EnvKind,
    config: &TeacherConfig,
    seed: u64,
    mut on_eval: impl FnMut(&TeacherLogRow),
) -> Result<(Teacher, Vec<TeacherLogRow>)> {
    config.validate()?;
    let mut env = env_kind.make();
    let (dim, n_actions) = (env.obs_dim(), env.num_actions());
    let mut online = QNetwork::new(dim, &config.hidden, n_actions, derive_seed(seed, "q-init", 0))?;
    let mut normalizer = ObsNormalizer::new(dim);
    if config.total_steps == 0 {
        normalizer.freeze();
        let teacher = Teacher {
            env: env_kind,
            source: TeacherSource::Dqn,
            net: online,
            normalizer,
            train_steps: 0,
            eval_return: None,
        };
        return Ok((teacher, Vec::new()));
    }
    let target_return = config.target_return.unwrap_or_else(|| default_target_return(env_kind));
    let mut target = online.clone();
    let mut opt = AdamWState::new(
        online.params(),
        AdamWConfig {
            lr: config.lr,
            ..AdamWConfig::default()
        },
    );
    let mut buffer = ReplayBuffer::new(config.buffer_capacity)?;
    let mut explore = stream(derive_seed(seed, "explore", 0));
    let mut sampler = stream(derive_seed(seed, "replay", 0));
    let mut episode = 0usize;
    let mut obs = env.reset(derive_seed(seed, "train-episode", 0));
    normalizer.observe(&obs)?;
    let mut best: Option<(f64, QNetwork, ObsNormalizer, usize)> = None;
    let mut log = Vec::new();
    let mut losses = Vec::new();
    let mut steps_taken = 0;
    for t in 0..config.total_steps {
        let eps = config.epsilon_at(t);
        let action = if explore.random::<f64>() < eps {
            explore.random_range(0..n_actions)
        } else {
            online.act(&normalizer.transform(&obs)?)?
        };
        if config.norm_freeze_after > 0 && t == config.norm_freeze_after {
            normalizer.freeze();
        }
        let step = env.step(action)?;
        normalizer.observe(&step.obs)?;
        let done = step.done();
        buffer.push(Experience {
            state: std::mem::take(&mut obs),
            action,
            reward: step.reward,
            next_state: step.obs.clone(),
            terminated: step.terminated,
        });
        if done {
            episode += 1;
            obs = env.reset(derive_seed(seed, "train-episode", episode as u64));
            normalizer.observe(&obs)?;
        } else {
            obs = step.obs;
        }
        if t >= config.learning_starts && t % config.train_freq == 0 {
            let batch = buffer.sample(config.batch_size, &mut sampler)?;
            losses.push(td_update(&mut online, &target, &normalizer, &batch, config, &mut opt)?);
        }
        if (t + 1) % config.target_sync == 0 {
            target.params_mut().copy_values_from(online.params())?;
        }
        steps_taken = t + 1;
        let last = t + 1 == config.total_steps;
        if (t + 1) % config.eval_interval == 0 || last {
            let mut frozen = normalizer.clone();
            frozen.freeze();
            let mut eval_env = env_kind.make();
            let mut returns = evaluate_returns(&online, eval_env.as_mut(), &frozen, config.eval_episodes, |i| {
                derive_seed(seed, "teacher-eval", i as u64)
            })?;
            if mean(&returns) >= target_return {
                // A second, disjoint batch guards against a lucky first one.
                returns.extend(evaluate_returns(&online, eval_env.as_mut(), &frozen, config.eval_episodes, |i| {
                    derive_seed(seed, "teacher-confirm", i as u64)
                })?);
            }
            let eval_return = mean(&returns);
            let row = TeacherLogRow {
                step: t + 1,
                episodes_done: episode,
                epsilon: eps,
                mean_loss: mean(&losses),
                eval_return,
            };
            losses.clear();
            on_eval(&row);
            log.push(row);
            if best.as_ref().is_none_or(|b| eval_return > b.0) {
                best = Some((eval_return, online.clone(), frozen, t + 1));
            }
            if eval_return >= target_return {
                break;
            }
        }
    }
    let (best_return, net, normalizer, _) = best.expect("at least one evaluation runs");
    if best_return < target_return {
        return Err(Error::TrainingFailed(format!(
            "{env_kind} teacher reached a greedy mean return of {best_return} after {steps_taken} steps; \
             the target is {target_return}"
        )));
    }
    let teacher = Teacher {
        env: env_kind,
        source: TeacherSource::Dqn,
        net,
        normalizer,
        train_steps: steps_taken,
        eval_return: Some(best_return),
    };
    Ok((teacher, log))
}

fn td_update(
    online: &mut QNetwork,
    target: &QNetwork,
    normalizer: &ObsNormalizer,
    batch: &[&Experience],
    config: &TeacherConfig,
    opt: &mut AdamWState,
) -> Result<f64> {
    let n_actions = online.num_actions();
    let mut states = Vec::new();
    let mut next = Vec::new();
    for e in batch {
        states.extend(normalizer.transform(&e.state)?);
        next.extend(normalizer.transform(&e.next_state)?);
    }
    let q_next_online = online.forward_batch(&next)?;
    let q_next_target = target.forward_batch(&next)?;
    let targets: Vec<f64> = batch
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let row = i * n_actions..(i + 1) * n_actions;
            let a = argmax(&q_next_online[row.clone()]);
            let bootstrap = if e.terminated { 0.0 } else { q_next_target[row][a] };
            e.reward + config.gamma * bootstrap
        })
        .collect();
    let actions: Vec<usize> = batch.iter().map(|e| e.action).collect();
    let mut g = Graph::new();
    let x = g.leaf(Tensor::matrix(batch.len(), online.input_dim(), states)?);
    let bound = online.params().bind(&mut g);
    let q = online.record_bound(&mut g, x, &bound)?;
    let qa = g.pick(q, &actions)?;
    let y = g.leaf(Tensor::vector(targets)?);
    let diff = g.sub(qa, y)?;
    let h = g.huber(diff, config.huber_delta)?;
    let loss = g.mean(h)?;
    let grads = g.backward(loss)?;
    online.params_mut().absorb(&grads, &bound)?;
    online.params_mut().clip_grad_norm(config.grad_clip);
    adamw_step(online.params_mut(), opt)?;
    Ok(g.value(loss).data()[0])
}

/// CartPole controller pushing toward `θ + θ̇/2`, expressed as an affine
/// scorer on normalized observations. Statistics come from its own
/// rollouts.
pub fn scripted_cartpole(episodes: usize, seed: u64) -> Result<Teacher> {
    let raw = QNetwork::affine(2, 4, vec![0.0, 0.0, -1.0, -0.5, 0.0, 0.0, 1.0, 0.5], vec![0.0, 0.0])?;
    let identity = ObsNormalizer::identity(4);
    let mut normalizer = ObsNormalizer::new(4);
    let mut env = EnvKind::CartPole.make();
    for i in 0..episodes.max(1) {
        let traj = rollout(&raw, env.as_mut(), &identity, None, derive_seed(seed, "scripted-stats", i as u64))?;
        for t in &traj.steps {
            normalizer.observe(&t.state)?;
        }
    }
    normalizer.freeze();
    let sd: Vec<f64> = normalizer.var().iter().map(|v| (v + 1e-8).sqrt()).collect();
    let m = normalizer.mean();
    let (wt, wd) = (sd[2], 0.5 * sd[3]);
    let c = m[2] + 0.5 * m[3];
    let net = QNetwork::affine(2, 4, vec![0.0, 0.0, -wt, -wd, 0.0, 0.0, wt, wd], vec![-c, c])?;
    let mut teacher = Teacher {
        env: EnvKind::CartPole,
        source: TeacherSource::Scripted,
        net,
        normalizer,
        train_steps: 0,
        eval_return: None,
    };
    let returns = teacher.evaluate(20, seed)?;
    teacher.eval_return = Some(mean(&returns));
    debug_assert!(returns.iter().all(|&r| r <= cartpole::MAX_STEPS as f64));
    Ok(teacher)
}
