//! CartPole, Acrobot and MountainCar with the standard published
//! constants and termination rules.

use std::f64::consts::PI;

use rand::Rng;

use super::{Env, Step};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

fn check_action(action: usize, n: usize) -> Result<()> {
    if action >= n {
        return Err(Error::domain(format!("action {action} is invalid for {n} actions")));
    }
    Ok(())
}

/// Shared step bookkeeping: cap, done flag and reset requirement.
#[derive(Debug, Clone, Default)]
struct Episode {
    started: bool,
    done: bool,
    steps: usize,
}

impl Episode {
    fn begin(&mut self) {
        *self = Episode {
            started: true,
            done: false,
            steps: 0,
        };
    }

    fn check(&self) -> Result<()> {
        if !self.started {
            return Err(Error::usage("step called before reset"));
        }
        if self.done {
            return Err(Error::usage("step called after the episode ended"));
        }
        Ok(())
    }

    fn finish(&mut self, terminated: bool, cap: usize) -> (bool, bool) {
        self.steps += 1;
        let truncated = !terminated && self.steps >= cap;
        self.done = terminated || truncated;
        (terminated, truncated)
    }
}

pub mod cartpole {
    pub const GRAVITY: f64 = 9.8;
    pub const MASS_CART: f64 = 1.0;
    pub const MASS_POLE: f64 = 0.1;
    pub const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
    /// Half the pole length.
    pub const LENGTH: f64 = 0.5;
    pub const POLE_MASS_LENGTH: f64 = MASS_POLE * LENGTH;
    pub const FORCE_MAG: f64 = 10.0;
    pub const TAU: f64 = 0.02;
    pub const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
    pub const X_THRESHOLD: f64 = 2.4;
    pub const MAX_STEPS: usize = 500;
}

/// One explicit-Euler CartPole step on `[x, x_dot, theta, theta_dot]`.
pub fn cartpole_step(state: [f64; 4], action: usize) -> Result<([f64; 4], f64, bool)> {
    use cartpole::*;
    check_action(action, 2)?;
    let [x, x_dot, theta, theta_dot] = state;
    let force = if action == 1 { FORCE_MAG } else { -FORCE_MAG };
    let (sin, cos) = theta.sin_cos();
    let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
    let theta_acc = (GRAVITY * sin - cos * temp) / (LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS));
    let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
    let next = [
        x + TAU * x_dot,
        x_dot + TAU * x_acc,
        theta + TAU * theta_dot,
        theta_dot + TAU * theta_acc,
    ];
    let done = next[0].abs() > X_THRESHOLD || next[2].abs() > THETA_THRESHOLD;
    Ok((next, 1.0, done))
}

#[derive(Debug, Clone)]
pub struct CartPole {
    state: [f64; 4],
    episode: Episode,
}

impl CartPole {
    pub fn new() -> Self {
        Self {
            state: [0.0; 4],
            episode: Episode::default(),
        }
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    /// Starts an episode from an explicit state.
    pub fn reset_to(&mut self, state: [f64; 4]) -> Vec<f64> {
        self.state = state;
        self.episode.begin();
        state.to_vec()
    }
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for CartPole {
    fn name(&self) -> &'static str {
        "cartpole"
    }
    fn obs_dim(&self) -> usize {
        4
    }
    fn num_actions(&self) -> usize {
        2
    }
    fn max_steps(&self) -> usize {
        cartpole::MAX_STEPS
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed);
        let s = [0; 4].map(|_| rng.random_range(-0.05..0.05));
        self.reset_to(s)
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        self.episode.check()?;
        let (next, reward, terminated) = cartpole_step(self.state, action)?;
        self.state = next;
        let (terminated, truncated) = self.episode.finish(terminated, self.max_steps());
        Ok(Step {
            obs: next.to_vec(),
            reward,
            terminated,
            truncated,
        })
    }
}

pub mod acrobot {
    pub const DT: f64 = 0.2;
    pub const LINK_LENGTH_1: f64 = 1.0;
    pub const LINK_MASS_1: f64 = 1.0;
    pub const LINK_MASS_2: f64 = 1.0;
    pub const LINK_COM_POS_1: f64 = 0.5;
    pub const LINK_COM_POS_2: f64 = 0.5;
    pub const LINK_MOI: f64 = 1.0;
    pub const MAX_VEL_1: f64 = 4.0 * std::f64::consts::PI;
    pub const MAX_VEL_2: f64 = 9.0 * std::f64::consts::PI;
    pub const TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];
    pub const GRAVITY: f64 = 9.8;
    pub const MAX_STEPS: usize = 500;
}

fn acrobot_derivs(s: [f64; 4], torque: f64) -> [f64; 4] {
    use acrobot::*;
    let (m1, m2) = (LINK_MASS_1, LINK_MASS_2);
    let (l1, lc1, lc2) = (LINK_LENGTH_1, LINK_COM_POS_1, LINK_COM_POS_2);
    let (i1, i2) = (LINK_MOI, LINK_MOI);
    let g = GRAVITY;
    let [theta1, theta2, dtheta1, dtheta2] = s;
    let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * theta2.cos()) + i1 + i2;
    let d2 = m2 * (lc2 * lc2 + l1 * lc2 * theta2.cos()) + i2;
    let phi2 = m2 * lc2 * g * (theta1 + theta2 - PI / 2.0).cos();
    let phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * theta2.sin()
        - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * theta2.sin()
        + (m1 * lc1 + m2 * l1) * g * (theta1 - PI / 2.0).cos()
        + phi2;
    let ddtheta2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * theta2.sin() - phi2)
        / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    [dtheta1, dtheta2, ddtheta1, ddtheta2]
}

fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut v = x;
    while v > PI {
        v -= two_pi;
    }
    while v < -PI {
        v += two_pi;
    }
    v
}

/// One Acrobot step on `[theta1, theta2, dtheta1, dtheta2]`, integrated
/// with a single fourth-order Runge-Kutta step of length `DT`.
pub fn acrobot_step(state: [f64; 4], action: usize) -> Result<([f64; 4], f64, bool)> {
    use acrobot::*;
    check_action(action, 3)?;
    let torque = TORQUES[action];
    let add = |s: [f64; 4], k: [f64; 4], h: f64| [0, 1, 2, 3].map(|i| s[i] + h * k[i]);
    let k1 = acrobot_derivs(state, torque);
    let k2 = acrobot_derivs(add(state, k1, DT / 2.0), torque);
    let k3 = acrobot_derivs(add(state, k2, DT / 2.0), torque);
    let k4 = acrobot_derivs(add(state, k3, DT), torque);
    let mut next = [0, 1, 2, 3].map(|i| state[i] + DT / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    next[0] = wrap_angle(next[0]);
    next[1] = wrap_angle(next[1]);
    next[2] = next[2].clamp(-MAX_VEL_1, MAX_VEL_1);
    next[3] = next[3].clamp(-MAX_VEL_2, MAX_VEL_2);
    let terminal = -next[0].cos() - (next[1] + next[0]).cos() > 1.0;
    let reward = if terminal { 0.0 } else { -1.0 };
    Ok((next, reward, terminal))
}

fn acrobot_obs(s: [f64; 4]) -> Vec<f64> {
    vec![s[0].cos(), s[0].sin(), s[1].cos(), s[1].sin(), s[2], s[3]]
}

#[derive(Debug, Clone)]
pub struct Acrobot {
    state: [f64; 4],
    episode: Episode,
}

impl Acrobot {
    pub fn new() -> Self {
        Self {
            state: [0.0; 4],
            episode: Episode::default(),
        }
    }
}

impl Default for Acrobot {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for Acrobot {
    fn name(&self) -> &'static str {
        "acrobot"
    }
    fn obs_dim(&self) -> usize {
        6
    }
    fn num_actions(&self) -> usize {
        3
    }
    fn max_steps(&self) -> usize {
        acrobot::MAX_STEPS
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng: Stream = stream(seed);
        self.state = [0; 4].map(|_| rng.random_range(-0.1..0.1));
        self.episode.begin();
        acrobot_obs(self.state)
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        self.episode.check()?;
        let (next, reward, terminated) = acrobot_step(self.state, action)?;
        self.state = next;
        let (terminated, truncated) = self.episode.finish(terminated, self.max_steps());
        Ok(Step {
            obs: acrobot_obs(next),
            reward,
            terminated,
            truncated,
        })
    }
}

pub mod mountaincar {
    pub const MIN_POSITION: f64 = -1.2;
    pub const MAX_POSITION: f64 = 0.6;
    pub const MAX_SPEED: f64 = 0.07;
    pub const GOAL_POSITION: f64 = 0.5;
    pub const GOAL_VELOCITY: f64 = 0.0;
    pub const FORCE: f64 = 0.001;
    pub const GRAVITY: f64 = 0.0025;
    pub const MAX_STEPS: usize = 200;
}

/// One MountainCar step on `[position, velocity]`.
pub fn mountaincar_step(state: [f64; 2], action: usize) -> Result<([f64; 2], f64, bool)> {
    use mountaincar::*;
    check_action(action, 3)?;
    let [mut position, mut velocity] = state;
    velocity += (action as f64 - 1.0) * FORCE + (3.0 * position).cos() * (-GRAVITY);
    velocity = velocity.clamp(-MAX_SPEED, MAX_SPEED);
    position += velocity;
    position = position.clamp(MIN_POSITION, MAX_POSITION);
    if position == MIN_POSITION && velocity < 0.0 {
        velocity = 0.0;
    }
    let done = position >= GOAL_POSITION && velocity >= GOAL_VELOCITY;
    Ok(([position, velocity], -1.0, done))
}

#[derive(Debug, Clone)]
pub struct MountainCar {
    state: [f64; 2],
    episode: Episode,
}

impl MountainCar {
    pub fn new() -> Self {
        Self {
            state: [0.0; 2],
            episode: Episode::default(),
        }
    }

    pub fn reset_to(&mut self, state: [f64; 2]) -> Vec<f64> {
        self.state = state;
        self.episode.begin();
        state.to_vec()
    }
}

impl Default for MountainCar {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for MountainCar {
    fn name(&self) -> &'static str {
        "mountaincar"
    }
    fn obs_dim(&self) -> usize {
        2
    }
    fn num_actions(&self) -> usize {
        3
    }
    fn max_steps(&self) -> usize {
        mountaincar::MAX_STEPS
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed);
        self.reset_to([rng.random_range(-0.6..-0.4), 0.0])
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        self.episode.check()?;
        let (next, reward, terminated) = mountaincar_step(self.state, action)?;
        self.state = next;
        let (terminated, truncated) = self.episode.finish(terminated, self.max_steps());
        Ok(Step {
            obs: next.to_vec(),
            reward,
            terminated,
            truncated,
        })
    }
}
