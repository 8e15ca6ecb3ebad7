//! Seedable classic-control environments and the rollout loop.
//!
//! Dynamics and constants follow the usual classic-control definitions:
//! Euler integration, no observation or reward noise. The only randomness
//! is the initial state, drawn from a stream keyed by the reset seed.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax_first, Rng};
use crate::policy::ActionSpace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    Cartpole,
    Mountaincar,
    MountaincarContinuous,
    Pendulum,
}

impl EnvId {
    pub const ALL: [EnvId; 4] = [
        EnvId::Cartpole,
        EnvId::Mountaincar,
        EnvId::MountaincarContinuous,
        EnvId::Pendulum,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EnvId::Cartpole => "cartpole",
            EnvId::Mountaincar => "mountaincar",
            EnvId::MountaincarContinuous => "mountaincar_continuous",
            EnvId::Pendulum => "pendulum",
        }
    }

    pub fn default_max_steps(&self) -> usize {
        match self {
            EnvId::Cartpole => 500,
            EnvId::Mountaincar => 200,
            EnvId::MountaincarContinuous => 999,
            EnvId::Pendulum => 200,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            EnvId::Cartpole => 4,
            EnvId::Mountaincar | EnvId::MountaincarContinuous => 2,
            EnvId::Pendulum => 3,
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match self {
            EnvId::Cartpole => ActionSpace::Discrete(2),
            EnvId::Mountaincar => ActionSpace::Discrete(3),
            EnvId::MountaincarContinuous => ActionSpace::Box {
                lo: vec![-1.0],
                hi: vec![1.0],
            },
            EnvId::Pendulum => ActionSpace::Box {
                lo: vec![-2.0],
                hi: vec![2.0],
            },
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvId::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::config("env.id", format!("unknown environment `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: EnvId,
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub max_steps: usize,
}

impl EnvSpec {
    pub fn new(id: EnvId) -> Self {
        Self {
            id,
            obs_dim: id.obs_dim(),
            action_space: id.action_space(),
            max_steps: id.default_max_steps(),
        }
    }

    pub fn with_max_steps(id: EnvId, max_steps: usize) -> Result<Self> {
        if max_steps == 0 {
            return Err(Error::config("env.max_steps", "must be at least 1"));
        }
        Ok(Self {
            max_steps,
            ..Self::new(id)
        })
    }

    pub fn make(&self) -> Box<dyn Environment> {
        let dynamics: Box<dyn Dynamics> = match self.id {
            EnvId::Cartpole => Box::new(CartPole::default()),
            EnvId::Mountaincar => Box::new(MountainCar::default()),
            EnvId::MountaincarContinuous => Box::new(MountainCarContinuous::default()),
            EnvId::Pendulum => Box::new(Pendulum::default()),
        };
        Box::new(Episode {
            dynamics,
            max_steps: self.max_steps,
            steps: 0,
            done: true,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Send {
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    /// Errors if the episode already finished (or was never reset).
    fn step(&mut self, action: &[f64]) -> Result<Transition>;

    /// Overwrites the physical state (testing and diagnostics).
    fn set_state(&mut self, state: &[f64]) -> Result<Vec<f64>>;
}

trait Dynamics: Send {
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64>;
    /// Returns `(observation, reward, terminal)`.
    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64, bool)>;
    fn set_state(&mut self, state: &[f64]) -> Result<Vec<f64>>;
}

struct Episode {
    dynamics: Box<dyn Dynamics>,
    max_steps: usize,
    steps: usize,
    done: bool,
}

impl Environment for Episode {
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.steps = 0;
        self.done = false;
        self.dynamics.reset(&mut Rng::derive(seed, &[0x454e_56]))
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let (observation, reward, terminal) = self.dynamics.step(action)?;
        self.steps += 1;
        self.done = terminal || self.steps >= self.max_steps;
        Ok(Transition {
            observation,
            reward,
            done: self.done,
        })
    }

    fn set_state(&mut self, state: &[f64]) -> Result<Vec<f64>> {
        self.steps = 0;
        self.done = false;
        self.dynamics.set_state(state)
    }
}

fn discrete_action(action: &[f64], k: usize) -> Result<usize> {
    match action {
        [] => Err(Error::shape("empty action")),
        // a bare index is accepted as well as a one-hot vector
        [i] if k > 1 && i.fract() == 0.0 && *i >= 0.0 && (*i as usize) < k => Ok(*i as usize),
        a if a.len() == k => argmax_first(a),
        a => Err(Error::shape(format!("action of width {} for {k} discrete actions", a.len()))),
    }
}

fn continuous_action(action: &[f64], lo: f64, hi: f64) -> Result<f64> {
    match action {
        [u] if u.is_finite() => Ok(u.clamp(lo, hi)),
        [_] => Err(Error::NonFinite(0)),
        a => Err(Error::shape(format!("continuous action of width {}, expected 1", a.len()))),
    }
}

fn expect_state<const N: usize>(state: &[f64]) -> Result<[f64; N]> {
    state
        .try_into()
        .map_err(|_| Error::shape(format!("state of width {}, expected {N}", state.len())))
}

#[derive(Clone, Debug)]
pub struct CartPole {
    pub gravity: f64,
    pub mass_cart: f64,
    pub mass_pole: f64,
    pub half_length: f64,
    pub force_mag: f64,
    pub tau: f64,
    pub x_threshold: f64,
    pub theta_threshold: f64,
    state: [f64; 4],
}

impl Default for CartPole {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            mass_cart: 1.0,
            mass_pole: 0.1,
            half_length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
            x_threshold: 2.4,
            theta_threshold: 12.0 * 2.0 * PI / 360.0,
            state: [0.0; 4],
        }
    }
}

impl Dynamics for CartPole {
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.state = std::array::from_fn(|_| rng.uniform_range(-0.05, 0.05));
        self.state.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
        let push_right = discrete_action(action, 2)? == 1;
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if push_right { self.force_mag } else { -self.force_mag };
        let total_mass = self.mass_cart + self.mass_pole;
        let pole_mass_length = self.mass_pole * self.half_length;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + pole_mass_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (self.gravity * sin - cos * temp)
            / (self.half_length * (4.0 / 3.0 - self.mass_pole * cos * cos / total_mass));
        let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;
        self.state = [
            x + self.tau * x_dot,
            x_dot + self.tau * x_acc,
            theta + self.tau * theta_dot,
            theta_dot + self.tau * theta_acc,
        ];
        let [x, _, theta, _] = self.state;
        let terminal = x.abs() > self.x_threshold || theta.abs() > self.theta_threshold;
        Ok((self.state.to_vec(), 1.0, terminal))
    }

    fn set_state(&mut self, state: &[f64]) -> Result<Vec<f64>> {
        self.state = expect_state(state)?;
        Ok(self.state.to_vec())
    }
}

const MC_MIN_POSITION: f64 = -1.2;
const MC_MAX_POSITION: f64 = 0.6;
const MC_MAX_SPEED: f64 = 0.07;
const MC_GRAVITY: f64 = 0.0025;

fn mountain_car_update(position: f64, velocity: f64, push: f64) -> (f64, f64) {
    let velocity = (velocity + push - MC_GRAVITY * (3.0 * position).cos()).clamp(-MC_MAX_SPEED, MC_MAX_SPEED);
    let position = (position + velocity).clamp(MC_MIN_POSITION, MC_MAX_POSITION);
    let velocity = if position == MC_MIN_POSITION && velocity < 0.0 {
        0.0
    } else {
        velocity
    };
    (position, velocity)
}

#[derive(Clone, Debug, Default)]
pub struct MountainCar {
    state: [f64; 2],
}

impl MountainCar {
    pub const FORCE: f64 = 0.001;
    pub const GOAL_POSITION: f64 = 0.5;
}

impl Dynamics for MountainCar {
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.state = [rng.uniform_range(-0.6, -0.4), 0.0];
        self.state.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
        let a = discrete_action(action, 3)?;
        let [p, v] = self.state;
        let (p, v) = mountain_car_update(p, v, (a as f64 - 1.0) * Self::FORCE);
        self.state = [p, v];
        Ok((self.state.to_vec(), -1.0, p >= Self::GOAL_POSITION && v >= 0.0))
    }

    fn set_state(&mut self, state: &[f64]) -> Result<Vec<f64>> {
        self.state = expect_state(state)?;
        Ok(self.state.to_vec())
    }
}

#[derive(Clone, Debug, Default)]
pub struct MountainCarContinuous {
    state: [f64; 2],
}

impl MountainCarContinuous {
    pub const POWER: f64 = 0.0015;
    pub const GOAL_POSITION: f64 = 0.45;
}

impl Dynamics for MountainCarContinuous {
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.state = [rng.uniform_range(-0.6, -0.4), 0.0];
        self.state.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
        let force = continuous_action(action, -1.0, 1.0)?;
        let [p, v] = self.state;
        let (p, v) = mountain_car_update(p, v, force * Self::POWER);
        self.state = [p, v];
        let terminal = p >= Self::GOAL_POSITION && v >= 0.0;
        let reward = if terminal { 100.0 } else { 0.0 } - 0.1 * force * force;
        Ok((self.state.to_vec(), reward, terminal))
    }

    fn set_state(&mut self, state: &[f64]) -> Result<Vec<f64>> {
        self.state = expect_state(state)?;
        Ok(self.state.to_vec())
    }
}

#[derive(Clone, Debug)]
pub struct Pendulum {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub max_torque: f64,
    /// `(angle, angular velocity)`; angle 0 is upright.
    state: [f64; 2],
}

impl Default for Pendulum {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            dt: 0.05,
            max_speed: 8.0,
            max_torque: 2.0,
            state: [0.0; 2],
        }
    }
}

/// Wraps an angle to `[-π, π)`.
pub fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    fn observe(&self) -> Vec<f64> {
        let [th, thdot] = self.state;
        vec![th.cos(), th.sin(), thdot]
    }
}

impl Dynamics for Pendulum {
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.state = [rng.uniform_range(-PI, PI), rng.uniform_range(-1.0, 1.0)];
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
        let u = continuous_action(action, -self.max_torque, self.max_torque)?;
        let [th, thdot] = self.state;
        let cost = angle_normalize(th).powi(2) + 0.1 * thdot * thdot + 0.001 * u * u;
        let (g, m, l) = (self.gravity, self.mass, self.length);
        let new_thdot = (thdot + (3.0 * g / (2.0 * l) * th.sin() + 3.0 / (m * l * l) * u) * self.dt)
            .clamp(-self.max_speed, self.max_speed);
        let new_th = th + new_thdot * self.dt;
        self.state = [new_th, new_thdot];
        Ok((self.observe(), -cost, false))
    }

    fn set_state(&mut self, state: &[f64]) -> Result<Vec<f64>> {
        self.state = expect_state(state)?;
        Ok(self.observe())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutStats {
    pub total_reward: f64,
    pub steps: usize,
    pub seed: u64,
}

pub fn reset(env: &mut dyn Environment, seed: u64) -> Vec<f64> {
    env.reset(seed)
}

pub fn step(env: &mut dyn Environment, action: &[f64]) -> Result<Transition> {
    env.step(action)
}

/// Runs one episode of `policy` from `reset(seed)` until termination or the
/// step cap.
pub fn rollout<P>(spec: &EnvSpec, mut policy: P, seed: u64) -> Result<RolloutStats>
where
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut env = spec.make();
    let mut obs = env.reset(seed);
    let mut total_reward = 0.0;
    let mut steps = 0;
    loop {
        let action = policy(&obs)?;
        let t = env.step(&action)?;
        total_reward += t.reward;
        steps += 1;
        obs = t.observation;
        if t.done {
            break;
        }
    }
    Ok(RolloutStats {
        total_reward,
        steps,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cartpole_reset_bounds_and_determinism() {
        let spec = EnvSpec::new(EnvId::Cartpole);
        let mut env = spec.make();
        for seed in 0..50 {
            let o = env.reset(seed);
            assert!(o.iter().all(|v| v.abs() <= 0.05));
            assert_eq!(o, spec.make().reset(seed));
        }
    }

    #[test]
    fn mountaincar_reset_bounds() {
        let mut env = EnvSpec::new(EnvId::Mountaincar).make();
        for seed in 0..50 {
            let o = env.reset(seed);
            assert!((-0.6..=-0.4).contains(&o[0]));
            assert_eq!(o[1], 0.0);
        }
    }

    #[test]
    fn cartpole_single_step_matches_hand_computation() {
        let mut env = EnvSpec::new(EnvId::Cartpole).make();
        env.set_state(&[0.0; 4]).unwrap();
        let t = env.step(&[0.0, 1.0]).unwrap();
        // at rest and upright: temp = 10/1.1, θ'' = -temp / (0.5 (4/3 - 0.1/1.1)),
        // x'' = temp - 0.05 θ'' / 1.1; Euler moves only the velocities
        let temp = 10.0 / 1.1;
        let theta_acc = -temp / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
        let x_acc = temp - 0.05 * theta_acc / 1.1;
        let want = [0.0, 0.02 * x_acc, 0.0, 0.02 * theta_acc];
        for (a, b) in t.observation.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(t.reward, 1.0);
        assert!(!t.done);
    }

    #[test]
    fn mountaincar_no_push_velocity() {
        let mut env = EnvSpec::new(EnvId::Mountaincar).make();
        env.set_state(&[-0.5, 0.0]).unwrap();
        let t = env.step(&[0.0, 1.0, 0.0]).unwrap();
        let v = -0.0025 * (3.0f64 * -0.5).cos();
        assert!((t.observation[1] - v).abs() < 1e-15);
        assert!((t.observation[0] - (-0.5 + v)).abs() < 1e-15);
        assert_eq!(t.reward, -1.0);
    }

    #[test]
    fn pendulum_upright_rest_is_free() {
        let mut env = EnvSpec::new(EnvId::Pendulum).make();
        env.set_state(&[0.0, 0.0]).unwrap();
        let t = env.step(&[0.0]).unwrap();
        assert_eq!(t.reward, 0.0);
        assert_eq!(t.observation, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn step_after_done_errors() {
        let spec = EnvSpec::with_max_steps(EnvId::Pendulum, 2).unwrap();
        let mut env = spec.make();
        assert!(matches!(env.step(&[0.0]), Err(Error::EpisodeDone)));
        env.reset(1);
        assert!(!env.step(&[0.0]).unwrap().done);
        assert!(env.step(&[0.0]).unwrap().done);
        assert!(matches!(env.step(&[0.0]), Err(Error::EpisodeDone)));
    }

    #[test]
    fn zero_step_cap_rejected() {
        assert!(EnvSpec::with_max_steps(EnvId::Cartpole, 0).is_err());
    }

    #[test]
    fn constant_push_right_never_reaches_goal() {
        for seed in 0..5 {
            let s = rollout(&EnvSpec::new(EnvId::Mountaincar), |_| Ok(vec![0.0, 0.0, 1.0]), seed).unwrap();
            assert_eq!(s.total_reward, -200.0);
            assert_eq!(s.steps, 200);
        }
    }

    #[test]
    fn energy_pumping_solves_mountaincar() {
        let s = rollout(
            &EnvSpec::new(EnvId::Mountaincar),
            |o| Ok(if o[1] >= 0.0 { vec![0.0, 0.0, 1.0] } else { vec![1.0, 0.0, 0.0] }),
            3,
        )
        .unwrap();
        assert!(s.total_reward > -200.0 && s.total_reward <= -1.0);

        let s = rollout(
            &EnvSpec::new(EnvId::MountaincarContinuous),
            |o| Ok(vec![if o[1] >= 0.0 { 1.0 } else { -1.0 }]),
            3,
        )
        .unwrap();
        assert!(s.total_reward > 80.0 && s.total_reward <= 100.0, "{}", s.total_reward);
    }

    #[test]
    fn linear_controller_balances_cartpole() {
        for seed in 0..10 {
            let s = rollout(
                &EnvSpec::new(EnvId::Cartpole),
                |o| {
                    let u = 0.1 * o[0] + 0.5 * o[1] + 10.0 * o[2] + 2.0 * o[3];
                    Ok(vec![if u > 0.0 { 1.0 } else { 0.0 }])
                },
                seed,
            )
            .unwrap();
            assert_eq!(s.total_reward, 500.0, "seed {seed}");
        }
    }

    #[test]
    fn rollouts_are_deterministic() {
        for id in EnvId::ALL {
            let spec = EnvSpec::new(id);
            let policy = |o: &[f64]| -> Result<Vec<f64>> {
                Ok(match spec.action_space {
                    ActionSpace::Discrete(k) => vec![(o[0].to_bits() % k as u64) as f64],
                    ActionSpace::Box { .. } => vec![o[0].sin()],
                })
            };
            let a = rollout(&spec, policy, 42).unwrap();
            let b = rollout(&spec, policy, 42).unwrap();
            assert_eq!(a.total_reward.to_bits(), b.total_reward.to_bits());
            assert_eq!(a.steps, b.steps);
            assert!(a.steps <= spec.max_steps);
        }
    }

    #[test]
    fn discrete_action_parsing() {
        assert_eq!(discrete_action(&[2.0], 3).unwrap(), 2);
        assert_eq!(discrete_action(&[0.0, 0.0, 1.0], 3).unwrap(), 2);
        assert!(discrete_action(&[0.0, 1.0], 3).is_err());
        assert!(discrete_action(&[], 3).is_err());
    }

    #[test]
    fn angle_wrapping() {
        assert!((angle_normalize(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((angle_normalize(0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn env_ids_parse() {
        for id in EnvId::ALL {
            assert_eq!(id.name().parse::<EnvId>().unwrap(), id);
        }
        assert!("hopper".parse::<EnvId>().is_err());
    }
}
