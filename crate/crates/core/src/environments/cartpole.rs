use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_discrete, EnvError, Environment, Result, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartPoleConfig {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_length: f64,
    pub force: f64,
    pub dt: f64,
    pub theta_max_deg: f64,
    /// Angular velocity is clipped to `±theta_dot_max` rad/s before binning.
    pub theta_dot_max: f64,
    pub horizon: usize,
    /// Initial state components are uniform in `±init_range`.
    pub init_range: f64,
    pub bins: i64,
}

impl Default for CartPoleConfig {
    fn default() -> Self {
        CartPoleConfig {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force: 10.0,
            dt: 0.02,
            theta_max_deg: 12.0,
            theta_dot_max: 2.0,
            horizon: 200,
            init_range: 0.05,
            bins: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

/// Cart-pole with Euler integration. Actions: 1 pushes left, 2 pushes
/// right. Every step taken earns 1, including the one that topples the
/// pole; the episode ends when `|theta|` exceeds the limit or at the
/// horizon. The cart position is not bounded.
#[derive(Debug, Clone)]
pub struct CartPoleEnv {
    pub config: CartPoleConfig,
    pub state: CartPoleState,
    pub t: usize,
    pub done: bool,
}

impl CartPoleEnv {
    pub fn new(config: CartPoleConfig) -> Self {
        CartPoleEnv { config, state: CartPoleState::default(), t: 0, done: false }
    }

    pub fn theta_max(&self) -> f64 {
        self.config.theta_max_deg.to_radians()
    }

    fn bin(&self, v: f64, limit: f64) -> i64 {
        let b = self.config.bins as f64;
        (((v + limit) / (2.0 * limit) * b).round() as i64).clamp(0, self.config.bins)
    }

    /// Advances the physics by one step with the given force sign.
    pub fn integrate(&mut self, right: bool) {
        let c = &self.config;
        let s = &mut self.state;
        let force = if right { c.force } else { -c.force };
        let total_mass = c.cart_mass + c.pole_mass;
        let pole_ml = c.pole_mass * c.half_length;
        let (sin, cos) = s.theta.sin_cos();
        let temp = (force + pole_ml * s.theta_dot * s.theta_dot * sin) / total_mass;
        let theta_acc = (c.gravity * sin - cos * temp)
            / (c.half_length * (4.0 / 3.0 - c.pole_mass * cos * cos / total_mass));
        let x_acc = temp - pole_ml * theta_acc * cos / total_mass;
        s.x += c.dt * s.x_dot;
        s.x_dot += c.dt * x_acc;
        s.theta += c.dt * s.theta_dot;
        s.theta_dot += c.dt * theta_acc;
    }

    /// Pushes toward the side the pole is falling to, judging by angle
    /// plus a quarter second of angular velocity (in bin units).
    pub fn bang_bang(observation: &[i64]) -> i64 {
        let lean = (observation[0] - 50) as f64 + 0.25 * (observation[1] - 50) as f64 * 238.7 / 25.0;
        if lean > 0.0 {
            2
        } else {
            1
        }
    }
}

impl Environment for CartPoleEnv {
    fn tag(&self) -> &str {
        "cartpole"
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, seed: u64) -> Vec<i64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = self.config.init_range;
        let mut draw = || if r > 0.0 { rng.random_range(-r..r) } else { 0.0 };
        self.state = CartPoleState { x: draw(), x_dot: draw(), theta: draw(), theta_dot: draw() };
        self.t = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: i64) -> Result<Transition> {
        check_discrete(action, 2)?;
        if self.done {
            return Err(EnvError::Terminated);
        }
        self.integrate(action == 2);
        self.t += 1;
        self.done = self.state.theta.abs() > self.theta_max() || self.t >= self.config.horizon;
        Ok(Transition { observation: self.observation(), reward: 1, terminal: self.done })
    }

    fn observation(&self) -> Vec<i64> {
        let w = self.config.theta_dot_max;
        vec![
            self.bin(self.state.theta, self.theta_max()),
            self.bin(self.state.theta_dot.clamp(-w, w), w),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode(seed: u64, policy: impl Fn(&[i64], usize) -> i64) -> (i64, Vec<Vec<i64>>) {
        let mut env = CartPoleEnv::new(CartPoleConfig::default());
        let mut obs = env.reset(seed);
        let mut seen = vec![obs.clone()];
        let mut ret = 0;
        loop {
            let tr = env.step(policy(&obs, env.t)).unwrap();
            ret += tr.reward;
            obs = tr.observation;
            seen.push(obs.clone());
            if tr.terminal {
                return (ret, seen);
            }
        }
    }

    #[test]
    fn start_is_near_center() {
        let mut env = CartPoleEnv::new(CartPoleConfig::default());
        for seed in 0..20 {
            let obs = env.reset(seed);
            assert!((38..=62).contains(&obs[0]) && (47..=53).contains(&obs[1]), "{obs:?}");
        }
    }

    #[test]
    fn controllers() {
        for seed in 0..20 {
            assert_eq!(episode(seed, |o, _| CartPoleEnv::bang_bang(o)).0, 200);
            assert!(episode(seed, |_, _| 1).0 < 200);
            assert!(episode(seed, |_, _| 2).0 < 200);
        }
    }

    #[test]
    fn observations_in_range_and_deterministic() {
        for seed in 0..20 {
            let alternate = |_: &[i64], t: usize| if (t / 3) % 2 == 0 { 1 } else { 2 };
            let (r, seen) = episode(seed, alternate);
            assert!(seen.iter().flatten().all(|v| (0..=100).contains(v)));
            assert_eq!((r, seen), episode(seed, alternate));
        }
    }

    #[test]
    fn errors() {
        let mut env = CartPoleEnv::new(CartPoleConfig::default());
        env.reset(0);
        assert!(env.step(3).is_err());
        while !env.step(1).unwrap().terminal {}
        assert_eq!(env.step(1), Err(EnvError::Terminated));
    }
}
