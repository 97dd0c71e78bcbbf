use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PushConfig {
    /// Upper bound of the workspace on every axis; the lower bound is 0.
    pub extent: f64,
    /// Displacement per action unit away from 50.
    pub step_scale: f64,
    pub contact_radius: f64,
    pub effector_start: [f64; 3],
    pub goal_center: [f64; 3],
    pub goal_radius: f64,
    /// Height at which the object rests after a reset.
    pub table_height: f64,
    pub episode_steps: usize,
    /// Wall-clock step period in live mode.
    pub step_period_ms: u64,
}

impl Default for PushConfig {
    fn default() -> Self {
        PushConfig {
            extent: 300.0,
            step_scale: 0.6,
            contact_radius: 20.0,
            effector_start: [80.0, 50.0, 140.0],
            goal_center: [200.0, 150.0, 133.0],
            goal_radius: 30.0,
            table_height: 133.0,
            episode_steps: 15,
            step_period_ms: 2000,
        }
    }
}

/// An end effector that pushes an object kinematically: when the effector
/// starts a step within `contact_radius` of the object, the object takes
/// the part of the effector's displacement that points from the effector
/// toward the object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushWorld {
    pub config: PushConfig,
    pub effector: [f64; 3],
    pub object: [f64; 3],
    pub t: usize,
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

impl PushWorld {
    pub fn new(config: PushConfig, seed: u64) -> Self {
        let mut world = PushWorld { effector: config.effector_start, object: [0.0; 3], t: 0, config };
        world.reset(seed);
        world
    }

    /// Effector back to its start; object placed on the table somewhere in
    /// the middle of the workspace.
    pub fn reset(&mut self, seed: u64) -> Vec<i64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = self.config.extent;
        self.effector = self.config.effector_start;
        self.object = [rng.random_range(0.3 * e..0.45 * e), rng.random_range(0.15 * e..0.3 * e), self.config.table_height];
        self.t = 0;
        self.observation()
    }

    pub fn observation(&self) -> Vec<i64> {
        let hi = self.config.extent.round() as i64;
        self.effector.iter().chain(&self.object).map(|v| (v.round() as i64).clamp(0, hi)).collect()
    }

    pub fn in_contact(&self) -> bool {
        dist(&self.effector, &self.object) <= self.config.contact_radius
    }

    pub fn object_in_goal(&self) -> bool {
        let c = &self.config.goal_center;
        ((self.object[0] - c[0]).powi(2) + (self.object[1] - c[1]).powi(2)).sqrt() <= self.config.goal_radius
    }

    pub fn episode_over(&self) -> bool {
        self.t >= self.config.episode_steps
    }

    /// Applies one action of three integers in 0..=100; (50, 50, 50) holds
    /// still. Returns the new observation.
    pub fn step(&mut self, action: &[i64]) -> Result<Vec<i64>> {
        if action.len() != 3 || action.iter().any(|a| !(0..=100).contains(a)) {
            return Err(EnvError::InvalidAction {
                action: format!("{action:?}"),
                reason: "expected three integers in 0..=100".into(),
            });
        }
        if self.episode_over() {
            return Err(EnvError::Terminated);
        }
        let e = self.config.extent;
        let before = self.effector;
        let contact = self.in_contact();
        for (axis, a) in action.iter().enumerate() {
            self.effector[axis] = (self.effector[axis] + (a - 50) as f64 * self.config.step_scale).clamp(0.0, e);
        }
        if contact {
            let gap = dist(&before, &self.object);
            if gap > 0.0 {
                let normal: Vec<f64> = (0..3).map(|i| (self.object[i] - before[i]) / gap).collect();
                let along: f64 = (0..3).map(|i| (self.effector[i] - before[i]) * normal[i]).sum();
                if along > 0.0 {
                    for i in 0..3 {
                        self.object[i] = (self.object[i] + along * normal[i]).clamp(0.0, e);
                    }
                }
            }
        }
        self.t += 1;
        Ok(self.observation())
    }
}
