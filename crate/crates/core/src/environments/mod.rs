//! Small deterministic simulations driven by the improvement loop and the
//! clicker service.

mod cartpole;
mod grid;
mod marker;
mod push;

pub use cartpole::{CartPoleConfig, CartPoleEnv, CartPoleState};
pub use grid::{DistanceMetric, GridConfig, GridEnv};
pub use marker::{marker_build_context, MarkerScene, MARKER_FRACTIONS, MARKER_STEPS};
pub use push::{PushConfig, PushWorld};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("invalid action {action}: {reason}")]
    InvalidAction { action: String, reason: String },
    #[error("episode is over; reset first")]
    Terminated,
    #[error("structural error: {0}")]
    Structural(String),
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, EnvError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub observation: Vec<i64>,
    /// Reward earned by this step.
    pub reward: i64,
    pub terminal: bool,
}

/// An episodic environment with actions `1..=num_actions()`.
pub trait Environment: Send {
    fn tag(&self) -> &str;
    fn num_actions(&self) -> usize;
    /// Starts a new episode. Environments with a random initial state draw
    /// it from `seed`.
    fn reset(&mut self, seed: u64) -> Vec<i64>;
    fn step(&mut self, action: i64) -> Result<Transition>;
    fn observation(&self) -> Vec<i64>;
}

fn check_discrete(action: i64, n: usize) -> Result<()> {
    if action < 1 || action > n as i64 {
        return Err(EnvError::InvalidAction { action: action.to_string(), reason: format!("expected 1..={n}") });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Grid,
    CartPole,
}

impl std::str::FromStr for EnvKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(EnvKind::Grid),
            "cartpole" | "cart_pole" => Ok(EnvKind::CartPole),
            _ => Err(EnvError::Domain(format!("unknown environment {s:?} (expected grid or cartpole)"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub grid: GridConfig,
    pub cartpole: CartPoleConfig,
    pub push: PushConfig,
}

/// Builds an environment for one run. For Grid the goal is drawn from
/// `seed` and stays fixed across episodes.
pub fn make_env(kind: EnvKind, config: &EnvConfig, seed: u64) -> Box<dyn Environment> {
    match kind {
        EnvKind::Grid => Box::new(GridEnv::with_random_goal(config.grid.clone(), seed)),
        EnvKind::CartPole => Box::new(CartPoleEnv::new(config.cartpole.clone())),
    }
}
