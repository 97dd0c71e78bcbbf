use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_discrete, EnvError, Environment, Result, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    Manhattan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub size: i64,
    pub start: (i64, i64),
    pub horizon: usize,
    pub metric: DistanceMetric,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { size: 9, start: (4, 4), horizon: 20, metric: DistanceMetric::Euclidean }
    }
}

/// Navigation on a square grid. Actions: 1 right, 2 up, 3 left, 4 down,
/// 5 no-op. The only reward comes at the end of the episode:
/// `round(100 - 10 * distance(agent, goal))`.
#[derive(Debug, Clone)]
pub struct GridEnv {
    pub config: GridConfig,
    pub goal: (i64, i64),
    pub pos: (i64, i64),
    pub t: usize,
}

impl GridEnv {
    pub fn new(config: GridConfig, goal: (i64, i64)) -> Result<Self> {
        let in_bounds = |(x, y): (i64, i64)| (0..config.size).contains(&x) && (0..config.size).contains(&y);
        if !in_bounds(goal) || !in_bounds(config.start) {
            return Err(EnvError::Domain(format!("goal {goal:?} or start {:?} outside the grid", config.start)));
        }
        if goal == config.start {
            return Err(EnvError::Domain("goal must differ from the start cell".into()));
        }
        let pos = config.start;
        Ok(GridEnv { config, goal, pos, t: 0 })
    }

    /// Goal uniform over every cell except the start.
    pub fn with_random_goal(config: GridConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells: Vec<(i64, i64)> = Self::goal_cells(&config).collect();
        let goal = cells[rng.random_range(0..cells.len())];
        GridEnv::new(config, goal).expect("goal drawn from valid cells")
    }

    pub fn goal_cells(config: &GridConfig) -> impl Iterator<Item = (i64, i64)> + '_ {
        let n = config.size;
        (0..n).flat_map(move |y| (0..n).map(move |x| (x, y))).filter(move |&c| c != config.start)
    }

    pub fn distance(&self, a: (i64, i64), b: (i64, i64)) -> f64 {
        let (dx, dy) = ((a.0 - b.0) as f64, (a.1 - b.1) as f64);
        match self.config.metric {
            DistanceMetric::Euclidean => (dx * dx + dy * dy).sqrt(),
            DistanceMetric::Manhattan => dx.abs() + dy.abs(),
        }
    }

    pub fn reward_at(&self, pos: (i64, i64)) -> i64 {
        (100.0 - 10.0 * self.distance(pos, self.goal)).round() as i64
    }

    /// The action a greedy policy takes: close the x gap, then the y gap.
    pub fn greedy_action(&self) -> i64 {
        let (x, y) = self.pos;
        let (gx, gy) = self.goal;
        if gx > x {
            1
        } else if gx < x {
            3
        } else if gy > y {
            2
        } else if gy < y {
            4
        } else {
            5
        }
    }
}

impl Environment for GridEnv {
    fn tag(&self) -> &str {
        "grid"
    }

    fn num_actions(&self) -> usize {
        5
    }

    fn reset(&mut self, _seed: u64) -> Vec<i64> {
        self.pos = self.config.start;
        self.t = 0;
        self.observation()
    }

    fn step(&mut self, action: i64) -> Result<Transition> {
        check_discrete(action, 5)?;
        if self.t >= self.config.horizon {
            return Err(EnvError::Terminated);
        }
        let (dx, dy) = match action {
            1 => (1, 0),
            2 => (0, 1),
            3 => (-1, 0),
            4 => (0, -1),
            _ => (0, 0),
        };
        let max = self.config.size - 1;
        self.pos = ((self.pos.0 + dx).clamp(0, max), (self.pos.1 + dy).clamp(0, max));
        self.t += 1;
        let terminal = self.t >= self.config.horizon;
        let reward = if terminal { self.reward_at(self.pos) } else { 0 };
        Ok(Transition { observation: self.observation(), reward, terminal })
    }

    fn observation(&self) -> Vec<i64> {
        vec![self.pos.0, self.pos.1]
    }
}
