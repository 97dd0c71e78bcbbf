use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, Result};

pub const MARKER_STEPS: usize = 50;
pub const MARKER_FRACTIONS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

/// A marker held above a cup, with states as integer-binned xyz positions.
/// A trajectory scores `round(100 - kappa * distance(final state, cup))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerScene {
    pub start: [i64; 3],
    pub cup: [i64; 3],
    pub bin_hi: i64,
    pub kappa: f64,
}

impl MarkerScene {
    /// `100 / (0.35 * workspace diagonal)`.
    pub fn default_kappa(bin_hi: i64) -> f64 {
        100.0 / (3f64.sqrt() * bin_hi as f64 * 0.35)
    }

    /// Start at (104, 83, 123); cup 36-44 units away in a random direction.
    pub fn sample(seed: u64, bin_hi: i64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = [104, 83, 123].map(|v: i64| v * bin_hi / 200);
        let scale = bin_hi as f64 / 200.0;
        let cup = loop {
            let dir: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            if !(0.1..=1.0).contains(&norm) {
                continue;
            }
            let d = rng.random_range(36.0..44.0) * scale;
            let cup: [i64; 3] = std::array::from_fn(|i| (start[i] as f64 + dir[i] / norm * d).round() as i64);
            if cup.iter().all(|c| (0..=bin_hi).contains(c)) {
                break cup;
            }
        };
        MarkerScene { start, cup, bin_hi, kappa: Self::default_kappa(bin_hi) }
    }

    pub fn reward(&self, final_state: &[i64]) -> i64 {
        let d = final_state
            .iter()
            .zip(&self.cup)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        (100.0 - self.kappa * d).round() as i64
    }

    /// Straight line from start to cup at constant speed.
    pub fn full_trajectory(&self) -> Vec<Vec<i64>> {
        (0..MARKER_STEPS)
            .map(|i| {
                let f = i as f64 / (MARKER_STEPS - 1) as f64;
                (0..3).map(|d| (self.start[d] as f64 + f * (self.cup[d] - self.start[d]) as f64).round() as i64).collect()
            })
            .collect()
    }

    /// Largest possible distance from the cup within the workspace.
    pub fn max_distance(&self) -> f64 {
        self.cup
            .iter()
            .map(|&c| (c.max(self.bin_hi - c)) as f64)
            .map(|d| d * d)
            .sum::<f64>()
            .sqrt()
    }
}

/// Copies of `full` that stop moving at each fraction of the way and hold
/// their last state to the end, each with its reward.
pub fn marker_build_context(full: &[Vec<i64>], scene: &MarkerScene, fractions: &[f64]) -> Result<Vec<(i64, Vec<Vec<i64>>)>> {
    if full.len() != MARKER_STEPS {
        return Err(EnvError::Structural(format!("trajectory has {} steps, expected {MARKER_STEPS}", full.len())));
    }
    if full.iter().any(|s| s.len() != 3) {
        return Err(EnvError::Structural("marker states must have 3 dims".into()));
    }
    fractions
        .iter()
        .map(|&f| {
            if !(0.0..=1.0).contains(&f) {
                return Err(EnvError::Domain(format!("fraction {f} outside 0..=1")));
            }
            let stop = (f * (MARKER_STEPS - 1) as f64).round() as usize;
            let traj: Vec<Vec<i64>> = (0..MARKER_STEPS).map(|i| full[i.min(stop)].clone()).collect();
            Ok((scene.reward(&traj[MARKER_STEPS - 1]), traj))
        })
        .collect()
}
