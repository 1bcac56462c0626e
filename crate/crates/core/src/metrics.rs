//! Batch statistics and study summaries.

use serde::{Deserialize, Serialize};

use crate::pursuit::EpisodeRecord;
use crate::trajectory::Trajectory;

/// Positional variance across candidates, summed over coordinates and
/// averaged over waypoints.
pub fn waypoint_variance(batch: &[Trajectory]) -> f64 {
    let Some(first) = batch.first() else { return 0.0 };
    if batch.len() < 2 {
        return 0.0;
    }
    let (h, d) = (first.horizon(), first.d_space());
    let n = batch.len() as f64;
    let mut total = 0.0;
    for k in 0..h {
        for j in 0..d {
            let mean = batch.iter().map(|t| t.pos(k)[j]).sum::<f64>() / n;
            total += batch.iter().map(|t| (t.pos(k)[j] - mean).powi(2)).sum::<f64>() / n;
        }
    }
    total / h as f64
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub runs: usize,
    /// Percentage of successful episodes.
    pub score: f64,
    pub goal_rate: f64,
    pub capture_rate: f64,
    pub collision_rate: f64,
    pub mean_path_length: f64,
    pub mean_iterations: f64,
}

pub fn summarize_episodes(eps: &[&EpisodeRecord]) -> EpisodeSummary {
    let n = eps.len().max(1) as f64;
    let frac = |f: &dyn Fn(&EpisodeRecord) -> bool| eps.iter().filter(|e| f(e)).count() as f64 / n;
    let lengths: Vec<f64> = eps.iter().map(|e| e.path_length()).collect();
    let its: Vec<f64> = eps.iter().map(|e| e.iterations as f64).collect();
    EpisodeSummary {
        runs: eps.len(),
        score: 100.0 * frac(&|e| e.success()),
        goal_rate: frac(&|e| e.goal_reached),
        capture_rate: frac(&|e| e.captured),
        collision_rate: frac(&|e| e.n_collisions > 0),
        mean_path_length: mean(&lengths),
        mean_iterations: mean(&its),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(offset: f64) -> Trajectory {
        let p: Vec<Vec<f64>> = (0..4).map(|k| vec![k as f64 * 0.1, offset]).collect();
        Trajectory::from_positions(2, &p, 0.1)
    }

    #[test]
    fn variance_oracle() {
        assert_eq!(waypoint_variance(&[line(0.0)]), 0.0);
        assert_eq!(waypoint_variance(&[line(0.2), line(0.2)]), 0.0);
        // Offsets -0.1 and 0.1: per-waypoint variance 0.01 in y only.
        assert!((waypoint_variance(&[line(-0.1), line(0.1)]) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn mean_and_std() {
        assert_eq!(mean(&[]), 0.0);
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert!((std_dev(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
    }
}
