//! Exponential repulsive potential fields.
//!
//! A waypoint `x` at distance `d` from its nearest repeller `np` receives
//! `gamma * exp(-d / d_thresh) * (x - np) / d`. Forces move positions only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdtree::NearestIndex;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct APFParams {
    pub gamma: f64,
    pub d_thresh: f64,
    /// APF runs while the diffusion step index is below this.
    pub n_apf: usize,
}

impl APFParams {
    pub fn for_steps(n_steps: usize) -> Self {
        APFParams { gamma: 0.05, d_thresh: 0.15, n_apf: (0.25 * n_steps as f64).ceil() as usize }
    }

    pub fn validate(&self, n_steps: usize) -> Result<()> {
        if !(self.gamma > 0.0) || !(self.d_thresh > 0.0) {
            return Err(Error::InvalidArgument("APF gain and range must be positive".into()));
        }
        if self.n_apf > n_steps {
            return Err(Error::InvalidArgument(format!("n_apf {} exceeds {} steps", self.n_apf, n_steps)));
        }
        Ok(())
    }

    /// Gain and range used for the pursuer.
    pub fn pursuer(&self, r_detect: f64) -> (f64, f64) {
        (2.0 * self.gamma, r_detect / 2.0)
    }

    /// Number of trailing steps of an `grid_len`-step reverse chain over an
    /// `n_steps` schedule on which APF is applied. For the full chain this is
    /// exactly the steps with `t < n_apf`.
    pub fn active_steps(&self, grid_len: usize, n_steps: usize) -> usize {
        if self.n_apf == 0 {
            return 0;
        }
        let k = ((self.n_apf - 1) * grid_len).div_ceil(n_steps);
        k.min(grid_len)
    }
}

/// Direction used when a waypoint sits exactly on its repeller.
fn fallback_direction(index: usize, d: usize) -> Vec<f64> {
    let mut u = vec![0.0; d];
    u[index % d] = 1.0;
    u
}

fn force_from(x: &[f64], np: &[f64], index: usize, gamma: f64, d_thresh: f64, out: &mut [f64]) {
    let diff: Vec<f64> = x.iter().zip(np).map(|(a, b)| a - b).collect();
    let d = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    if d == 0.0 {
        for (o, u) in out.iter_mut().zip(fallback_direction(index, x.len())) {
            *o += gamma * u;
        }
        return;
    }
    let mag = gamma * (-d / d_thresh).exp() / d;
    for (o, v) in out.iter_mut().zip(&diff) {
        *o += mag * v;
    }
}

/// Static-obstacle forces for each of the `positions.len() / dim` waypoints.
pub fn repulsive_force(positions: &[f64], dim: usize, index: &NearestIndex, gamma: f64, d_thresh: f64) -> Vec<f64> {
    let mut out = vec![0.0; positions.len()];
    if index.is_empty() {
        return out;
    }
    for (k, (x, f)) in positions.chunks_exact(dim).zip(out.chunks_exact_mut(dim)).enumerate() {
        let nn = index.nearest(x).expect("non-empty index");
        force_from(x, index.point(nn.index), k, gamma, d_thresh, f);
    }
    out
}

/// Forces pushing every waypoint away from the pursuer at `p`.
pub fn pursuer_force(positions: &[f64], p: &[f64], gamma: f64, d_thresh: f64) -> Vec<f64> {
    let dim = p.len();
    let mut out = vec![0.0; positions.len()];
    for (k, (x, f)) in positions.chunks_exact(dim).zip(out.chunks_exact_mut(dim)).enumerate() {
        force_from(x, p, k, gamma, d_thresh, f);
    }
    out
}

/// Adds `forces` (one `d_space` row per waypoint) to the position columns.
pub fn apply_apf(traj: &mut Trajectory, forces: &[f64]) -> Result<()> {
    let d = traj.d_space();
    if forces.len() != traj.horizon() * d {
        return Err(Error::ShapeMismatch { expected: vec![traj.horizon(), d], got: vec![forces.len()] });
    }
    for (k, f) in forces.chunks_exact(d).enumerate() {
        for (x, fi) in traj.pos_mut(k).iter_mut().zip(f) {
            *x += fi;
        }
    }
    Ok(())
}

/// Position block of a trajectory as a flat `H * d` buffer.
pub fn flat_positions(traj: &Trajectory) -> Vec<f64> {
    (0..traj.horizon()).flat_map(|k| traj.pos(k).to_vec()).collect()
}
