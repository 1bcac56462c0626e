use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed planning horizon.
pub const HORIZON: usize = 48;

/// `H x d` trajectory of states. Each row is `[position, velocity]` with
/// `d = 2 * d_space`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    horizon: usize,
    d_space: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn zeros(horizon: usize, d_space: usize) -> Self {
        Trajectory { horizon, d_space, data: vec![0.0; horizon * 2 * d_space] }
    }

    pub fn from_flat(horizon: usize, d_space: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != horizon * 2 * d_space {
            return Err(Error::ShapeMismatch { expected: vec![horizon, 2 * d_space], got: vec![data.len()] });
        }
        Ok(Trajectory { horizon, d_space, data })
    }

    /// Builds a trajectory from positions with central-difference velocities
    /// and zero velocity at both endpoints.
    pub fn from_positions(d_space: usize, positions: &[Vec<f64>], dt: f64) -> Self {
        let h = positions.len();
        let mut t = Trajectory::zeros(h, d_space);
        for (k, p) in positions.iter().enumerate() {
            t.pos_mut(k).copy_from_slice(p);
        }
        for k in 1..h.saturating_sub(1) {
            for j in 0..d_space {
                let v = (positions[k + 1][j] - positions[k - 1][j]) / (2.0 * dt);
                t.vel_mut(k)[j] = v;
            }
        }
        t
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn d_space(&self) -> usize {
        self.d_space
    }

    /// Row width `d`.
    pub fn width(&self) -> usize {
        2 * self.d_space
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let w = self.width();
        &self.data[k * w..(k + 1) * w]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        let w = self.width();
        &mut self.data[k * w..(k + 1) * w]
    }

    pub fn pos(&self, k: usize) -> &[f64] {
        &self.row(k)[..self.d_space]
    }

    pub fn pos_mut(&mut self, k: usize) -> &mut [f64] {
        let d = self.d_space;
        &mut self.row_mut(k)[..d]
    }

    pub fn vel(&self, k: usize) -> &[f64] {
        &self.row(k)[self.d_space..]
    }

    pub fn vel_mut(&mut self, k: usize) -> &mut [f64] {
        let d = self.d_space;
        &mut self.row_mut(k)[d..]
    }

    pub fn positions(&self) -> Vec<Vec<f64>> {
        (0..self.horizon).map(|k| self.pos(k).to_vec()).collect()
    }

    /// Sum of segment lengths between consecutive positions.
    pub fn path_length(&self) -> f64 {
        (1..self.horizon).map(|k| crate::geometry::dist(self.pos(k), self.pos(k - 1))).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Rows as nested vectors, the JSON trajectory-file layout.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.horizon).map(|k| self.row(k).to_vec()).collect()
    }
}

/// Start or goal state: position and velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub pos: Vec<f64>,
    pub vel: Vec<f64>,
}

impl State {
    pub fn at_rest(pos: &[f64]) -> Self {
        State { pos: pos.to_vec(), vel: vec![0.0; pos.len()] }
    }

    pub fn as_row(&self) -> Vec<f64> {
        let mut r = self.pos.clone();
        r.extend_from_slice(&self.vel);
        r
    }
}
