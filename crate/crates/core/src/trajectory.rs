use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StddpError};
use crate::grid::Field;

/// Uniform time discretization of `[t0, t0 + n_steps·dt]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, tf: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(StddpError::InvalidParameter("n_steps must be at least 1".into()));
        }
        if !(tf > t0) {
            return Err(StddpError::InvalidParameter(format!(
                "final time {tf} must exceed initial time {t0}"
            )));
        }
        Ok(TimeGrid {
            t0,
            dt: (tf - t0) / n_steps as f64,
            n_steps,
        })
    }

    pub fn from_step(t0: f64, dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(StddpError::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        if n_steps == 0 {
            return Err(StddpError::InvalidParameter("n_steps must be at least 1".into()));
        }
        Ok(TimeGrid { t0, dt, n_steps })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn tf(&self) -> f64 {
        self.time(self.n_steps)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }
}

/// States at the `n_steps + 1` knots of a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Field>,
}

impl StateTrajectory {
    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn terminal(&self) -> &Field {
        self.states.last().expect("trajectory has at least one state")
    }
}

/// Piecewise-constant distributed and boundary controls, one sample per step.
///
/// A model without boundary actuation carries zero-length boundary vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrajectory {
    pub distributed: Vec<DVector<f64>>,
    pub boundary: Vec<DVector<f64>>,
}

impl ControlTrajectory {
    pub fn zeros(n_steps: usize, n_distributed: usize, n_boundary: usize) -> Self {
        ControlTrajectory {
            distributed: vec![DVector::zeros(n_distributed); n_steps],
            boundary: vec![DVector::zeros(n_boundary); n_steps],
        }
    }

    pub fn len(&self) -> usize {
        self.distributed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distributed.is_empty()
    }

    pub fn n_distributed(&self) -> usize {
        self.distributed.first().map_or(0, |u| u.len())
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.first().map_or(0, |u| u.len())
    }

    /// Total number of scalar control entries.
    pub fn n_entries(&self) -> usize {
        self.len() * (self.n_distributed() + self.n_boundary())
    }

    pub fn check_shape(&self, n_steps: usize, n_distributed: usize, n_boundary: usize) -> Result<()> {
        if self.distributed.len() != n_steps {
            return Err(StddpError::mismatch("control trajectory length", n_steps, self.distributed.len()));
        }
        if self.boundary.len() != n_steps {
            return Err(StddpError::mismatch("boundary control trajectory length", n_steps, self.boundary.len()));
        }
        for u in &self.distributed {
            if u.len() != n_distributed {
                return Err(StddpError::mismatch("distributed control", n_distributed, u.len()));
            }
        }
        for u in &self.boundary {
            if u.len() != n_boundary {
                return Err(StddpError::mismatch("boundary control", n_boundary, u.len()));
            }
        }
        Ok(())
    }

    /// Read entry `idx` in the flattened (step-major, distributed then boundary) layout.
    pub fn entry(&self, idx: usize) -> f64 {
        let (k, j) = self.locate(idx);
        let nd = self.n_distributed();
        if j < nd {
            self.distributed[k][j]
        } else {
            self.boundary[k][j - nd]
        }
    }

    pub fn entry_mut(&mut self, idx: usize) -> &mut f64 {
        let (k, j) = self.locate(idx);
        let nd = self.n_distributed();
        if j < nd {
            &mut self.distributed[k][j]
        } else {
            &mut self.boundary[k][j - nd]
        }
    }

    fn locate(&self, idx: usize) -> (usize, usize) {
        let width = self.n_distributed() + self.n_boundary();
        (idx / width, idx % width)
    }

    /// `self + gamma_d·delta.distributed`, `self + gamma_b·delta.boundary`.
    pub fn axpy(&self, gamma_d: f64, gamma_b: f64, delta: &ControlTrajectory) -> ControlTrajectory {
        ControlTrajectory {
            distributed: self
                .distributed
                .iter()
                .zip(&delta.distributed)
                .map(|(u, d)| u + d * gamma_d)
                .collect(),
            boundary: self
                .boundary
                .iter()
                .zip(&delta.boundary)
                .map(|(u, d)| u + d * gamma_b)
                .collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.distributed
            .iter()
            .chain(&self.boundary)
            .map(|u| u.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.distributed
            .iter()
            .chain(&self.boundary)
            .map(|u| u.amax())
            .fold(0.0, f64::max)
    }

    pub fn sub(&self, other: &ControlTrajectory) -> ControlTrajectory {
        self.axpy(-1.0, -1.0, other)
    }
}
