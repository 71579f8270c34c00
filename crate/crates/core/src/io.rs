//! Output tables and their loaders.
//!
//! | file              | columns                                                                   |
//! |-------------------|---------------------------------------------------------------------------|
//! | `trajectory.csv`  | `t, x, value` (one row per time knot and node, long format)               |
//! | `control.csv`     | `t, actuator, value` (`d<i>` distributed, `b<i>` boundary)                |
//! | `convergence.csv` | `round, iter, J, state_cost, control_cost, value_integral, step_norm, gamma` |
//! | `meta.toml`       | the resolved experiment configuration                                     |
//!
//! Comma separated, header row, UTF-8, LF line endings, floats in shortest
//! round-trip form. Output is a pure function of its inputs.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Result, StddpError};
use crate::grid::{Field, SpatialGrid};
use crate::solver::{IterationRecord, Solution};
use crate::trajectory::{ControlTrajectory, StateTrajectory, TimeGrid};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const CONTROL_FILE: &str = "control.csv";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const META_FILE: &str = "meta.toml";

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    t: f64,
    x: f64,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ControlRow {
    t: f64,
    actuator: String,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConvergenceRow {
    round: usize,
    iter: usize,
    #[serde(rename = "J")]
    cost: f64,
    state_cost: f64,
    control_cost: f64,
    value_integral: f64,
    step_norm: f64,
    gamma: f64,
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::Reader::from_path(path)?)
}

fn parse_err(path: &Path, msg: impl std::fmt::Display) -> StddpError {
    StddpError::Io(std::io::Error::new(
        std::io::ErrorKind::InvalidData,
        format!("{}: {msg}", path.display()),
    ))
}

pub fn write_trajectory(path: &Path, grid: &SpatialGrid, traj: &StateTrajectory) -> Result<()> {
    let mut w = writer(path)?;
    let nodes = grid.nodes();
    for (t, state) in traj.times.iter().zip(&traj.states) {
        for (x, v) in nodes.iter().zip(state.iter()) {
            w.serialize(TrajectoryRow { t: *t, x: *x, value: *v })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_trajectory(path: &Path) -> Result<StateTrajectory> {
    let mut times: Vec<f64> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for row in reader(path)?.deserialize() {
        let row: TrajectoryRow = row?;
        if times.last() != Some(&row.t) {
            times.push(row.t);
            columns.push(Vec::new());
        }
        columns.last_mut().expect("pushed above").push(row.value);
    }
    if columns.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(parse_err(path, "ragged trajectory table"));
    }
    Ok(StateTrajectory {
        times,
        states: columns.into_iter().map(Field::from_vec).collect(),
    })
}

/// Control at interval `k` is stamped with its left knot `t_k`.
pub fn write_controls(path: &Path, time: &TimeGrid, controls: &ControlTrajectory) -> Result<()> {
    let mut w = writer(path)?;
    for k in 0..controls.len() {
        let t = time.time(k);
        for (i, v) in controls.distributed[k].iter().enumerate() {
            w.serialize(ControlRow { t, actuator: format!("d{i}"), value: *v })?;
        }
        for (i, v) in controls.boundary[k].iter().enumerate() {
            w.serialize(ControlRow { t, actuator: format!("b{i}"), value: *v })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_controls(path: &Path) -> Result<ControlTrajectory> {
    let mut times: Vec<f64> = Vec::new();
    let mut steps: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for row in reader(path)?.deserialize() {
        let row: ControlRow = row?;
        if times.last() != Some(&row.t) {
            times.push(row.t);
            steps.push((Vec::new(), Vec::new()));
        }
        let (d, b) = steps.last_mut().expect("pushed above");
        let (kind, idx) = row.actuator.split_at(1);
        let target = match kind {
            "d" => d,
            "b" => b,
            _ => return Err(parse_err(path, format!("unknown actuator label {:?}", row.actuator))),
        };
        if idx.parse::<usize>().ok() != Some(target.len()) {
            return Err(parse_err(path, format!("actuator {:?} out of order", row.actuator)));
        }
        target.push(row.value);
    }
    Ok(ControlTrajectory {
        distributed: steps.iter().map(|(d, _)| DVector::from_vec(d.clone())).collect(),
        boundary: steps.into_iter().map(|(_, b)| DVector::from_vec(b)).collect(),
    })
}

pub fn write_convergence(path: &Path, history: &[IterationRecord]) -> Result<()> {
    let mut w = writer(path)?;
    for r in history {
        w.serialize(ConvergenceRow {
            round: r.round,
            iter: r.iter,
            cost: r.cost,
            state_cost: r.state_cost,
            control_cost: r.control_cost,
            value_integral: r.value_integral,
            step_norm: r.step_norm,
            gamma: r.gamma,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_convergence(path: &Path) -> Result<Vec<IterationRecord>> {
    reader(path)?
        .deserialize()
        .map(|row| {
            let r: ConvergenceRow = row?;
            Ok(IterationRecord {
                round: r.round,
                iter: r.iter,
                cost: r.cost,
                state_cost: r.state_cost,
                control_cost: r.control_cost,
                value_integral: r.value_integral,
                step_norm: r.step_norm,
                gamma: r.gamma,
            })
        })
        .collect()
}

pub fn write_meta(path: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(cfg.to_toml().as_bytes())?;
    Ok(())
}

/// All four files into `dir`, created if missing.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, grid: &SpatialGrid, time: &TimeGrid, sol: &Solution) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_trajectory(&dir.join(TRAJECTORY_FILE), grid, &sol.states)?;
    write_controls(&dir.join(CONTROL_FILE), time, &sol.controls)?;
    write_convergence(&dir.join(CONVERGENCE_FILE), &sol.history)?;
    write_meta(&dir.join(META_FILE), cfg)
}
