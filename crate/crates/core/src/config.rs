//! TOML experiment configuration and its resolution into a runnable problem.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cost::{CostSpec, Regions};
use crate::error::{Result, StddpError};
use crate::grid::{BoundaryCondition, Field, SpatialGrid};
use crate::models::{rollout, BurgersModel, BurgersParams, HeatModel, HeatParams, PdeModel};
use crate::solver::{anneal_solve_with, stddp_solve_with, AnnealConfig, IterationRecord, Solution, SolverConfig};
use crate::trajectory::{ControlTrajectory, StateTrajectory, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Heat {
        epsilon: f64,
        /// Dirichlet values become two extra controls.
        #[serde(default)]
        boundary_control: bool,
    },
    Burgers {
        epsilon: f64,
        bc_value: f64,
        n_actuators: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_nodes: usize,
    #[serde(default = "GridConfig::default_length")]
    pub length: f64,
    /// Heat only; Burgers takes its Dirichlet value from the model section.
    #[serde(default)]
    pub bc: Option<BoundaryCondition>,
}

impl GridConfig {
    fn default_length() -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default)]
    pub t0: f64,
    pub tf: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub q: f64,
    pub q_f: f64,
    pub r_d: f64,
    #[serde(default = "CostConfig::default_r_b")]
    pub r_b: f64,
    pub regions: Regions,
}

impl CostConfig {
    fn default_r_b() -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// Zero interior field.
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// `amplitude · sin(π x / length)`.
    Sine {
        amplitude: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "OutputConfig::default_formats")]
    pub formats: Vec<String>,
}

impl OutputConfig {
    fn default_formats() -> Vec<String> {
        vec!["csv".into()]
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            formats: Self::default_formats(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub cost: CostConfig,
    #[serde(default)]
    pub initial: InitialCondition,
    #[serde(default)]
    pub solver: SolverConfig,
    /// When present the solve is annealed.
    #[serde(default)]
    pub anneal: Option<AnnealConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn config_err(msg: impl std::fmt::Display) -> StddpError {
    StddpError::Config(msg.to_string())
}

impl std::str::FromStr for ExperimentConfig {
    type Err = StddpError;

    fn from_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        text.parse::<Self>().map_err(|e| match e {
            StddpError::Config(msg) => config_err(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Resolved configuration as TOML; parsing it back yields `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    /// The solver configuration with the top-level anneal section merged in.
    pub fn solver_config(&self) -> SolverConfig {
        let mut s = self.solver.clone();
        if self.anneal.is_some() {
            s.anneal = self.anneal;
        }
        s
    }

    /// Every semantic check, reported as a config error (exit status 2).
    pub fn validate(&self) -> Result<()> {
        if self.anneal.is_some() && self.solver.anneal.is_some() {
            return Err(config_err("anneal: give either [anneal] or [solver.anneal], not both"));
        }
        if self.time.n_steps == 0 {
            return Err(config_err("time.n_steps must be at least 1"));
        }
        if !(self.time.tf > self.time.t0) {
            return Err(config_err("time.tf must exceed time.t0"));
        }
        if let Some(f) = self.output.formats.iter().find(|f| f.as_str() != "csv") {
            return Err(config_err(format!("output.formats: unsupported format {f:?} (only \"csv\")")));
        }
        if matches!(self.model, ModelConfig::Burgers { .. }) && self.grid.bc.is_some() {
            return Err(config_err("grid.bc: Burgers boundary values come from model.bc_value"));
        }
        self.build().map(|_| ())
    }

    pub fn build(&self) -> Result<Experiment> {
        let as_config = |e: StddpError| match e {
            StddpError::Config(_) => e,
            other => config_err(other),
        };
        let inner = || -> Result<Experiment> {
            let g = &self.grid;
            let model: Box<dyn PdeModel> = match self.model {
                ModelConfig::Heat { epsilon, boundary_control } => {
                    let bc = g.bc.unwrap_or_else(BoundaryCondition::homogeneous_dirichlet);
                    let grid = SpatialGrid::new(g.n_nodes, g.length, bc)?;
                    let m = HeatModel::new(grid, HeatParams { epsilon })?;
                    Box::new(if boundary_control { m.with_boundary_control() } else { m })
                }
                ModelConfig::Burgers {
                    epsilon,
                    bc_value,
                    n_actuators,
                } => {
                    let grid = SpatialGrid::new(g.n_nodes, g.length, BoundaryCondition::homogeneous_dirichlet())?;
                    Box::new(BurgersModel::new(grid, BurgersParams { epsilon, bc_value }, n_actuators)?)
                }
            };
            let c = &self.cost;
            let spec = CostSpec::reaching(model.grid(), &c.regions, c.q, c.q_f, c.r_d, c.r_b)?;
            let time = TimeGrid::new(self.time.t0, self.time.tf, self.time.n_steps)?;
            let grid = model.grid();
            let x0 = match self.initial {
                InitialCondition::Zero => grid.zeros(),
                InitialCondition::Constant { value } => grid.sample(|_| value),
                InitialCondition::Sine { amplitude } => {
                    let l = grid.length();
                    grid.sample(|x| amplitude * (std::f64::consts::PI * x / l).sin())
                }
            };
            let solver = self.solver_config();
            solver.validate()?;
            Ok(Experiment {
                model,
                spec,
                time,
                x0,
                solver,
            })
        };
        inner().map_err(as_config)
    }
}

/// A resolved, runnable problem.
pub struct Experiment {
    pub model: Box<dyn PdeModel>,
    pub spec: CostSpec,
    pub time: TimeGrid,
    pub x0: Field,
    pub solver: SolverConfig,
}

impl Experiment {
    pub fn zero_controls(&self) -> ControlTrajectory {
        ControlTrajectory::zeros(self.time.n_steps, self.model.n_distributed(), self.model.n_boundary())
    }

    /// Annealed when the solver carries an anneal section.
    pub fn solve_with(&self, observer: &mut dyn FnMut(&IterationRecord)) -> Result<Solution> {
        let u0 = self.zero_controls();
        let m = self.model.as_ref();
        if self.solver.anneal.is_some() {
            anneal_solve_with(m, &self.spec, &self.x0, &u0, &self.solver, &self.time, observer)
        } else {
            stddp_solve_with(m, &self.spec, &self.x0, &u0, &self.solver, &self.time, observer)
        }
    }

    pub fn solve(&self) -> Result<Solution> {
        self.solve_with(&mut |_| {})
    }

    /// The state under zero control.
    pub fn uncontrolled(&self) -> Result<StateTrajectory> {
        rollout(self.model.as_ref(), &self.x0, &self.zero_controls(), &self.time, self.solver.integrator)
    }
}
