//! PDE dynamics on a [`SpatialGrid`]: right-hand sides, analytic Jacobians and
//! forward rollout.
//!
//! Every model is a method-of-lines system `dX/dt = F(t, X, U_d, U_b)` on the
//! interior nodes. Jacobians are returned in vector form: `state` acts on a
//! state perturbation directly, `distributed` and `boundary` map actuator
//! space into the state.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, Stage, StddpError};
use crate::grid::{BoundaryCondition, DifferenceOperator, Field, SpatialGrid};
use crate::trajectory::{ControlTrajectory, StateTrajectory, TimeGrid};

/// Magnitude beyond which a forward integration is declared divergent.
pub const ROLLOUT_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians {
    /// `F_X`, n × n.
    pub state: DMatrix<f64>,
    /// `F_{U_d}`, n × n_d.
    pub distributed: DMatrix<f64>,
    /// Boundary input map, n × n_b. This is `-N_{U_b}` once the boundary
    /// constraint has been folded into the interior stencil.
    pub boundary: DMatrix<f64>,
}

pub trait PdeModel: Send + Sync {
    fn grid(&self) -> &SpatialGrid;

    fn n_distributed(&self) -> usize;

    fn n_boundary(&self) -> usize {
        0
    }

    /// Quadrature weight of the distributed control inner product: `dx` when
    /// every node carries its own actuator, `1` for a finite actuator set.
    fn control_quadrature(&self) -> f64 {
        1.0
    }

    /// True when `F_X` does not depend on `(t, X, U)`.
    fn has_constant_jacobian(&self) -> bool {
        false
    }

    fn rhs(&self, t: f64, x: &Field, u_d: &DVector<f64>, u_b: &DVector<f64>) -> Result<Field>;

    fn jacobians(&self, t: f64, x: &Field, u_d: &DVector<f64>, u_b: &DVector<f64>) -> Jacobians;

    fn check_inputs(&self, x: &Field, u_d: &DVector<f64>, u_b: &DVector<f64>) -> Result<()> {
        self.grid().check_field(x, "state")?;
        if u_d.len() != self.n_distributed() {
            return Err(StddpError::mismatch("distributed control", self.n_distributed(), u_d.len()));
        }
        if u_b.len() != self.n_boundary() {
            return Err(StddpError::mismatch("boundary control", self.n_boundary(), u_b.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatParams {
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurgersParams {
    pub epsilon: f64,
    pub bc_value: f64,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(StddpError::InvalidParameter(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// `∂_t h = ε ∂_xx h + m(x)ᵀ U_d`, optionally with the two Dirichlet values
/// acting as boundary controls.
#[derive(Debug, Clone)]
pub struct HeatModel {
    grid: SpatialGrid,
    params: HeatParams,
    d2: DifferenceOperator,
    actuation: DMatrix<f64>,
    quadrature: f64,
    boundary_input: DMatrix<f64>,
}

impl HeatModel {
    /// Full-field actuation: one actuator per interior node.
    pub fn new(grid: SpatialGrid, params: HeatParams) -> Result<Self> {
        let n = grid.n_nodes();
        let dx = grid.dx();
        Self::with_actuation(grid, params, DMatrix::identity(n, n), dx)
    }

    pub fn with_actuation(
        grid: SpatialGrid,
        params: HeatParams,
        actuation: DMatrix<f64>,
        quadrature: f64,
    ) -> Result<Self> {
        check_positive("thermal diffusivity", params.epsilon)?;
        if actuation.nrows() != grid.n_nodes() {
            return Err(StddpError::mismatch("actuation rows", grid.n_nodes(), actuation.nrows()));
        }
        let d2 = grid.second_difference();
        Ok(HeatModel {
            boundary_input: DMatrix::zeros(grid.n_nodes(), 0),
            grid,
            params,
            d2,
            actuation,
            quadrature,
        })
    }

    /// Turn the left/right Dirichlet values into two boundary controls.
    pub fn with_boundary_control(mut self) -> Self {
        let n = self.grid.n_nodes();
        let gain = self.params.epsilon / (self.grid.dx() * self.grid.dx());
        let mut b = DMatrix::zeros(n, 2);
        b[(0, 0)] = gain;
        b[(n - 1, 1)] = gain;
        self.boundary_input = b;
        self.grid = self.grid.with_bc(BoundaryCondition::homogeneous_dirichlet());
        self.d2 = self.grid.second_difference();
        self
    }

    pub fn params(&self) -> HeatParams {
        self.params
    }

    pub fn actuation(&self) -> &DMatrix<f64> {
        &self.actuation
    }
}

impl PdeModel for HeatModel {
    fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    fn n_distributed(&self) -> usize {
        self.actuation.ncols()
    }

    fn n_boundary(&self) -> usize {
        self.boundary_input.ncols()
    }

    fn control_quadrature(&self) -> f64 {
        self.quadrature
    }

    fn has_constant_jacobian(&self) -> bool {
        true
    }

    fn rhs(&self, _t: f64, x: &Field, u_d: &DVector<f64>, u_b: &DVector<f64>) -> Result<Field> {
        self.check_inputs(x, u_d, u_b)?;
        let mut out = self.d2.apply(x) * self.params.epsilon;
        out += &self.actuation * u_d;
        if !u_b.is_empty() {
            out += &self.boundary_input * u_b;
        }
        Ok(out)
    }

    fn jacobians(&self, _t: f64, _x: &Field, _u_d: &DVector<f64>, _u_b: &DVector<f64>) -> Jacobians {
        Jacobians {
            state: &self.d2.matrix * self.params.epsilon,
            distributed: self.actuation.clone(),
            boundary: self.boundary_input.clone(),
        }
    }
}

/// `∂_t h = -h ∂_x h + ε ∂_xx h + m(x)ᵀ U_d` with `h = bc_value` at both ends.
#[derive(Debug, Clone)]
pub struct BurgersModel {
    grid: SpatialGrid,
    params: BurgersParams,
    d1: DifferenceOperator,
    d2: DifferenceOperator,
    actuation: DMatrix<f64>,
}

/// Gaussian bumps `exp(-(x - c_i)² / (2σ²))`, centers equispaced in `(0, a)`,
/// `σ = a / (4·n_act)`.
pub fn gaussian_actuators(grid: &SpatialGrid, n_act: usize) -> DMatrix<f64> {
    let a = grid.length();
    let sigma = a / (4.0 * n_act as f64);
    let x = grid.nodes();
    DMatrix::from_fn(grid.n_nodes(), n_act, |j, i| {
        let c = a * (i + 1) as f64 / (n_act + 1) as f64;
        (-(x[j] - c).powi(2) / (2.0 * sigma * sigma)).exp()
    })
}

impl BurgersModel {
    pub fn new(grid: SpatialGrid, params: BurgersParams, n_act: usize) -> Result<Self> {
        check_positive("viscosity", params.epsilon)?;
        if n_act == 0 {
            return Err(StddpError::InvalidParameter("need at least one actuator".into()));
        }
        let grid = grid.with_bc(BoundaryCondition::Dirichlet {
            left: params.bc_value,
            right: params.bc_value,
        });
        let actuation = gaussian_actuators(&grid, n_act);
        Ok(BurgersModel {
            d1: grid.first_difference(),
            d2: grid.second_difference(),
            grid,
            params,
            actuation,
        })
    }

    pub fn params(&self) -> BurgersParams {
        self.params
    }

    pub fn actuation(&self) -> &DMatrix<f64> {
        &self.actuation
    }
}

impl PdeModel for BurgersModel {
    fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    fn n_distributed(&self) -> usize {
        self.actuation.ncols()
    }

    fn rhs(&self, _t: f64, x: &Field, u_d: &DVector<f64>, u_b: &DVector<f64>) -> Result<Field> {
        self.check_inputs(x, u_d, u_b)?;
        let advection = x.component_mul(&self.d1.apply(x));
        Ok(self.d2.apply(x) * self.params.epsilon - advection + &self.actuation * u_d)
    }

    fn jacobians(&self, _t: f64, x: &Field, _u_d: &DVector<f64>, _u_b: &DVector<f64>) -> Jacobians {
        let n = self.grid.n_nodes();
        let slope = self.d1.apply(x);
        let mut fx = &self.d2.matrix * self.params.epsilon;
        for i in 0..n {
            fx[(i, i)] -= slope[i];
            for j in i.saturating_sub(1)..(i + 2).min(n) {
                fx[(i, j)] -= x[i] * self.d1.matrix[(i, j)];
            }
        }
        Jacobians {
            state: fx,
            distributed: self.actuation.clone(),
            boundary: DMatrix::zeros(n, 0),
        }
    }
}

/// Scalar ODE `dx/dt = a x + c x² + b u` on [`SpatialGrid::scalar`]; the
/// finite-dimensional limit used to check the field equations.
#[derive(Debug, Clone)]
pub struct ScalarOde {
    pub a: f64,
    pub c: f64,
    pub b: f64,
    grid: SpatialGrid,
}

impl ScalarOde {
    pub fn new(a: f64, c: f64, b: f64) -> Self {
        ScalarOde {
            a,
            c,
            b,
            grid: SpatialGrid::scalar(),
        }
    }
}

impl PdeModel for ScalarOde {
    fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    fn n_distributed(&self) -> usize {
        1
    }

    fn has_constant_jacobian(&self) -> bool {
        self.c == 0.0
    }

    fn rhs(&self, _t: f64, x: &Field, u_d: &DVector<f64>, u_b: &DVector<f64>) -> Result<Field> {
        self.check_inputs(x, u_d, u_b)?;
        let v = x[0];
        Ok(Field::from_element(1, self.a * v + self.c * v * v + self.b * u_d[0]))
    }

    fn jacobians(&self, _t: f64, x: &Field, _u_d: &DVector<f64>, _u_b: &DVector<f64>) -> Jacobians {
        Jacobians {
            state: DMatrix::from_element(1, 1, self.a + 2.0 * self.c * x[0]),
            distributed: DMatrix::from_element(1, 1, self.b),
            boundary: DMatrix::zeros(1, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Euler,
    /// Explicit midpoint; controls are super-sampled at the half step by
    /// linear interpolation between neighbouring samples.
    Rk2,
}

pub(crate) fn check_finite(x: &Field, limit: f64) -> bool {
    x.iter().all(|v| v.is_finite() && v.abs() <= limit)
}

/// Control sample at the half step `k + 1/2`.
pub(crate) fn midpoint_control(u: &[DVector<f64>], k: usize) -> DVector<f64> {
    match u.get(k + 1) {
        Some(next) => (&u[k] + next) * 0.5,
        None => u[k].clone(),
    }
}

/// Integrate the dynamics forward from `x0` under piecewise-constant controls.
pub fn rollout(
    model: &dyn PdeModel,
    x0: &Field,
    controls: &ControlTrajectory,
    time: &TimeGrid,
    integrator: Integrator,
) -> Result<StateTrajectory> {
    model.grid().check_field(x0, "initial state")?;
    controls.check_shape(time.n_steps, model.n_distributed(), model.n_boundary())?;
    let dt = time.dt;
    let mut states = Vec::with_capacity(time.n_steps + 1);
    states.push(x0.clone());
    for k in 0..time.n_steps {
        let t = time.time(k);
        let x = &states[k];
        let (ud, ub) = (&controls.distributed[k], &controls.boundary[k]);
        let next = match integrator {
            Integrator::Euler => x + model.rhs(t, x, ud, ub)? * dt,
            Integrator::Rk2 => {
                let half = x + model.rhs(t, x, ud, ub)? * (0.5 * dt);
                let ud_mid = midpoint_control(&controls.distributed, k);
                let ub_mid = midpoint_control(&controls.boundary, k);
                x + model.rhs(t + 0.5 * dt, &half, &ud_mid, &ub_mid)? * dt
            }
        };
        if !check_finite(&next, ROLLOUT_LIMIT) {
            return Err(StddpError::diverged(Stage::Rollout, k + 1));
        }
        states.push(next);
    }
    Ok(StateTrajectory {
        times: time.times(),
        states,
    })
}
