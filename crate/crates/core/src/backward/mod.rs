//! Backward integration of the value functional and its first two Gateaux
//! derivatives along a nominal trajectory.
//!
//! Conventions: `V_X` is a field and `V_XX` a kernel, so the vector gradient
//! and Hessian of the discrete value are `dx·V_X` and `dx²·V_XX`. Distributed
//! and boundary controls are handled jointly as `u = [U_d; U_b]` with input
//! map `B = [F_{U_d} | B_b]` and block-diagonal `L_UU`.
//!
//! On the interval `[t_k, t_{k+1}]` the continuous schemes use the nominal
//! `(X_k, U_k)` and the values at `t_{k+1}`. Writing `S = B L_UU⁻¹ Bᵀ` and
//! `Q_u = L_U + dx·Bᵀ V_X`, the rates `−d/dt` are
//!
//! ```text
//! V    : L − ½ Q_uᵀ L_UU⁻¹ Q_u
//! V_X  : L_X + F_Xᵀ V_X − dx·V_XX B L_UU⁻¹ Q_u
//! V_XX : L_XX + F_Xᵀ V_XX + V_XX F_X − dx²·V_XX S V_XX
//! ```

pub mod kron;

use nalgebra::{DMatrix, DVector, LU};
use serde::{Deserialize, Serialize};

use crate::cost::CostSpec;
use crate::error::{Result, Stage, StddpError};
use crate::grid::{Field, Kernel};
use crate::models::{PdeModel, midpoint_control};
use crate::trajectory::{ControlTrajectory, StateTrajectory, TimeGrid};

pub use kron::KroneckerSystem;

/// Magnitude beyond which the backward pass is declared divergent.
pub const VALUE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    ExplicitEuler,
    /// Explicit midpoint; nominal quantities are interpolated to the half step.
    Rk2,
    /// `V_XX` linear terms implicit through a Kronecker-sum solve.
    SemiImplicit,
    /// Exact second-order expansion of the explicit-Euler discrete problem.
    ExactDiscrete,
}

impl Scheme {
    pub fn is_continuous(self) -> bool {
        self != Scheme::ExactDiscrete
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSelector {
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "SchemeSelector::default_mu")]
    pub mu: f64,
}

impl Default for SchemeSelector {
    fn default() -> Self {
        SchemeSelector {
            scheme: Scheme::default(),
            mu: Self::default_mu(),
        }
    }
}

impl SchemeSelector {
    pub fn default_mu() -> f64 {
        1e-6
    }

    pub fn new(scheme: Scheme, mu: f64) -> Self {
        SchemeSelector { scheme, mu }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(StddpError::InvalidParameter(format!("regularization mu = {} must be nonnegative", self.mu)));
        }
        Ok(())
    }
}

/// `(V, V_X, V_XX)` at the `n_steps + 1` knots.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTrajectory {
    pub v: Vec<f64>,
    pub v_x: Vec<Field>,
    pub v_xx: Vec<Kernel>,
}

impl ValueTrajectory {
    pub fn n_steps(&self) -> usize {
        self.v.len() - 1
    }

    /// Left Riemann sum `Σ_{k<N} V_k·dt`.
    pub fn value_integral(&self, dt: f64) -> f64 {
        self.v[..self.v.len() - 1].iter().sum::<f64>() * dt
    }

    /// Largest `|V_XX − V_XXᵀ|` entry over the trajectory.
    pub fn max_asymmetry(&self) -> f64 {
        self.v_xx
            .iter()
            .map(|w| (w - w.transpose()).amax())
            .fold(0.0, f64::max)
    }
}

/// Model and cost data entering one backward step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepData {
    pub dx: f64,
    pub fx: DMatrix<f64>,
    /// Joint input map `[F_{U_d} | B_b]`.
    pub b: DMatrix<f64>,
    pub n_distributed: usize,
    pub l: f64,
    pub l_x: Field,
    pub l_xx: Kernel,
    /// `[L_{U_d}; L_{U_b}]`.
    pub l_u: DVector<f64>,
    pub l_uu: DMatrix<f64>,
    pub l_uu_inv: DMatrix<f64>,
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (na, nb) = (a.nrows(), b.nrows());
    let mut m = DMatrix::zeros(na + nb, na + nb);
    m.view_mut((0, 0), (na, na)).copy_from(a);
    m.view_mut((na, na), (nb, nb)).copy_from(b);
    m
}

impl StepData {
    pub fn at(
        model: &dyn PdeModel,
        spec: &CostSpec,
        t: f64,
        x: &Field,
        u_d: &DVector<f64>,
        u_b: &DVector<f64>,
    ) -> Result<Self> {
        let jac = model.jacobians(t, x, u_d, u_b);
        let p = spec.partials(model, x, u_d, u_b)?;
        let n = x.len();
        let (nd, nb) = (jac.distributed.ncols(), jac.boundary.ncols());
        let mut b = DMatrix::zeros(n, nd + nb);
        b.columns_mut(0, nd).copy_from(&jac.distributed);
        b.columns_mut(nd, nb).copy_from(&jac.boundary);
        Ok(StepData {
            dx: model.grid().dx(),
            fx: jac.state,
            b,
            n_distributed: nd,
            l: p.l,
            l_x: p.l_x,
            l_xx: p.l_xx,
            l_u: stack(&p.l_u, &p.l_ub),
            l_uu: block_diag(&p.l_uu, &p.l_ubub),
            l_uu_inv: block_diag(&p.l_uu_inv, &p.l_ubub_inv),
        })
    }

    /// `Q_u = L_U + dx·Bᵀ V_X`.
    pub fn q_u(&self, v_x: &Field) -> DVector<f64> {
        &self.l_u + self.b.tr_mul(v_x) * self.dx
    }
}

/// `dx²·V_XX B L_UU⁻¹ Bᵀ V_XX`.
pub fn riccati_quadratic(v_xx: &Kernel, d: &StepData) -> Kernel {
    let vb = v_xx * &d.b;
    let w = &d.l_uu_inv * vb.transpose();
    (vb * w) * (d.dx * d.dx)
}

fn rate_second(v_xx: &Kernel, d: &StepData) -> Kernel {
    let jv = d.fx.tr_mul(v_xx);
    let vj = v_xx * &d.fx;
    &d.l_xx + jv + vj - riccati_quadratic(v_xx, d)
}

fn rate_first(v_x: &Field, v_xx: &Kernel, d: &StepData) -> Field {
    let q_u = d.q_u(v_x);
    let feedback = v_xx * (&d.b * (&d.l_uu_inv * q_u));
    &d.l_x + d.fx.tr_mul(v_x) - feedback * d.dx
}

fn rate_zeroth(v_x: &Field, d: &StepData) -> f64 {
    let q_u = d.q_u(v_x);
    d.l - 0.5 * q_u.dot(&(&d.l_uu_inv * &q_u))
}

pub fn step_second_explicit(v_xx_next: &Kernel, d: &StepData, dt: f64) -> Kernel {
    v_xx_next + rate_second(v_xx_next, d) * dt
}

/// Solve `[I − dt(F_Xᵀ ⊕ F_Xᵀ)]·vec(V_prev) = vec(V_next + dt·L_XX − dt·quadratic)`;
/// `system` must be factored for `(d.fx, dt)`.
pub fn step_second_semi_implicit(v_xx_next: &Kernel, d: &StepData, system: &KroneckerSystem, dt: f64) -> Kernel {
    let rhs = v_xx_next + (&d.l_xx - riccati_quadratic(v_xx_next, d)) * dt;
    system.solve(&rhs)
}

pub fn step_first(v_x_next: &Field, v_xx_next: &Kernel, d: &StepData, dt: f64) -> Field {
    v_x_next + rate_first(v_x_next, v_xx_next, d) * dt
}

pub fn step_zeroth(v_next: f64, v_x_next: &Field, d: &StepData, dt: f64) -> f64 {
    v_next + rate_zeroth(v_x_next, d) * dt
}

/// Second-order expansion of the Euler-discretized cost-to-go around the
/// nominal on one interval, in vector (not kernel) units.
#[derive(Debug, Clone)]
pub struct DiscreteExpansion {
    pub q_x: DVector<f64>,
    pub q_u: DVector<f64>,
    pub q_xx: DMatrix<f64>,
    pub q_uu: DMatrix<f64>,
    pub q_ux: DMatrix<f64>,
    q_uu_lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl DiscreteExpansion {
    pub fn new(v_x_next: &Field, v_xx_next: &Kernel, d: &StepData, dt: f64) -> Result<Self> {
        let n = d.fx.nrows();
        let h = v_xx_next * (d.dx * d.dx);
        let g = v_x_next * d.dx;
        let ad = DMatrix::identity(n, n) + &d.fx * dt;
        let bd = &d.b * dt;
        let h_ad = &h * &ad;
        let q_uu = &d.l_uu * dt + bd.tr_mul(&(&h * &bd));
        let q_uu_lu = q_uu.clone().lu();
        if !q_uu_lu.is_invertible() {
            return Err(StddpError::SingularSystem("control Hessian Q_uu is singular".into()));
        }
        Ok(DiscreteExpansion {
            q_x: &d.l_x * (dt * d.dx) + ad.tr_mul(&g),
            q_u: &d.l_u * dt + bd.tr_mul(&g),
            q_xx: &d.l_xx * (dt * d.dx * d.dx) + ad.tr_mul(&h_ad),
            q_ux: bd.tr_mul(&h_ad),
            q_uu,
            q_uu_lu,
        })
    }

    /// `(k, K) = −Q_uu⁻¹ (Q_u, Q_ux)`.
    pub fn gains(&self) -> (DVector<f64>, DMatrix<f64>) {
        (
            -self.q_uu_lu.solve(&self.q_u).expect("Q_uu checked invertible"),
            -self.q_uu_lu.solve(&self.q_ux).expect("Q_uu checked invertible"),
        )
    }
}

fn step_exact_discrete(
    v_next: f64,
    v_x_next: &Field,
    v_xx_next: &Kernel,
    d: &StepData,
    dt: f64,
) -> Result<(f64, Field, Kernel)> {
    let e = DiscreteExpansion::new(v_x_next, v_xx_next, d, dt)?;
    let (k, big_k) = e.gains();
    let v = v_next + d.l * dt + 0.5 * e.q_u.dot(&k);
    let v_x = (&e.q_x + e.q_ux.tr_mul(&k)) / d.dx;
    let v_xx = (&e.q_xx + e.q_ux.tr_mul(&big_k)) / (d.dx * d.dx);
    Ok((v, v_x, v_xx))
}

fn within_limit(v: f64, v_x: &Field, v_xx: &Kernel) -> bool {
    let ok = |z: f64| z.is_finite() && z.abs() <= VALUE_LIMIT;
    ok(v) && v_x.iter().all(|&z| ok(z)) && v_xx.iter().all(|&z| ok(z))
}

/// Symmetrize and add `μ·I/dx`.
pub fn regularize(v_xx: &mut Kernel, mu: f64, dx: f64) {
    let n = v_xx.nrows();
    for j in 0..n {
        for i in 0..j {
            let s = 0.5 * (v_xx[(i, j)] + v_xx[(j, i)]);
            v_xx[(i, j)] = s;
            v_xx[(j, i)] = s;
        }
        v_xx[(j, j)] += mu / dx;
    }
}

pub(crate) fn check_nominal(
    model: &dyn PdeModel,
    traj: &StateTrajectory,
    controls: &ControlTrajectory,
    time: &TimeGrid,
) -> Result<()> {
    if traj.states.len() != time.n_steps + 1 {
        return Err(StddpError::mismatch("state trajectory length", time.n_steps + 1, traj.states.len()));
    }
    controls.check_shape(time.n_steps, model.n_distributed(), model.n_boundary())
}

/// Step data at the knot `k`; the terminal knot reuses the last control.
fn knot_data(
    model: &dyn PdeModel,
    spec: &CostSpec,
    traj: &StateTrajectory,
    controls: &ControlTrajectory,
    time: &TimeGrid,
    k: usize,
) -> Result<StepData> {
    let j = k.min(time.n_steps - 1);
    StepData::at(
        model,
        spec,
        time.time(k),
        &traj.states[k],
        &controls.distributed[j],
        &controls.boundary[j],
    )
}

fn midpoint_data(
    model: &dyn PdeModel,
    spec: &CostSpec,
    traj: &StateTrajectory,
    controls: &ControlTrajectory,
    time: &TimeGrid,
    k: usize,
) -> Result<StepData> {
    let x = (&traj.states[k] + &traj.states[k + 1]) * 0.5;
    let ud = midpoint_control(&controls.distributed, k);
    let ub = midpoint_control(&controls.boundary, k);
    StepData::at(model, spec, time.time(k) + 0.5 * time.dt, &x, &ud, &ub)
}

/// Integrate `(V, V_X, V_XX)` from the terminal cost back to `t0`.
pub fn backward_pass(
    model: &dyn PdeModel,
    spec: &CostSpec,
    traj: &StateTrajectory,
    controls: &ControlTrajectory,
    time: &TimeGrid,
    scheme: &SchemeSelector,
) -> Result<ValueTrajectory> {
    scheme.validate()?;
    check_nominal(model, traj, controls, time)?;
    let n_steps = time.n_steps;
    let dt = time.dt;
    let dx = model.grid().dx();
    let terminal = spec.terminal_partials(model, traj.terminal())?;

    let mut v = vec![0.0; n_steps + 1];
    let mut v_x = vec![Field::zeros(0); n_steps + 1];
    let mut v_xx = vec![Kernel::zeros(0, 0); n_steps + 1];
    v[n_steps] = terminal.phi;
    v_x[n_steps] = terminal.phi_x;
    v_xx[n_steps] = terminal.phi_xx;

    let mut system: Option<KroneckerSystem> = None;
    let mut upper = match scheme.scheme {
        Scheme::Rk2 => Some(knot_data(model, spec, traj, controls, time, n_steps)?),
        _ => None,
    };

    for k in (0..n_steps).rev() {
        let d = knot_data(model, spec, traj, controls, time, k)?;
        let (vn, vxn, vxxn) = (v[k + 1], &v_x[k + 1], &v_xx[k + 1]);
        let (vk, vxk, mut vxxk) = match scheme.scheme {
            Scheme::ExplicitEuler => (
                step_zeroth(vn, vxn, &d, dt),
                step_first(vxn, vxxn, &d, dt),
                step_second_explicit(vxxn, &d, dt),
            ),
            Scheme::SemiImplicit => {
                let reuse = system.as_ref().is_some_and(|s| s.matches(&d.fx, dt));
                if !reuse {
                    system = Some(KroneckerSystem::new(&d.fx, dt)?);
                }
                let sys = system.as_ref().expect("factorization present");
                (
                    step_zeroth(vn, vxn, &d, dt),
                    step_first(vxn, vxxn, &d, dt),
                    step_second_semi_implicit(vxxn, &d, sys, dt),
                )
            }
            Scheme::Rk2 => {
                let hi = upper.as_ref().expect("rk2 carries the upper knot");
                let mid = midpoint_data(model, spec, traj, controls, time, k)?;
                let h = 0.5 * dt;
                let vx_half = vxn + rate_first(vxn, vxxn, hi) * h;
                let vxx_half = vxxn + rate_second(vxxn, hi) * h;
                (
                    vn + rate_zeroth(&vx_half, &mid) * dt,
                    vxn + rate_first(&vx_half, &vxx_half, &mid) * dt,
                    vxxn + rate_second(&vxx_half, &mid) * dt,
                )
            }
            Scheme::ExactDiscrete => step_exact_discrete(vn, vxn, vxxn, &d, dt)?,
        };
        regularize(&mut vxxk, scheme.mu, dx);
        if !within_limit(vk, &vxk, &vxxk) {
            return Err(StddpError::diverged(Stage::Backward, k));
        }
        v[k] = vk;
        v_x[k] = vxk;
        v_xx[k] = vxxk;
        if upper.is_some() {
            upper = Some(d);
        }
    }
    Ok(ValueTrajectory { v, v_x, v_xx })
}
