//! Independent references for the value-function machinery.
//!
//! The adjoint (`ψ`) recursion gives the exact gradient of the Euler-discretized
//! cost; finite differences check it; a plain-`f64` scalar DDP written in
//! gain form checks the field equations in their one-node limit.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::backward::{Scheme, ValueTrajectory};
use crate::cost::CostSpec;
use crate::error::{Result, StddpError};
use crate::grid::Field;
use crate::models::{rollout, Integrator, PdeModel, ScalarOde};
use crate::trajectory::{ControlTrajectory, StateTrajectory, TimeGrid};

/// `Φ_k = I + dt·F_X(t_k)` for the explicit-Euler rollout.
pub fn transition_operators(
    model: &dyn PdeModel,
    traj: &StateTrajectory,
    controls: &ControlTrajectory,
    time: &TimeGrid,
) -> Vec<DMatrix<f64>> {
    let n = model.grid().n_nodes();
    (0..time.n_steps)
        .map(|k| {
            let j = model.jacobians(time.time(k), &traj.states[k], &controls.distributed[k], &controls.boundary[k]);
            DMatrix::identity(n, n) + j.state * time.dt
        })
        .collect()
}

/// `ψ_N = φ_X`, `ψ_k = dt·L_X + Φ_kᵀ ψ_{k+1}`: the cost gradient with respect
/// to the state field, in the same units as `V_X`.
pub fn psi_recursion(
    model: &dyn PdeModel,
    spec: &CostSpec,
    traj: &StateTrajectory,
    controls: &ControlTrajectory,
    time: &TimeGrid,
) -> Result<Vec<Field>> {
    let phis = transition_operators(model, traj, controls, time);
    let mut psi = vec![Field::zeros(0); time.n_steps + 1];
    psi[time.n_steps] = spec.terminal_partials(model, traj.terminal())?.phi_x;
    for k in (0..time.n_steps).rev() {
        let p = spec.partials(model, &traj.states[k], &controls.distributed[k], &controls.boundary[k])?;
        psi[k] = p.l_x * time.dt + phis[k].tr_mul(&psi[k + 1]);
    }
    Ok(psi)
}

/// Gradient of the discrete cost with respect to every control entry:
/// `g_k = dt·(L_U + dx·Bᵀ ψ_{k+1})`.
pub fn cost_gradient_psi(
    model: &dyn PdeModel,
    spec: &CostSpec,
    traj: &StateTrajectory,
    controls: &ControlTrajectory,
    time: &TimeGrid,
) -> Result<ControlTrajectory> {
    let psi = psi_recursion(model, spec, traj, controls, time)?;
    let dx = model.grid().dx();
    let mut g = ControlTrajectory::zeros(time.n_steps, model.n_distributed(), model.n_boundary());
    for k in 0..time.n_steps {
        let (x, ud, ub) = (&traj.states[k], &controls.distributed[k], &controls.boundary[k]);
        let p = spec.partials(model, x, ud, ub)?;
        let j = model.jacobians(time.time(k), x, ud, ub);
        g.distributed[k] = (p.l_u + j.distributed.tr_mul(&psi[k + 1]) * dx) * time.dt;
        g.boundary[k] = (p.l_ub + j.boundary.tr_mul(&psi[k + 1]) * dx) * time.dt;
    }
    Ok(g)
}

/// Central differences of the total cost, one rollout pair per entry.
pub fn fd_gradient(
    model: &dyn PdeModel,
    spec: &CostSpec,
    x0: &Field,
    controls: &ControlTrajectory,
    time: &TimeGrid,
    integrator: Integrator,
    h: f64,
) -> Result<ControlTrajectory> {
    let cost = |u: &ControlTrajectory| -> Result<f64> {
        let traj = rollout(model, x0, u, time, integrator)?;
        spec.total_cost(model, &traj, u, time)
    };
    let values: Vec<f64> = (0..controls.n_entries())
        .into_par_iter()
        .map(|i| {
            let mut plus = controls.clone();
            *plus.entry_mut(i) += h;
            let mut minus = controls.clone();
            *minus.entry_mut(i) -= h;
            Ok((cost(&plus)? - cost(&minus)?) / (2.0 * h))
        })
        .collect::<Result<_>>()?;
    let mut g = ControlTrajectory::zeros(controls.len(), controls.n_distributed(), controls.n_boundary());
    for (i, v) in values.into_iter().enumerate() {
        *g.entry_mut(i) = v;
    }
    Ok(g)
}

/// `D_k = V_X,k − ψ_k` rebuilt from its own recursion
/// `D_k = Φ_kᵀ D_{k+1} − dt·dx·V_XX,k+1 B L⁻¹ Q_u,k`, `D_N = 0`.
/// Holds exactly for the explicit-Euler scheme.
pub fn value_gradient_defect(
    model: &dyn PdeModel,
    spec: &CostSpec,
    traj: &StateTrajectory,
    controls: &ControlTrajectory,
    time: &TimeGrid,
    values: &ValueTrajectory,
) -> Result<Vec<Field>> {
    let phis = transition_operators(model, traj, controls, time);
    let dx = model.grid().dx();
    let n = model.grid().n_nodes();
    let mut d = vec![Field::zeros(n); time.n_steps + 1];
    for k in (0..time.n_steps).rev() {
        let (x, ud, ub) = (&traj.states[k], &controls.distributed[k], &controls.boundary[k]);
        let p = spec.partials(model, x, ud, ub)?;
        let j = model.jacobians(time.time(k), x, ud, ub);
        let inv = |m: &DMatrix<f64>| m.clone().try_inverse().ok_or_else(|| StddpError::SingularSystem("control Hessian".into()));
        let qd = &p.l_u + j.distributed.tr_mul(&values.v_x[k + 1]) * dx;
        let qb = &p.l_ub + j.boundary.tr_mul(&values.v_x[k + 1]) * dx;
        let push = &j.distributed * (inv(&p.l_uu)? * qd) + &j.boundary * (inv(&p.l_ubub)? * qb);
        d[k] = phis[k].tr_mul(&d[k + 1]) - &values.v_xx[k + 1] * push * (time.dt * dx);
    }
    Ok(d)
}

/// Scalar cost `∫ q(x−h)² + r u² dt + q_f (x_N − h)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarCost {
    pub q: f64,
    pub q_f: f64,
    pub r: f64,
    pub h: f64,
}

/// Scalar value expansion along a nominal.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarValues {
    pub v: Vec<f64>,
    pub v_x: Vec<f64>,
    pub v_xx: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Local {
    l: f64,
    lx: f64,
    lxx: f64,
    lu: f64,
    luu: f64,
    fx: f64,
    fu: f64,
}

impl Local {
    fn at(ode: &ScalarOde, c: &ScalarCost, x: f64, u: f64) -> Self {
        Local {
            l: c.q * (x - c.h).powi(2) + c.r * u * u,
            lx: 2.0 * c.q * (x - c.h),
            lxx: 2.0 * c.q,
            lu: 2.0 * c.r * u,
            luu: 2.0 * c.r,
            fx: ode.a + 2.0 * ode.c * x,
            fu: ode.b,
        }
    }

    /// Rates `−(V̇, V̇_x, V̇_xx)` in feedforward/feedback form.
    fn rates(&self, vx: f64, vxx: f64) -> (f64, f64, f64) {
        let qu = self.lu + self.fu * vx;
        let k = -qu / self.luu;
        let big_k = -self.fu * vxx / self.luu;
        (
            self.l + qu * k + 0.5 * k * self.luu * k,
            self.lx + self.fx * vx + big_k * qu,
            self.lxx + 2.0 * self.fx * vxx - big_k * self.luu * big_k,
        )
    }
}

/// DDP on the scalar ODE with plain arithmetic, for every scheme. `mu` is
/// added to `V_xx` after each step, never at the terminal knot.
pub fn scalar_ddp_reference(
    ode: &ScalarOde,
    cost: &ScalarCost,
    x: &[f64],
    u: &[f64],
    dt: f64,
    scheme: Scheme,
    mu: f64,
) -> ScalarValues {
    let n = u.len();
    assert_eq!(x.len(), n + 1, "state knots must exceed controls by one");
    let mut v = vec![0.0; n + 1];
    let mut vx = vec![0.0; n + 1];
    let mut vxx = vec![0.0; n + 1];
    let e = x[n] - cost.h;
    (v[n], vx[n], vxx[n]) = (cost.q_f * e * e, 2.0 * cost.q_f * e, 2.0 * cost.q_f);
    for k in (0..n).rev() {
        let loc = Local::at(ode, cost, x[k], u[k]);
        let (a, b, c) = (v[k + 1], vx[k + 1], vxx[k + 1]);
        let (nv, nvx, nvxx) = match scheme {
            Scheme::ExplicitEuler => {
                let (r0, r1, r2) = loc.rates(b, c);
                (a + dt * r0, b + dt * r1, c + dt * r2)
            }
            Scheme::SemiImplicit => {
                let (r0, r1, _) = loc.rates(b, c);
                let quad = (loc.fu * c).powi(2) / loc.luu;
                (a + dt * r0, b + dt * r1, (c + dt * (loc.lxx - quad)) / (1.0 - 2.0 * dt * loc.fx))
            }
            Scheme::Rk2 => {
                let hi = Local::at(ode, cost, x[k + 1], u[if k + 1 < n { k + 1 } else { n - 1 }]);
                let next_u = if k + 1 < n { u[k + 1] } else { u[k] };
                let mid = Local::at(ode, cost, 0.5 * (x[k] + x[k + 1]), 0.5 * (u[k] + next_u));
                let (_, s1, s2) = hi.rates(b, c);
                let (hx, hxx) = (b + 0.5 * dt * s1, c + 0.5 * dt * s2);
                let (r0, r1, r2) = mid.rates(hx, hxx);
                (a + dt * r0, b + dt * r1, c + dt * r2)
            }
            Scheme::ExactDiscrete => {
                let (ad, bd) = (1.0 + dt * loc.fx, dt * loc.fu);
                let qx = dt * loc.lx + ad * b;
                let qu = dt * loc.lu + bd * b;
                let qxx = dt * loc.lxx + ad * c * ad;
                let quu = dt * loc.luu + bd * c * bd;
                let qux = bd * c * ad;
                let (kk, big_k) = (-qu / quu, -qux / quu);
                (a + dt * loc.l + qu * kk + 0.5 * kk * quu * kk, qx + big_k * qu, qxx + big_k * qux)
            }
        };
        (v[k], vx[k], vxx[k]) = (nv, nvx, nvxx + mu);
    }
    ScalarValues { v, v_x: vx, v_xx: vxx }
}

/// Largest entrywise gap relative to the largest entry of `reference`.
pub fn relative_gap(a: &ControlTrajectory, reference: &ControlTrajectory) -> f64 {
    let scale = reference.max_abs();
    let gap = a.sub(reference).max_abs();
    if scale == 0.0 { gap } else { gap / scale }
}
