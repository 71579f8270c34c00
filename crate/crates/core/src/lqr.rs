//! LQR of fields for linear models: kernel Riccati equation, optimal
//! feedback, and a report comparing an STDDP solution against it.
//!
//! Internally everything is done in vector units (`P̃ = dx²·P`, weights as
//! plain Hessians) with dense linear algebra, independently of the kernel
//! bookkeeping in [`crate::backward`].

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::backward::Scheme;
use crate::cost::CostSpec;
use crate::error::{Result, Stage, StddpError};
use crate::gains::compute_gains;
use crate::grid::{Field, Kernel};
use crate::models::PdeModel;
use crate::solver::Solution;
use crate::trajectory::{ControlTrajectory, StateTrajectory, TimeGrid};

const RICCATI_LIMIT: f64 = 1e12;

/// Whether the quadratic cost carries a ½ prefactor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostConvention {
    /// `½∫(⟨X, qX⟩ + Uᵀ r U) + ½⟨X_f, q_f X_f⟩`.
    Half,
    /// Same without the ½.
    Unit,
}

impl CostConvention {
    fn hessian_factor(self) -> f64 {
        match self {
            CostConvention::Half => 1.0,
            CostConvention::Unit => 2.0,
        }
    }
}

/// `dX/dt = A X + B_d U_d + B_b U_b` with kernel state weights and
/// actuator-space control weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrProblem {
    pub a: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    /// n × 0 when there is no boundary control.
    pub b_b: DMatrix<f64>,
    pub q: Kernel,
    pub q_f: Kernel,
    pub r_d: DMatrix<f64>,
    pub r_b: DMatrix<f64>,
    pub dx: f64,
    pub time: TimeGrid,
    pub convention: CostConvention,
}

/// `P(t_k)` as kernels at the `n_steps + 1` knots.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiTrajectory {
    pub p: Vec<Kernel>,
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Symmetric within `1e-10` (relative) with smallest eigenvalue `≥ −tol`.
pub fn is_symmetric_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-10 * scale && min_eigenvalue(m) >= -tol * scale
}

impl LqrProblem {
    /// Linear model with a tracking cost whose target vanishes: the LQR
    /// problem whose Riccati kernel STDDP must reproduce.
    pub fn from_model(model: &dyn PdeModel, spec: &CostSpec, time: &TimeGrid) -> Result<Self> {
        if !model.has_constant_jacobian() {
            return Err(StddpError::InvalidParameter("LQR reference needs a linear model".into()));
        }
        let grid = model.grid();
        let zero_x = grid.zeros();
        let zero_d = nalgebra::DVector::zeros(model.n_distributed());
        let zero_b = nalgebra::DVector::zeros(model.n_boundary());
        if model.rhs(time.t0, &zero_x, &zero_d, &zero_b)?.amax() != 0.0 {
            return Err(StddpError::InvalidParameter("LQR reference needs homogeneous boundary data".into()));
        }
        if spec.deviation(&zero_x).amax() != 0.0 {
            return Err(StddpError::InvalidParameter("LQR reference needs a zero target on the mask".into()));
        }
        let jac = model.jacobians(time.t0, &zero_x, &zero_d, &zero_b);
        let dx = grid.dx();
        let mask = DMatrix::from_diagonal(&spec.mask);
        let (nd, nb) = (model.n_distributed(), model.n_boundary());
        let prob = LqrProblem {
            a: jac.state,
            b_d: jac.distributed,
            b_b: jac.boundary,
            q: &mask * (spec.q / dx),
            q_f: &mask * (spec.q_f / dx),
            r_d: DMatrix::identity(nd, nd) * (spec.r_d * model.control_quadrature()),
            r_b: DMatrix::identity(nb, nb) * spec.r_b,
            dx,
            time: *time,
            convention: CostConvention::Unit,
        };
        prob.validate()?;
        Ok(prob)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n || self.b_d.nrows() != n || self.b_b.nrows() != n {
            return Err(StddpError::mismatch("LQR system matrices", n, self.b_d.nrows()));
        }
        if !is_symmetric_psd(&self.q, 1e-12) || !is_symmetric_psd(&self.q_f, 1e-12) {
            return Err(StddpError::InvalidParameter("state weight kernels must be symmetric PSD".into()));
        }
        for r in [&self.r_d, &self.r_b] {
            if r.nrows() > 0 && (!is_symmetric_psd(r, 0.0) || min_eigenvalue(r) <= 0.0) {
                return Err(StddpError::InvalidParameter("control weights must be symmetric positive definite".into()));
            }
        }
        Ok(())
    }

    pub fn n_distributed(&self) -> usize {
        self.b_d.ncols()
    }

    /// `[B_d | B_b]`.
    pub fn input(&self) -> DMatrix<f64> {
        let (n, nd, nb) = (self.a.nrows(), self.b_d.ncols(), self.b_b.ncols());
        let mut b = DMatrix::zeros(n, nd + nb);
        b.columns_mut(0, nd).copy_from(&self.b_d);
        b.columns_mut(nd, nb).copy_from(&self.b_b);
        b
    }

    /// Hessians of the running cost in vector units: `(Q̃, Q̃_f, R̃)`.
    fn hessians(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let c = self.convention.hessian_factor();
        let w = c * self.dx * self.dx;
        let (nd, nb) = (self.r_d.nrows(), self.r_b.nrows());
        let mut r = DMatrix::zeros(nd + nb, nd + nb);
        r.view_mut((0, 0), (nd, nd)).copy_from(&(&self.r_d * c));
        r.view_mut((nd, nd), (nb, nb)).copy_from(&(&self.r_b * c));
        (&self.q * w, &self.q_f * w, r)
    }

    /// Cost of a trajectory under this problem's convention.
    pub fn cost(&self, states: &StateTrajectory, controls: &ControlTrajectory) -> f64 {
        let (q, q_f, r) = self.hessians();
        let half = |x: &Field, m: &DMatrix<f64>| 0.5 * x.dot(&(m * x));
        let mut j = half(states.terminal(), &q_f);
        for k in 0..self.time.n_steps {
            let u = stack(&controls.distributed[k], &controls.boundary[k]);
            j += self.time.dt * (half(&states.states[k], &q) + 0.5 * u.dot(&(&r * &u)));
        }
        j
    }
}

fn stack(a: &nalgebra::DVector<f64>, b: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (br, bc) = (b.nrows(), b.ncols());
    DMatrix::from_fn(a.nrows() * br, a.ncols() * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m = (&*m + t) * 0.5;
}

/// Integrate the Riccati equation backward from `P(t_f) = q_f`.
pub fn lqr_backward(prob: &LqrProblem, scheme: Scheme) -> Result<RiccatiTrajectory> {
    prob.validate()?;
    let n = prob.a.nrows();
    let dt = prob.time.dt;
    let steps = prob.time.n_steps;
    let (q, q_f, r) = prob.hessians();
    let b = prob.input();
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| StddpError::SingularSystem("control weight".into()))?;
    let s = &b * &r_inv * b.transpose();
    let a = &prob.a;
    // −dP̃/dt
    let rate = |p: &DMatrix<f64>| &q + a.tr_mul(p) + p * a - p * &s * p;

    let implicit = if scheme == Scheme::SemiImplicit {
        let eye = DMatrix::identity(n, n);
        let m = DMatrix::identity(n * n, n * n) - (kron(&eye, &a.transpose()) + kron(&a.transpose(), &eye)) * dt;
        let lu = m.lu();
        if !lu.is_invertible() {
            return Err(StddpError::SingularSystem("Kronecker-sum Riccati system".into()));
        }
        Some(lu)
    } else {
        None
    };
    let ad = DMatrix::identity(n, n) + a * dt;
    let bd = &b * dt;

    let mut p_tilde = vec![DMatrix::zeros(0, 0); steps + 1];
    p_tilde[steps] = q_f;
    for k in (0..steps).rev() {
        let p = &p_tilde[k + 1];
        let mut next = match scheme {
            Scheme::ExplicitEuler => p + rate(p) * dt,
            Scheme::Rk2 => {
                let mid = p + rate(p) * (0.5 * dt);
                p + rate(&mid) * dt
            }
            Scheme::SemiImplicit => {
                let rhs = p + (&q - p * &s * p) * dt;
                let lu = implicit.as_ref().expect("factored above");
                let v = lu
                    .solve(&nalgebra::DVector::from_column_slice(rhs.as_slice()))
                    .expect("invertible");
                DMatrix::from_column_slice(n, n, v.as_slice())
            }
            Scheme::ExactDiscrete => {
                let pb = p * &bd;
                let gram = &r * dt + bd.tr_mul(&pb);
                let cross = pb.tr_mul(&ad);
                let solved = gram
                    .lu()
                    .solve(&cross)
                    .ok_or_else(|| StddpError::SingularSystem("discrete Riccati control Hessian".into()))?;
                &q * dt + ad.tr_mul(&(p * &ad)) - cross.tr_mul(&solved)
            }
        };
        symmetrize(&mut next);
        if next.iter().any(|v| !v.is_finite() || v.abs() > RICCATI_LIMIT) {
            return Err(StddpError::diverged(Stage::Riccati, k));
        }
        p_tilde[k] = next;
    }
    let scale = 1.0 / (prob.dx * prob.dx);
    Ok(RiccatiTrajectory {
        p: p_tilde.into_iter().map(|p| p * scale).collect(),
    })
}

/// Feedback `K_k` for `[U_d; U_b] = K_k X_k`, using `P(t_{k+1})`.
pub fn lqr_feedback(prob: &LqrProblem, riccati: &RiccatiTrajectory, scheme: Scheme) -> Result<Vec<DMatrix<f64>>> {
    let n = prob.a.nrows();
    let dt = prob.time.dt;
    let (_, _, r) = prob.hessians();
    let b = prob.input();
    let w = prob.dx * prob.dx;
    (0..prob.time.n_steps)
        .map(|k| {
            let p = &riccati.p[k + 1] * w;
            let (lhs, rhs) = if scheme.is_continuous() {
                (r.clone(), b.tr_mul(&p))
            } else {
                let ad = DMatrix::identity(n, n) + &prob.a * dt;
                let bd = &b * dt;
                (&r * dt + bd.tr_mul(&(&p * &bd)), bd.tr_mul(&(&p * ad)))
            };
            lhs.lu()
                .solve(&rhs)
                .map(|m| -m)
                .ok_or_else(|| StddpError::SingularSystem("LQR gain".into()))
        })
        .collect()
}

fn split(prob: &LqrProblem, u: &nalgebra::DVector<f64>) -> (nalgebra::DVector<f64>, nalgebra::DVector<f64>) {
    let nd = prob.n_distributed();
    (u.rows(0, nd).into_owned(), u.rows(nd, u.len() - nd).into_owned())
}

/// `U_k = K_k X_k` along a given state trajectory.
pub fn lqr_controls(prob: &LqrProblem, riccati: &RiccatiTrajectory, states: &StateTrajectory, scheme: Scheme) -> Result<ControlTrajectory> {
    let gains = lqr_feedback(prob, riccati, scheme)?;
    let mut out = ControlTrajectory {
        distributed: Vec::with_capacity(gains.len()),
        boundary: Vec::with_capacity(gains.len()),
    };
    for (k, g) in gains.iter().enumerate() {
        let (d, b) = split(prob, &(g * &states.states[k]));
        out.distributed.push(d);
        out.boundary.push(b);
    }
    Ok(out)
}

/// Explicit-Euler closed loop from `x0` under the LQR feedback.
pub fn lqr_closed_loop(
    prob: &LqrProblem,
    riccati: &RiccatiTrajectory,
    x0: &Field,
    scheme: Scheme,
) -> Result<(StateTrajectory, ControlTrajectory)> {
    let gains = lqr_feedback(prob, riccati, scheme)?;
    let b = prob.input();
    let dt = prob.time.dt;
    let mut states = vec![x0.clone()];
    let mut controls = ControlTrajectory {
        distributed: Vec::with_capacity(gains.len()),
        boundary: Vec::with_capacity(gains.len()),
    };
    for g in &gains {
        let x = states.last().expect("nonempty");
        let u = g * x;
        let next = x + (&prob.a * x + &b * &u) * dt;
        let (d, bb) = split(prob, &u);
        controls.distributed.push(d);
        controls.boundary.push(bb);
        states.push(next);
    }
    Ok((
        StateTrajectory {
            times: prob.time.times(),
            states,
        },
        controls,
    ))
}

/// Largest relative deviations between an STDDP solution and the LQR reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceReport {
    /// `V_XX` against `P`.
    pub value_kernel: f64,
    /// Distributed feedback gains.
    pub feedback_d: f64,
    /// Boundary feedback gains, when the problem has boundary control.
    pub feedback_b: Option<f64>,
    /// Controls against the LQR closed loop from the same initial state.
    pub control: f64,
}

impl EquivalenceReport {
    pub fn max(&self) -> f64 {
        self.value_kernel
            .max(self.feedback_d)
            .max(self.feedback_b.unwrap_or(0.0))
            .max(self.control)
    }
}

fn relative_deviation<'a>(a: impl Iterator<Item = &'a DMatrix<f64>>, b: impl Iterator<Item = &'a DMatrix<f64>>) -> f64 {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (x, y) in a.zip(b) {
        diff = diff.max((x - y).amax());
        scale = scale.max(y.amax());
    }
    if scale == 0.0 { diff } else { diff / scale }
}

/// Compare `solution` (obtained with `scheme` on the problem `prob` was built
/// from) with the LQR kernel, gains and closed-loop controls.
pub fn check_stddp_equivalence(
    prob: &LqrProblem,
    model: &dyn PdeModel,
    spec: &CostSpec,
    solution: &Solution,
    x0: &Field,
    scheme: Scheme,
) -> Result<EquivalenceReport> {
    let riccati = lqr_backward(prob, scheme)?;
    let gains = compute_gains(
        model,
        spec,
        &solution.states,
        &solution.controls,
        &prob.time,
        &solution.values,
        scheme,
    )?;
    let reference = lqr_feedback(prob, &riccati, scheme)?;
    let nd = prob.n_distributed();
    let nb = prob.b_b.ncols();
    let ref_d: Vec<DMatrix<f64>> = reference.iter().map(|g| g.rows(0, nd).into_owned()).collect();
    let ref_b: Vec<DMatrix<f64>> = reference.iter().map(|g| g.rows(nd, nb).into_owned()).collect();
    let (_, lqr_u) = lqr_closed_loop(prob, &riccati, x0, scheme)?;
    let as_cols = |u: &ControlTrajectory| -> Vec<DMatrix<f64>> {
        u.distributed
            .iter()
            .zip(&u.boundary)
            .map(|(d, b)| DMatrix::from_column_slice(d.len() + b.len(), 1, stack(d, b).as_slice()))
            .collect()
    };
    let (sol_u, ref_u) = (as_cols(&solution.controls), as_cols(&lqr_u));
    Ok(EquivalenceReport {
        value_kernel: relative_deviation(solution.values.v_xx.iter(), riccati.p.iter()),
        feedback_d: relative_deviation(gains.big_k_d.iter(), ref_d.iter()),
        feedback_b: (nb > 0).then(|| relative_deviation(gains.big_k_b.iter(), ref_b.iter())),
        control: relative_deviation(sol_u.iter(), ref_u.iter()),
    })
}
