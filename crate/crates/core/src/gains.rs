//! Feedforward/feedback gains, closed-loop variation dynamics and the control
//! update `U ← U + γ·δU`.
//!
//! Gains on `[t_k, t_{k+1}]` read the value derivatives at `t_{k+1}`. Feedback
//! gains act on the state perturbation vector directly; the `dx²` of the
//! kernel contraction is folded in at construction.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::backward::{DiscreteExpansion, Scheme, StepData, ValueTrajectory, check_nominal};
use crate::cost::CostSpec;
use crate::error::{Result, Stage, StddpError};
use crate::grid::Field;
use crate::models::{PdeModel, ROLLOUT_LIMIT, check_finite};
use crate::trajectory::{ControlTrajectory, StateTrajectory, TimeGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct GainTrajectory {
    pub k_d: Vec<DVector<f64>>,
    pub big_k_d: Vec<DMatrix<f64>>,
    /// Empty vectors and 0 × n matrices when there is no boundary control.
    pub k_b: Vec<DVector<f64>>,
    pub big_k_b: Vec<DMatrix<f64>>,
}

impl GainTrajectory {
    pub fn len(&self) -> usize {
        self.k_d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_d.is_empty()
    }

    pub fn zeros(n_steps: usize, n_nodes: usize, n_distributed: usize, n_boundary: usize) -> Self {
        GainTrajectory {
            k_d: vec![DVector::zeros(n_distributed); n_steps],
            big_k_d: vec![DMatrix::zeros(n_distributed, n_nodes); n_steps],
            k_b: vec![DVector::zeros(n_boundary); n_steps],
            big_k_b: vec![DMatrix::zeros(n_boundary, n_nodes); n_steps],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationTrajectory {
    /// `δX_0 = 0`.
    pub delta_x: Vec<Field>,
    pub delta_u: ControlTrajectory,
}

/// `(k, K)` for the joint control `[U_d; U_b]` on one interval.
pub fn step_gains(
    d: &StepData,
    v_x_next: &Field,
    v_xx_next: &DMatrix<f64>,
    scheme: Scheme,
    dt: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if scheme.is_continuous() {
        let k = -(&d.l_uu_inv * d.q_u(v_x_next));
        let big_k = -(&d.l_uu_inv * (d.b.tr_mul(v_xx_next) * (d.dx * d.dx)));
        Ok((k, big_k))
    } else {
        Ok(DiscreteExpansion::new(v_x_next, v_xx_next, d, dt)?.gains())
    }
}

pub fn compute_gains(
    model: &dyn PdeModel,
    spec: &CostSpec,
    traj: &StateTrajectory,
    controls: &ControlTrajectory,
    time: &TimeGrid,
    values: &ValueTrajectory,
    scheme: Scheme,
) -> Result<GainTrajectory> {
    check_nominal(model, traj, controls, time)?;
    if values.v.len() != time.n_steps + 1 {
        return Err(StddpError::mismatch("value trajectory length", time.n_steps + 1, values.v.len()));
    }
    let nd = model.n_distributed();
    let per_step: Vec<(DVector<f64>, DMatrix<f64>)> = (0..time.n_steps)
        .into_par_iter()
        .map(|k| {
            let d = StepData::at(
                model,
                spec,
                time.time(k),
                &traj.states[k],
                &controls.distributed[k],
                &controls.boundary[k],
            )?;
            step_gains(&d, &values.v_x[k + 1], &values.v_xx[k + 1], scheme, time.dt)
        })
        .collect::<Result<_>>()?;
    let mut gains = GainTrajectory {
        k_d: Vec::with_capacity(time.n_steps),
        big_k_d: Vec::with_capacity(time.n_steps),
        k_b: Vec::with_capacity(time.n_steps),
        big_k_b: Vec::with_capacity(time.n_steps),
    };
    for (k, big_k) in per_step {
        let nb = k.len() - nd;
        gains.k_d.push(k.rows(0, nd).into_owned());
        gains.k_b.push(k.rows(nd, nb).into_owned());
        gains.big_k_d.push(big_k.rows(0, nd).into_owned());
        gains.big_k_b.push(big_k.rows(nd, nb).into_owned());
    }
    Ok(gains)
}

fn check_gains(model: &dyn PdeModel, gains: &GainTrajectory, time: &TimeGrid) -> Result<()> {
    if gains.len() != time.n_steps {
        return Err(StddpError::mismatch("gain trajectory length", time.n_steps, gains.len()));
    }
    if gains.k_d.first().is_some_and(|k| k.len() != model.n_distributed()) {
        return Err(StddpError::mismatch("distributed gain", model.n_distributed(), gains.k_d[0].len()));
    }
    Ok(())
}

/// Closed-loop variation `δU_k = k_k + K_k δX_k`,
/// `δX_{k+1} = δX_k + dt·(F_X δX_k + F_{U_d} δU_d + B_b δU_b)`, linearized
/// about the nominal.
pub fn variation_rollout(
    model: &dyn PdeModel,
    gains: &GainTrajectory,
    traj: &StateTrajectory,
    controls: &ControlTrajectory,
    time: &TimeGrid,
) -> Result<VariationTrajectory> {
    Ok(fused_rollout(model, gains, traj, controls, time, None)?.0)
}

/// Variation rollout fused with the forward rollout of the candidate
/// `U + γ·δU`. The candidate states are bit-identical to
/// `rollout(model, x0, apply_update(U, δU, γ_d, γ_b), …)` under explicit Euler.
#[allow(clippy::type_complexity)]
pub fn variation_with_candidate(
    model: &dyn PdeModel,
    gains: &GainTrajectory,
    traj: &StateTrajectory,
    controls: &ControlTrajectory,
    time: &TimeGrid,
    gamma_d: f64,
    gamma_b: f64,
) -> Result<(VariationTrajectory, Result<(StateTrajectory, ControlTrajectory)>)> {
    let (var, cand) = fused_rollout(model, gains, traj, controls, time, Some((gamma_d, gamma_b)))?;
    Ok((var, cand.expect("candidate requested")))
}

#[allow(clippy::type_complexity)]
fn fused_rollout(
    model: &dyn PdeModel,
    gains: &GainTrajectory,
    traj: &StateTrajectory,
    controls: &ControlTrajectory,
    time: &TimeGrid,
    candidate: Option<(f64, f64)>,
) -> Result<(VariationTrajectory, Option<Result<(StateTrajectory, ControlTrajectory)>>)> {
    check_nominal(model, traj, controls, time)?;
    check_gains(model, gains, time)?;
    let n = time.n_steps;
    let dt = time.dt;
    let mut delta_x = Vec::with_capacity(n + 1);
    delta_x.push(model.grid().zeros());
    let mut delta_u = ControlTrajectory {
        distributed: Vec::with_capacity(n),
        boundary: Vec::with_capacity(n),
    };
    let mut cand_states = Vec::with_capacity(if candidate.is_some() { n + 1 } else { 0 });
    let mut cand_controls = ControlTrajectory {
        distributed: Vec::new(),
        boundary: Vec::new(),
    };
    let mut cand_error: Option<StddpError> = None;
    if candidate.is_some() {
        cand_states.push(traj.states[0].clone());
    }
    for k in 0..n {
        let t = time.time(k);
        let (x, ud, ub) = (&traj.states[k], &controls.distributed[k], &controls.boundary[k]);
        let dx_k = &delta_x[k];
        let dud = &gains.k_d[k] + &gains.big_k_d[k] * dx_k;
        let dub = &gains.k_b[k] + &gains.big_k_b[k] * dx_k;
        let jac = model.jacobians(t, x, ud, ub);
        let mut rate = &jac.state * dx_k + &jac.distributed * &dud;
        if !dub.is_empty() {
            rate += &jac.boundary * &dub;
        }
        let next = dx_k + rate * dt;
        if !check_finite(&next, ROLLOUT_LIMIT) {
            return Err(StddpError::diverged(Stage::Variation, k + 1));
        }
        if let Some((gd, gb)) = candidate {
            let new_ud = ud + &dud * gd;
            let new_ub = ub + &dub * gb;
            if cand_error.is_none() {
                let xs = &cand_states[k];
                match model.rhs(t, xs, &new_ud, &new_ub) {
                    Ok(f) => {
                        let xn = xs + f * dt;
                        if check_finite(&xn, ROLLOUT_LIMIT) {
                            cand_states.push(xn);
                        } else {
                            cand_error = Some(StddpError::diverged(Stage::Rollout, k + 1));
                        }
                    }
                    Err(e) => cand_error = Some(e),
                }
            }
            cand_controls.distributed.push(new_ud);
            cand_controls.boundary.push(new_ub);
        }
        delta_x.push(next);
        delta_u.distributed.push(dud);
        delta_u.boundary.push(dub);
    }
    let var = VariationTrajectory { delta_x, delta_u };
    let cand = candidate.map(|_| match cand_error {
        Some(e) => Err(e),
        None => Ok((
            StateTrajectory {
                times: time.times(),
                states: cand_states,
            },
            cand_controls,
        )),
    });
    Ok((var, cand))
}

/// `U + γ_d·δU_d`, `U_b + γ_b·δU_b`.
pub fn apply_update(controls: &ControlTrajectory, delta_u: &ControlTrajectory, gamma_d: f64, gamma_b: f64) -> Result<ControlTrajectory> {
    delta_u.check_shape(controls.len(), controls.n_distributed(), controls.n_boundary())?;
    Ok(controls.axpy(gamma_d, gamma_b, delta_u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backward::{backward_pass, SchemeSelector};
    use crate::cost::Regions;
    use crate::grid::{BoundaryCondition, SpatialGrid};
    use crate::models::{rollout, BurgersModel, BurgersParams, HeatModel, HeatParams, Integrator, ScalarOde};
    use rand::{Rng, SeedableRng};

    fn burgers(n: usize) -> BurgersModel {
        let g = SpatialGrid::new(n, 1.0, BoundaryCondition::homogeneous_dirichlet()).unwrap();
        BurgersModel::new(g, BurgersParams { epsilon: 0.05, bc_value: 1.0 }, 5).unwrap()
    }

    fn heat(n: usize) -> HeatModel {
        let g = SpatialGrid::new(n, 1.0, BoundaryCondition::homogeneous_dirichlet()).unwrap();
        HeatModel::new(g, HeatParams { epsilon: 0.1 }).unwrap()
    }

    #[test]
    fn stationary_feedforward_is_zero() {
        let m = heat(8);
        let spec = CostSpec::reaching(m.grid(), &Regions::heat(), 3.0, 3.0, 0.4, 1.0).unwrap();
        let time = TimeGrid::new(0.0, 0.1, 10).unwrap();
        let u = ControlTrajectory::zeros(10, 8, 0);
        let traj = rollout(&m, &m.grid().zeros(), &u, &time, Integrator::Euler).unwrap();
        let values = ValueTrajectory {
            v: vec![0.0; 11],
            v_x: vec![m.grid().zeros(); 11],
            v_xx: vec![DMatrix::identity(8, 8); 11],
        };
        for scheme in [Scheme::ExplicitEuler, Scheme::ExactDiscrete] {
            let g = compute_gains(&m, &spec, &traj, &u, &time, &values, scheme).unwrap();
            assert!(g.k_d.iter().all(|k| k.amax() == 0.0));
            assert!(g.big_k_d.iter().all(|k| k.amax() > 0.0));
        }
    }

    #[test]
    fn scalar_gains_match_formula() {
        let (a, b, q, r) = (0.4, 1.7, 2.0, 0.3);
        let m = ScalarOde::new(a, 0.5, b);
        let spec = CostSpec::new(q, q, r, 1.0, Field::from_element(1, 0.3), Field::from_element(1, 1.0)).unwrap();
        let time = TimeGrid::new(0.0, 0.5, 50).unwrap();
        let u = ControlTrajectory {
            distributed: (0..50).map(|k| DVector::from_element(1, (k as f64 * 0.1).sin())).collect(),
            boundary: vec![DVector::zeros(0); 50],
        };
        let traj = rollout(&m, &Field::from_element(1, 1.0), &u, &time, Integrator::Euler).unwrap();
        let sel = SchemeSelector::new(Scheme::ExplicitEuler, 0.0);
        let values = backward_pass(&m, &spec, &traj, &u, &time, &sel).unwrap();
        let g = compute_gains(&m, &spec, &traj, &u, &time, &values, Scheme::ExplicitEuler).unwrap();
        let l_uu = 2.0 * r;
        for k in 0..50 {
            let l_u = 2.0 * r * u.distributed[k][0];
            let expect_k = -(l_u + b * values.v_x[k + 1][0]) / l_uu;
            let expect_big_k = -0.5 / l_uu * (2.0 * b * values.v_xx[k + 1][(0, 0)]);
            assert!((g.k_d[k][0] - expect_k).abs() <= 1e-14 * expect_k.abs().max(1.0));
            assert!((g.big_k_d[k][(0, 0)] - expect_big_k).abs() <= 1e-14 * expect_big_k.abs());
        }
    }

    #[test]
    fn unforced_variation_is_zero() {
        let m = burgers(12);
        let time = TimeGrid::new(0.0, 0.2, 40).unwrap();
        let u = ControlTrajectory::zeros(40, 5, 0);
        let traj = rollout(&m, &m.grid().zeros(), &u, &time, Integrator::Euler).unwrap();
        let mut gains = GainTrajectory::zeros(40, 12, 5, 0);
        let var = variation_rollout(&m, &gains, &traj, &u, &time).unwrap();
        assert!(var.delta_x.iter().all(|x| x.amax() == 0.0));
        assert_eq!(var.delta_u.norm(), 0.0);
        let mut rng = rand::rngs::StdRng::seed_from_u64(4);
        for big_k in gains.big_k_d.iter_mut() {
            big_k.iter_mut().for_each(|v| *v = rng.gen_range(-10.0..10.0));
        }
        let var = variation_rollout(&m, &gains, &traj, &u, &time).unwrap();
        assert!(var.delta_x.iter().all(|x| x.amax() == 0.0));
    }

    #[test]
    fn update_edge_cases() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(8);
        let mut u = ControlTrajectory::zeros(5, 3, 2);
        let mut du = ControlTrajectory::zeros(5, 3, 2);
        for i in 0..u.n_entries() {
            *u.entry_mut(i) = rng.gen_range(-1.0..1.0);
            *du.entry_mut(i) = rng.gen_range(-1.0..1.0);
        }
        assert_eq!(apply_update(&u, &du, 0.0, 0.0).unwrap(), u);
        let zero = ControlTrajectory::zeros(5, 3, 2);
        assert_eq!(apply_update(&zero, &du, 1.0, 1.0).unwrap(), du);
        assert!(apply_update(&u, &ControlTrajectory::zeros(4, 3, 2), 1.0, 1.0).is_err());
    }

    #[test]
    fn variation_is_first_order_accurate() {
        let m = burgers(16);
        let spec = CostSpec::reaching(m.grid(), &Regions::burgers(), 30.0, 30.0, 0.4, 1.0).unwrap();
        let time = TimeGrid::new(0.0, 0.5, 200).unwrap();
        let u = ControlTrajectory::zeros(200, 5, 0);
        let x0 = m.grid().zeros();
        let traj = rollout(&m, &x0, &u, &time, Integrator::Euler).unwrap();
        let values = backward_pass(&m, &spec, &traj, &u, &time, &SchemeSelector::default()).unwrap();
        let gains = compute_gains(&m, &spec, &traj, &u, &time, &values, Scheme::ExplicitEuler).unwrap();
        let var = variation_rollout(&m, &gains, &traj, &u, &time).unwrap();
        let du_norm = var.delta_u.norm();
        let ratio = |gamma: f64| {
            let cand = apply_update(&u, &var.delta_u, gamma, gamma).unwrap();
            let moved = rollout(&m, &x0, &cand, &time, Integrator::Euler).unwrap();
            let mismatch = moved
                .states
                .iter()
                .zip(&traj.states)
                .zip(&var.delta_x)
                .map(|((a, b), d)| (a - b - d * gamma).norm_squared())
                .sum::<f64>()
                .sqrt();
            mismatch / (gamma * du_norm)
        };
        let r: Vec<f64> = [1e-2, 1e-3, 1e-4].iter().map(|&g| ratio(g)).collect();
        assert!(r[0] > r[1] && r[1] > r[2], "{r:?}");
        assert!((r[0] / r[1]).log10() >= 0.9 && (r[1] / r[2]).log10() >= 0.9, "{r:?}");
    }

    #[test]
    fn fused_candidate_is_bit_identical() {
        let m = burgers(16);
        let spec = CostSpec::reaching(m.grid(), &Regions::burgers(), 30.0, 30.0, 0.4, 1.0).unwrap();
        let time = TimeGrid::new(0.0, 0.5, 100).unwrap();
        let u = ControlTrajectory::zeros(100, 5, 0);
        let x0 = m.grid().zeros();
        let traj = rollout(&m, &x0, &u, &time, Integrator::Euler).unwrap();
        let values = backward_pass(&m, &spec, &traj, &u, &time, &SchemeSelector::default()).unwrap();
        let gains = compute_gains(&m, &spec, &traj, &u, &time, &values, Scheme::ExplicitEuler).unwrap();
        let (var, cand) = variation_with_candidate(&m, &gains, &traj, &u, &time, 0.3, 0.3).unwrap();
        let (states, controls) = cand.unwrap();
        assert_eq!(var, variation_rollout(&m, &gains, &traj, &u, &time).unwrap());
        let separate_u = apply_update(&u, &var.delta_u, 0.3, 0.3).unwrap();
        assert_eq!(controls, separate_u);
        assert_eq!(states, rollout(&m, &x0, &separate_u, &time, Integrator::Euler).unwrap());
    }
}
