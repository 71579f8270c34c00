//! User-runnable oracle suite behind `stddp verify`.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::backward::{backward_pass, Scheme, SchemeSelector};
use crate::cost::{CostSpec, Regions};
use crate::error::Result;
use crate::grid::{BoundaryCondition, Field, SpatialGrid};
use crate::lqr::{check_stddp_equivalence, EquivalenceReport, LqrProblem};
use crate::models::{rollout, HeatModel, HeatParams, Integrator, PdeModel, ScalarOde};
use crate::oracle::{cost_gradient_psi, fd_gradient, relative_gap, scalar_ddp_reference, ScalarCost};
use crate::solver::{stddp_solve, LineSearch, SolverConfig};
use crate::trajectory::{ControlTrajectory, StateTrajectory, TimeGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Which deliberate bug, if any, to plant before checking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Negate the LQR reference's input operator.
    FlipLqrInputSign,
}

fn heat(n: usize) -> HeatModel {
    let g = SpatialGrid::new(n, 1.0, BoundaryCondition::homogeneous_dirichlet()).expect("valid grid");
    HeatModel::new(g, HeatParams { epsilon: 0.05 }).expect("valid model")
}

/// Largest ψ-vs-finite-difference gap over `trials` random controls on a
/// 16-node, 50-step heat reaching problem.
pub fn gradient_gap(trials: usize, seed: u64) -> Result<f64> {
    let m = heat(16);
    let spec = CostSpec::reaching(m.grid(), &Regions::heat(), 30.0, 30.0, 0.4, 1.0)?;
    let time = TimeGrid::new(0.0, 0.5, 50)?;
    let x0 = m.grid().zeros();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let mut u = ControlTrajectory::zeros(50, 16, 0);
        for i in 0..u.n_entries() {
            *u.entry_mut(i) = rng.gen_range(-2.0..2.0);
        }
        let traj = rollout(&m, &x0, &u, &time, Integrator::Euler)?;
        let g = cost_gradient_psi(&m, &spec, &traj, &u, &time)?;
        let fd = fd_gradient(&m, &spec, &x0, &u, &time, Integrator::Euler, 1e-4)?;
        worst = worst.max(relative_gap(&g, &fd));
    }
    Ok(worst)
}

/// One exact-discrete STDDP iteration from zero control on the 32-node,
/// 200-step linear heat problem, compared with the LQR reference.
pub fn lqr_equivalence(fault: Fault) -> Result<EquivalenceReport> {
    let m = heat(32);
    let (_, mask) = Regions::heat().sample(m.grid());
    let spec = CostSpec::new(300.0, 300.0, 0.4, 1.0, m.grid().zeros(), mask)?;
    let time = TimeGrid::new(0.0, 0.5, 200)?;
    let x0 = m.grid().sample(|x| (PI * x).sin() + 0.5 * (3.0 * PI * x).sin());
    let cfg = SolverConfig {
        max_iters: 1,
        line_search: LineSearch::Off,
        scheme: Scheme::ExactDiscrete,
        mu: 0.0,
        ..SolverConfig::default()
    };
    let sol = stddp_solve(&m, &spec, &x0, &ControlTrajectory::zeros(200, 32, 0), &cfg, &time)?;
    let mut prob = LqrProblem::from_model(&m, &spec, &time)?;
    if fault == Fault::FlipLqrInputSign {
        prob.b_d = -prob.b_d;
        prob.b_b = -prob.b_b;
    }
    check_stddp_equivalence(&prob, &m, &spec, &sol, &x0, Scheme::ExactDiscrete)
}

/// Largest relative gap between the 1-node field backward pass and the
/// scalar reference over 100 steps, all schemes, with and without `μ`.
pub fn scalar_reduction_gap() -> Result<f64> {
    let ode = ScalarOde::new(-0.3, 0.4, 0.9);
    let cost = ScalarCost { q: 1.3, q_f: 2.5, r: 0.2, h: 0.6 };
    let n = 100;
    let time = TimeGrid::new(0.0, 1.0, n)?;
    let u: Vec<f64> = (0..n).map(|k| 0.4 * (0.07 * k as f64).sin()).collect();
    let controls = ControlTrajectory {
        distributed: u.iter().map(|&v| DVector::from_element(1, v)).collect(),
        boundary: vec![DVector::zeros(0); n],
    };
    let traj = rollout(&ode, &Field::from_element(1, 1.1), &controls, &time, Integrator::Euler)?;
    let x: Vec<f64> = traj.states.iter().map(|s| s[0]).collect();
    let spec = CostSpec::new(cost.q, cost.q_f, cost.r, 1.0, Field::from_element(1, cost.h), Field::from_element(1, 1.0))?;
    let mut worst: f64 = 0.0;
    for scheme in [Scheme::ExplicitEuler, Scheme::Rk2, Scheme::SemiImplicit, Scheme::ExactDiscrete] {
        for mu in [0.0, 1e-4] {
            let r = scalar_ddp_reference(&ode, &cost, &x, &u, time.dt, scheme, mu);
            let vt = backward_pass(&ode, &spec, &traj, &controls, &time, &SchemeSelector::new(scheme, mu))?;
            for k in 0..=n {
                for (a, b) in [(vt.v[k], r.v[k]), (vt.v_x[k][0], r.v_x[k]), (vt.v_xx[k][(0, 0)], r.v_xx[k])] {
                    worst = worst.max((a - b).abs() / (1.0 + b.abs()));
                }
            }
        }
    }
    Ok(worst)
}

/// Observed order of the explicit-vs-semi-implicit `V_XX` gap (max over all
/// knots) on a 24-node heat backward pass, the smaller of two dt halvings.
pub fn scheme_gap_order() -> Result<f64> {
    let m = heat(24);
    let spec = CostSpec::reaching(m.grid(), &Regions::heat(), 30.0, 30.0, 0.4, 1.0)?;
    let x0 = m.grid().sample(|x| (PI * x).sin());
    let gap = |n_steps: usize| -> Result<f64> {
        let time = TimeGrid::new(0.0, 0.2, n_steps)?;
        let u = ControlTrajectory::zeros(n_steps, 24, 0);
        let traj: StateTrajectory = rollout(&m, &x0, &u, &time, Integrator::Euler)?;
        let a = backward_pass(&m, &spec, &traj, &u, &time, &SchemeSelector::new(Scheme::ExplicitEuler, 0.0))?;
        let b = backward_pass(&m, &spec, &traj, &u, &time, &SchemeSelector::new(Scheme::SemiImplicit, 0.0))?;
        Ok(a.v_xx.iter().zip(&b.v_xx).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max))
    };
    let (g1, g2, g3) = (gap(200)?, gap(400)?, gap(800)?);
    Ok((g1 / g2).log2().min((g2 / g3).log2()))
}

/// Run the suite; `quick` keeps to checks that finish in a few seconds.
pub fn run_checks(quick: bool, fault: Fault) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut record = |name: &'static str, f: &mut dyn FnMut() -> Result<(bool, String)>| {
        let start = Instant::now();
        let (passed, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let detail = format!("{detail} ({:.2} s)", start.elapsed().as_secs_f64());
        out.push(CheckResult { name, passed, detail });
    };
    record("gradient", &mut || {
        let gap = gradient_gap(if quick { 2 } else { 10 }, 7)?;
        Ok((gap <= 1e-5, format!("max relative gap {gap:.2e} (tol 1e-5)")))
    });
    record("lqr-equivalence", &mut || {
        let r = lqr_equivalence(fault)?;
        Ok((
            r.max() <= 1e-6,
            format!(
                "value kernel {:.2e}, feedback {:.2e}, control {:.2e} (tol 1e-6)",
                r.value_kernel, r.feedback_d, r.control
            ),
        ))
    });
    record("scalar-reduction", &mut || {
        let gap = scalar_reduction_gap()?;
        Ok((gap <= 1e-12, format!("max relative gap {gap:.2e} (tol 1e-12)")))
    });
    if !quick {
        record("scheme-consistency", &mut || {
            let order = scheme_gap_order()?;
            Ok((order >= 1.0, format!("observed order {order:.3} (min 1)")))
        });
    }
    out
}
