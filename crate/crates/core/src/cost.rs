//! Pure-quadratic tracking cost on a desired subregion.
//!
//! Running cost `L = Q·⟨e, e⟩ + R_d·w_d·|U_d|² + R_b·|U_b|²` with
//! `e = mask ⊙ (X − h_des)` and `w_d` the model's control quadrature weight.
//! Terminal cost `φ = Q_f·⟨e, e⟩`. No ½ prefactor: partials carry the 2.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StddpError};
use crate::grid::{Field, Kernel, SpatialGrid};
use crate::models::PdeModel;
use crate::trajectory::{ControlTrajectory, StateTrajectory, TimeGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub q: f64,
    pub q_f: f64,
    pub r_d: f64,
    pub r_b: f64,
    pub desired: Field,
    pub mask: Field,
}

/// Outer `[0, outer·a] ∪ [(1 − outer)·a, a]` and central `[lo·a, hi·a]`
/// target regions, as fractions of the domain length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regions {
    pub outer_value: f64,
    pub central_value: f64,
    #[serde(default = "Regions::default_outer")]
    pub outer_extent: f64,
    #[serde(default = "Regions::default_lo")]
    pub central_lo: f64,
    #[serde(default = "Regions::default_hi")]
    pub central_hi: f64,
}

impl Regions {
    fn default_outer() -> f64 {
        0.25
    }
    fn default_lo() -> f64 {
        0.4
    }
    fn default_hi() -> f64 {
        0.6
    }

    pub fn new(outer_value: f64, central_value: f64) -> Self {
        Regions {
            outer_value,
            central_value,
            outer_extent: Self::default_outer(),
            central_lo: Self::default_lo(),
            central_hi: Self::default_hi(),
        }
    }

    /// Heat task: outer regions at 1.0, central region at 0.5.
    pub fn heat() -> Self {
        Self::new(1.0, 0.5)
    }

    /// Burgers task: outer regions at 2.0, central region at 1.0.
    pub fn burgers() -> Self {
        Self::new(2.0, 1.0)
    }

    /// `(desired, mask)` sampled on the grid; unpenalized nodes carry zeros.
    pub fn sample(&self, grid: &SpatialGrid) -> (Field, Field) {
        let a = grid.length();
        // fractions are compared with a relative slack so that nodes landing
        // exactly on a region edge are included
        let slack = 1e-12 * a;
        let x = grid.nodes();
        let mut desired = grid.zeros();
        let mut mask = grid.zeros();
        for (j, &xj) in x.iter().enumerate() {
            let outer = xj <= self.outer_extent * a + slack || xj >= (1.0 - self.outer_extent) * a - slack;
            let central = xj >= self.central_lo * a - slack && xj <= self.central_hi * a + slack;
            if outer {
                desired[j] = self.outer_value;
                mask[j] = 1.0;
            } else if central {
                desired[j] = self.central_value;
                mask[j] = 1.0;
            }
        }
        (desired, mask)
    }
}

/// Cost derivatives at one `(X, U_d, U_b)`. Kernel convention:
/// contracting `l_xx` against `f` gives `2Q·mask ⊙ f`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostPartials {
    pub l: f64,
    pub l_x: Field,
    pub l_xx: Kernel,
    pub l_u: DVector<f64>,
    pub l_uu: DMatrix<f64>,
    pub l_uu_inv: DMatrix<f64>,
    pub l_ub: DVector<f64>,
    pub l_ubub: DMatrix<f64>,
    pub l_ubub_inv: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalPartials {
    pub phi: f64,
    pub phi_x: Field,
    pub phi_xx: Kernel,
}

/// Total cost split into its state and control parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub state: f64,
    pub control: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.state + self.control
    }
}

impl CostSpec {
    pub fn new(q: f64, q_f: f64, r_d: f64, r_b: f64, desired: Field, mask: Field) -> Result<Self> {
        let spec = CostSpec {
            q,
            q_f,
            r_d,
            r_b,
            desired,
            mask,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Reaching task on `regions` of `grid`.
    pub fn reaching(grid: &SpatialGrid, regions: &Regions, q: f64, q_f: f64, r_d: f64, r_b: f64) -> Result<Self> {
        let (desired, mask) = regions.sample(grid);
        Self::new(q, q_f, r_d, r_b, desired, mask)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| StddpError::InvalidParameter(format!("{what} = {v} out of range"));
        if !(self.q >= 0.0) || !self.q.is_finite() {
            return Err(bad("Q", self.q));
        }
        if !(self.q_f >= 0.0) || !self.q_f.is_finite() {
            return Err(bad("Q_f", self.q_f));
        }
        if !(self.r_d > 0.0) || !self.r_d.is_finite() {
            return Err(bad("R_d", self.r_d));
        }
        if !(self.r_b > 0.0) || !self.r_b.is_finite() {
            return Err(bad("R_b", self.r_b));
        }
        if self.desired.len() != self.mask.len() {
            return Err(StddpError::mismatch("cost mask", self.desired.len(), self.mask.len()));
        }
        if self.mask.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(StddpError::InvalidParameter("mask entries must be 0 or 1".into()));
        }
        Ok(())
    }

    /// Same targets with new state weights.
    pub fn with_state_weights(&self, q: f64, q_f: f64) -> Self {
        CostSpec {
            q,
            q_f,
            ..self.clone()
        }
    }

    fn check(&self, model: &dyn PdeModel, x: &Field) -> Result<()> {
        model.grid().check_field(x, "state")?;
        if self.mask.len() != x.len() {
            return Err(StddpError::mismatch("cost target", x.len(), self.mask.len()));
        }
        Ok(())
    }

    /// `mask ⊙ (X − h_des)`.
    pub fn deviation(&self, x: &Field) -> Field {
        (x - &self.desired).component_mul(&self.mask)
    }

    /// Root-mean-square deviation over the masked nodes.
    pub fn masked_rms(&self, x: &Field) -> f64 {
        let count = self.mask.sum();
        if count == 0.0 {
            return 0.0;
        }
        (self.deviation(x).norm_squared() / count).sqrt()
    }

    fn state_part(&self, grid: &SpatialGrid, weight: f64, x: &Field) -> f64 {
        weight * self.deviation(x).norm_squared() * grid.dx()
    }

    fn control_part(&self, model: &dyn PdeModel, u_d: &DVector<f64>, u_b: &DVector<f64>) -> f64 {
        self.r_d * model.control_quadrature() * u_d.norm_squared() + self.r_b * u_b.norm_squared()
    }

    pub fn running_cost(&self, model: &dyn PdeModel, x: &Field, u_d: &DVector<f64>, u_b: &DVector<f64>) -> Result<f64> {
        self.check(model, x)?;
        Ok(self.state_part(model.grid(), self.q, x) + self.control_part(model, u_d, u_b))
    }

    pub fn partials(&self, model: &dyn PdeModel, x: &Field, u_d: &DVector<f64>, u_b: &DVector<f64>) -> Result<CostPartials> {
        self.check(model, x)?;
        let dx = model.grid().dx();
        let e = self.deviation(x);
        let rd = 2.0 * self.r_d * model.control_quadrature();
        let rb = 2.0 * self.r_b;
        let (nd, nb) = (u_d.len(), u_b.len());
        Ok(CostPartials {
            l: self.state_part(model.grid(), self.q, x) + self.control_part(model, u_d, u_b),
            l_x: e * (2.0 * self.q),
            l_xx: DMatrix::from_diagonal(&(&self.mask * (2.0 * self.q / dx))),
            l_u: u_d * rd,
            l_uu: DMatrix::identity(nd, nd) * rd,
            l_uu_inv: DMatrix::identity(nd, nd) / rd,
            l_ub: u_b * rb,
            l_ubub: DMatrix::identity(nb, nb) * rb,
            l_ubub_inv: DMatrix::identity(nb, nb) / rb,
        })
    }

    pub fn terminal_cost(&self, model: &dyn PdeModel, x: &Field) -> Result<f64> {
        self.check(model, x)?;
        Ok(self.state_part(model.grid(), self.q_f, x))
    }

    pub fn terminal_partials(&self, model: &dyn PdeModel, x: &Field) -> Result<TerminalPartials> {
        self.check(model, x)?;
        let dx = model.grid().dx();
        Ok(TerminalPartials {
            phi: self.state_part(model.grid(), self.q_f, x),
            phi_x: self.deviation(x) * (2.0 * self.q_f),
            phi_xx: DMatrix::from_diagonal(&(&self.mask * (2.0 * self.q_f / dx))),
        })
    }

    /// `φ(X_N) + Σ_k L(X_k, U_k)·dt`, split into state and control parts.
    pub fn breakdown(
        &self,
        model: &dyn PdeModel,
        traj: &StateTrajectory,
        controls: &ControlTrajectory,
        time: &TimeGrid,
    ) -> Result<CostBreakdown> {
        let n = time.n_steps;
        if traj.states.len() != n + 1 {
            return Err(StddpError::mismatch("state trajectory length", n + 1, traj.states.len()));
        }
        controls.check_shape(n, model.n_distributed(), model.n_boundary())?;
        let grid = model.grid();
        let mut state = self.terminal_cost(model, traj.terminal())?;
        let mut control = 0.0;
        for k in 0..n {
            self.check(model, &traj.states[k])?;
            state += self.state_part(grid, self.q, &traj.states[k]) * time.dt;
            control += self.control_part(model, &controls.distributed[k], &controls.boundary[k]) * time.dt;
        }
        Ok(CostBreakdown { state, control })
    }

    pub fn total_cost(
        &self,
        model: &dyn PdeModel,
        traj: &StateTrajectory,
        controls: &ControlTrajectory,
        time: &TimeGrid,
    ) -> Result<f64> {
        Ok(self.breakdown(model, traj, controls, time)?.total())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryCondition;
    use crate::models::{BurgersModel, BurgersParams, HeatModel, HeatParams, Integrator, rollout};
    use rand::{Rng, SeedableRng};

    fn heat(n: usize) -> HeatModel {
        let g = SpatialGrid::new(n, 1.0, BoundaryCondition::homogeneous_dirichlet()).unwrap();
        HeatModel::new(g, HeatParams { epsilon: 0.1 }).unwrap()
    }

    fn none() -> DVector<f64> {
        DVector::zeros(0)
    }

    #[test]
    fn zero_deviation_costs_nothing() {
        let m = heat(16);
        let spec = CostSpec::reaching(m.grid(), &Regions::heat(), 300.0, 300.0, 0.4, 1.0).unwrap();
        let x = spec.desired.clone();
        assert_eq!(spec.running_cost(&m, &x, &DVector::zeros(16), &none()).unwrap(), 0.0);
        let p = spec.partials(&m, &x, &DVector::zeros(16), &none()).unwrap();
        assert_eq!(p.l_x.amax(), 0.0);
        assert_eq!(p.l_u.amax(), 0.0);
        let t = spec.terminal_partials(&m, &x).unwrap();
        assert_eq!((t.phi, t.phi_x.amax()), (0.0, 0.0));
    }

    #[test]
    fn constant_unit_deviation() {
        let m = heat(4);
        let spec = CostSpec::new(2.0, 0.0, 1.0, 1.0, m.grid().zeros(), Field::from_element(4, 1.0)).unwrap();
        let x = Field::from_element(4, 1.0);
        let l = spec.running_cost(&m, &x, &DVector::zeros(4), &none()).unwrap();
        assert!((l - 1.6).abs() < 1e-14);
    }

    #[test]
    fn inverse_control_hessian() {
        let m = heat(8);
        let spec = CostSpec::reaching(m.grid(), &Regions::heat(), 300.0, 300.0, 0.4, 1.0).unwrap();
        let p = spec.partials(&m, &m.grid().zeros(), &DVector::zeros(8), &none()).unwrap();
        assert!((&p.l_uu * &p.l_uu_inv - DMatrix::identity(8, 8)).amax() < 1e-15);
    }

    #[test]
    fn rejects_bad_weights() {
        let g = SpatialGrid::new(4, 1.0, BoundaryCondition::homogeneous_dirichlet()).unwrap();
        let mk = |q, qf, rd, rb| CostSpec::reaching(&g, &Regions::heat(), q, qf, rd, rb);
        assert!(mk(-1.0, 0.0, 1.0, 1.0).is_err());
        assert!(mk(1.0, -1.0, 1.0, 1.0).is_err());
        assert!(mk(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(mk(1.0, 1.0, 1.0, 0.0).is_err());
        assert!(CostSpec::new(1.0, 1.0, 1.0, 1.0, g.zeros(), Field::from_element(4, 0.5)).is_err());
    }

    #[test]
    fn region_geometry() {
        let g = SpatialGrid::new(19, 1.0, BoundaryCondition::homogeneous_dirichlet()).unwrap();
        let (h, mask) = Regions::heat().sample(&g);
        // nodes at 0.05 .. 0.95
        let expect_mask = [1., 1., 1., 1., 1., 0., 0., 1., 1., 1., 1., 1., 0., 0., 1., 1., 1., 1., 1.];
        assert_eq!(mask.as_slice(), &expect_mask);
        assert_eq!(h[0], 1.0);
        assert_eq!(h[9], 0.5);
        assert_eq!(h[18], 1.0);
    }

    fn fd_partials(model: &dyn PdeModel, spec: &CostSpec, seed: u64) -> f64 {
        let n = model.grid().n_nodes();
        let dx = model.grid().dx();
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let x = Field::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let ud = DVector::from_fn(model.n_distributed(), |_, _| rng.gen_range(-1.0..1.0));
        let ub = DVector::from_fn(model.n_boundary(), |_, _| rng.gen_range(-1.0..1.0));
        let p = spec.partials(model, &x, &ud, &ub).unwrap();
        let t = spec.terminal_partials(model, &x).unwrap();
        let mut worst: f64 = 0.0;
        let rel = |a: f64, b: f64, scale: f64| (a - b).abs() / scale.max(1e-12);
        let lx_scale = p.l_x.amax().max(1.0);
        let px_scale = t.phi_x.amax().max(1.0);
        for j in 0..n {
            let h = 1e-5 * (1.0 + x[j].abs());
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += h;
            xm[j] -= h;
            // field gradients carry one dx less than vector gradients
            let dl = (spec.running_cost(model, &xp, &ud, &ub).unwrap() - spec.running_cost(model, &xm, &ud, &ub).unwrap())
                / (2.0 * h * dx);
            let dphi = (spec.terminal_cost(model, &xp).unwrap() - spec.terminal_cost(model, &xm).unwrap()) / (2.0 * h * dx);
            worst = worst.max(rel(dl, p.l_x[j], lx_scale)).max(rel(dphi, t.phi_x[j], px_scale));
        }
        let lu_scale = p.l_u.amax().max(1.0);
        for j in 0..ud.len() {
            let h = 1e-5 * (1.0 + ud[j].abs());
            let (mut up, mut um) = (ud.clone(), ud.clone());
            up[j] += h;
            um[j] -= h;
            let d = (spec.running_cost(model, &x, &up, &ub).unwrap() - spec.running_cost(model, &x, &um, &ub).unwrap())
                / (2.0 * h);
            worst = worst.max(rel(d, p.l_u[j], lu_scale));
        }
        for j in 0..ub.len() {
            let h = 1e-5 * (1.0 + ub[j].abs());
            let (mut up, mut um) = (ub.clone(), ub.clone());
            up[j] += h;
            um[j] -= h;
            let d = (spec.running_cost(model, &x, &ud, &up).unwrap() - spec.running_cost(model, &x, &ud, &um).unwrap())
                / (2.0 * h);
            worst = worst.max(rel(d, p.l_ub[j], p.l_ub.amax().max(1.0)));
        }
        worst
    }

    #[test]
    fn partials_match_finite_differences() {
        let h = heat(16);
        let hb = heat(16).with_boundary_control();
        let g = SpatialGrid::new(16, 1.0, BoundaryCondition::homogeneous_dirichlet()).unwrap();
        let b = BurgersModel::new(g, BurgersParams { epsilon: 0.05, bc_value: 1.0 }, 5).unwrap();
        let sh = CostSpec::reaching(h.grid(), &Regions::heat(), 300.0, 300.0, 0.4, 0.7).unwrap();
        let sb = CostSpec::reaching(b.grid(), &Regions::burgers(), 30.0, 30.0, 0.4, 1.0).unwrap();
        for seed in 0..20 {
            assert!(fd_partials(&h, &sh, seed) <= 1e-7);
            assert!(fd_partials(&hb, &sh, seed) <= 1e-7);
            assert!(fd_partials(&b, &sb, seed) <= 1e-7);
        }
    }

    #[test]
    fn hessians_symmetric_psd() {
        let m = heat(12);
        let spec = CostSpec::reaching(m.grid(), &Regions::heat(), 3.0, 5.0, 0.4, 1.0).unwrap();
        let p = spec.partials(&m, &m.grid().zeros(), &DVector::zeros(12), &none()).unwrap();
        let t = spec.terminal_partials(&m, &m.grid().zeros()).unwrap();
        for k in [&p.l_xx, &t.phi_xx] {
            assert_eq!(k, &k.transpose());
            assert!(k.diagonal().iter().all(|&d| d >= 0.0));
        }
        assert!(p.l_uu.diagonal().iter().all(|&d| d > 0.0));
    }

    #[test]
    fn unmasked_nodes_do_not_affect_cost() {
        let m = heat(19);
        let spec = CostSpec::reaching(m.grid(), &Regions::heat(), 3.0, 5.0, 0.4, 1.0).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(9);
        let x = Field::from_fn(19, |_, _| rng.gen_range(-1.0..1.0));
        let mut y = x.clone();
        for j in 0..19 {
            if spec.mask[j] == 0.0 {
                y[j] += rng.gen_range(-5.0..5.0);
            }
        }
        let u = DVector::zeros(19);
        assert_eq!(spec.running_cost(&m, &x, &u, &none()).unwrap(), spec.running_cost(&m, &y, &u, &none()).unwrap());
        assert_eq!(spec.terminal_cost(&m, &x).unwrap(), spec.terminal_cost(&m, &y).unwrap());
    }

    #[test]
    fn total_cost_of_constant_deviation() {
        let m = heat(9);
        let spec = CostSpec::new(3.0, 7.0, 1.0, 1.0, m.grid().zeros(), Field::from_element(9, 1.0)).unwrap();
        let time = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let traj = StateTrajectory {
            times: time.times(),
            states: vec![Field::from_element(9, 1.0); 11],
        };
        let u = ControlTrajectory::zeros(10, 9, 0);
        let j = spec.total_cost(&m, &traj, &u, &time).unwrap();
        // interior quadrature covers 9·dx = 0.9 of the unit domain
        assert!((j - (7.0 + 3.0) * 0.9).abs() < 1e-12);
    }

    #[test]
    fn heat_task_cost_positive() {
        let m = heat(64);
        let spec = CostSpec::reaching(m.grid(), &Regions::heat(), 300.0, 300.0, 0.4, 1.0).unwrap();
        let time = TimeGrid::new(0.0, 1.0, 1200).unwrap();
        let u = ControlTrajectory::zeros(1200, 64, 0);
        let traj = rollout(&m, &m.grid().zeros(), &u, &time, Integrator::Euler).unwrap();
        let j = spec.total_cost(&m, &traj, &u, &time).unwrap();
        assert!(j.is_finite() && j > 0.0);
    }
}
