//! The STDDP iteration: rollout, backward pass, gains, variation, update.

use serde::{Deserialize, Serialize};

use crate::backward::{backward_pass, Scheme, SchemeSelector, ValueTrajectory};
use crate::cost::{CostBreakdown, CostSpec};
use crate::error::{Result, StddpError};
use crate::gains::{apply_update, compute_gains, variation_rollout, variation_with_candidate, VariationTrajectory};
use crate::grid::Field;
use crate::models::{rollout, Integrator, PdeModel};
use crate::trajectory::{ControlTrajectory, StateTrajectory, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LineSearch {
    Off,
    /// Try `γ, γ·shrink, γ·shrink², …` and take the first that lowers `J`.
    Backtracking { shrink: f64, max_tries: usize },
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch::Backtracking {
            shrink: 0.5,
            max_tries: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Relative change of the total cost.
    #[default]
    Cost,
    /// Relative change of the value integral `Σ V_k·dt`.
    Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardMode {
    /// Variation rollout and candidate rollout as two time loops.
    #[default]
    Separate,
    /// One time loop for both; explicit Euler only, bit-identical results.
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealConfig {
    /// Final `Q/R_d`.
    pub target_ratio: f64,
    #[serde(default = "AnnealConfig::default_growth")]
    pub growth: f64,
    #[serde(default = "AnnealConfig::default_inner_tol")]
    pub inner_tol: f64,
}

impl AnnealConfig {
    fn default_growth() -> f64 {
        4.0
    }
    fn default_inner_tol() -> f64 {
        1e-4
    }

    pub fn new(target_ratio: f64) -> Self {
        AnnealConfig {
            target_ratio,
            growth: Self::default_growth(),
            inner_tol: Self::default_inner_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "SolverConfig::default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "SolverConfig::default_gamma")]
    pub gamma_d: f64,
    #[serde(default = "SolverConfig::default_gamma")]
    pub gamma_b: f64,
    #[serde(default)]
    pub line_search: LineSearch,
    #[serde(default = "SolverConfig::default_tol")]
    pub tol_rel_cost: f64,
    #[serde(default)]
    pub criterion: Criterion,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "SchemeSelector::default_mu")]
    pub mu: f64,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub forward: ForwardMode,
    #[serde(default)]
    pub anneal: Option<AnnealConfig>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: Self::default_max_iters(),
            gamma_d: Self::default_gamma(),
            gamma_b: Self::default_gamma(),
            line_search: LineSearch::default(),
            tol_rel_cost: Self::default_tol(),
            criterion: Criterion::default(),
            scheme: Scheme::default(),
            mu: SchemeSelector::default_mu(),
            integrator: Integrator::default(),
            forward: ForwardMode::default(),
            anneal: None,
        }
    }
}

impl SolverConfig {
    fn default_max_iters() -> usize {
        100
    }
    fn default_gamma() -> f64 {
        1.0
    }
    fn default_tol() -> f64 {
        1e-6
    }

    pub fn selector(&self) -> SchemeSelector {
        SchemeSelector::new(self.scheme, self.mu)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(StddpError::InvalidParameter(msg));
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        for (name, g) in [("gamma_d", self.gamma_d), ("gamma_b", self.gamma_b)] {
            if !(g > 0.0 && g <= 1.0) {
                return bad(format!("{name} = {g} must lie in (0, 1]"));
            }
        }
        if !(self.tol_rel_cost >= 0.0) {
            return bad(format!("tol_rel_cost = {} must be nonnegative", self.tol_rel_cost));
        }
        if let LineSearch::Backtracking { shrink, max_tries } = self.line_search {
            if !(shrink > 0.0 && shrink < 1.0) {
                return bad(format!("line search shrink factor {shrink} must lie in (0, 1)"));
            }
            if max_tries == 0 {
                return Err(StddpError::EmptyLadder);
            }
        }
        if let Some(a) = &self.anneal {
            if !(a.growth > 1.0) {
                return bad(format!("annealing growth factor {} must exceed 1", a.growth));
            }
            if !(a.target_ratio > 0.0) || !(a.inner_tol >= 0.0) {
                return bad("annealing target ratio must be positive and inner tolerance nonnegative".into());
            }
        }
        self.selector().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Annealing round, 0 for a plain solve.
    pub round: usize,
    pub iter: usize,
    /// Cost after the update of this iteration.
    pub cost: f64,
    pub state_cost: f64,
    pub control_cost: f64,
    /// `Σ V_k·dt` of the backward pass about this iteration's nominal.
    pub value_integral: f64,
    pub step_norm: f64,
    /// Step size taken; 0 when the iteration made no update.
    pub gamma: f64,
}

/// Record for one iteration from its backward pass and resulting cost.
pub fn diagnostics(
    round: usize,
    iter: usize,
    values: &ValueTrajectory,
    cost: CostBreakdown,
    dt: f64,
    step_norm: f64,
    gamma: f64,
) -> IterationRecord {
    IterationRecord {
        round,
        iter,
        cost: cost.total(),
        state_cost: cost.state,
        control_cost: cost.control,
        value_integral: values.value_integral(dt),
        step_norm,
        gamma,
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub controls: ControlTrajectory,
    pub states: StateTrajectory,
    /// Backward pass about the returned iterate.
    pub values: ValueTrajectory,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub initial_cost: f64,
    pub cost: CostBreakdown,
    /// State weights of the last round.
    pub q: f64,
    pub q_f: f64,
}

impl Solution {
    /// `J_0, J_1, …`: the initial cost followed by every recorded iteration.
    pub fn cost_history(&self) -> Vec<f64> {
        std::iter::once(self.initial_cost)
            .chain(self.history.iter().map(|r| r.cost))
            .collect()
    }
}

/// Result of a line search that may run out of candidates.
#[derive(Debug)]
pub enum SearchOutcome<T> {
    Accepted { index: usize, cost: f64, payload: T },
    /// `best_cost` is the lowest cost seen (possibly `+∞`).
    Exhausted { best_cost: f64 },
}

/// Evaluate `ladder` in order and stop at the first candidate whose cost is
/// strictly below `incumbent`.
pub fn search_ladder<T>(
    ladder: &[f64],
    incumbent: f64,
    mut evaluate: impl FnMut(usize, f64) -> Result<(f64, T)>,
) -> Result<SearchOutcome<T>> {
    if ladder.is_empty() {
        return Err(StddpError::EmptyLadder);
    }
    let mut best_cost = f64::INFINITY;
    for (i, &gamma) in ladder.iter().enumerate() {
        let (cost, payload) = evaluate(i, gamma)?;
        if cost < incumbent {
            return Ok(SearchOutcome::Accepted {
                index: i,
                cost,
                payload,
            });
        }
        best_cost = best_cost.min(cost);
    }
    Ok(SearchOutcome::Exhausted { best_cost })
}

/// `(γ, J(γ))` for the first improving candidate; errors when none improves.
pub fn backtracking_search(ladder: &[f64], incumbent: f64, mut evaluate: impl FnMut(f64) -> f64) -> Result<(f64, f64)> {
    match search_ladder(ladder, incumbent, |_, g| Ok((evaluate(g), ())))? {
        SearchOutcome::Accepted { index, cost, .. } => Ok((ladder[index], cost)),
        SearchOutcome::Exhausted { .. } => Err(StddpError::LineSearchExhausted {
            iteration: 0,
            tries: ladder.len(),
        }),
    }
}

pub fn relative_change(old: f64, new: f64) -> f64 {
    (old - new).abs() / old.abs().max(f64::MIN_POSITIVE)
}

struct Candidate {
    controls: ControlTrajectory,
    states: StateTrajectory,
    cost: CostBreakdown,
}

struct Problem<'a> {
    model: &'a dyn PdeModel,
    spec: &'a CostSpec,
    x0: &'a Field,
    time: &'a TimeGrid,
    cfg: &'a SolverConfig,
}

impl Problem<'_> {
    fn rollout(&self, u: &ControlTrajectory) -> Result<StateTrajectory> {
        rollout(self.model, self.x0, u, self.time, self.cfg.integrator)
    }

    fn cost(&self, traj: &StateTrajectory, u: &ControlTrajectory) -> Result<CostBreakdown> {
        self.spec.breakdown(self.model, traj, u, self.time)
    }

    fn values(&self, traj: &StateTrajectory, u: &ControlTrajectory) -> Result<ValueTrajectory> {
        backward_pass(self.model, self.spec, traj, u, self.time, &self.cfg.selector())
    }

    /// Cost of `U + γδU`, `+∞` when the candidate rollout diverges.
    fn evaluate(
        &self,
        u: &ControlTrajectory,
        var: &VariationTrajectory,
        gd: f64,
        gb: f64,
        prepared: Option<Result<(StateTrajectory, ControlTrajectory)>>,
    ) -> Result<(f64, Option<Candidate>)> {
        let rolled = match prepared {
            Some(r) => r,
            None => {
                let cand_u = apply_update(u, &var.delta_u, gd, gb)?;
                self.rollout(&cand_u).map(|s| (s, cand_u))
            }
        };
        match rolled {
            Ok((states, controls)) => {
                let cost = self.cost(&states, &controls)?;
                Ok((cost.total(), Some(Candidate { controls, states, cost })))
            }
            Err(e) if e.is_divergence() => Ok((f64::INFINITY, None)),
            Err(e) => Err(e),
        }
    }
}

pub fn stddp_solve(
    model: &dyn PdeModel,
    spec: &CostSpec,
    x0: &Field,
    u_init: &ControlTrajectory,
    cfg: &SolverConfig,
    time: &TimeGrid,
) -> Result<Solution> {
    stddp_solve_with(model, spec, x0, u_init, cfg, time, &mut |_| {})
}

/// [`stddp_solve`] reporting every [`IterationRecord`] to `observer`.
pub fn stddp_solve_with(
    model: &dyn PdeModel,
    spec: &CostSpec,
    x0: &Field,
    u_init: &ControlTrajectory,
    cfg: &SolverConfig,
    time: &TimeGrid,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<Solution> {
    solve_round(model, spec, x0, u_init, cfg, time, 0, observer)
}

#[allow(clippy::too_many_arguments)]
fn solve_round(
    model: &dyn PdeModel,
    spec: &CostSpec,
    x0: &Field,
    u_init: &ControlTrajectory,
    cfg: &SolverConfig,
    time: &TimeGrid,
    round: usize,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<Solution> {
    cfg.validate()?;
    spec.validate()?;
    model.grid().check_field(x0, "initial state")?;
    u_init.check_shape(time.n_steps, model.n_distributed(), model.n_boundary())?;
    let p = Problem {
        model,
        spec,
        x0,
        time,
        cfg,
    };

    let mut u = u_init.clone();
    let mut states = p.rollout(&u).map_err(|e| e.at_iteration(0))?;
    let mut cost = p.cost(&states, &u)?;
    let initial_cost = cost.total();
    let mut best: Option<(ControlTrajectory, StateTrajectory, CostBreakdown)> = None;
    let mut history = Vec::new();
    let mut converged = false;
    let mut prev_value_integral: Option<f64> = None;
    let fused = cfg.forward == ForwardMode::Fused && cfg.integrator == Integrator::Euler;

    for iter in 1..=cfg.max_iters {
        let at = |e: StddpError| e.at_iteration(iter);
        let values = p.values(&states, &u).map_err(at)?;
        let gains = compute_gains(model, spec, &states, &u, time, &values, cfg.scheme).map_err(at)?;
        let (var, mut prepared) = if fused {
            let (var, cand) =
                variation_with_candidate(model, &gains, &states, &u, time, cfg.gamma_d, cfg.gamma_b).map_err(at)?;
            (var, Some(cand))
        } else {
            (variation_rollout(model, &gains, &states, &u, time).map_err(at)?, None)
        };
        let step_norm = var.delta_u.norm();
        let stay = |history: &mut Vec<IterationRecord>, observer: &mut dyn FnMut(&IterationRecord)| {
            let rec = diagnostics(round, iter, &values, cost, time.dt, step_norm, 0.0);
            observer(&rec);
            history.push(rec);
        };
        if step_norm == 0.0 {
            converged = true;
            stay(&mut history, observer);
            break;
        }

        let incumbent = cost.total();
        let accepted = match cfg.line_search {
            LineSearch::Off => {
                let (_, cand) = p.evaluate(&u, &var, cfg.gamma_d, cfg.gamma_b, prepared.take()).map_err(at)?;
                match cand {
                    Some(c) => (cfg.gamma_d, c),
                    None => {
                        // rerun to surface the divergence with its step index
                        let cand_u = apply_update(&u, &var.delta_u, cfg.gamma_d, cfg.gamma_b)?;
                        return Err(at(p.rollout(&cand_u).expect_err("candidate rollout diverged")));
                    }
                }
            }
            LineSearch::Backtracking { shrink, max_tries } => {
                let ladder: Vec<f64> = (0..max_tries).map(|i| shrink.powi(i as i32)).collect();
                let outcome = search_ladder(&ladder, incumbent, |i, scale| {
                    let pre = if i == 0 { prepared.take() } else { None };
                    p.evaluate(&u, &var, cfg.gamma_d * scale, cfg.gamma_b * scale, pre)
                })
                .map_err(at)?;
                match outcome {
                    SearchOutcome::Accepted { index, payload, .. } => {
                        (cfg.gamma_d * ladder[index], payload.expect("finite cost has a candidate"))
                    }
                    SearchOutcome::Exhausted { best_cost } => {
                        if relative_change(incumbent, best_cost) <= cfg.tol_rel_cost {
                            converged = true;
                            stay(&mut history, observer);
                            break;
                        }
                        return Err(StddpError::LineSearchExhausted {
                            iteration: iter,
                            tries: max_tries,
                        });
                    }
                }
            }
        };

        let (gamma, cand) = accepted;
        let rel = relative_change(incumbent, cand.cost.total());
        if best.as_ref().is_none_or(|b| cost.total() < b.2.total()) {
            best = Some((u, states, cost));
        }
        u = cand.controls;
        states = cand.states;
        cost = cand.cost;
        let rec = diagnostics(round, iter, &values, cost, time.dt, step_norm, gamma);
        observer(&rec);
        history.push(rec);

        let vint = rec.value_integral;
        let done = match cfg.criterion {
            Criterion::Cost => rel <= cfg.tol_rel_cost,
            Criterion::Value => prev_value_integral.is_some_and(|p| relative_change(p, vint) <= cfg.tol_rel_cost),
        };
        prev_value_integral = Some(vint);
        if done {
            converged = true;
            break;
        }
    }

    if let Some(b) = best {
        if b.2.total() < cost.total() {
            (u, states, cost) = b;
        }
    }
    let values = p.values(&states, &u).map_err(|e| e.at_iteration(history.len() + 1))?;
    Ok(Solution {
        controls: u,
        states,
        values,
        history,
        converged,
        initial_cost,
        cost,
        q: spec.q,
        q_f: spec.q_f,
    })
}

pub fn anneal_solve(
    model: &dyn PdeModel,
    spec: &CostSpec,
    x0: &Field,
    u_init: &ControlTrajectory,
    cfg: &SolverConfig,
    time: &TimeGrid,
) -> Result<Solution> {
    anneal_solve_with(model, spec, x0, u_init, cfg, time, &mut |_| {})
}

/// Geometric continuation in `Q/R_d`: solve, scale `Q` and `Q_f` by the
/// growth factor (capped at the target ratio), warm-start, repeat. Every
/// round but the last stops at the inner tolerance.
pub fn anneal_solve_with(
    model: &dyn PdeModel,
    spec: &CostSpec,
    x0: &Field,
    u_init: &ControlTrajectory,
    cfg: &SolverConfig,
    time: &TimeGrid,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<Solution> {
    cfg.validate()?;
    let anneal = cfg
        .anneal
        .ok_or_else(|| StddpError::InvalidParameter("annealing requested without an anneal section".into()))?;
    let start = spec.q / spec.r_d;
    let target = anneal.target_ratio;
    if target < start {
        return Err(StddpError::InvalidParameter(format!(
            "annealing target ratio {target} is below the starting ratio {start}"
        )));
    }
    let target_q = target * spec.r_d;
    let mut round_spec = spec.clone();
    let mut u = u_init.clone();
    let mut history = Vec::new();
    let mut initial_cost = None;
    for round in 0.. {
        let last = round_spec.q >= target_q;
        let mut round_cfg = cfg.clone();
        if !last {
            round_cfg.tol_rel_cost = anneal.inner_tol;
        }
        let sol = solve_round(model, &round_spec, x0, &u, &round_cfg, time, round, observer)
            .map_err(|e| e.at_round(round))?;
        initial_cost.get_or_insert(sol.initial_cost);
        history.extend_from_slice(&sol.history);
        if last {
            return Ok(Solution {
                history,
                initial_cost: initial_cost.expect("set in the first round"),
                ..sol
            });
        }
        u = sol.controls;
        let q_next = (round_spec.q * anneal.growth).min(target_q);
        let scale = q_next / round_spec.q;
        round_spec = round_spec.with_state_weights(q_next, round_spec.q_f * scale);
    }
    unreachable!("the round loop returns on its last round")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::Regions;
    use crate::grid::{BoundaryCondition, SpatialGrid};
    use crate::models::{BurgersModel, BurgersParams, HeatModel, HeatParams};

    fn heat(n: usize, eps: f64) -> HeatModel {
        let g = SpatialGrid::new(n, 1.0, BoundaryCondition::homogeneous_dirichlet()).unwrap();
        HeatModel::new(g, HeatParams { epsilon: eps }).unwrap()
    }

    #[test]
    fn ladder_edge_cases() {
        assert_eq!(backtracking_search(&[1.0, 0.5], 10.0, |_| 3.0).unwrap(), (1.0, 3.0));
        assert_eq!(backtracking_search(&[1.0, 0.5], 10.0, |g| if g < 1.0 { 4.0 } else { 11.0 }).unwrap(), (0.5, 4.0));
        assert!(matches!(
            backtracking_search(&[1.0, 0.5], 10.0, |_| 12.0),
            Err(StddpError::LineSearchExhausted { tries: 2, .. })
        ));
        assert!(matches!(backtracking_search(&[], 10.0, |_| 1.0), Err(StddpError::EmptyLadder)));
    }

    #[test]
    fn diagnostics_of_constant_value() {
        let values = ValueTrajectory {
            v: vec![2.5; 11],
            v_x: vec![],
            v_xx: vec![],
        };
        let rec = diagnostics(0, 1, &values, CostBreakdown { state: 1.0, control: 2.0 }, 0.1, 0.0, 1.0);
        assert!((rec.value_integral - 2.5).abs() < 1e-14);
        assert_eq!(rec.cost, 3.0);
        let zero = ValueTrajectory {
            v: vec![0.0; 11],
            v_x: vec![],
            v_xx: vec![],
        };
        assert_eq!(diagnostics(0, 1, &zero, CostBreakdown { state: 0.0, control: 0.0 }, 0.1, 0.0, 1.0).value_integral, 0.0);
    }

    #[test]
    fn already_optimal_converges_immediately() {
        let m = heat(8, 0.1);
        let spec = CostSpec::new(5.0, 5.0, 0.4, 1.0, m.grid().zeros(), Field::from_element(8, 1.0)).unwrap();
        let time = TimeGrid::new(0.0, 0.1, 20).unwrap();
        let sol = stddp_solve(&m, &spec, &m.grid().zeros(), &ControlTrajectory::zeros(20, 8, 0), &SolverConfig::default(), &time).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.history.len(), 1);
        assert_eq!(sol.cost.total(), 0.0);
    }

    #[test]
    fn config_validation() {
        let ok = SolverConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            SolverConfig { max_iters: 0, ..ok.clone() },
            SolverConfig { gamma_d: 0.0, ..ok.clone() },
            SolverConfig { gamma_b: 1.5, ..ok.clone() },
            SolverConfig { mu: -1.0, ..ok.clone() },
            SolverConfig { line_search: LineSearch::Backtracking { shrink: 1.0, max_tries: 3 }, ..ok.clone() },
            SolverConfig { anneal: Some(AnnealConfig { growth: 1.0, ..AnnealConfig::new(10.0) }), ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    fn small_burgers() -> (BurgersModel, CostSpec, TimeGrid) {
        let g = SpatialGrid::new(16, 1.0, BoundaryCondition::homogeneous_dirichlet()).unwrap();
        let m = BurgersModel::new(g, BurgersParams { epsilon: 0.05, bc_value: 1.0 }, 5).unwrap();
        let spec = CostSpec::reaching(m.grid(), &Regions::burgers(), 30.0, 30.0, 0.4, 1.0).unwrap();
        (m, spec, TimeGrid::new(0.0, 0.5, 100).unwrap())
    }

    #[test]
    fn burgers_small_solve_decreases_and_is_deterministic() {
        let (m, spec, time) = small_burgers();
        let u0 = ControlTrajectory::zeros(100, 5, 0);
        let cfg = SolverConfig { max_iters: 30, ..SolverConfig::default() };
        let a = stddp_solve(&m, &spec, &m.grid().zeros(), &u0, &cfg, &time).unwrap();
        let b = stddp_solve(&m, &spec, &m.grid().zeros(), &u0, &cfg, &time).unwrap();
        assert_eq!(a.history, b.history);
        let j = a.cost_history();
        assert!(j.windows(2).all(|w| w[1] <= w[0]), "{j:?}");
        assert!(a.cost.total() < 0.6 * a.initial_cost);
        assert!(a.converged);
    }

    #[test]
    fn fused_mode_is_bit_identical() {
        let (m, spec, time) = small_burgers();
        let u0 = ControlTrajectory::zeros(100, 5, 0);
        let cfg = SolverConfig { max_iters: 8, ..SolverConfig::default() };
        let fused = SolverConfig { forward: ForwardMode::Fused, ..cfg.clone() };
        let a = stddp_solve(&m, &spec, &m.grid().zeros(), &u0, &cfg, &time).unwrap();
        let b = stddp_solve(&m, &spec, &m.grid().zeros(), &u0, &fused, &time).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.controls, b.controls);
    }

    #[test]
    fn value_criterion_converges() {
        let (m, spec, time) = small_burgers();
        let u0 = ControlTrajectory::zeros(100, 5, 0);
        let cfg = SolverConfig { criterion: Criterion::Value, tol_rel_cost: 1e-5, ..SolverConfig::default() };
        let sol = stddp_solve(&m, &spec, &m.grid().zeros(), &u0, &cfg, &time).unwrap();
        assert!(sol.converged);
        let v: Vec<f64> = sol.history.iter().map(|r| r.value_integral).collect();
        let n = v.len();
        assert!(relative_change(v[n - 2], v[n - 1]) <= 1e-5);
    }

    #[test]
    fn anneal_with_target_at_start_equals_plain_solve() {
        let (m, spec, time) = small_burgers();
        let u0 = ControlTrajectory::zeros(100, 5, 0);
        let cfg = SolverConfig { max_iters: 10, ..SolverConfig::default() };
        let plain = stddp_solve(&m, &spec, &m.grid().zeros(), &u0, &cfg, &time).unwrap();
        let ann_cfg = SolverConfig { anneal: Some(AnnealConfig::new(spec.q / spec.r_d)), ..cfg };
        let annealed = anneal_solve(&m, &spec, &m.grid().zeros(), &u0, &ann_cfg, &time).unwrap();
        assert_eq!(plain.history, annealed.history);
        assert!(anneal_solve(&m, &spec, &m.grid().zeros(), &u0, &SolverConfig::default(), &time).is_err());
        let low = SolverConfig { anneal: Some(AnnealConfig::new(1.0)), ..SolverConfig::default() };
        assert!(anneal_solve(&m, &spec, &m.grid().zeros(), &u0, &low, &time).is_err());
    }

    #[test]
    fn anneal_rounds_raise_weights_to_target() {
        let (m, spec, time) = small_burgers();
        let spec = spec.with_state_weights(10.0, 10.0);
        let u0 = ControlTrajectory::zeros(100, 5, 0);
        let cfg = SolverConfig {
            scheme: Scheme::ExactDiscrete,
            anneal: Some(AnnealConfig::new(1000.0)),
            ..SolverConfig::default()
        };
        let sol = anneal_solve(&m, &spec, &m.grid().zeros(), &u0, &cfg, &time).unwrap();
        // 25 → 100 → 400 → 1000
        assert_eq!(sol.history.last().unwrap().round, 3);
        assert!((sol.q - 400.0).abs() < 1e-9 && (sol.q_f - 400.0).abs() < 1e-9);
    }

    #[test]
    fn divergence_carries_iteration() {
        let m = heat(32, 1.0);
        let spec = CostSpec::reaching(m.grid(), &Regions::heat(), 300.0, 300.0, 0.4, 1.0).unwrap();
        let dx = m.grid().dx();
        let time = TimeGrid::from_step(0.0, 0.4 * dx * dx, 200).unwrap();
        let cfg = SolverConfig::default();
        let err = stddp_solve(&m, &spec, &m.grid().zeros(), &ControlTrajectory::zeros(200, 32, 0), &cfg, &time).unwrap_err();
        assert!(matches!(err, StddpError::Divergence { iteration: Some(1), .. }), "{err}");
    }
}
