//! Nested maximum likelihood: a simplex search over θ outside, a fresh
//! value-function solve per candidate θ inside.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{exact_solve, kw_solve, memory_footprint, sequential_series_solve, Caps, ValueTable};
use crate::basis::{BasisSet, WeightVector};
use crate::error::{Error, Result};
use crate::logit::{action_values, bellman_residual, lse, ValueFunction};
use crate::model::{ModelSpec, State, ThetaVector, THETA_DIM};
use crate::scalar::Scalar;
use crate::simulate::{empirical_state_counts, Dataset};
use crate::slstd::{slstd_solve_states, SolverConfig, StepSchedule};

/// Average log choice probability per decision record.
///
/// Transitions are deterministic, so a consistent triple contributes only
/// `log P(a | s)`; an inconsistent one is an error naming the record.
pub fn log_likelihood<F: Scalar, V: ValueFunction<F> + ?Sized>(
    model: &ModelSpec,
    dataset: &Dataset,
    theta: &ThetaVector<F>,
    value: &V,
) -> Result<F> {
    if dataset.records.is_empty() {
        return Err(Error::Empty("dataset has no transitions"));
    }
    let mut total = F::zero();
    for (i, r) in dataset.records.iter().enumerate() {
        let expected = model.transition(&r.state, r.action).map_err(|e| Error::InconsistentRecord {
            record: i,
            reason: e.to_string(),
        })?;
        if expected != r.next {
            return Err(Error::InconsistentRecord {
                record: i,
                reason: "transition has probability zero".into(),
            });
        }
        let av = action_values(model, value, &r.state, theta)?;
        total = total + av.0[r.action.index()] - lse(&av.0);
    }
    Ok(total / F::of(dataset.records.len() as f64))
}

/// Where the Bellman error is summed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorScope {
    Full,
    Visited,
}

/// Sum of squared Bellman residuals over the whole state space or over the
/// distinct states observed in `dataset`.
pub fn bellman_error_report<F: Scalar, V: ValueFunction<F> + ?Sized>(
    model: &ModelSpec,
    theta: &ThetaVector<F>,
    value: &V,
    scope: ErrorScope,
    dataset: Option<&Dataset>,
    memory_cap: Option<u64>,
) -> Result<F> {
    let sq = |s: &State| -> Result<F> {
        let r = bellman_residual(model, value, s, theta);
        Ok(r * r)
    };
    match scope {
        ErrorScope::Full => {
            let needed = memory_footprint(model);
            if let Some(cap) = memory_cap {
                if needed > cap {
                    return Err(Error::MemoryCap { needed, cap });
                }
            }
            let mut total = F::zero();
            for s in model.states() {
                total = total + sq(&s)?;
            }
            Ok(total)
        }
        ErrorScope::Visited => {
            let d = dataset.ok_or_else(|| Error::Config("visited scope needs a dataset".into()))?;
            let mut total = F::zero();
            for &i in empirical_state_counts(model, d)?.keys() {
                total = total + sq(&model.unpack_state(i)?)?;
            }
            Ok(total)
        }
    }
}

/// Inner solver and its settings.
#[derive(Clone, Debug, PartialEq)]
pub enum InnerSolver {
    Exact {
        caps: Caps,
    },
    Slstd {
        knots_per_dim: usize,
        degree: usize,
        schedule: StepSchedule,
        config: SolverConfig<f64>,
    },
    Sequential {
        knots_per_dim: usize,
        degree: usize,
        grid_per_dim: usize,
        caps: Caps,
    },
    Kw {
        states_per_period: usize,
        seed: u64,
        caps: Caps,
    },
}

impl InnerSolver {
    pub fn name(&self) -> &'static str {
        match self {
            InnerSolver::Exact { .. } => "exact",
            InnerSolver::Slstd { .. } => "slstd",
            InnerSolver::Sequential { .. } => "sequential",
            InnerSolver::Kw { .. } => "kw",
        }
    }
}

/// A solved value function from any inner solver.
#[derive(Clone, Debug)]
pub enum SolvedValue {
    Table(ValueTable<f64>),
    Linear { basis: BasisSet<f64>, weights: WeightVector<f64> },
}

impl ValueFunction<f64> for SolvedValue {
    #[inline]
    fn value(&self, s: &State) -> f64 {
        match self {
            SolvedValue::Table(t) => t.values[s.index()],
            SolvedValue::Linear { basis, weights } => basis.dot(s, weights.as_slice()),
        }
    }
}

/// Inner solver bound to a model and a fixed data replay order.
pub struct InnerProblem<'a> {
    model: &'a ModelSpec,
    solver: &'a InnerSolver,
    basis: Option<BasisSet<f64>>,
    visits: Vec<State>,
}

impl<'a> InnerProblem<'a> {
    pub fn new(model: &'a ModelSpec, solver: &'a InnerSolver, dataset: &Dataset) -> Result<Self> {
        let basis = match solver {
            InnerSolver::Slstd {
                knots_per_dim, degree, ..
            } => Some(BasisSet::build(model, *knots_per_dim, *degree)?),
            InnerSolver::Sequential {
                knots_per_dim, degree, ..
            } => Some(BasisSet::build_excluding(model, *knots_per_dim, *degree, &[0])?),
            _ => None,
        };
        let visits = match solver {
            InnerSolver::Slstd { .. } => dataset.visit_sequence(model)?,
            _ => Vec::new(),
        };
        Ok(InnerProblem {
            model,
            solver,
            basis,
            visits,
        })
    }

    /// Solves for the value function at `theta`.
    pub fn solve(&self, theta: &ThetaVector<f64>) -> Result<SolvedValue> {
        let m = self.model;
        match self.solver {
            InnerSolver::Exact { caps } => Ok(SolvedValue::Table(exact_solve(m, theta, caps)?)),
            InnerSolver::Slstd { schedule, config, .. } => {
                let basis = self.basis.as_ref().expect("basis built");
                let (w, _) = slstd_solve_states(m, basis, theta, &self.visits, schedule, config)?;
                Ok(SolvedValue::Linear {
                    basis: basis.clone(),
                    weights: w,
                })
            }
            InnerSolver::Sequential { grid_per_dim, caps, .. } => {
                let basis = self.basis.as_ref().expect("basis built");
                Ok(SolvedValue::Table(
                    sequential_series_solve(m, basis, theta, *grid_per_dim, caps)?.table,
                ))
            }
            InnerSolver::Kw {
                states_per_period,
                seed,
                caps,
            } => Ok(SolvedValue::Table(kw_solve(m, theta, *states_per_period, *seed, caps)?.table)),
        }
    }
}

/// Simplex search settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub xtol: f64,
    pub ftol: f64,
    pub max_iter: usize,
    /// Edge length of the starting simplex.
    pub initial_step: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            xtol: 1e-3,
            ftol: 1e-6,
            max_iter: 500,
            initial_step: 0.5,
            lower: -50.0,
            upper: 50.0,
        }
    }
}

/// Outcome of [`nelder_mead`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Box-constrained Nelder–Mead minimization.
///
/// Trial points are clipped to `[lower, upper]`. Stops when the simplex
/// diameter (sup norm from the best vertex) is below `xtol` and the spread
/// of function values is below `ftol`.
pub fn nelder_mead(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], cfg: &OptConfig) -> OptResult {
    let n = x0.len();
    let clip = |x: &mut Vec<f64>| x.iter_mut().for_each(|v| *v = v.clamp(cfg.lower, cfg.upper));
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut start = x0.to_vec();
    clip(&mut start);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(&start, &mut evals);
    simplex.push((start.clone(), f0));
    for i in 0..n {
        let mut x = start.clone();
        x[i] += cfg.initial_step;
        if x[i] > cfg.upper {
            x[i] = start[i] - cfg.initial_step;
        }
        clip(&mut x);
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }
    let sort = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    sort(&mut simplex);
    let mut iterations = 0;
    let mut converged = false;
    let point = |c: &[f64], toward: &[f64], t: f64| -> Vec<f64> {
        let mut x: Vec<f64> = c.iter().zip(toward).map(|(a, b)| a + t * (b - a)).collect();
        x.iter_mut().for_each(|v| *v = v.clamp(cfg.lower, cfg.upper));
        x
    };
    while iterations < cfg.max_iter {
        let best = &simplex[0];
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&best.0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let spread = simplex[1..].iter().map(|(_, v)| (v - best.1).abs()).fold(0.0, f64::max);
        if diameter <= cfg.xtol && spread <= cfg.ftol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            centroid.iter_mut().zip(x).for_each(|(c, v)| *c += v / n as f64);
        }
        let worst = simplex[n].clone();
        let xr = point(&centroid, &worst.0, -1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = point(&centroid, &worst.0, -2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = point(&centroid, &xr, 0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = point(&centroid, &worst.0, 0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < fr.min(worst.1) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    v.0 = point(&best, &v.0, 0.5);
                    v.1 = eval(&v.0, &mut evals);
                }
            }
        }
        sort(&mut simplex);
    }
    let (x, fx) = simplex.swap_remove(0);
    OptResult {
        x,
        f: fx,
        iterations,
        evaluations: evals,
        converged,
    }
}

/// Result of [`estimate_theta`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta_hat: [f64; THETA_DIM],
    /// Average log-likelihood per decision record at `theta_hat`.
    pub log_likelihood: f64,
    /// Mean wall time of one inner solve.
    pub solve_time_s: f64,
    /// Bellman Δ² of the inner solution at `theta_hat`.
    pub delta_sq: f64,
    pub delta_sq_scope: ErrorScope,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Inner solves that failed and were penalized.
    pub failed_solves: usize,
}

/// Negative log-likelihood as a function of the active θ components, with a
/// fresh inner solve per call.
pub struct Objective<'a> {
    problem: InnerProblem<'a>,
    dataset: &'a Dataset,
    template: [f64; THETA_DIM],
    active: Vec<usize>,
    pub solve_seconds: f64,
    pub solves: usize,
    pub failures: usize,
}

impl<'a> Objective<'a> {
    pub fn new(
        model: &'a ModelSpec,
        dataset: &'a Dataset,
        solver: &'a InnerSolver,
        theta0: &ThetaVector<f64>,
    ) -> Result<Self> {
        let active = model
            .active_theta()
            .iter()
            .enumerate()
            .filter(|(_, &on)| on)
            .map(|(i, _)| i)
            .collect();
        Ok(Objective {
            problem: InnerProblem::new(model, solver, dataset)?,
            dataset,
            template: theta0.to_f64(),
            active,
            solve_seconds: 0.0,
            solves: 0,
            failures: 0,
        })
    }

    /// Full θ from the active components.
    pub fn theta(&self, x: &[f64]) -> [f64; THETA_DIM] {
        let mut t = self.template;
        for (&i, &v) in self.active.iter().zip(x) {
            t[i] = v;
        }
        t
    }

    pub fn start(&self) -> Vec<f64> {
        self.active.iter().map(|&i| self.template[i]).collect()
    }

    /// Solves at `theta` and returns the value function with the average log-likelihood.
    pub fn solve_at(&mut self, theta: [f64; THETA_DIM]) -> Result<(SolvedValue, f64)> {
        let th = ThetaVector::from_f64(theta)?;
        let t0 = Instant::now();
        let solved = self.problem.solve(&th);
        self.solve_seconds += t0.elapsed().as_secs_f64();
        self.solves += 1;
        let v = solved?;
        let ll = log_likelihood(self.problem.model, self.dataset, &th, &v)?;
        Ok((v, ll))
    }

    /// `−L(θ)`; `+∞` when the inner solve fails.
    pub fn eval(&mut self, x: &[f64]) -> f64 {
        match self.solve_at(self.theta(x)) {
            Ok((_, ll)) if ll.is_finite() => -ll,
            _ => {
                self.failures += 1;
                f64::INFINITY
            }
        }
    }
}

/// Maximizes the likelihood over θ with `solver` providing `V̂(θ)`.
///
/// Components of θ that the model does not use stay at their `theta0` value.
pub fn estimate_theta(
    model: &ModelSpec,
    dataset: &Dataset,
    solver: &InnerSolver,
    theta0: &ThetaVector<f64>,
    opt: &OptConfig,
) -> Result<EstimationResult> {
    let mut objective = Objective::new(model, dataset, solver, theta0)?;
    let x0 = objective.start();
    let res = nelder_mead(|x| objective.eval(x), &x0, opt);
    let theta_hat = objective.theta(&res.x);
    let evaluations_time = objective.solve_seconds;
    let solves = objective.solves;
    let failures = objective.failures;
    let (v, ll) = objective.solve_at(theta_hat)?;
    let th = ThetaVector::from_f64(theta_hat)?;
    let (delta_sq, scope) = match bellman_error_report(model, &th, &v, ErrorScope::Full, None, default_full_scope_cap()) {
        Ok(d) => (d, ErrorScope::Full),
        Err(Error::MemoryCap { .. }) => (
            bellman_error_report(model, &th, &v, ErrorScope::Visited, Some(dataset), None)?,
            ErrorScope::Visited,
        ),
        Err(e) => return Err(e),
    };
    Ok(EstimationResult {
        theta_hat,
        log_likelihood: ll,
        solve_time_s: evaluations_time / solves.max(1) as f64,
        delta_sq,
        delta_sq_scope: scope,
        iterations: res.iterations,
        evaluations: res.evaluations,
        converged: res.converged,
        failed_solves: failures,
    })
}

/// Full-scope Δ² is skipped above this state-space footprint.
fn default_full_scope_cap() -> Option<u64> {
    Some(1 << 30)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logit::FnValue;
    use crate::model::{build_career_model, Action};
    use crate::simulate::{simulate_dataset, DatasetMeta, Record, ValueSource};

    fn theta() -> ThetaVector<f64> {
        ThetaVector::from_f64([1.0, 2.0, 1.0, 9.0]).unwrap()
    }

    #[test]
    fn single_uniform_transition() {
        let m = build_career_model(3, 5, 0.95).unwrap();
        let s = m.initial_state();
        let next = m.transition(&s, Action::WORK).unwrap();
        let d = Dataset {
            meta: DatasetMeta {
                model: m.config(),
                theta_true: [0.0; 4],
                seed: 0,
                n_agents: 1,
                value_source: ValueSource::External,
            },
            records: vec![Record {
                agent: 0,
                t: 1,
                state: s,
                action: Action::WORK,
                next,
            }],
        };
        let zero = ThetaVector::from_f64([0.0; 4]).unwrap();
        let ll = log_likelihood(&m, &d, &zero, &FnValue(|_: &State| 4.0)).unwrap();
        assert!((ll - (1.0f64 / 3.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn inconsistent_record_is_named() {
        let m = build_career_model(3, 5, 0.95).unwrap();
        let mut d = simulate_dataset(&m, &theta(), 3, 1).unwrap();
        d.records[4].next = d.records[4].state;
        let err = log_likelihood(&m, &d, &theta(), &FnValue(|_: &State| 0.0)).unwrap_err();
        assert!(matches!(err, Error::InconsistentRecord { record: 4, .. }));
    }

    #[test]
    fn exact_values_give_zero_bellman_error() {
        let m = build_career_model(4, 8, 0.95).unwrap();
        let t = exact_solve(&m, &theta(), &Caps::none()).unwrap();
        let full = bellman_error_report(&m, &theta(), &t, ErrorScope::Full, None, None).unwrap();
        assert!(full < 1e-16 * m.n_states() as f64);
    }

    #[test]
    fn visited_error_is_bounded_by_full_error() {
        let m = build_career_model(4, 8, 0.95).unwrap();
        let d = simulate_dataset(&m, &theta(), 100, 4).unwrap();
        let v = FnValue(|s: &State| s.coord(1) as f64 * 0.7 - 3.0);
        let full = bellman_error_report(&m, &theta(), &v, ErrorScope::Full, None, None).unwrap();
        let vis = bellman_error_report(&m, &theta(), &v, ErrorScope::Visited, Some(&d), None).unwrap();
        assert!(vis <= full && vis > 0.0);
        assert!(matches!(
            bellman_error_report(&m, &theta(), &v, ErrorScope::Full, None, Some(16)),
            Err(Error::MemoryCap { .. })
        ));
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let cfg = OptConfig {
            xtol: 1e-6,
            ftol: 1e-12,
            max_iter: 2000,
            ..OptConfig::default()
        };
        let r = nelder_mead(
            |x| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2) + (x[2] - 0.5).powi(2) + x[0] * x[1] * 0.1,
            &[0.0, 0.0, 0.0],
            &cfg,
        );
        assert!(r.converged);
        // Stationary point of the coupled quadratic.
        let (a, b) = {
            // 2(a-3) + 0.1 b = 0 ; 4(b+1) + 0.1 a = 0
            let det = 2.0 * 4.0 - 0.01;
            ((6.0 * 4.0 + 0.1 * 4.0) / det, (-4.0 * 2.0 - 0.1 * 6.0) / det)
        };
        assert!((r.x[0] - a).abs() < 1e-4 && (r.x[1] - b).abs() < 1e-4 && (r.x[2] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn nelder_mead_respects_box_and_infinite_values() {
        let cfg = OptConfig {
            lower: -1.0,
            upper: 1.0,
            ..OptConfig::default()
        };
        let r = nelder_mead(|x| if x[0] > 0.9 { f64::INFINITY } else { -x[0] - x[1] }, &[0.0, 0.0], &cfg);
        assert!(r.x.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(r.x[1] > 0.99 && r.x[0] <= 0.9 && r.x[0] > 0.85);
        let r = nelder_mead(|x| x[0], &[0.0], &OptConfig { max_iter: 3, ..cfg });
        assert!(!r.converged && r.iterations == 3);
    }

    #[test]
    fn objective_is_deterministic_in_theta() {
        let m = build_career_model(4, 6, 0.95).unwrap();
        let d = simulate_dataset(&m, &theta(), 200, 8).unwrap();
        let solver = InnerSolver::Slstd {
            knots_per_dim: 4,
            degree: 3,
            schedule: StepSchedule::new(1e3, 1e3).unwrap(),
            config: SolverConfig {
                max_passes: 4,
                ..SolverConfig::default()
            },
        };
        let mut obj = Objective::new(&m, &d, &solver, &ThetaVector::from_f64([1.0; 4]).unwrap()).unwrap();
        let x = [0.7, 1.9, 1.2, 8.0];
        let a = obj.eval(&x);
        let b = obj.eval(&x);
        assert!(a.is_finite());
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn divergent_inner_solve_is_penalized() {
        let m = build_career_model(3, 5, 0.95).unwrap();
        let d = simulate_dataset(&m, &theta(), 50, 8).unwrap();
        let solver = InnerSolver::Slstd {
            knots_per_dim: 5,
            degree: 0,
            schedule: StepSchedule::new(1e9, 10.0).unwrap(),
            config: SolverConfig::default(),
        };
        let mut obj = Objective::new(&m, &d, &solver, &theta()).unwrap();
        assert_eq!(obj.eval(&[1.0, 2.0, 9.0]), f64::INFINITY);
        assert_eq!(obj.failures, 1);
    }

    #[test]
    fn p3_holds_inactive_component_fixed() {
        let m = build_career_model(3, 6, 0.95).unwrap();
        let d = simulate_dataset(&m, &theta(), 300, 2).unwrap();
        let r = estimate_theta(
            &m,
            &d,
            &InnerSolver::Exact { caps: Caps::none() },
            &ThetaVector::from_f64([1.0, 1.0, 0.25, 1.0]).unwrap(),
            &OptConfig::default(),
        )
        .unwrap();
        assert_eq!(r.theta_hat[2], 0.25);
        assert!(r.log_likelihood.is_finite() && r.delta_sq >= 0.0);
    }

    #[test]
    fn true_theta_beats_shifted_theta_in_median() {
        let m = build_career_model(4, 10, 0.95).unwrap();
        let truth = exact_solve(&m, &theta(), &Caps::none()).unwrap();
        let shifted_theta = ThetaVector::<f64>::from_f64([2.0, 2.0, 1.0, 9.0]).unwrap();
        let shifted = exact_solve(&m, &shifted_theta, &Caps::none()).unwrap();
        let mut diffs: Vec<f64> = (0..10)
            .map(|seed| {
                let d = simulate_dataset(&m, &theta(), 300, 100 + seed).unwrap();
                log_likelihood(&m, &d, &theta(), &truth).unwrap()
                    - log_likelihood(&m, &d, &shifted_theta, &shifted).unwrap()
            })
            .collect();
        diffs.sort_by(f64::total_cmp);
        assert!(diffs[5] >= 0.0);
    }

    #[test]
    fn shifting_all_action_values_leaves_likelihood_unchanged() {
        let m = build_career_model(4, 6, 0.95).unwrap();
        let d = simulate_dataset(&m, &theta(), 50, 6).unwrap();
        let base = FnValue(|s: &State| (s.index() as f64).sin() * 3.0);
        let shifted = FnValue(|s: &State| (s.index() as f64).sin() * 3.0 + 12.5);
        let a = log_likelihood(&m, &d, &theta(), &base).unwrap();
        let b = log_likelihood(&m, &d, &theta(), &shifted).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
