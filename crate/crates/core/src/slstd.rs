//! Stochastic-approximation temporal-difference solver for the basis weights.
//!
//! Given observed states `s_1, s_2, ...` (agents concatenated, each ending in
//! its terminal state) the weights follow
//!
//! ```text
//! w ← w + η_ℓ φ(s) Σ_a P(a|s; θ, φᵀw) (T[φᵀw](s,a) − φ(s)ᵀw)    (s non-terminal)
//! w ← w + η_ℓ φ(s) (0 − φ(s)ᵀw)                                  (s terminal)
//! ```
//!
//! with `η_ℓ = c1 / (ℓ + c2)` and `ℓ` counting steps across agents and passes.
//! Under logit shocks the probability-weighted operator collapses to
//! `γ + LSE(ū + β φ(s')ᵀw)`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::basis::{BasisSet, LinearValue, WeightVector};
use crate::error::{Error, Result};
use crate::linalg::{lu_solve, SquareMatrix};
use crate::logit::{action_values_unchecked, lse, EULER_GAMMA};
use crate::model::{Action, ModelSpec, State, ThetaVector, N_ACTIONS};
use crate::scalar::Scalar;
use crate::simulate::Dataset;

/// Step sizes `η_ℓ = c1 / (ℓ + c2)`, `ℓ = 1, 2, ...`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub c1: f64,
    pub c2: f64,
}

impl Default for StepSchedule {
    /// `η_ℓ = 1e6 / (ℓ + 1e6)`: close to 1 for the first passes over a
    /// desk-scale panel, then decaying like `1/ℓ`.
    fn default() -> Self {
        StepSchedule { c1: 1e6, c2: 1e6 }
    }
}

impl StepSchedule {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        if !(c1 > 0.0 && c1.is_finite()) {
            return Err(Error::Config(format!("step constant c1 must be positive, got {c1}")));
        }
        if !(c2 >= 0.0 && c2.is_finite()) {
            return Err(Error::Config(format!("step offset c2 must be non-negative, got {c2}")));
        }
        Ok(StepSchedule { c1, c2 })
    }

    #[inline]
    pub fn eta<F: Scalar>(&self, step: u64) -> F {
        F::of(self.c1 / (step as f64 + self.c2))
    }
}

/// Stopping rule and start point.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig<F> {
    /// Stop once a full pass moves `w` by at most this much (Euclidean norm).
    pub tolerance: f64,
    pub max_passes: usize,
    /// Start point; all zeros when `None`.
    pub w0: Option<WeightVector<F>>,
    /// `‖w‖_∞` above this is treated as divergence.
    pub divergence_cap: f64,
}

impl<F: Scalar> Default for SolverConfig<F> {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-2,
            max_passes: 200,
            w0: None,
            divergence_cap: 1e8,
        }
    }
}

impl<F: Scalar> SolverConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_passes < 1 {
            return Err(Error::Config("max_passes must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-solve diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub passes: usize,
    pub steps: u64,
    pub final_delta_w: f64,
    pub wall_time_s: f64,
    pub converged: bool,
}

/// Residual driving one update at `s`: `rhs(s) − φ(s)ᵀw`, with `rhs = 0` at terminal states.
#[inline]
fn td_residual<F: Scalar>(model: &ModelSpec, basis: &BasisSet<F>, theta: &ThetaVector<F>, w: &[F], s: &State) -> F {
    let here = basis.dot(s, w);
    if model.is_terminal(s) {
        return F::zero() - here;
    }
    let v = LinearValue { basis, weights: w };
    let av = action_values_unchecked(model, &v, s, theta);
    F::of(EULER_GAMMA) + lse(&av.0) - here
}

/// Visit sequence with basis rows, rewards and successors tabulated once per
/// solve. Rows keep the basis walk order, so results match [`slstd_step`] bit
/// for bit.
struct Replay<F> {
    offsets: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<F>,
    visits: Vec<Visit<F>>,
    beta: F,
}

struct Visit<F> {
    row: usize,
    next: Option<([usize; N_ACTIONS], [F; N_ACTIONS])>,
}

impl<F: Scalar> Replay<F> {
    fn compile(model: &ModelSpec, basis: &BasisSet<F>, theta: &ThetaVector<F>, states: &[State]) -> Self {
        let mut replay = Replay {
            offsets: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
            visits: Vec::with_capacity(states.len()),
            beta: F::of(model.beta()),
        };
        let mut rows = std::collections::HashMap::new();
        let mut row_of = |r: &mut Replay<F>, s: &State| -> usize {
            *rows.entry(s.index()).or_insert_with(|| {
                basis.for_each_nonzero(s, |i, v| {
                    r.indices.push(i as u32);
                    r.values.push(v);
                });
                r.offsets.push(r.indices.len());
                r.offsets.len() - 2
            })
        };
        for s in states {
            let row = row_of(&mut replay, s);
            let next = (!model.is_terminal(s)).then(|| {
                let mut ids = [0; N_ACTIONS];
                let mut rewards = [F::zero(); N_ACTIONS];
                for a in Action::ALL {
                    ids[a.index()] = row_of(&mut replay, &model.successor(s, a));
                    rewards[a.index()] = model.reward(s, a, theta);
                }
                (ids, rewards)
            });
            replay.visits.push(Visit { row, next });
        }
        replay
    }

    #[inline]
    fn dot(&self, row: usize, w: &[F]) -> F {
        let span = self.offsets[row]..self.offsets[row + 1];
        let mut acc = F::zero();
        for (&i, &v) in self.indices[span.clone()].iter().zip(&self.values[span]) {
            acc = acc + v * w[i as usize];
        }
        acc
    }

    #[inline]
    fn residual(&self, visit: &Visit<F>, w: &[F]) -> F {
        let here = self.dot(visit.row, w);
        match &visit.next {
            None => F::zero() - here,
            Some((ids, rewards)) => {
                let mut av = [F::zero(); N_ACTIONS];
                for a in 0..N_ACTIONS {
                    av[a] = rewards[a] + self.beta * self.dot(ids[a], w);
                }
                F::of(EULER_GAMMA) + lse(&av) - here
            }
        }
    }

    #[inline]
    fn axpy(&self, row: usize, alpha: F, w: &mut [F]) -> F {
        let span = self.offsets[row]..self.offsets[row + 1];
        let mut peak = F::zero();
        for (&i, &v) in self.indices[span.clone()].iter().zip(&self.values[span]) {
            let x = &mut w[i as usize];
            *x = *x + alpha * v;
            peak = peak.max(x.abs());
        }
        peak
    }
}

/// One update of the weights at state `s` with step size `eta`.
pub fn slstd_step<F: Scalar>(
    model: &ModelSpec,
    basis: &BasisSet<F>,
    theta: &ThetaVector<F>,
    w: &WeightVector<F>,
    s: &State,
    eta: F,
) -> Result<WeightVector<F>> {
    if !(eta >= F::zero()) {
        return Err(Error::Config(format!("step size must be non-negative, got {eta}")));
    }
    let r = td_residual(model, basis, theta, w.as_slice(), s);
    if !r.is_finite() {
        return Err(Error::Diverged {
            pass: 0,
            step: 0,
            reason: "non-finite temporal difference".into(),
        });
    }
    let mut out = w.clone();
    basis.axpy(s, eta * r, &mut out.0);
    Ok(out)
}

/// Dense update direction `φ(s) (rhs(s) − φ(s)ᵀw)` at `s`.
pub fn update_direction<F: Scalar>(
    model: &ModelSpec,
    basis: &BasisSet<F>,
    theta: &ThetaVector<F>,
    w: &WeightVector<F>,
    s: &State,
) -> Vec<F> {
    let r = td_residual(model, basis, theta, w.as_slice(), s);
    let mut out = vec![F::zero(); basis.len()];
    basis.for_each_nonzero(s, |i, v| out[i] = v * r);
    out
}

/// Runs the update over the dataset, pass after pass, until a pass moves the
/// weights by at most `config.tolerance`.
pub fn slstd_solve<F: Scalar>(
    model: &ModelSpec,
    basis: &BasisSet<F>,
    theta: &ThetaVector<F>,
    dataset: &Dataset,
    schedule: &StepSchedule,
    config: &SolverConfig<F>,
) -> Result<(WeightVector<F>, Diagnostics)> {
    let states = dataset.visit_sequence(model)?;
    slstd_solve_states(model, basis, theta, &states, schedule, config)
}

/// [`slstd_solve`] over an explicit visit sequence.
pub fn slstd_solve_states<F: Scalar>(
    model: &ModelSpec,
    basis: &BasisSet<F>,
    theta: &ThetaVector<F>,
    states: &[State],
    schedule: &StepSchedule,
    config: &SolverConfig<F>,
) -> Result<(WeightVector<F>, Diagnostics)> {
    config.validate()?;
    if states.is_empty() {
        return Err(Error::Empty("dataset has no transitions"));
    }
    let started = Instant::now();
    let mut w = match &config.w0 {
        Some(w0) if w0.len() == basis.len() => w0.clone(),
        Some(w0) => {
            return Err(Error::Config(format!(
                "initial weights have length {}, basis has {}",
                w0.len(),
                basis.len()
            )))
        }
        None => WeightVector::zeros(basis.len()),
    };
    let cap = F::of(config.divergence_cap);
    let replay = Replay::compile(model, basis, theta, states);
    let mut step: u64 = 0;
    let mut passes = 0;
    let mut delta = f64::INFINITY;
    let mut before = w.clone();
    while passes < config.max_passes {
        passes += 1;
        before.0.copy_from_slice(&w.0);
        for (i, visit) in replay.visits.iter().enumerate() {
            step += 1;
            let eta: F = schedule.eta(step);
            let r = replay.residual(visit, &w.0);
            let peak = replay.axpy(visit.row, eta * r, &mut w.0);
            if !r.is_finite() || !(peak <= cap) {
                return Err(Error::Diverged {
                    pass: passes,
                    step: i + 1,
                    reason: format!("weight magnitude {} exceeds cap {}", peak, config.divergence_cap),
                });
            }
        }
        delta = w.distance(&before).to_f64_lossy();
        if delta <= config.tolerance {
            break;
        }
    }
    Ok((
        w,
        Diagnostics {
            passes,
            steps: step,
            final_delta_w: delta,
            wall_time_s: started.elapsed().as_secs_f64(),
            converged: delta <= config.tolerance,
        },
    ))
}

/// `V̂(s) = φ(s)ᵀ w`.
#[inline]
pub fn value_hat<F: Scalar>(basis: &BasisSet<F>, w: &WeightVector<F>, s: &State) -> F {
    basis.dot(s, w.as_slice())
}

/// Sample mean of the update direction, `(1/N) Σ_s φ(s)(rhs(s) − φ(s)ᵀw)`.
///
/// Zero exactly at a root of the weak first-order condition.
pub fn foc_residual<F: Scalar>(
    model: &ModelSpec,
    basis: &BasisSet<F>,
    theta: &ThetaVector<F>,
    w: &WeightVector<F>,
    samples: &[State],
) -> Vec<F> {
    let mut out = vec![F::zero(); basis.len()];
    for s in samples {
        let r = td_residual(model, basis, theta, w.as_slice(), s);
        basis.axpy(s, r, &mut out);
    }
    let n = F::of(samples.len() as f64);
    out.iter_mut().for_each(|v| *v = *v / n);
    out
}

/// Orthonormal basis of the span of `φ(s)` over the distinct sample states.
///
/// SLSTD started from zero never leaves this subspace, so the oracle solves
/// inside it as well.
fn sample_span<F: Scalar>(basis: &BasisSet<F>, samples: &[State]) -> Vec<Vec<F>> {
    let mut seen = std::collections::HashSet::new();
    let mut q: Vec<Vec<F>> = Vec::new();
    let tol = F::of(1e-9);
    for s in samples {
        if !seen.insert(s.index()) {
            continue;
        }
        let mut v = vec![F::zero(); basis.len()];
        basis.for_each_nonzero(s, |i, x| v[i] = x);
        let norm0 = v.iter().map(|x| *x * *x).sum::<F>().sqrt();
        for _ in 0..2 {
            for u in &q {
                let d: F = u.iter().zip(&v).map(|(a, b)| *a * *b).sum();
                v.iter_mut().zip(u).for_each(|(x, a)| *x = *x - d * *a);
            }
        }
        let norm = v.iter().map(|x| *x * *x).sum::<F>().sqrt();
        if norm > tol * norm0 {
            v.iter_mut().for_each(|x| *x = *x / norm);
            q.push(v);
        }
    }
    q
}

/// Deterministic solution of the weak first-order condition over `samples`.
///
/// Each iteration freezes the choice probabilities at the current weights and
/// solves the resulting linear system, which is a Newton step for the
/// log-sum-exp right-hand side. The solution is sought in the span of the
/// sample feature vectors, where the SLSTD iterates live.
pub fn fixed_point_oracle<F: Scalar>(
    model: &ModelSpec,
    basis: &BasisSet<F>,
    theta: &ThetaVector<F>,
    samples: &[State],
) -> Result<WeightVector<F>> {
    if samples.is_empty() {
        return Err(Error::Empty("oracle needs sample states"));
    }
    let k = basis.len();
    let q = sample_span(basis, samples);
    let r = q.len();
    let beta = F::of(model.beta());
    let gamma = F::of(EULER_GAMMA);
    let mut w = WeightVector::zeros(k);
    let mut damping = F::one();
    let mut last_change = f64::INFINITY;
    let mut last_resid = f64::INFINITY;
    const MAX_ITER: usize = 500;
    let mut phi_s: Vec<(usize, F)> = Vec::new();
    let mut phi_next: Vec<(usize, F)> = Vec::new();
    for _ in 0..MAX_ITER {
        let mut a = SquareMatrix::zeros(k);
        let mut b = vec![F::zero(); k];
        for s in samples {
            phi_s.clear();
            basis.for_each_nonzero(s, |i, v| phi_s.push((i, v)));
            // Row contribution φ(s) (φ(s) − β Σ_a P_a φ(s'_a))ᵀ
            phi_next.clear();
            let mut c = F::zero();
            if !model.is_terminal(s) {
                let v = LinearValue { basis, weights: &w.0 };
                let av = action_values_unchecked(model, &v, s, theta);
                let p = av.probabilities();
                let l = lse(&av.0);
                let mut expected_next = F::zero();
                for act in 0..N_ACTIONS {
                    let next = model.transition(s, Action::from_index(act))?;
                    expected_next = expected_next + p[act] * basis.dot(&next, &w.0);
                    basis.for_each_nonzero(&next, |i, val| phi_next.push((i, -beta * p[act] * val)));
                }
                // Σ_a P_a (ū_a + E[ε_a]) = γ + LSE − β Σ_a P_a V(s'_a)
                c = gamma + l - beta * expected_next;
            }
            for &(i, vi) in &phi_s {
                b[i] = b[i] + vi * c;
                for &(j, vj) in phi_s.iter().chain(&phi_next) {
                    a.add_to(i, j, vi * vj);
                }
            }
        }
        let aq: Vec<Vec<F>> = q.iter().map(|col| a.mul_vec(col)).collect();
        let mut reduced = SquareMatrix::zeros(r);
        for (i, qi) in q.iter().enumerate() {
            for (j, aqj) in aq.iter().enumerate() {
                reduced.add_to(i, j, qi.iter().zip(aqj).map(|(x, y)| *x * *y).sum());
            }
        }
        let rhs: Vec<F> = q.iter().map(|qi| qi.iter().zip(&b).map(|(x, y)| *x * *y).sum()).collect();
        let z = lu_solve(&reduced, &rhs)?;
        let mut solved = vec![F::zero(); k];
        for (zj, qj) in z.iter().zip(&q) {
            solved.iter_mut().zip(qj).for_each(|(x, v)| *x = *x + *zj * *v);
        }
        let next_w = WeightVector(
            w.0.iter()
                .zip(&solved)
                .map(|(old, new)| (F::one() - damping) * *old + damping * *new)
                .collect(),
        );
        let change = next_w
            .0
            .iter()
            .zip(&w.0)
            .fold(F::zero(), |m, (x, y)| m.max((*x - *y).abs()))
            .to_f64_lossy();
        let scale = 1.0 + next_w.max_abs().to_f64_lossy();
        w = next_w;
        if change <= 1e-10 * scale {
            return Ok(w);
        }
        let resid = foc_residual(model, basis, theta, &w, samples)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.to_f64_lossy().abs()));
        if resid > last_resid && damping > F::of(1e-3) {
            damping = damping * F::of(0.5);
        }
        last_resid = resid;
        last_change = change;
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITER,
        last_change,
    })
}
