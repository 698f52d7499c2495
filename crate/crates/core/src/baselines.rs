//! Reference solvers: exact backward induction, the sequential series
//! method and the Keane–Wolpin style interpolation method.
//!
//! All three sweep ages backwards. At age `t` they read only the already
//! solved age-`t+1` slice of the value table.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis::{BasisSet, WeightVector};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, SquareMatrix};
use crate::logit::{lse, ValueFunction, EULER_GAMMA};
use crate::model::{ModelSpec, State, ThetaVector, N_ACTIONS};
use crate::scalar::Scalar;

/// Bytes of a dense `f64` value table over `n_states` states.
pub fn value_table_bytes(n_states: u64) -> u64 {
    8 * n_states
}

/// Bytes of a dense `f64` value table over the model's state space.
pub fn memory_footprint(model: &ModelSpec) -> u64 {
    value_table_bytes(model.n_states() as u64)
}

/// Resource limits for solvers that materialize the full value table.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Caps {
    pub memory_bytes: Option<u64>,
    pub time: Option<Duration>,
}

impl Caps {
    pub fn none() -> Self {
        Caps::default()
    }

    fn check_memory(&self, model: &ModelSpec) -> Result<()> {
        let needed = memory_footprint(model);
        match self.memory_bytes {
            Some(cap) if needed > cap => Err(Error::MemoryCap { needed, cap }),
            _ => Ok(()),
        }
    }

    fn check_time(&self, start: Instant) -> Result<()> {
        match self.time {
            Some(cap) if start.elapsed() > cap => Err(Error::TimeCap {
                elapsed_s: start.elapsed().as_secs_f64(),
                cap_s: cap.as_secs_f64(),
            }),
            _ => Ok(()),
        }
    }
}

/// Dense values indexed by packed state index; terminal entries are 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable<F> {
    pub values: Vec<F>,
}

impl<F: Scalar> ValueTable<F> {
    pub fn memory_bytes(&self) -> u64 {
        (self.values.len() * std::mem::size_of::<F>()) as u64
    }

    #[inline]
    pub fn get(&self, index: usize) -> F {
        self.values[index]
    }
}

impl<F: Scalar> ValueFunction<F> for ValueTable<F> {
    #[inline]
    fn value(&self, s: &State) -> F {
        self.values[s.index()]
    }
}

/// Value of a successor inside the next-age slice.
struct NextSlice<'a, F> {
    offset: usize,
    values: &'a [F],
}

impl<F: Scalar> ValueFunction<F> for NextSlice<'_, F> {
    #[inline]
    fn value(&self, s: &State) -> F {
        self.values[s.index() - self.offset]
    }
}

#[inline]
fn action_values_from<F: Scalar>(
    model: &ModelSpec,
    next: &NextSlice<'_, F>,
    s: &State,
    theta: &ThetaVector<F>,
) -> [F; N_ACTIONS] {
    crate::logit::action_values_unchecked(model, next, s, theta).0
}

/// Runs `step(age, cur_slice, next_slice)` for ages `T-1, ..., 1` over a zeroed table.
fn backward_sweep<F: Scalar>(
    model: &ModelSpec,
    caps: &Caps,
    start: Instant,
    mut step: impl FnMut(u32, &mut [F], &NextSlice<'_, F>) -> Result<()>,
) -> Result<ValueTable<F>> {
    caps.check_memory(model)?;
    let mut values = vec![F::zero(); model.n_states()];
    for age in (1..model.horizon()).rev() {
        let cur = model.age_slice(age);
        let next = model.age_slice(age + 1);
        let (head, tail) = values.split_at_mut(next.start);
        let next_slice = NextSlice {
            offset: next.start,
            values: &tail[..next.len()],
        };
        step(age, &mut head[cur], &next_slice)?;
        caps.check_time(start)?;
    }
    Ok(ValueTable { values })
}

/// Exact finite-horizon backward induction with the logit Emax.
pub fn exact_solve<F: Scalar>(model: &ModelSpec, theta: &ThetaVector<F>, caps: &Caps) -> Result<ValueTable<F>> {
    let start = Instant::now();
    let gamma = F::of(EULER_GAMMA);
    backward_sweep(model, caps, start, |age, cur, next| {
        let offset = model.age_slice(age).start;
        cur.par_iter_mut().enumerate().for_each(|(i, v)| {
            let s = model.unpack_unchecked(offset + i);
            *v = gamma + lse(&action_values_from(model, next, &s, theta));
        });
        Ok(())
    })
}

/// Per-age fits produced by the sequential and interpolation baselines.
#[derive(Clone, Debug)]
pub struct PeriodApproximation<F> {
    /// Coefficients for ages `1..=T`; the terminal entry is all zeros.
    pub coefficients: Vec<Vec<F>>,
    /// Largest `|target|` fitted at each age (0 at the terminal age).
    pub target_magnitude: Vec<F>,
}

impl<F: Scalar> PeriodApproximation<F> {
    pub fn at_age(&self, age: u32) -> &[F] {
        &self.coefficients[age as usize - 1]
    }
}

/// Output of a period-by-period baseline: the fits and the table they fill.
#[derive(Clone, Debug)]
pub struct BaselineSolution<F> {
    pub periods: PeriodApproximation<F>,
    pub table: ValueTable<F>,
}

/// Grid coordinates used by the sequential method along a dimension of size `q`.
pub fn grid_points(q: u32, per_dim: usize) -> Vec<u32> {
    let hi = (q - 1) as f64;
    let mut pts: Vec<u32> = (0..per_dim)
        .map(|i| {
            if per_dim == 1 {
                0
            } else {
                (hi * i as f64 / (per_dim - 1) as f64).round() as u32
            }
        })
        .collect();
    pts.dedup();
    pts
}

fn slice_grid(model: &ModelSpec, age: u32, per_dim: usize) -> Vec<State> {
    let choice_dim = model.last_choice_dim();
    let axes: Vec<Vec<u32>> = model
        .dim_sizes()
        .iter()
        .enumerate()
        .map(|(j, &q)| {
            if j == 0 {
                vec![age - 1]
            } else if j == choice_dim {
                (0..q).collect()
            } else {
                grid_points(q, per_dim)
            }
        })
        .collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; axes.len()];
    loop {
        let coords: Vec<u32> = idx.iter().zip(&axes).map(|(&i, ax)| ax[i]).collect();
        out.push(model.state(&coords).expect("grid inside model"));
        let mut d = axes.len();
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Sequential series method: per-age least-squares fits on a tensor grid.
///
/// `basis` is typically built with the age coordinate excluded.
pub fn sequential_series_solve<F: Scalar>(
    model: &ModelSpec,
    basis: &BasisSet<F>,
    theta: &ThetaVector<F>,
    grid_per_dim: usize,
    caps: &Caps,
) -> Result<BaselineSolution<F>> {
    if grid_per_dim < 2 {
        return Err(Error::Config(format!("grid_per_dim must be at least 2, got {grid_per_dim}")));
    }
    let start = Instant::now();
    let t_max = model.horizon() as usize;
    let mut coefficients = vec![vec![F::zero(); basis.len()]; t_max];
    let mut magnitude = vec![F::zero(); t_max];
    let gamma = F::of(EULER_GAMMA);
    let table = backward_sweep(model, caps, start, |age, cur, next| {
        let grid = slice_grid(model, age, grid_per_dim);
        let targets: Vec<F> = grid
            .iter()
            .map(|s| gamma + lse(&action_values_from(model, next, s, theta)))
            .collect();
        let fit = basis.project(&grid, &targets)?;
        let offset = model.age_slice(age).start;
        for (i, v) in cur.iter_mut().enumerate() {
            *v = basis.dot(&model.unpack_unchecked(offset + i), fit.as_slice());
        }
        magnitude[age as usize - 1] = targets.iter().fold(F::zero(), |m, t| m.max(t.abs()));
        coefficients[age as usize - 1] = fit.0;
        Ok(())
    })?;
    Ok(BaselineSolution {
        periods: PeriodApproximation {
            coefficients,
            target_magnitude: magnitude,
        },
        table,
    })
}

/// Interpolation features `(max_a v_a, max_a v_a − mean_a v_a)`.
pub fn kw_features<F: Scalar>(values: &[F]) -> (F, F) {
    let max = values.iter().copied().fold(F::neg_infinity(), F::max);
    let mean = values.iter().copied().sum::<F>() / F::of(values.len() as f64);
    (max, max - mean)
}

/// Fits `Emax ≈ α₀ + α₁ max + α₂ (max − mean)` by least squares.
///
/// A rank-deficient design is solved with a small ridge when `ridge` is set
/// and reported as [`Error::Singular`] otherwise.
pub fn fit_psi<F: Scalar>(features: &[(F, F)], emax: &[F], ridge: bool) -> Result<[F; 3]> {
    let mut normal = SquareMatrix::zeros(3);
    let mut rhs = [F::zero(); 3];
    for (&(mx, spread), &y) in features.iter().zip(emax) {
        let x = [F::one(), mx, spread];
        for i in 0..3 {
            rhs[i] = rhs[i] + x[i] * y;
            for j in 0..3 {
                normal.add_to(i, j, x[i] * x[j]);
            }
        }
    }
    let solved = match cholesky_solve(&normal, &rhs, F::of(1e-12)) {
        Ok(a) => a,
        Err(Error::Singular(msg)) if !ridge => {
            return Err(Error::Singular(format!("interpolation regression: {msg}")));
        }
        Err(Error::Singular(_)) => {
            let lambda = F::of(1e-10) * normal.trace().max(F::one()) / F::of(3.0);
            let mut reg = normal.clone();
            reg.add_diagonal(lambda);
            cholesky_solve(&reg, &rhs, F::zero())?
        }
        Err(e) => return Err(e),
    };
    Ok([solved[0], solved[1], solved[2]])
}

#[inline]
pub fn psi<F: Scalar>(alpha: &[F], features: (F, F)) -> F {
    alpha[0] + alpha[1] * features.0 + alpha[2] * features.1
}

/// Interpolation method: regress Emax on (max, spread) at sampled states, then
/// fill the whole age slice with the fitted interpolant.
pub fn kw_solve<F: Scalar>(
    model: &ModelSpec,
    theta: &ThetaVector<F>,
    states_per_period: usize,
    seed: u64,
    caps: &Caps,
) -> Result<BaselineSolution<F>> {
    if states_per_period < 3 {
        return Err(Error::Config(format!(
            "states_per_period must be at least 3, got {states_per_period}"
        )));
    }
    let start = Instant::now();
    let t_max = model.horizon() as usize;
    let mut coefficients = vec![vec![F::zero(); 3]; t_max];
    let mut magnitude = vec![F::zero(); t_max];
    let table = backward_sweep(model, caps, start, |age, cur, next| {
        let range = model.age_slice(age);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(age as u64);
        let mut feats = Vec::with_capacity(states_per_period);
        let mut emax = Vec::with_capacity(states_per_period);
        for _ in 0..states_per_period {
            let s = model.unpack_unchecked(rng.gen_range(range.clone()));
            let v = action_values_from(model, next, &s, theta);
            feats.push(kw_features(&v));
            emax.push(F::of(EULER_GAMMA) + lse(&v));
        }
        let alpha = fit_psi(&feats, &emax, true)?;
        for (i, out) in cur.iter_mut().enumerate() {
            let s = model.unpack_unchecked(range.start + i);
            *out = psi(&alpha, kw_features(&action_values_from(model, next, &s, theta)));
        }
        magnitude[age as usize - 1] = emax.iter().fold(F::zero(), |m, t| m.max(t.abs()));
        coefficients[age as usize - 1] = alpha.to_vec();
        Ok(())
    })?;
    Ok(BaselineSolution {
        periods: PeriodApproximation {
            coefficients,
            target_magnitude: magnitude,
        },
        table,
    })
}

/// Largest `|approx − exact|` over each age slice, ages `1..=T`.
pub fn per_age_max_error<F: Scalar>(model: &ModelSpec, approx: &ValueTable<F>, exact: &ValueTable<F>) -> Vec<F> {
    (1..=model.horizon())
        .map(|age| {
            model
                .age_slice(age)
                .map(|i| (approx.values[i] - exact.values[i]).abs())
                .fold(F::zero(), F::max)
        })
        .collect()
}

/// Weights of a per-age fit viewed as a basis weight vector.
pub fn period_weights<F: Scalar>(p: &PeriodApproximation<F>, age: u32) -> WeightVector<F> {
    WeightVector(p.at_age(age).to_vec())
}

/// Choice probabilities at `s` under a value table.
pub fn table_choice_probabilities<F: Scalar>(
    model: &ModelSpec,
    table: &ValueTable<F>,
    s: &State,
    theta: &ThetaVector<F>,
) -> Result<[F; N_ACTIONS]> {
    Ok(crate::logit::action_values(model, table, s, theta)?.probabilities())
}
