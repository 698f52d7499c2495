//! Value-function approximation and estimation for finite-horizon dynamic
//! discrete choice models with logit shocks.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the bottom fix it to `f64`.

pub mod baselines;
pub mod basis;
pub mod error;
pub mod estimate;
pub mod linalg;
pub mod logit;
pub mod model;
pub mod scalar;
pub mod simulate;
pub mod slstd;

pub use baselines::{
    exact_solve, kw_solve, memory_footprint, per_age_max_error, sequential_series_solve, BaselineSolution, Caps,
    PeriodApproximation, ValueTable,
};
pub use basis::{build_basis, BasisSet, LinearValue, WeightVector};
pub use error::{Error, Result};
pub use estimate::{
    bellman_error_report, estimate_theta, log_likelihood, nelder_mead, ErrorScope, EstimationResult, InnerSolver,
    OptConfig, SolvedValue,
};
pub use logit::{
    action_values, bellman_operator, bellman_residual, bellman_rhs, choice_probabilities, conditional_eps_mean,
    log_sum_exp, ActionValues, FnValue, ValueFunction, EULER_GAMMA,
};
pub use model::{build_career_model, Action, ModelConfig, ModelSpec, State, ThetaVector};
pub use scalar::Scalar;
pub use simulate::{empirical_state_counts, read_dataset, simulate_dataset, write_dataset, Dataset, Record};
pub use slstd::{fixed_point_oracle, foc_residual, slstd_solve, slstd_solve_states, slstd_step, value_hat, Diagnostics, SolverConfig, StepSchedule};

pub type Theta = ThetaVector<f64>;
pub type Weights = WeightVector<f64>;
pub type Basis = BasisSet<f64>;
pub type Values = ValueTable<f64>;
