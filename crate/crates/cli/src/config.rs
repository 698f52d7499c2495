//! Experiment configuration: a TOML file with a strict schema.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use slstd::baselines::Caps;
use slstd::estimate::{InnerSolver, OptConfig};
use slstd::model::{ModelConfig, ModelSpec, ThetaVector, THETA_DIM};
use slstd::slstd::{SolverConfig, StepSchedule};

use crate::BenchError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub p: usize,
    #[serde(rename = "T")]
    pub horizon: u32,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub theta_true: [f64; THETA_DIM],
    #[serde(default)]
    pub kinked_reward: bool,
}

fn default_beta() -> f64 {
    0.95
}

impl ModelBlock {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            p: self.p,
            horizon: self.horizon,
            beta: self.beta,
            kinked_reward: self.kinked_reward,
        }
    }

    pub fn spec(&self) -> Result<ModelSpec, BenchError> {
        Ok(ModelSpec::from_config(&self.model_config())?)
    }

    pub fn theta(&self) -> Result<ThetaVector<f64>, BenchError> {
        Ok(ThetaVector::from_f64(self.theta_true)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisBlock {
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_knots")]
    pub knots_per_dim: usize,
    #[serde(default = "default_true")]
    pub ridge: bool,
}

fn default_degree() -> usize {
    3
}
fn default_knots() -> usize {
    5
}
fn default_true() -> bool {
    true
}

impl Default for BasisBlock {
    fn default() -> Self {
        BasisBlock {
            degree: default_degree(),
            knots_per_dim: default_knots(),
            ridge: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlstdBlock {
    #[serde(default = "default_c")]
    pub c1: f64,
    #[serde(default = "default_c")]
    pub c2: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_passes")]
    pub max_passes: usize,
}

fn default_c() -> f64 {
    1e6
}
fn default_tolerance() -> f64 {
    1e-2
}
fn default_max_passes() -> usize {
    200
}

impl Default for SlstdBlock {
    fn default() -> Self {
        SlstdBlock {
            c1: default_c(),
            c2: default_c(),
            tolerance: default_tolerance(),
            max_passes: default_max_passes(),
        }
    }
}

impl SlstdBlock {
    pub fn schedule(&self) -> Result<StepSchedule, BenchError> {
        Ok(StepSchedule::new(self.c1, self.c2)?)
    }

    pub fn solver_config(&self) -> SolverConfig<f64> {
        SolverConfig {
            tolerance: self.tolerance,
            max_passes: self.max_passes,
            ..SolverConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselinesBlock {
    #[serde(default = "default_grid")]
    pub grid_per_dim: usize,
    #[serde(default = "default_kw_states")]
    pub kw_states_per_period: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_cap_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_cap_s: Option<f64>,
}

fn default_grid() -> usize {
    5
}
fn default_kw_states() -> usize {
    100
}

impl Default for BaselinesBlock {
    fn default() -> Self {
        BaselinesBlock {
            grid_per_dim: default_grid(),
            kw_states_per_period: default_kw_states(),
            memory_cap_bytes: None,
            time_cap_s: None,
        }
    }
}

impl BaselinesBlock {
    pub fn caps(&self) -> Caps {
        Caps {
            memory_bytes: self.memory_cap_bytes,
            time: self.time_cap_s.map(Duration::from_secs_f64),
        }
    }
}

/// Inner solver names accepted in the config.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Slstd,
    Sequential,
    Kw,
    Exact,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Slstd => "slstd",
            Method::Sequential => "sequential",
            Method::Kw => "kw",
            Method::Exact => "exact",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateBlock {
    /// Solver used by the `solve` and `estimate` subcommands.
    #[serde(default = "default_solver")]
    pub solver: Method,
    /// Solvers compared by `replicate`.
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_theta0")]
    pub theta0: [f64; THETA_DIM],
    #[serde(default = "default_xtol")]
    pub xtol: f64,
    #[serde(default = "default_ftol")]
    pub ftol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_solver() -> Method {
    Method::Slstd
}
fn default_methods() -> Vec<Method> {
    vec![Method::Slstd, Method::Sequential, Method::Kw]
}
fn default_theta0() -> [f64; THETA_DIM] {
    [1.0; THETA_DIM]
}
fn default_xtol() -> f64 {
    1e-3
}
fn default_ftol() -> f64 {
    1e-6
}
fn default_max_iter() -> usize {
    500
}

impl Default for EstimateBlock {
    fn default() -> Self {
        EstimateBlock {
            solver: default_solver(),
            methods: default_methods(),
            theta0: default_theta0(),
            xtol: default_xtol(),
            ftol: default_ftol(),
            max_iter: default_max_iter(),
        }
    }
}

impl EstimateBlock {
    pub fn opt_config(&self) -> OptConfig {
        OptConfig {
            xtol: self.xtol,
            ftol: self.ftol,
            max_iter: self.max_iter,
            ..OptConfig::default()
        }
    }
}

/// One `(p, T)` cell of the timing study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub p: usize,
    #[serde(rename = "T")]
    pub horizon: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingBlock {
    #[serde(default = "default_cells")]
    pub cells: Vec<Cell>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_cells() -> Vec<Cell> {
    [(3, 20), (4, 20), (4, 30), (5, 20), (5, 30), (5, 40)]
        .iter()
        .map(|&(p, horizon)| Cell { p, horizon })
        .collect()
}
fn default_repeats() -> usize {
    3
}

impl Default for TimingBlock {
    fn default() -> Self {
        TimingBlock {
            cells: default_cells(),
            methods: default_methods(),
            repeats: default_repeats(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
}

/// Whole experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_agents")]
    pub n_agents: usize,
    pub model: ModelBlock,
    #[serde(default)]
    pub basis: BasisBlock,
    #[serde(default)]
    pub slstd: SlstdBlock,
    #[serde(default)]
    pub baselines: BaselinesBlock,
    #[serde(default)]
    pub estimate: EstimateBlock,
    #[serde(default)]
    pub timing: TimingBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

fn default_replications() -> usize {
    20
}
fn default_agents() -> usize {
    1000
}

impl ExperimentConfig {
    /// Config with defaults around the given model block.
    pub fn with_model(model: ModelBlock) -> Self {
        ExperimentConfig {
            seed: 0,
            replications: default_replications(),
            n_agents: default_agents(),
            model,
            basis: BasisBlock::default(),
            slstd: SlstdBlock::default(),
            baselines: BaselinesBlock::default(),
            estimate: EstimateBlock::default(),
            timing: TimingBlock::default(),
            output: OutputBlock::default(),
        }
    }

    /// Checks ranges that the schema cannot express.
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |msg: String| Err(BenchError::Config(msg));
        if self.replications < 1 {
            return bad("replications must be at least 1".into());
        }
        if self.n_agents < 1 {
            return bad("n_agents must be at least 1".into());
        }
        self.model.spec()?;
        self.model.theta()?;
        ThetaVector::<f64>::from_f64(self.estimate.theta0)?;
        self.slstd.schedule()?;
        self.slstd.solver_config().validate()?;
        if self.estimate.methods.is_empty() {
            return bad("estimate.methods must name at least one solver".into());
        }
        if !(self.estimate.xtol > 0.0 && self.estimate.ftol > 0.0) {
            return bad("estimate.xtol and estimate.ftol must be positive".into());
        }
        if self.baselines.grid_per_dim < 2 {
            return bad("baselines.grid_per_dim must be at least 2".into());
        }
        if self.baselines.kw_states_per_period < 3 {
            return bad("baselines.kw_states_per_period must be at least 3".into());
        }
        if let Some(t) = self.baselines.time_cap_s {
            if !(t > 0.0) {
                return bad("baselines.time_cap_s must be positive".into());
            }
        }
        if self.timing.repeats < 1 {
            return bad("timing.repeats must be at least 1".into());
        }
        Ok(())
    }

    /// Inner solver for `method` under this config.
    pub fn inner_solver(&self, method: Method) -> Result<InnerSolver, BenchError> {
        let caps = self.baselines.caps();
        Ok(match method {
            Method::Exact => InnerSolver::Exact { caps },
            Method::Slstd => InnerSolver::Slstd {
                knots_per_dim: self.basis.knots_per_dim,
                degree: self.basis.degree,
                schedule: self.slstd.schedule()?,
                config: self.slstd.solver_config(),
            },
            Method::Sequential => InnerSolver::Sequential {
                knots_per_dim: self.basis.knots_per_dim,
                degree: self.basis.degree,
                grid_per_dim: self.baselines.grid_per_dim,
                caps,
            },
            Method::Kw => InnerSolver::Kw {
                states_per_period: self.baselines.kw_states_per_period,
                seed: self.seed,
                caps,
            },
        })
    }
}

/// Parses and validates config text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, BenchError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| BenchError::Config(describe(text, &e)))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// Normalized text form; `parse_config(&emit_config(c)) == c`.
pub fn emit_config(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}

fn describe(text: &str, e: &toml::de::Error) -> String {
    let msg = e.message().to_string();
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("line {line}: {msg}")
        }
        None => msg,
    }
}
