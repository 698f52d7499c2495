//! Replication, timing and error-trace studies.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use slstd::baselines::{exact_solve, kw_solve, per_age_max_error, sequential_series_solve, Caps};
use slstd::basis::BasisSet;
use slstd::estimate::{estimate_theta, EstimationResult};
use slstd::model::{ModelSpec, ThetaVector};
use slstd::simulate::{simulate_dataset_with, Dataset, SimulationOptions, SlstdFallback};
use slstd::slstd::slstd_solve;
use slstd::Error;

use crate::config::{ExperimentConfig, Method};
use crate::record::{BenchRecord, Status, Summary};
use crate::BenchError;

/// One estimation run inside a replication study.
#[derive(Clone, Debug, Serialize)]
pub struct RunDiagnostic {
    pub replication: usize,
    pub seed: u64,
    pub method: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<EstimationResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub status: Status,
}

/// Per-method table rows plus every underlying run.
#[derive(Clone, Debug)]
pub struct ReplicationStudy {
    pub records: Vec<BenchRecord>,
    pub runs: Vec<RunDiagnostic>,
}

fn cap_status(e: &Error) -> Option<Status> {
    match e {
        Error::MemoryCap { .. } => Some(Status::NullMemoryCap),
        Error::TimeCap { .. } => Some(Status::NullTimeCap),
        _ => None,
    }
}

/// Simulation options: exact values under the configured memory cap, SLSTD otherwise.
pub fn simulation_options(cfg: &ExperimentConfig) -> Result<SimulationOptions, BenchError> {
    Ok(SimulationOptions {
        exact_caps: Caps {
            memory_bytes: cfg.baselines.memory_cap_bytes,
            time: None,
        },
        fallback: Some(SlstdFallback {
            knots_per_dim: cfg.basis.knots_per_dim,
            degree: cfg.basis.degree,
            schedule: cfg.slstd.schedule()?,
            config: cfg.slstd.solver_config(),
        }),
    })
}

/// Dataset for replication `r` (seed `cfg.seed + r`).
pub fn replication_dataset(cfg: &ExperimentConfig, r: usize) -> Result<Dataset, BenchError> {
    let model = cfg.model.spec()?;
    let theta = cfg.model.theta()?;
    let seed = cfg.seed.wrapping_add(r as u64);
    Ok(simulate_dataset_with(
        &model,
        &theta,
        cfg.n_agents,
        seed,
        &simulation_options(cfg)?,
    )?)
}

/// Simulates `replications` datasets and estimates θ on each with every
/// configured method. Failed runs are recorded and skipped in the summaries.
pub fn run_replication_study(cfg: &ExperimentConfig) -> Result<ReplicationStudy, BenchError> {
    cfg.validate()?;
    let model = cfg.model.spec()?;
    let theta0 = ThetaVector::from_f64(cfg.estimate.theta0)?;
    let opt = cfg.estimate.opt_config();
    let per_rep: Vec<Result<Vec<RunDiagnostic>, BenchError>> = (1..=cfg.replications)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.seed.wrapping_add(r as u64);
            let data = replication_dataset(cfg, r)?;
            let mut rep_cfg = cfg.clone();
            rep_cfg.seed = seed;
            cfg.estimate
                .methods
                .iter()
                .map(|&m| {
                    let solver = rep_cfg.inner_solver(m)?;
                    let outcome = estimate_theta(&model, &data, &solver, &theta0, &opt);
                    Ok(match outcome {
                        Ok(res) => RunDiagnostic {
                            replication: r,
                            seed,
                            method: m.name(),
                            result: Some(res),
                            error: None,
                            status: Status::Ok,
                        },
                        Err(e) => RunDiagnostic {
                            replication: r,
                            seed,
                            method: m.name(),
                            result: None,
                            status: cap_status(&e).unwrap_or(Status::Ok),
                            error: Some(e.to_string()),
                        },
                    })
                })
                .collect()
        })
        .collect();
    let mut runs = Vec::new();
    for rep in per_rep {
        runs.extend(rep?);
    }
    let records = cfg
        .estimate
        .methods
        .iter()
        .map(|&m| summarize(&model, m.name(), runs.iter().filter(|d| d.method == m.name())))
        .collect();
    Ok(ReplicationStudy { records, runs })
}

fn summarize<'a>(model: &ModelSpec, method: &str, runs: impl Iterator<Item = &'a RunDiagnostic>) -> BenchRecord {
    let runs: Vec<&RunDiagnostic> = runs.collect();
    let ok: Vec<&EstimationResult> = runs.iter().filter_map(|d| d.result.as_ref()).collect();
    let n_states = model.n_states() as u64;
    if ok.is_empty() {
        let status = runs.iter().map(|d| d.status).find(|s| s.is_null()).unwrap_or(Status::Ok);
        let mut rec = BenchRecord::null(method, model.p(), model.horizon(), n_states, status);
        rec.n_failed = runs.len();
        return rec;
    }
    let col = |f: &dyn Fn(&EstimationResult) -> f64| -> Summary {
        Summary::of(&ok.iter().map(|r| f(r)).collect::<Vec<_>>()).expect("non-empty")
    };
    BenchRecord {
        method: method.to_string(),
        p: model.p(),
        horizon: model.horizon(),
        n_states,
        status: Status::Ok,
        n_ok: ok.len(),
        n_failed: runs.len() - ok.len(),
        theta: Some([0, 1, 2, 3].map(|j| col(&|r| r.theta_hat[j]))),
        time_s: Some(col(&|r| r.solve_time_s)),
        delta_sq: Some(col(&|r| r.delta_sq)),
    }
}

/// Solve time of one method at θ_true, or the cap that stopped it.
pub fn time_one_solve(
    model: &ModelSpec,
    cfg: &ExperimentConfig,
    method: Method,
    data: Option<&Dataset>,
) -> Result<f64, Error> {
    let theta = ThetaVector::from_f64(cfg.model.theta_true)?;
    let caps = cfg.baselines.caps();
    match method {
        Method::Exact => {
            let t0 = Instant::now();
            exact_solve(model, &theta, &caps)?;
            Ok(t0.elapsed().as_secs_f64())
        }
        Method::Slstd => {
            let basis = BasisSet::<f64>::build(model, cfg.basis.knots_per_dim, cfg.basis.degree)?;
            let data = data.ok_or(Error::Empty("SLSTD timing needs a dataset"))?;
            let schedule = slstd::slstd::StepSchedule::new(cfg.slstd.c1, cfg.slstd.c2)?;
            let t0 = Instant::now();
            slstd_solve(model, &basis, &theta, data, &schedule, &cfg.slstd.solver_config())?;
            Ok(t0.elapsed().as_secs_f64())
        }
        Method::Sequential => {
            let basis =
                BasisSet::<f64>::build_excluding(model, cfg.basis.knots_per_dim, cfg.basis.degree, &[0])?;
            let t0 = Instant::now();
            sequential_series_solve(model, &basis, &theta, cfg.baselines.grid_per_dim, &caps)?;
            Ok(t0.elapsed().as_secs_f64())
        }
        Method::Kw => {
            let t0 = Instant::now();
            kw_solve(model, &theta, cfg.baselines.kw_states_per_period, cfg.seed, &caps)?;
            Ok(t0.elapsed().as_secs_f64())
        }
    }
}

/// Repeated solves at θ_true for each configured `(p, T)` cell and method.
///
/// Cells run one after another so timings do not compete for cores.
pub fn run_timing_study(cfg: &ExperimentConfig) -> Result<Vec<BenchRecord>, BenchError> {
    cfg.validate()?;
    let theta = cfg.model.theta()?;
    let mut out = Vec::new();
    for cell in &cfg.timing.cells {
        let model = ModelSpec::career(cell.p, cell.horizon, cfg.model.beta, cfg.model.kinked_reward)?;
        let n_states = model.n_states() as u64;
        let data = if cfg.timing.methods.contains(&Method::Slstd) {
            let opts = SimulationOptions {
                exact_caps: Caps::none(),
                fallback: simulation_options(cfg)?.fallback,
            };
            Some(simulate_dataset_with(&model, &theta, cfg.n_agents, cfg.seed, &opts)?)
        } else {
            None
        };
        for &method in &cfg.timing.methods {
            let mut times = Vec::with_capacity(cfg.timing.repeats);
            let mut status = Status::Ok;
            let mut failed = 0;
            for _ in 0..cfg.timing.repeats {
                match time_one_solve(&model, cfg, method, data.as_ref()) {
                    Ok(t) => times.push(t),
                    Err(e) => match cap_status(&e) {
                        Some(s) => {
                            status = s;
                            break;
                        }
                        None => failed += 1,
                    },
                }
            }
            let rec = if status.is_null() {
                BenchRecord::null(method.name(), cell.p, cell.horizon, n_states, status)
            } else {
                BenchRecord {
                    method: method.name().to_string(),
                    p: cell.p,
                    horizon: cell.horizon,
                    n_states,
                    status,
                    n_ok: times.len(),
                    n_failed: failed,
                    theta: None,
                    time_s: Summary::of(&times),
                    delta_sq: None,
                }
            };
            out.push(rec);
        }
    }
    Ok(out)
}

/// One point of the error-accumulation series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TracePoint {
    pub age: u32,
    /// Largest `|V_seq − V*|` over the age slice.
    pub error: f64,
    /// Largest fitted target magnitude at this age.
    pub target_magnitude: f64,
}

/// Per-age error of the sequential method against exact backward induction
/// on the configured model.
pub fn run_error_accumulation_trace(cfg: &ExperimentConfig) -> Result<Vec<TracePoint>, BenchError> {
    cfg.validate()?;
    let model = cfg.model.spec()?;
    let theta = cfg.model.theta()?;
    let caps = cfg.baselines.caps();
    let basis = BasisSet::<f64>::build_excluding(&model, cfg.basis.knots_per_dim, cfg.basis.degree, &[0])?
        .with_ridge(cfg.basis.ridge);
    let seq = sequential_series_solve(&model, &basis, &theta, cfg.baselines.grid_per_dim, &caps)?;
    let exact = exact_solve(&model, &theta, &caps)?;
    let errors = per_age_max_error(&model, &seq.table, &exact);
    Ok(errors
        .iter()
        .enumerate()
        .map(|(i, &error)| TracePoint {
            age: i as u32 + 1,
            error,
            target_magnitude: seq.periods.target_magnitude[i],
        })
        .collect())
}

/// CSV text for a trace.
pub fn emit_trace_csv(points: &[TracePoint]) -> String {
    let mut out = String::from("age,error,target_magnitude\n");
    for p in points {
        out.push_str(&format!("{},{:.6e},{:.6e}\n", p.age, p.error, p.target_magnitude));
    }
    out
}
