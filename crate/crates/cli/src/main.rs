use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use slstd::estimate::{bellman_error_report, estimate_theta, ErrorScope, InnerProblem};
use slstd::model::ThetaVector;
use slstd::simulate::{read_dataset, write_dataset};
use slstd_bench::config::{load_config, ExperimentConfig};
use slstd_bench::study::{
    emit_trace_csv, replication_dataset, run_error_accumulation_trace, run_replication_study, run_timing_study,
};
use slstd_bench::{emit_csv, BenchError, Status};

#[derive(Parser)]
#[command(name = "slstd-bench", version, about = "Solve, simulate and benchmark dynamic discrete choice models")]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Leave timing columns empty in CSV output.
    #[arg(long, global = true)]
    no_timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a panel at theta_true and write it as CSV plus a metadata sidecar.
    Simulate,
    /// Solve at theta_true with estimate.solver and report time and Bellman error.
    Solve,
    /// Estimate theta on a dataset (simulated when --data is absent).
    Estimate {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Replication study over estimate.methods.
    Replicate,
    /// Solve-time study over timing.cells and timing.methods.
    BenchTime,
    /// Per-age error series of the sequential method.
    TraceError,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), BenchError> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn append_diagnostics(cfg: &ExperimentConfig, lines: &[serde_json::Value]) -> Result<(), BenchError> {
    let Some(path) = &cfg.output.diagnostics else {
        for l in lines {
            eprintln!("{l}");
        }
        return Ok(());
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    for l in lines {
        writeln!(f, "{l}")?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<u8, BenchError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| BenchError::Config("--config is required".into()))?;
    let mut cfg = load_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| BenchError::Config(e.to_string()))?;
    let results_path = cli.out.clone().or_else(|| cfg.output.results.clone());
    match &cli.command {
        Command::Simulate => {
            let data = replication_dataset(&cfg, 0)?;
            let out = cli
                .out
                .clone()
                .or_else(|| cfg.output.dataset.clone())
                .ok_or_else(|| BenchError::Config("simulate needs --out or output.dataset".into()))?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_dataset(&out, &data)?;
            append_diagnostics(
                &cfg,
                &[json!({"kind": "simulate", "n_agents": data.n_agents(), "records": data.records.len(),
                         "seed": data.meta.seed, "value_source": data.meta.value_source})],
            )?;
            Ok(0)
        }
        Command::Solve => {
            let model = cfg.model.spec()?;
            let theta = ThetaVector::from_f64(cfg.model.theta_true)?;
            let data = replication_dataset(&cfg, 0)?;
            let solver = cfg.inner_solver(cfg.estimate.solver)?;
            let problem = InnerProblem::new(&model, &solver, &data)?;
            let t0 = std::time::Instant::now();
            let v = problem.solve(&theta)?;
            let time_s = t0.elapsed().as_secs_f64();
            let (delta_sq, scope) =
                match bellman_error_report(&model, &theta, &v, ErrorScope::Full, None, cfg.baselines.memory_cap_bytes) {
                    Ok(d) => (d, ErrorScope::Full),
                    Err(_) => (
                        bellman_error_report(&model, &theta, &v, ErrorScope::Visited, Some(&data), None)?,
                        ErrorScope::Visited,
                    ),
                };
            let line = json!({"kind": "solve", "method": solver.name(), "n_states": model.n_states(),
                              "time_s": if cli.no_timing { None } else { Some(time_s) },
                              "delta_sq": delta_sq, "scope": scope});
            write_out(results_path.as_deref(), &format!("{line}\n"))?;
            Ok(0)
        }
        Command::Estimate { data } => {
            let model = cfg.model.spec()?;
            let dataset = match data {
                Some(p) => read_dataset(p)?,
                None => replication_dataset(&cfg, 0)?,
            };
            if dataset.meta.model != model.config() {
                return Err(BenchError::Config("dataset model differs from the config model block".into()));
            }
            let solver = cfg.inner_solver(cfg.estimate.solver)?;
            let theta0 = ThetaVector::from_f64(cfg.estimate.theta0)?;
            let res = estimate_theta(&model, &dataset, &solver, &theta0, &cfg.estimate.opt_config())?;
            let line = json!({"kind": "estimate", "method": solver.name(), "result": res});
            write_out(results_path.as_deref(), &format!("{line}\n"))?;
            Ok(if res.converged { 0 } else { 2 })
        }
        Command::Replicate => {
            let study = run_replication_study(&cfg)?;
            let lines: Vec<_> = study
                .runs
                .iter()
                .map(|r| json!({"kind": "replication", "run": r}))
                .collect();
            append_diagnostics(&cfg, &lines)?;
            write_out(results_path.as_deref(), &emit_csv(&study.records, cli.no_timing))?;
            Ok(exit_for(study.records.iter().map(|r| r.status)))
        }
        Command::BenchTime => {
            let records = run_timing_study(&cfg)?;
            write_out(results_path.as_deref(), &emit_csv(&records, cli.no_timing))?;
            Ok(exit_for(records.iter().map(|r| r.status)))
        }
        Command::TraceError => {
            let points = run_error_accumulation_trace(&cfg)?;
            write_out(results_path.as_deref(), &emit_trace_csv(&points))?;
            Ok(0)
        }
    }
}

fn exit_for(statuses: impl Iterator<Item = Status>) -> u8 {
    let mut any_null = false;
    for s in statuses {
        any_null |= s.is_null();
    }
    if any_null {
        3
    } else {
        0
    }
}
