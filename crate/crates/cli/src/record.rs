//! Result rows and their CSV form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    NullTimeCap,
    NullMemoryCap,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::NullTimeCap => "null_time_cap",
            Status::NullMemoryCap => "null_memory_cap",
        }
    }

    pub fn is_null(self) -> bool {
        self != Status::Ok
    }
}

/// Mean and sample standard deviation; the deviation is absent for one observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: Option<f64>,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Option<Summary> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Some(Summary { mean, sd })
    }
}

/// One table row: a method at one `(p, T)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: String,
    pub p: usize,
    #[serde(rename = "T")]
    pub horizon: u32,
    pub n_states: u64,
    pub status: Status,
    /// Successful runs behind the numbers.
    pub n_ok: usize,
    pub n_failed: usize,
    pub theta: Option<[Summary; 4]>,
    pub time_s: Option<Summary>,
    pub delta_sq: Option<Summary>,
}

impl BenchRecord {
    /// Row without numbers, for cells stopped by a cap.
    pub fn null(method: &str, p: usize, horizon: u32, n_states: u64, status: Status) -> Self {
        BenchRecord {
            method: method.to_string(),
            p,
            horizon,
            n_states,
            status,
            n_ok: 0,
            n_failed: 0,
            theta: None,
            time_s: None,
            delta_sq: None,
        }
    }
}

/// Scientific notation with two significant digits, e.g. `2.2E+01`.
pub fn format_sci(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{x:.1E}");
    let (mantissa, exp) = s.split_once('E').expect("exponent present");
    let e: i32 = exp.parse().expect("integer exponent");
    format!("{mantissa}E{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
}

pub const CSV_HEADER: &str = "method,p,T,n_states,status,n_ok,n_failed,\
theta1_mean,theta1_sd,theta2_mean,theta2_sd,theta3_mean,theta3_sd,theta4_mean,theta4_sd,\
time_mean_s,time_sd_s,delta_sq_mean,delta_sq_sd";

fn opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map(f).unwrap_or_default()
}

/// CSV text with a fixed header; timing columns are left empty when `mask_timing`.
pub fn emit_csv(records: &[BenchRecord], mask_timing: bool) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let mut row = vec![
            r.method.clone(),
            r.p.to_string(),
            r.horizon.to_string(),
            r.n_states.to_string(),
            r.status.as_str().to_string(),
            r.n_ok.to_string(),
            r.n_failed.to_string(),
        ];
        for j in 0..4 {
            let s = r.theta.map(|t| t[j]);
            row.push(opt(s.map(|s| s.mean), |x| format!("{x:.4}")));
            row.push(opt(s.and_then(|s| s.sd), |x| format!("{x:.4}")));
        }
        if mask_timing {
            row.extend([String::new(), String::new()]);
        } else {
            row.push(opt(r.time_s.map(|s| s.mean), |x| format!("{x:.6}")));
            row.push(opt(r.time_s.and_then(|s| s.sd), |x| format!("{x:.6}")));
        }
        row.push(opt(r.delta_sq.map(|s| s.mean), format_sci));
        row.push(opt(r.delta_sq.and_then(|s| s.sd), format_sci));
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}
