//! Synthetic panel data: agents start at the initial state and act on
//! value-plus-Gumbel-shock maximization until the terminal age.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{exact_solve, Caps};
use crate::basis::{BasisSet, LinearValue};
use crate::error::{Error, Result};
use crate::logit::{action_values, ValueFunction};
use crate::model::{Action, ModelConfig, ModelSpec, State, ThetaVector, N_ACTIONS, THETA_DIM};
use crate::slstd::{slstd_solve_states, SolverConfig, StepSchedule};

/// One observed decision `(s, a, s')`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Record {
    pub agent: usize,
    /// Decision period, equal to the age at `state`.
    pub t: u32,
    pub state: State,
    pub action: Action,
    pub next: State,
}

/// Which value function generated the choices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    Exact,
    /// Exact solve exceeded its memory cap; choices used an SLSTD approximation.
    SlstdFallback,
    /// Caller-supplied value function.
    External,
}

/// Sidecar metadata stored next to a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub model: ModelConfig,
    pub theta_true: [f64; THETA_DIM],
    pub seed: u64,
    pub n_agents: usize,
    pub value_source: ValueSource,
}

/// Agent trajectories stored agent by agent, each in time order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn n_agents(&self) -> usize {
        self.meta.n_agents
    }

    pub fn horizon(&self) -> u32 {
        self.meta.model.horizon
    }

    /// Number of observed states `N = nT` (decisions plus terminal arrivals).
    pub fn n_observations(&self) -> usize {
        self.records.len() + self.n_agents()
    }

    /// Records of one agent.
    pub fn trajectory(&self, agent: usize) -> &[Record] {
        let lo = self.records.partition_point(|r| r.agent < agent);
        let hi = self.records.partition_point(|r| r.agent <= agent);
        &self.records[lo..hi]
    }

    /// Observed states in replay order: each agent's decision states followed
    /// by its terminal arrival.
    pub fn visit_sequence(&self, model: &ModelSpec) -> Result<Vec<State>> {
        if self.records.is_empty() {
            return Err(Error::Empty("dataset has no transitions"));
        }
        let mut out = Vec::with_capacity(self.n_observations());
        for (i, r) in self.records.iter().enumerate() {
            out.push(r.state);
            let last = self.records.get(i + 1).is_none_or(|n| n.agent != r.agent);
            if last {
                if !model.is_terminal(&r.next) {
                    return Err(Error::InconsistentRecord {
                        record: i,
                        reason: "trajectory does not end at a terminal state".into(),
                    });
                }
                out.push(r.next);
            }
        }
        Ok(out)
    }

    /// Checks every triple against the transition rule and the trajectory shape.
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            let expected = model.transition(&r.state, r.action)?;
            if expected != r.next {
                return Err(Error::InconsistentRecord {
                    record: i,
                    reason: format!("next state {:?} differs from transition {:?}", r.next.coords(), expected.coords()),
                });
            }
            if i > 0 && self.records[i - 1].agent == r.agent && self.records[i - 1].next != r.state {
                return Err(Error::InconsistentRecord {
                    record: i,
                    reason: "state does not continue the previous record".into(),
                });
            }
            if (i == 0 || self.records[i - 1].agent != r.agent) && r.state != model.initial_state() {
                return Err(Error::InconsistentRecord {
                    record: i,
                    reason: "trajectory does not start at the initial state".into(),
                });
            }
        }
        self.visit_sequence(model).map(|_| ())
    }
}

/// Simulates `n` agents choosing `argmax_a v_a + ε_a` with standard Gumbel shocks.
///
/// Agent `i` draws from its own stream `i` of a generator seeded with `seed`.
pub fn simulate_with<V: ValueFunction<f64> + Sync>(
    model: &ModelSpec,
    theta_true: &ThetaVector<f64>,
    value: &V,
    n: usize,
    seed: u64,
) -> Result<Vec<Record>> {
    if n == 0 {
        return Err(Error::Empty("need at least one agent"));
    }
    let per_agent: Vec<Result<Vec<Record>>> = (0..n)
        .into_par_iter()
        .map(|agent| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(agent as u64);
            let mut s = model.initial_state();
            let mut out = Vec::with_capacity(model.horizon() as usize - 1);
            while !model.is_terminal(&s) {
                let av = action_values(model, value, &s, theta_true)?;
                let mut best = 0;
                let mut best_val = f64::NEG_INFINITY;
                for a in 0..N_ACTIONS {
                    let u: f64 = rng.sample(Open01);
                    let v = av.0[a] - (-u.ln()).ln();
                    if v > best_val {
                        best_val = v;
                        best = a;
                    }
                }
                let action = Action::from_index(best);
                let next = model.transition(&s, action)?;
                out.push(Record {
                    agent,
                    t: model.age(&s),
                    state: s,
                    action,
                    next,
                });
                s = next;
            }
            Ok(out)
        })
        .collect();
    let mut records = Vec::with_capacity(n * (model.horizon() as usize - 1));
    for r in per_agent {
        records.extend(r?);
    }
    Ok(records)
}

/// SLSTD setup used when the exact value table does not fit in memory.
#[derive(Clone, Debug)]
pub struct SlstdFallback {
    pub knots_per_dim: usize,
    pub degree: usize,
    pub schedule: StepSchedule,
    pub config: SolverConfig<f64>,
}

/// Options for [`simulate_dataset_with`].
#[derive(Clone, Debug, Default)]
pub struct SimulationOptions {
    pub exact_caps: Caps,
    pub fallback: Option<SlstdFallback>,
}

/// Simulates `n` agents at `theta_true` using the exact value function.
pub fn simulate_dataset(model: &ModelSpec, theta_true: &ThetaVector<f64>, n: usize, seed: u64) -> Result<Dataset> {
    simulate_dataset_with(model, theta_true, n, seed, &SimulationOptions::default())
}

/// [`simulate_dataset`] with a memory cap on the exact solve and an optional
/// SLSTD fallback.
///
/// The fallback first simulates a pilot panel under the myopic policy
/// (zero continuation values), fits SLSTD weights on it, and then simulates
/// the returned panel with the fitted values.
pub fn simulate_dataset_with(
    model: &ModelSpec,
    theta_true: &ThetaVector<f64>,
    n: usize,
    seed: u64,
    options: &SimulationOptions,
) -> Result<Dataset> {
    let (records, source) = match exact_solve(model, theta_true, &options.exact_caps) {
        Ok(table) => (simulate_with(model, theta_true, &table, n, seed)?, ValueSource::Exact),
        Err(e @ Error::MemoryCap { .. }) => {
            let Some(fb) = &options.fallback else {
                return Err(e);
            };
            let zero = crate::logit::FnValue(|_: &State| 0.0f64);
            let pilot = simulate_with(model, theta_true, &zero, n, seed ^ 0x9e37_79b9_7f4a_7c15)?;
            let states = visit_sequence_of(model, &pilot)?;
            let basis = BasisSet::<f64>::build(model, fb.knots_per_dim, fb.degree)?;
            let (w, _) = slstd_solve_states(model, &basis, theta_true, &states, &fb.schedule, &fb.config)?;
            let v = LinearValue::new(&basis, &w);
            (simulate_with(model, theta_true, &v, n, seed)?, ValueSource::SlstdFallback)
        }
        Err(e) => return Err(e),
    };
    Ok(Dataset {
        meta: DatasetMeta {
            model: model.config(),
            theta_true: theta_true.to_f64(),
            seed,
            n_agents: n,
            value_source: source,
        },
        records,
    })
}

fn visit_sequence_of(model: &ModelSpec, records: &[Record]) -> Result<Vec<State>> {
    let mut out = Vec::with_capacity(records.len() * 2);
    for (i, r) in records.iter().enumerate() {
        out.push(r.state);
        if records.get(i + 1).is_none_or(|n| n.agent != r.agent) && model.is_terminal(&r.next) {
            out.push(r.next);
        }
    }
    Ok(out)
}

/// Visit counts per packed state index over the replay sequence.
pub fn empirical_state_counts(model: &ModelSpec, dataset: &Dataset) -> Result<BTreeMap<usize, usize>> {
    let mut counts = BTreeMap::new();
    for s in dataset.visit_sequence(model)? {
        *counts.entry(s.index()).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Path of the metadata sidecar for a dataset file.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Natural coordinates: age from 1, last choice as the action number.
fn natural(model: &ModelSpec, s: &State) -> Vec<u32> {
    let last = model.last_choice_dim();
    s.coords()
        .iter()
        .enumerate()
        .map(|(j, &c)| if j == 0 || j == last { c + 1 } else { c })
        .collect()
}

fn from_natural(model: &ModelSpec, nat: &[u32], record: usize) -> Result<State> {
    let last = model.last_choice_dim();
    let mut coords = Vec::with_capacity(nat.len());
    for (j, &c) in nat.iter().enumerate() {
        if (j == 0 || j == last) && c == 0 {
            return Err(Error::InconsistentRecord {
                record,
                reason: format!("coordinate s{} must be at least 1", j + 1),
            });
        }
        coords.push(if j == 0 || j == last { c - 1 } else { c });
    }
    model.state(&coords).map_err(|e| Error::InconsistentRecord {
        record,
        reason: e.to_string(),
    })
}

/// Writes the records as CSV and the metadata as a JSON sidecar.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let model = ModelSpec::from_config(&dataset.meta.model)?;
    let p = model.p();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["agent_id".to_string(), "t".to_string()];
    header.extend((1..=p).map(|j| format!("s{j}")));
    header.push("action".into());
    header.extend((1..=p).map(|j| format!("next_s{j}")));
    w.write_record(&header)?;
    for r in &dataset.records {
        let mut row = vec![r.agent.to_string(), r.t.to_string()];
        row.extend(natural(&model, &r.state).iter().map(u32::to_string));
        row.push(r.action.number().to_string());
        row.extend(natural(&model, &r.next).iter().map(u32::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    fs::write(meta_path(path), serde_json::to_string_pretty(&dataset.meta)? + "\n")?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`].
///
/// Rows are range-checked but not checked against the transition rule; see
/// [`Dataset::validate`].
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(meta_path(path))?)?;
    let model = ModelSpec::from_config(&meta.model)?;
    let p = model.p();
    let mut rdr = csv::Reader::from_path(path)?;
    let expected = 2 + 2 * p + 1;
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        if row.len() != expected {
            return Err(Error::InconsistentRecord {
                record: i,
                reason: format!("expected {expected} fields, found {}", row.len()),
            });
        }
        let nums: Vec<u64> = row
            .iter()
            .map(|f| f.trim().parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InconsistentRecord {
                record: i,
                reason: e.to_string(),
            })?;
        let as_u32 = |v: &[u64]| -> Vec<u32> { v.iter().map(|&x| x.min(u32::MAX as u64) as u32).collect() };
        let state = from_natural(&model, &as_u32(&nums[2..2 + p]), i)?;
        let action = Action::new(nums[2 + p].min(255) as u8).map_err(|e| Error::InconsistentRecord {
            record: i,
            reason: e.to_string(),
        })?;
        let next = from_natural(&model, &as_u32(&nums[3 + p..]), i)?;
        records.push(Record {
            agent: nums[0] as usize,
            t: nums[1] as u32,
            state,
            action,
            next,
        });
    }
    if records.windows(2).any(|w| w[1].agent < w[0].agent) {
        return Err(Error::InconsistentRecord {
            record: 0,
            reason: "records are not grouped by agent".into(),
        });
    }
    Ok(Dataset { meta, records })
}
