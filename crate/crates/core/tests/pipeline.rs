use ::slstd::estimate::{estimate_theta, log_likelihood, InnerSolver, OptConfig};
use ::slstd::simulate::{empirical_state_counts, read_dataset, write_dataset};
use ::slstd::*;

fn truth() -> Theta {
    Theta::from_f64([1.0, 2.0, 1.0, 9.0]).unwrap()
}

#[test]
fn simulate_write_read_estimate() {
    let m = build_career_model(3, 6, 0.95).unwrap();
    let data = simulate_dataset(&m, &truth(), 400, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    write_dataset(&path, &data).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back, data);

    let solver = InnerSolver::Exact { caps: Caps::none() };
    let start = Theta::from_f64([0.0, 0.0, 1.0, 0.0]).unwrap();
    let res = estimate_theta(&m, &back, &solver, &start, &OptConfig::default()).unwrap();
    let v0 = exact_solve(&m, &start, &Caps::none()).unwrap();
    let ll0 = log_likelihood(&m, &back, &start, &v0).unwrap();
    assert!(res.log_likelihood >= ll0);
    assert!(res.log_likelihood <= 0.0);
    assert_eq!(res.theta_hat[2], 1.0);
    assert!(res.delta_sq < 1e-12);
}

#[test]
fn desk_panel_counts() {
    let m = build_career_model(4, 10, 0.95).unwrap();
    let data = simulate_dataset(&m, &truth(), 1000, 1).unwrap();
    assert_eq!(data.n_observations(), 10_000);
    let terminal_hits = data.records.iter().filter(|r| m.is_terminal(&r.next)).count();
    assert_eq!(terminal_hits, 1000);
    let counts = empirical_state_counts(&m, &data).unwrap();
    assert_eq!(counts.values().sum::<usize>(), 10_000);
    assert_eq!(counts[&m.initial_state().index()], 1000);
}

fn visited_rms(m: &ModelSpec, n: usize, seed: u64) -> f64 {
    let data = simulate_dataset(m, &truth(), n, seed).unwrap();
    let b = build_basis::<f64>(m, 4, 2).unwrap();
    let (w, _) = slstd_solve(m, &b, &truth(), &data, &StepSchedule::default(), &SolverConfig::default()).unwrap();
    let v = LinearValue::new(&b, &w);
    let counts = empirical_state_counts(m, &data).unwrap();
    let total: usize = counts.values().sum();
    let sq: f64 = counts
        .iter()
        .map(|(&i, &c)| {
            let s = m.unpack_state(i).unwrap();
            c as f64 * bellman_residual(m, &v, &s, &truth()).powi(2)
        })
        .sum();
    (sq / total as f64).sqrt()
}

#[test]
fn more_agents_do_not_raise_the_visited_residual() {
    let m = build_career_model(3, 8, 0.95).unwrap();
    let median = |n: usize| {
        let mut r: Vec<f64> = (0..10).map(|seed| visited_rms(&m, n, 100 + seed)).collect();
        r.sort_by(f64::total_cmp);
        (r[4] + r[5]) / 2.0
    };
    let small = median(250);
    let large = median(500);
    assert!(large <= small * 1.05, "{small} -> {large}");
}

#[test]
fn sequential_and_kw_tables_cover_the_state_space() {
    let m = build_career_model(3, 8, 0.95).unwrap();
    let b = BasisSet::<f64>::build_excluding(&m, 4, 2, &[0]).unwrap();
    let seq = sequential_series_solve(&m, &b, &truth(), 5, &Caps::none()).unwrap();
    let kw = kw_solve(&m, &truth(), 20, 3, &Caps::none()).unwrap();
    assert_eq!(seq.table.values.len(), m.n_states());
    assert_eq!(kw.table.values.len(), m.n_states());
    assert!(seq.table.values.iter().chain(&kw.table.values).all(|v| v.is_finite()));
    for s in m.states().filter(|s| m.is_terminal(s)) {
        assert_eq!(seq.table.get(s.index()), 0.0);
        assert_eq!(kw.table.get(s.index()), 0.0);
    }
}
