use std::path::Path;
use std::process::{Command, Output};

fn bench(args: &[&str], cfg: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slstd-bench"))
        .arg("--config")
        .arg(cfg)
        .args(args)
        .output()
        .unwrap()
}

const SMALL: &str = "seed = 3\nreplications = 2\nn_agents = 100\n\n[model]\np = 3\nT = 5\ntheta_true = [1.0, 2.0, 1.0, 4.0]\n";

#[test]
fn unknown_key_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, format!("{SMALL}colour = 1\n")).unwrap();
    let out = bench(&["solve"], &cfg);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn simulate_then_estimate_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, format!("{SMALL}\n[estimate]\nsolver = \"exact\"\n")).unwrap();
    let data = dir.path().join("panel.csv");
    let out = bench(&["--out", data.to_str().unwrap(), "simulate"], &cfg);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.exists());
    assert!(dir.path().join("panel.csv.meta.json").exists());

    let out = bench(&["estimate", "--data", data.to_str().unwrap()], &cfg);
    let line = String::from_utf8_lossy(&out.stdout);
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["method"], "exact");
    assert_eq!(v["result"]["theta_hat"].as_array().unwrap().len(), 4);
}

#[test]
fn memory_cap_gives_null_rows_and_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        format!(
            "{SMALL}\n[baselines]\nmemory_cap_bytes = 64\n\n[timing]\ncells = [{{ p = 3, T = 5 }}]\nmethods = [\"sequential\", \"kw\"]\nrepeats = 1\n"
        ),
    )
    .unwrap();
    let out = bench(&["bench-time"], &cfg);
    assert_eq!(out.status.code(), Some(3));
    let csv = String::from_utf8_lossy(&out.stdout);
    assert_eq!(csv.matches("null_memory_cap").count(), 2);
}

#[test]
fn trace_error_has_one_row_per_age() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL.replace("T = 5", "T = 8")).unwrap();
    let out = bench(&["trace-error"], &cfg);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8_lossy(&out.stdout);
    assert_eq!(csv.lines().count(), 1 + 8);
    assert!(csv.starts_with("age,error,target_magnitude"));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = slstd_bench::config::load_config(&path).unwrap();
        cfg.validate().unwrap();
        n += 1;
    }
    assert!(n >= 3);
}
