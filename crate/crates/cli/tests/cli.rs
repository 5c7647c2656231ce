use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hamred_core::dictfile::{load_dictionary, save_dictionary};
use tempfile::TempDir;

fn hamred(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hamred"))
        .args(args)
        .env("HAMRED_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn ok(args: &[&str]) -> String {
    let o = hamred(args);
    assert!(o.status.success(), "hamred {args:?} failed: {}", text(&o));
    text(&o)
}

fn fails(args: &[&str]) -> String {
    let o = hamred(args);
    assert!(!o.status.success(), "hamred {args:?} should fail: {}", text(&o));
    text(&o)
}

const WAVE: &str = r#"
[model]
name = "wave"
grid = [20, 3]
steps = 40

[training]
mu = [7.0, 10.0]
include_initial_state = true

[test]
mu = [7.0, 8.5]

[methods]
list = ["fom", "pod", "csvd", "db-pod", "db-csvd"]
m_s = [10, 20]
n_s = [20, 400]
sizes = [8, 16]
eps_csvd = 1e-14

[output]
dir = "out"
record_timings = false
"#;

const SINE_GORDON: &str = r#"
[model]
name = "sine-gordon"
grid = [60]
steps = 40

[training]
mu = [0.7, 0.8, 0.9]

[test]
random = 2
seed = 7

[methods]
list = ["fom", "csvd-sdeim", "db-csvd-sdeim", "db-pod-deim"]
m_s = [20]
n_s = [40]
sizes = [30]

[output]
dir = "out"
"#;

fn setup(config: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("config.toml");
    std::fs::write(&path, config).unwrap();
    (dir, path)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn offline_writes_dictionary_and_refuses_to_overwrite() {
    let (dir, cfg) = setup(WAVE);
    let out = ok(&["offline", "--config", s(&cfg)]);
    assert!(out.contains("N_X = 82"), "{out}");
    assert!(dir.path().join("out/dictionary.hamd").exists());
    let err = fails(&["offline", "--config", s(&cfg)]);
    assert!(err.contains("--force"), "{err}");
    ok(&["offline", "--config", s(&cfg), "--force"]);
}

#[test]
fn run_reports_errors_and_reproduces_the_training_trajectory() {
    let (dir, cfg) = setup(WAVE);
    let err = fails(&["run", "--config", s(&cfg), "--method", "db-csvd"]);
    assert!(err.contains("not found") && err.contains("hamred offline"), "{err}");

    let fom = ok(&["run", "--config", s(&cfg), "--method", "fom", "--mu", "8"]);
    assert!(fom.contains("e_rel = 0.000e0"), "{fom}");
    let rows = csv(&dir.path().join("out/run_fom.csv"));
    assert_eq!(rows[0].join(","), hamred_cli::output::RESULTS_HEADER);
    assert_eq!(rows[1][7], "0.0000000000000000e0");

    ok(&["offline", "--config", s(&cfg)]);
    let args = ["run", "--config", s(&cfg), "--method", "db-csvd", "--mu", "7", "--m_s", "40", "--n_s", "82"];
    ok(&args);
    let results = dir.path().join("out/run_db-csvd.csv");
    let first = std::fs::read(&results).unwrap();
    let e_rel: f64 = csv(&results)[1][7].parse().unwrap();
    assert!(e_rel <= 1e-6, "reproduction error {e_rel}");
    ok(&args);
    assert_eq!(first, std::fs::read(&results).unwrap(), "repeated run differs");

    let steps = csv(&dir.path().join("out/run_db-csvd_steps.csv"));
    assert_eq!(steps[0].join(","), hamred_cli::output::STEPS_HEADER);
    assert_eq!(steps.len(), 1 + 41);
    assert!(dir.path().join("out/run_db-csvd_hamiltonian.svg").exists());

    let err = fails(&["run", "--config", s(&cfg), "--method", "db-csvd-sdeim"]);
    assert!(err.contains("nonlinear"), "{err}");
    let err = fails(&["run", "--config", s(&cfg), "--method", "svd"]);
    assert!(err.contains("db-csvd-sdeim"), "{err}");
}

#[test]
fn config_errors_name_the_field() {
    let (_dir, cfg) = setup(&WAVE.replace("steps = 40", "steps = -4"));
    let err = fails(&["offline", "--config", s(&cfg)]);
    assert!(err.contains("steps") && err.contains("line"), "{err}");
    let (_dir, cfg) = setup(&WAVE.replace(r#"list = ["fom", "pod", "csvd", "db-pod", "db-csvd"]"#, "list = []"));
    let err = fails(&["experiment", "--config", s(&cfg)]);
    assert!(err.contains("methods.list"), "{err}");
}

#[test]
fn wave_sweep_has_every_combination_once() {
    let (dir, cfg) = setup(WAVE);
    ok(&["offline", "--config", s(&cfg)]);
    let out = ok(&["experiment", "--config", s(&cfg)]);
    // two test parameters; fom, 2 sizes each for pod and csvd, 4 grid points each for the dictionary methods
    assert!(out.contains("26 runs, 8 failed"), "{out}");
    let results = dir.path().join("out/results.csv");
    let first = std::fs::read(&results).unwrap();
    let rows = csv(&results);
    let body: Vec<&Vec<String>> = rows[1..].iter().collect();
    let per_mu: Vec<_> = body.iter().filter(|r| r[1] != "mean").collect();
    assert_eq!(per_mu.len(), 26);
    let mut keys: Vec<String> = per_mu.iter().map(|r| r[..4].join(",")).collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), 26);
    let means: Vec<_> = body.iter().filter(|r| r[1] == "mean").collect();
    assert_eq!(means.len(), 1 + 2 + 2 + 4 + 4);
    // selecting more snapshots than the dictionary holds fails per row while the sweep continues
    let failed: Vec<_> = per_mu.iter().filter(|r| r[11] != "ok").collect();
    assert!(failed.iter().all(|r| r[3] == "400" && r[11].starts_with("error")), "{failed:?}");
    assert!(means.iter().filter(|r| r[3] == "400").all(|r| r[11].starts_with("partial")));
    for r in per_mu.iter().filter(|r| r[0] == "db-csvd" && r[11] == "ok") {
        assert!(r[7].parse::<f64>().unwrap() < 1e-2, "{r:?}");
    }
    assert!(per_mu.iter().filter(|r| r[0] == "fom").all(|r| r[7] == "0.0000000000000000e0"));
    for name in ["error_vs_basis_size.svg", "hamiltonian_error.svg", "steps/db-csvd_mu1_ms10_ns20.csv", "steps/fom_mu0.csv"] {
        assert!(dir.path().join("out").join(name).exists(), "{name} missing");
    }
    ok(&["experiment", "--config", s(&cfg)]);
    assert_eq!(first, std::fs::read(&results).unwrap(), "repeated sweep differs");
}

#[test]
fn sine_gordon_sweep_with_random_parameters() {
    let (dir, cfg) = setup(SINE_GORDON);
    ok(&["offline", "--config", s(&cfg)]);
    let out = ok(&["experiment", "--config", s(&cfg)]);
    assert!(out.contains("8 runs, 0 failed"), "{out}");
    let rows = csv(&dir.path().join("out/results.csv"));
    let per_mu: Vec<_> = rows[1..].iter().filter(|r| r[1] != "mean").collect();
    assert!(per_mu.iter().all(|r| r[10] == "7"));
    for r in per_mu.iter().filter(|r| r[0] != "fom") {
        let e: f64 = r[7].parse().unwrap();
        let limit = if r[0].starts_with("db-") { 1e-2 } else { 0.5 };
        assert!(e < limit, "{r:?}");
        assert!(!r[8].is_empty(), "timings recorded by default");
    }
    assert!(dir.path().join("out/error_vs_online_time.svg").exists());
    let other = dir.path().join("other");
    ok(&["experiment", "--config", s(&cfg), "--seed", "8", "--out", s(&other)]);
    let rows8 = csv(&other.join("results.csv"));
    assert_ne!(rows[1][1], rows8[1][1], "seed override ignored");
}

#[test]
fn check_reports_named_failures() {
    let out = ok(&["check", "--scale", "tiny"]);
    assert!(out.contains("PASS  1 oracle equivalence"), "{out}");
    assert!(out.contains("0 of 10 checks failed"), "{out}");

    let (dir, cfg) = setup(WAVE);
    ok(&["offline", "--config", s(&cfg)]);
    let path = dir.path().join("out/dictionary.hamd");
    let out = ok(&["check", "--dictionary", s(&path)]);
    assert!(out.contains("PASS  0 dictionary consistency"), "{out}");

    let mut d = load_dictionary(&path).unwrap();
    d.state.states[(5, 5)] += 0.5;
    save_dictionary(&d, &path).unwrap();
    let out = fails(&["check", "--dictionary", s(&path)]);
    assert!(out.contains("FAIL  0 dictionary consistency") && out.contains("G_X"), "{out}");

    std::fs::write(&path, b"not a dictionary").unwrap();
    let out = fails(&["check", "--dictionary", s(&path)]);
    assert!(out.contains("FAIL  0 dictionary file"), "{out}");
}

#[test]
fn thread_variable_is_validated() {
    let o = Command::new(env!("CARGO_BIN_EXE_hamred"))
        .args(["check", "--scale", "tiny"])
        .env("HAMRED_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(text(&o).contains("HAMRED_THREADS"));
}
