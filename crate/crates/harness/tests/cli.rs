use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use valleysim::config::ExperimentConfig;
use valleysim::run_config;
use valleysim_core::lattice::Field;

fn base(experiment: &str) -> Value {
    json!({
        "schema_version": 1,
        "experiment": experiment,
        "grid": {"half_width": 5.0, "n_points": 100},
        "stepper": {"scheme": "splitting_exponential", "dt": 0.01},
        "sigma": {"kind": "linear", "c": 1.0},
        "initial": {"kind": "constant_one"},
        "schedule": {"t_end": 0.5, "snapshots": [0.25, 0.5]},
        "n_replicas": 4,
        "master_seed": 42
    })
}

fn with(mut v: Value, key: &str, val: Value) -> Value {
    v[key] = val;
    v
}

fn parse(v: &Value) -> valleysim_core::Result<ExperimentConfig> {
    ExperimentConfig::from_json(&v.to_string())
}

fn cli(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_valleysim"));
    c.args(args).env_remove("VALLEYSIM_THREADS");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn write_config(dir: &Path, v: &Value) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, v.to_string()).unwrap();
    p.to_str().unwrap().to_string()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn run(v: &Value) -> (tempfile::TempDir, bool, Value) {
    let dir = tempfile::tempdir().unwrap();
    let s = run_config(None, &parse(v).unwrap(), dir.path(), Some(1)).unwrap();
    let r = report(dir.path());
    (dir, s.pass, r)
}

#[test]
fn unknown_and_missing_keys_are_rejected() {
    let e = parse(&with(base("simulate"), "n_replica", json!(3))).unwrap_err().to_string();
    assert!(e.contains("n_replica"), "{e}");
    let mut v = base("simulate");
    v.as_object_mut().unwrap().remove("grid");
    let e = parse(&v).unwrap_err().to_string();
    assert!(e.contains("grid"), "{e}");
    let e = parse(&with(base("simulate"), "schema_version", json!(2))).unwrap_err().to_string();
    assert!(e.contains("schema_version"), "{e}");
}

#[test]
fn module_preconditions_are_checked_before_compute() {
    let sine = json!({"kind": "sine_perturbed", "alpha": 1.0, "beta": 0.5, "l_sigma": 0.5, "lip_sigma": 2.0});
    assert!(parse(&with(base("simulate"), "sigma", sine)).is_err());
    assert!(parse(&with(base("simulate"), "n_replicas", json!(0))).is_err());
    let late = json!({"t_end": 0.5, "snapshots": [0.75]});
    assert!(parse(&with(base("simulate"), "schedule", late)).is_err());
    let bad_stepper = json!({"scheme": "semi_implicit", "dt": -0.1});
    assert!(parse(&with(base("simulate"), "stepper", bad_stepper)).is_err());
    // valleys: h0 outside (0, 1)
    assert!(parse(&with(base("valley_growth"), "valleys", json!({"h0": 1.5}))).is_err());
    // moments need a section and at least 100 replicas
    assert!(parse(&base("moments")).is_err());
    let m = with(base("moments"), "moments", json!({"orders": [2]}));
    assert!(parse(&m).is_err());
    assert!(parse(&with(m, "n_replicas", json!(100))).is_ok());
    // decomposition must fit in the domain
    let d = with(
        with(base("decompose_check"), "decompose", json!({"m": 3, "n": 0.5})),
        "schedule",
        json!({"t_end": 0.5}),
    );
    assert!(parse(&d).is_err());
    // short-time parameters
    let st = json!({"k": 2, "gamma": 1.2, "beta": 5.0, "theta": 0.1, "n_values": [1.0]});
    assert!(parse(&with(base("short_time"), "short_time", st)).is_err());
}

#[test]
fn missing_key_exits_one_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base("simulate");
    v.as_object_mut().unwrap().remove("stepper");
    let cfg = write_config(dir.path(), &v);
    let out = dir.path().join("out");
    let o = cli(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stepper"));
}

#[test]
fn subcommand_must_match_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &base("simulate"));
    let out = dir.path().join("out");
    let o = cli(&["mass", "--config", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("simulate"));
}

#[test]
fn bad_thread_override_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &base("simulate"));
    let out = dir.path().join("out");
    let o = cli(
        &["simulate", "--config", &cfg, "--out", out.to_str().unwrap()],
        &[("VALLEYSIM_THREADS", "0")],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("VALLEYSIM_THREADS"));
}

#[test]
fn failed_check_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let v = with(
        base("dim"),
        "dim",
        json!({"source": {"kind": "points", "values": [1.0, 2.0]}, "rho_grid": [0.5, 1.0], "n_max": 4,
               "expected": {"value": 1.0, "tolerance": 0.1}}),
    );
    let cfg = write_config(dir.path(), &v);
    let out = dir.path().join("out");
    let o = cli(&["dim", "--config", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(report(&out)["estimate"]["estimate"], json!(0.0));
}

#[test]
fn cli_overrides_seed_and_replicas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &base("simulate"));
    let out = dir.path().join("out");
    let o = cli(
        &["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "7", "--replicas", "3", "--threads", "2"],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["master_seed"], json!(7));
    assert_eq!(m["config"]["n_replicas"], json!(3));
    assert_eq!(m["streams"]["n_replicas"], json!(3));
    assert_eq!(m["threads"], json!(2));
    assert_eq!(m["n_steps"], json!(50));
    assert_eq!(m["snapped_times"], json!([0.25, 0.5]));
    assert_eq!(m["stability_advisory_ok"], json!(true));
    for key in ["algorithm", "gaussian", "derivation"] {
        assert!(m["rng"][key].as_str().unwrap().len() > 5);
    }
}

/// Maclaurin series of `erf`, accurate for `|x| < 3`.
fn erf(x: f64) -> f64 {
    let (mut term, mut sum) = (x, x);
    for n in 1..200 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    2.0 * sum / std::f64::consts::PI.sqrt()
}

/// `E u(t,x)^2 = 2 e^{t/4} Φ(√(t/2))` for `u0 = 1`, `σ(u) = u`.
fn m2_closed(t: f64) -> f64 {
    (t / 4.0).exp() * (1.0 + erf((t / 4.0).sqrt()))
}

#[test]
fn moments_within_tolerance_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let v = json!({
        "schema_version": 1,
        "experiment": "moments",
        "grid": {"half_width": 5.0, "n_points": 200},
        "stepper": {"scheme": "splitting_exponential", "dt": 0.0025},
        "sigma": {"kind": "linear", "c": 1.0},
        "initial": {"kind": "constant_one"},
        "schedule": {"t_end": 0.25, "snapshots": [0.25]},
        "n_replicas": 20000,
        "master_seed": 3,
        "moments": {"orders": [1, 2], "oracle_steps": 2000}
    });
    let cfg = write_config(dir.path(), &v);
    let out = dir.path().join("out");
    let o = cli(&["moments", "--config", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("moments.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,k,estimate,ci,oracle_value"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    let m2: f64 = rows[1][4].parse().unwrap();
    let want = m2_closed(0.25);
    assert!((m2 - want).abs() < 1e-4, "{m2} vs {want}");
    assert!(out.join("oracle_m2.csv").exists());
}

#[test]
fn oracle_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["oracle", "--t-end", "1", "--steps", "4000", "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0));
    let r = report(dir.path());
    assert!((r["m2_end"].as_f64().unwrap() - m2_closed(1.0)).abs() < 1e-4);
    assert!(std::fs::read_to_string(dir.path().join("oracle.csv")).unwrap().starts_with("t,m2\n"));
}

/// `∫ p_t(x − y) g(y) dy` by the midpoint rule on `[-40, 40]`.
fn heat_flow(g: impl Fn(f64) -> f64, t: f64, x: f64) -> f64 {
    let n = 160_000;
    let h = 80.0 / n as f64;
    (0..n)
        .map(|i| {
            let y = -40.0 + (i as f64 + 0.5) * h;
            (-(x - y).powi(2) / (2.0 * t)).exp() * g(y)
        })
        .sum::<f64>()
        * h
        / (2.0 * std::f64::consts::PI * t).sqrt()
}

#[test]
fn decompose_without_noise_matches_the_heat_flow_of_the_tail() {
    let v = json!({
        "schema_version": 1,
        "experiment": "decompose_check",
        "grid": {"half_width": 20.0, "n_points": 800},
        "stepper": {"scheme": "splitting_exponential", "dt": 0.01},
        "sigma": {"kind": "linear", "c": 0.0},
        "initial": {"kind": "constant_one"},
        "schedule": {"t_end": 1.0},
        "n_replicas": 1,
        "master_seed": 1,
        "decompose": {"m": 4, "n": 1.0}
    });
    let (_, pass, r) = run(&v);
    assert!(pass);
    assert_eq!(r["l"], json!(2.0));
    let det = r["deterministic_tail_sup"].as_f64().unwrap();
    let stoch = r["replicas"][0]["tail_sup"].as_f64().unwrap();
    assert!((det - stoch).abs() < 1e-12, "{det} vs {stoch}");
    // tail data: 0 on [-4, 3], linear ramps to 1 on [-5, -4] and [3, 4]
    let tail = |y: f64| ((-4.0 - y).max(y - 3.0)).clamp(0.0, 1.0);
    let want = (0..=40)
        .map(|i| heat_flow(tail, 1.0, -2.0 + 0.1 * i as f64))
        .fold(0.0f64, f64::max);
    assert!((det - want).abs() < 1e-3, "{det} vs {want}");
    let bound = 2.0 * (-0.5f64).exp();
    assert!((r["tail_bound"].as_f64().unwrap() - bound).abs() < 1e-15);
    assert!(det <= bound);
}

#[test]
fn minimal_decomposition_runs() {
    let v = json!({
        "schema_version": 1,
        "experiment": "decompose_check",
        "grid": {"half_width": 3.0, "n_points": 60},
        "stepper": {"scheme": "semi_implicit", "dt": 0.001},
        "sigma": {"kind": "sine_perturbed", "alpha": 1.0, "beta": 0.5, "l_sigma": 0.5, "lip_sigma": 2.0},
        "initial": {"kind": "constant_one"},
        "schedule": {"t_end": 0.5},
        "n_replicas": 2,
        "master_seed": 5,
        "decompose": {"m": 1, "n": 0.5, "eta2": 0.3}
    });
    let (dir, pass, r) = run(&v);
    assert!(pass, "{r}");
    assert_eq!(r["n_parts"], json!(3));
    assert!(r["max_residual"].as_f64().unwrap() <= 1e-10);
    assert!(r["replicas"][1]["scaled_window_sup"].as_f64().unwrap() > 0.0);
    let m: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["clip_count"], json!(0));
    assert!(dir.path().join("series.csv").exists());
}

#[test]
fn decomposition_window_from_eta1() {
    let v = json!({
        "schema_version": 1,
        "experiment": "decompose_check",
        "grid": {"half_width": 12.0, "n_points": 240},
        "stepper": {"scheme": "splitting_exponential", "dt": 0.01},
        "sigma": {"kind": "linear", "c": 1.0},
        "initial": {"kind": "constant_one"},
        "schedule": {"t_end": 1.0},
        "n_replicas": 1,
        "master_seed": 5,
        "decompose": {"n": 1.0, "eta1": 1.2}
    });
    let (_, _, r) = run(&v);
    // L(1) = e^{1.2} = 3.32, M = 2⌊L⌋ = 6
    assert_eq!(r["m"], json!(6));
    assert!((r["l"].as_f64().unwrap() - 1.2f64.exp()).abs() < 1e-12);
}

#[test]
fn valleys_without_noise_have_zero_length() {
    let v = with(
        with(
            with(base("valley_growth"), "sigma", json!({"kind": "linear", "c": 0.0})),
            "valleys",
            json!({"h0": 0.5}),
        ),
        "schedule",
        json!({"t_end": 1.0, "snapshots": [0.25, 0.5, 0.75, 1.0]}),
    );
    let (dir, pass, r) = run(&v);
    assert!(pass);
    for s in r["snapshots"].as_array().unwrap() {
        assert_eq!(s["length"]["median"], json!(0.0));
        assert_eq!(s["sup_over_valley"], Value::Null);
    }
    let text = std::fs::read_to_string(dir.path().join("valleys.csv")).unwrap();
    assert!(text.starts_with("t,replica,valley_len,sup_over_valley,saturated\n"));
    assert_eq!(text.lines().count(), 1 + 4 * 4);
    assert!(text.lines().nth(1).unwrap().ends_with(",0,0,,false"));
}

#[test]
fn single_valley_time_reports_without_fit() {
    let v = with(
        with(base("valley_growth"), "valleys", json!({"h0": 0.5})),
        "schedule",
        json!({"t_end": 1.0, "snapshots": [1.0]}),
    );
    let (_, _, r) = run(&v);
    assert_eq!(r["snapshots"].as_array().unwrap().len(), 1);
    assert_eq!(r["length_fit"], Value::Null);
    assert_eq!(r["sup_fit"], Value::Null);
}

#[test]
fn valleys_require_constant_data() {
    let v = with(
        with(base("valley_growth"), "valleys", json!({"h0": 0.5})),
        "initial",
        json!({"kind": "bump", "center": 0.0, "half_support": 1.0}),
    );
    let e = parse(&v).unwrap_err().to_string();
    assert!(e.contains("constant_one"), "{e}");
}

#[test]
fn qv_with_zero_test_function() {
    let v = with(
        base("qv_check"),
        "qv",
        json!({"phi": {"kind": "zero"}}),
    );
    let (_, pass, r) = run(&v);
    assert!(pass);
    assert_eq!(r["var_empirical"], json!(0.0));
}

#[test]
fn short_time_check_reports_rows() {
    let v = with(
        with(
            with(base("short_time"), "grid", json!({"half_width": 5.0, "n_points": 200})),
            "short_time",
            json!({"k": 2, "gamma": 2.0, "beta": 3.0, "theta": 0.1, "n_values": [1.0, 2.0, 4.0]}),
        ),
        "n_replicas",
        json!(50),
    );
    let (_, _, r) = run(&v);
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!((rows[2]["horizon"].as_f64().unwrap() - 1.0 / 16.0).abs() < 1e-15);
    assert_eq!(r["power_warning"], json!(true));
}

#[test]
fn simulate_writes_series_and_fields() {
    let v = with(
        with(base("simulate"), "output", json!({"series_replicas": 2, "series_stride": 10, "fields": true})),
        "initial",
        json!({"kind": "bump", "center": 0.0, "half_support": 1.0}),
    );
    let (dir, pass, r) = run(&v);
    assert!(pass);
    assert_eq!(r["snapshots"].as_array().unwrap().len(), 2);
    let series = std::fs::read_to_string(dir.path().join("series.csv")).unwrap();
    let mut lines = series.lines();
    assert_eq!(lines.next(), Some("t,l1,sup,clip_count,replica"));
    // t = 0 plus every 10th of 50 steps, for replicas 0 and 1
    assert_eq!(lines.count(), 2 * 6);
    let f = Field::read_snapshot(std::fs::File::open(dir.path().join("fields/snapshot_0001.bin")).unwrap()).unwrap();
    assert_eq!(f.grid().n_points(), 100);
    assert!(f.is_nonnegative());
    let idx = std::fs::read_to_string(dir.path().join("fields/index.csv")).unwrap();
    assert_eq!(idx, "snapshot,t\n0,0.25\n1,0.5\n");
}

#[test]
fn mass_report_has_quartiles_and_fit() {
    let v = with(
        with(
            with(base("mass_decay"), "initial", json!({"kind": "bump", "center": 0.0, "half_support": 1.0})),
            "schedule",
            json!({"t_end": 2.0, "snapshots": [0.5, 1.0, 1.5, 2.0]}),
        ),
        "mass",
        json!({"martingale": true, "fit_window": [0.5, 2.0], "min_r_squared": 0.0}),
    );
    let (_, _, r) = run(&v);
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0]["t"], json!(0.0));
    assert_eq!(r["median_fit"]["fit"]["n_points"], json!(4));
    assert_eq!(r["martingale"]["power_warning"], json!(true));
}

#[test]
fn dim_of_a_peak_set() {
    let v = with(
        with(base("dim"), "schedule", json!({"t_end": 1.0, "snapshots": [0.5, 1.0]})),
        "dim",
        json!({"source": {"kind": "peak_set", "rule": {"kind": "constant", "level": 2.0}, "theta": 1.0},
               "rho_grid": [0.5, 1.0, 1.5, 2.0], "n_max": 3}),
    );
    let (dir, _, r) = run(&v);
    assert_eq!(r["estimate"]["low_confidence"], json!(true));
    let text = std::fs::read_to_string(dir.path().join("dim.csv")).unwrap();
    assert!(text.starts_with("rho,n,nu,partial_sum\n"));
    assert_eq!(text.lines().count(), 1 + 4 * 4);
}
