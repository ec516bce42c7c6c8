use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const DYADIC: &str = r#"
  "params": {"nu": 1.0, "lambda": 1.0},
  "nonlinearity": {"kind": "cubic"},
  "forcing": {"kind": "quasi_periodic", "sites": [], "amp_rule": "dyadic", "active_halfwidth": 5,
              "phase": 0.0, "omega_rule": {"base": 1.0, "step": 0.1}},
  "window_halfwidth": 12,
  "seed": 99,
"#;

fn aplat(args: &[&str], config: &Path, out: &Path, threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_aplat"));
    cmd.args(args).arg("--config").arg(config).arg("--out").arg(out);
    match threads {
        Some(n) => cmd.env("APLAT_THREADS", n),
        None => cmd.env_remove("APLAT_THREADS"),
    };
    cmd.output().unwrap()
}

struct Scratch {
    dir: tempfile::TempDir,
}

impl Scratch {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn config(&self, name: &str, body: &str) -> PathBuf {
        let path = self.dir.path().join(name);
        fs::write(&path, body).unwrap();
        path
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, sub: &str, config: &str, experiment: &str) -> (Output, PathBuf) {
        let path = self.config(&format!("{sub}.json"), &format!("{{{config} \"experiment\": {experiment}}}"));
        let out = self.out(&format!("out_{sub}"));
        (aplat(&[sub], &path, &out, None), out)
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn listing(dir: &Path) -> Vec<String> {
    match fs::read_dir(dir) {
        Ok(entries) => {
            let mut names: Vec<String> = entries.map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
            names.sort();
            names
        }
        Err(_) => Vec::new(),
    }
}

#[test]
fn zero_forcing_from_zero_gives_zero_trajectory() {
    let s = Scratch::new();
    let config = r#"
      "params": {"nu": 1.0, "lambda": 0.5},
      "nonlinearity": {"kind": "cubic"},
      "forcing": {"kind": "quasi_periodic", "sites": [], "amp_rule": "explicit", "active_halfwidth": 0},
      "window_halfwidth": 3,
      "seed": 0,
    "#;
    let (o, out) = s.run(
        "simulate",
        config,
        r#"{"kind": "simulate", "t0": 0, "t1": 2, "sample_step": 0.5, "initial": {"kind": "zero"}}"#,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,norm,u_-3,u_-2,u_-1,u_0,u_1,u_2,u_3");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    for row in rows {
        assert!(row.split(',').skip(1).all(|x| x.parse::<f64>().unwrap() == 0.0), "{row}");
    }
    assert_eq!(listing(&out), ["manifest.json", "trajectory.csv"]);
}

#[test]
fn dyadic_simulation_and_manifest() {
    let s = Scratch::new();
    let (o, out) = s.run(
        "simulate",
        DYADIC,
        r#"{"kind": "simulate", "t0": 0, "t1": 10, "sample_step": 0.1,
            "initial": {"kind": "random_norm", "norm": 10.0}, "sites": [-2, 2]}"#,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["M"].as_f64().unwrap(), (5.0f64 / 3.0).sqrt());
    assert_eq!(m["alpha"].as_f64().unwrap(), 1.0);
    assert_eq!(m["lambda_plus_alpha"].as_f64().unwrap(), 2.0);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["summary"]["absorbing_stays"], Value::Bool(true));
    assert!((m["summary"]["initial_norm"].as_f64().unwrap() - 10.0).abs() < 1e-12);
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,norm,u_-2,u_-1,u_0,u_1,u_2\n"));
    assert_eq!(csv.lines().count(), 102);
    let last: Vec<f64> = csv.lines().last().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(last[0], 10.0);
    assert!(last[1] < 1.0);
}

#[test]
fn malformed_json_exits_2_without_outputs() {
    let s = Scratch::new();
    let config = s.config("bad.json", "{\"params\": {\"nu\": 1.0,,}");
    let out = s.out("never");
    let o = aplat(&["simulate"], &config, &out, None);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unknown_key_and_wrong_kind_exit_2() {
    let s = Scratch::new();
    let (o, out) = s.run(
        "simulate",
        &DYADIC.replace("\"seed\": 99,", "\"seed\": 99, \"tolerance\": 1,"),
        r#"{"kind": "simulate", "t0": 0, "t1": 1, "sample_step": 0.1, "initial": {"kind": "zero"}}"#,
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("unknown field `tolerance`"), "{}", stderr(&o));
    assert!(listing(&out).is_empty());

    let (o, _) = s.run(
        "pullback",
        DYADIC,
        r#"{"kind": "contraction", "pairs": 1, "t_end": 1, "sample_step": 0.1, "amplitude": 1}"#,
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("\"pullback\""), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    let o = Command::new(env!("CARGO_BIN_EXE_aplat")).arg("simulate").output().unwrap();
    assert_eq!(code(&o), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_aplat")).arg("frobnicate").output().unwrap();
    assert_eq!(code(&o), 2);
    let s = Scratch::new();
    let o = aplat(&["simulate"], &s.out("missing.json"), &s.out("o"), None);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_thread_count_exits_2() {
    let s = Scratch::new();
    let config = s.config(
        "c.json",
        &format!(
            "{{{DYADIC} \"experiment\": {{\"kind\": \"pullback\", \"anchor\": 0, \"horizon\": 0, \"initial\": {{\"kind\": \"zero\"}}}}}}"
        ),
    );
    let o = aplat(&["pullback"], &config, &s.out("o"), Some("lots"));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("APLAT_THREADS"));
}

#[test]
fn numerical_failure_exits_3_without_outputs() {
    let s = Scratch::new();
    let (o, out) = s.run(
        "simulate",
        DYADIC,
        r#"{"kind": "simulate", "t0": 0, "t1": 1, "sample_step": 0.1,
            "initial": {"kind": "window", "offset": 0, "values": [1e300]}}"#,
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(listing(&out).is_empty());
}

#[test]
fn contraction_on_dyadic_system_passes() {
    let s = Scratch::new();
    let (o, out) = s.run(
        "contraction",
        DYADIC,
        r#"{"kind": "contraction", "pairs": 3, "t_end": 5, "sample_step": 0.01, "amplitude": 1.0}"#,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = json(&out.join("contraction.json"));
    assert_eq!(report["pairs"].as_array().unwrap().len(), 3);
    assert!(report["worst_slope"].as_f64().unwrap() <= -1.9);
    assert!(String::from_utf8_lossy(&o.stdout).contains("worst fitted slope"));
    let csv = fs::read_to_string(out.join("contraction.csv")).unwrap();
    assert!(csv.starts_with("t,gap_0,gap_1,gap_2\n"));
}

#[test]
fn pullback_with_zero_horizon_returns_initial_state() {
    let s = Scratch::new();
    let (o, out) = s.run(
        "pullback",
        DYADIC,
        r#"{"kind": "pullback", "anchor": 3.0, "horizon": 0.0,
            "initial": {"kind": "window", "offset": -1, "values": [0.25, -0.5, 0.125]}}"#,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&out.join("pullback.json"));
    assert_eq!(r["s"].as_f64(), Some(3.0));
    assert_eq!(r["T"].as_f64(), Some(0.0));
    assert_eq!(r["state"]["offset"].as_i64(), Some(-1));
    let values: Vec<f64> = r["state"]["values"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(values, [0.25, -0.5, 0.125]);
    let r0 = (0.25f64.powi(2) + 0.25 + 0.125f64.powi(2)).sqrt() + (5.0f64 / 3.0).sqrt() / 2.0 + 1.0;
    assert!((r["error_bound"].as_f64().unwrap() - r0).abs() < 1e-12);
}

#[test]
fn pullback_tolerance_picks_horizon() {
    let s = Scratch::new();
    let (o, out) = s.run(
        "pullback",
        DYADIC,
        r#"{"kind": "pullback", "anchor": 0.0, "tolerance": 1e-6, "initial": {"kind": "zero"}}"#,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&out.join("pullback.json"));
    assert!((r["error_bound"].as_f64().unwrap() - 1e-6).abs() < 1e-15);

    let (o, _) = s.run(
        "pullback",
        DYADIC,
        r#"{"kind": "pullback", "anchor": 0.0, "initial": {"kind": "zero"}}"#,
    );
    assert_eq!(code(&o), 2);
}

const PERIODIC: &str = r#"
  "params": {"nu": 1.0, "lambda": 1.0},
  "nonlinearity": {"kind": "cubic"},
  "forcing": {"kind": "quasi_periodic", "sites": [], "amp_rule": "dyadic", "active_halfwidth": 3,
              "phase": 0.0, "omega_rule": {"base": 1.0, "step": 0.0}},
  "window_halfwidth": 8,
  "seed": 5,
"#;

fn periodic_trajectory(s: &Scratch) -> PathBuf {
    let (o, out) = s.run(
        "simulate",
        PERIODIC,
        r#"{"kind": "simulate", "t0": 0, "t1": 60, "sample_step": 0.03125,
            "initial": {"kind": "pullback", "horizon": 15.0}}"#,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out.join("trajectory.csv")
}

#[test]
fn apscan_finds_the_period() {
    let s = Scratch::new();
    let traj = periodic_trajectory(&s);
    let experiment = format!(
        r#"{{"kind": "apscan", "trajectory": "{}", "epsilon": 0.02, "tau_step": 0.03125, "tau_max": 15.0}}"#,
        traj.display()
    );
    let (o, out) = s.run("apscan", PERIODIC, &experiment);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = json(&out.join("apscan_report.json"));
    let gap = report["max_gap"].as_f64().unwrap();
    assert!((gap - 2.0 * std::f64::consts::PI).abs() < 0.3, "max gap {gap}");
    let taus: Vec<f64> = report["taus"].as_array().unwrap().iter().map(|t| t.as_f64().unwrap()).collect();
    for k in 1..=2 {
        let period = 2.0 * std::f64::consts::PI * k as f64;
        assert!(taus.iter().any(|t| (t - period).abs() < 0.05), "no τ near {period}");
    }
    let defects = fs::read_to_string(out.join("apscan_defects.csv")).unwrap();
    assert!(defects.starts_with("tau,defect,accepted\n"));
    assert_eq!(defects.lines().count(), 2 + 480);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["inputs"][0]["hash"].as_str().unwrap().len(), 64);
}

#[test]
fn apscan_rejects_nonpositive_epsilon() {
    let s = Scratch::new();
    let traj = periodic_trajectory(&s);
    let experiment = format!(
        r#"{{"kind": "apscan", "trajectory": "{}", "epsilon": 0.0, "tau_step": 0.03125, "tau_max": 10.0}}"#,
        traj.display()
    );
    let (o, out) = s.run("apscan", PERIODIC, &experiment);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("epsilon"));
    assert!(listing(&out).is_empty());
}

#[test]
fn apscan_without_recurrence_exits_1() {
    let s = Scratch::new();
    let traj = periodic_trajectory(&s);
    // Half a period of shifts never returns within ε.
    let experiment = format!(
        r#"{{"kind": "apscan", "trajectory": "{}", "epsilon": 0.02, "tau_step": 0.03125, "tau_max": 3.0}}"#,
        traj.display()
    );
    let (o, out) = s.run("apscan", PERIODIC, &experiment);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(out.join("apscan_report.json").exists());
}

fn sweep_rows(out: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    r.records().map(Result::unwrap).collect()
}

#[test]
fn sweep_over_lambda_meets_rates_in_grid_order() {
    let s = Scratch::new();
    let (o, out) = s.run(
        "sweep",
        DYADIC,
        r#"{"kind": "sweep", "grid": {"lambda": [0.5, 1.0, 2.0]}, "t_end": 4.0, "sample_step": 0.01,
            "amplitude": 1.0, "absorbing_norm": 5.0, "pullback_horizon": 8.0}"#,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = sweep_rows(&out);
    assert_eq!(rows.len(), 3);
    for (k, (row, lambda)) in rows.iter().zip([0.5, 1.0, 2.0]).enumerate() {
        assert_eq!(row[0].parse::<usize>().unwrap(), k);
        assert_eq!(row[4].parse::<f64>().unwrap(), lambda);
        assert_eq!(row[6].parse::<u64>().unwrap(), 99 + k as u64);
        let slope: f64 = row[7].parse().unwrap();
        assert!(slope <= -(lambda + 1.0) * 0.95, "λ = {lambda}: slope {slope}");
        assert_eq!(&row[14], "ok");
    }
}

#[test]
fn one_by_one_sweep_matches_single_contraction_run() {
    let s = Scratch::new();
    let (o, sweep_out) = s.run(
        "sweep",
        DYADIC,
        r#"{"kind": "sweep", "grid": {}, "t_end": 3.0, "sample_step": 0.01,
            "amplitude": 1.0, "absorbing_norm": 5.0, "pullback_horizon": 5.0}"#,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (o, single) = s.run(
        "contraction",
        DYADIC,
        r#"{"kind": "contraction", "pairs": 1, "t_end": 3.0, "sample_step": 0.01, "amplitude": 1.0}"#,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = sweep_rows(&sweep_out);
    assert_eq!(rows.len(), 1);
    let pair = &json(&single.join("contraction.json"))["pairs"][0];
    assert_eq!(rows[0][7].parse::<f64>().unwrap(), pair["slope"].as_f64().unwrap());
    assert_eq!(rows[0][9].parse::<f64>().unwrap(), pair["max_ratio"].as_f64().unwrap());
}

#[test]
fn sweep_flags_invalid_cell_and_completes_the_rest() {
    let s = Scratch::new();
    let (o, out) = s.run(
        "sweep",
        DYADIC,
        r#"{"kind": "sweep", "grid": {"lambda": [1.0, -1.0, 2.0]}, "t_end": 3.0, "sample_step": 0.01,
            "amplitude": 1.0, "absorbing_norm": 5.0, "pullback_horizon": 5.0}"#,
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let rows = sweep_rows(&out);
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[0][14], "ok");
    assert!(rows[1][14].starts_with("error:"), "{}", &rows[1][14]);
    assert!(rows[1][7].parse::<f64>().unwrap().is_nan());
    assert_eq!(&rows[2][14], "ok");
}

#[test]
fn sweep_over_nonlinearities() {
    let s = Scratch::new();
    let (o, out) = s.run(
        "sweep",
        DYADIC,
        r#"{"kind": "sweep", "grid": {"nonlinearity": [{"kind": "linear", "c": 0.5}, {"kind": "custom", "coefficients": [-2.0, 0.0, -1.0]}]},
            "t_end": 3.0, "sample_step": 0.01, "amplitude": 1.0, "absorbing_norm": 5.0, "pullback_horizon": 5.0}"#,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = sweep_rows(&out);
    assert_eq!(rows[0][2].parse::<f64>().unwrap(), 0.5);
    assert_eq!(rows[1][2].parse::<f64>().unwrap(), 2.0);
    assert_eq!(rows[1][5].parse::<f64>().unwrap(), 3.0);
}

#[test]
fn outputs_are_deterministic_across_runs_and_thread_counts() {
    let s = Scratch::new();
    let config = s.config(
        "sweep.json",
        &format!(
            r#"{{{DYADIC} "experiment": {{"kind": "sweep", "grid": {{"lambda": [0.5, 1.0], "nu": [0.0, 1.0]}},
                "t_end": 2.0, "sample_step": 0.01, "amplitude": 1.0, "absorbing_norm": 5.0, "pullback_horizon": 4.0}}}}"#
        ),
    );
    let runs: Vec<PathBuf> = [None, Some("1"), Some("3")]
        .iter()
        .enumerate()
        .map(|(k, threads)| {
            let out = s.out(&format!("det{k}"));
            let o = aplat(&["sweep"], &config, &out, *threads);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
            out
        })
        .collect();
    for name in ["sweep.csv", "manifest.json"] {
        let first = fs::read(runs[0].join(name)).unwrap();
        for other in &runs[1..] {
            assert_eq!(first, fs::read(other.join(name)).unwrap(), "{name} differs");
        }
    }
}

#[test]
fn example_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            aplat::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 5);
}
