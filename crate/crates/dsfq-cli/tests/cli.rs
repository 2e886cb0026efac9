use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dsfq::spectrum::solve;
use dsfq::CircuitSpec;
use dsfq_cli::output::sha256_file;
use serde_json::Value;

fn dsfq() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dsfq"));
    c.env_remove("DSFQ_WORKERS");
    c
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    dsfq().args(args).output().unwrap()
}

fn stderr_report(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("{}", String::from_utf8_lossy(&out.stderr)))
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn csv_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn version_lists_every_experiment() {
    let out = run(&["version"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains(env!("CARGO_PKG_VERSION")));
    assert!(text.contains("config schema 1"));
    for name in ["spectrum_vs_alpha", "two_qubit_map", "zz_map", "dispersive_shift_sweep"] {
        assert!(text.contains(name), "{name}");
    }
}

#[test]
fn shipped_experiment_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments");
    let mut names: Vec<String> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| {
            let out = run(&["validate", p.to_str().unwrap()]);
            assert!(out.status.success(), "{}: {}", p.display(), String::from_utf8_lossy(&out.stderr));
            p.file_stem().unwrap().to_string_lossy().into_owned()
        })
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "coherence_vs_alpha",
            "dispersive_shift_sweep",
            "flux_dispersion",
            "gradiometric_dispersion",
            "single_qubit_gate",
            "spectrum_vs_alpha",
            "two_qubit_map",
            "zz_map"
        ]
    );
}

#[test]
fn unknown_keys_and_schema_mismatch_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        r#"{"schema_version": 1, "experiment": "zz_map", "colour": "red"}"#,
        r#"{"schema_version": 1, "experiment": "zz_map", "params": {"alpha": 1}}"#,
        r#"{"schema_version": 1, "experiment": "zz_map", "params": {"alpha1": {"start": 0.5, "stop": 1, "points": 3, "step": 1}}}"#,
        r#"{"schema_version": 1, "experiment": "spectrum_vs_alpha", "circuit": {"variant": "single_loop", "ej": 10, "ec": 0.1, "alpha": 1, "phi_ext": 3, "cutoff": 12, "bias": 0}}"#,
        r#"{"schema_version": 2, "experiment": "zz_map"}"#,
        r#"{"experiment": "zz_map"}"#,
        r#"{"schema_version": 1, "experiment": "figure_7"}"#,
    ];
    for (i, body) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("bad{i}.json"), body);
        for args in [vec!["validate", cfg.to_str().unwrap()], vec!["run", cfg.to_str().unwrap(), "--dry-run"]] {
            let out = run(&args);
            assert_eq!(out.status.code(), Some(2), "case {i}");
            let rep = stderr_report(&out);
            assert_eq!(rep["error"], "validation");
            assert_eq!(rep["exit_code"], 2);
        }
    }
}

#[test]
fn semantic_errors_exit_2_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let cases = [
        r#"{"schema_version": 1, "experiment": "spectrum_vs_alpha", "params": {"alpha": {"start": 0.5, "stop": 1, "points": 0}}}"#,
        r#"{"schema_version": 1, "experiment": "two_qubit_map", "params": {"t_a_ns": {"start": 10, "stop": 90, "points": 3}}}"#,
        r#"{"schema_version": 1, "experiment": "dispersive_shift_sweep", "params": {"levels": 4}}"#,
        r#"{"schema_version": 1, "experiment": "gradiometric_dispersion", "circuit": {"variant": "single_loop", "ej": 10, "ec": 0.1, "alpha": 1, "phi_ext": 3, "cutoff": 12}}"#,
        r#"{"schema_version": 1, "experiment": "single_qubit_gate", "params": {"pulse_ramp_ns": 6}}"#,
        r#"{"schema_version": 1, "experiment": "coherence_vs_alpha", "params": {"channels": []}}"#,
        r#"{"schema_version": 1, "experiment": "zz_map", "workers": 0}"#,
    ];
    for (i, body) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("bad{i}.json"), body);
        let out = run(&["run", cfg.to_str().unwrap(), "--output", out_dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "case {i}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out_dir.exists(), "case {i} wrote output");
    }
}

#[test]
fn dry_run_reports_the_plan_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"schema_version": 1, "experiment": "two_qubit_map"}"#);
    let out_dir = tmp.path().join("o");
    let out = run(&["run", cfg.to_str().unwrap(), "--dry-run", "--output", out_dir.to_str().unwrap(), "--workers", "2"]);
    assert!(out.status.success());
    let plan: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(plan["points"], 144);
    assert_eq!(plan["workers"], 2);
    let files: Vec<&str> = plan["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    for f in ["entangling_power.csv", "phi_cphase.csv", "theta_swap.csv", "manifest.json"] {
        assert!(files.contains(&f), "{f}");
    }
    assert!(!out_dir.exists());
}

#[test]
fn worker_count_comes_from_flag_then_config_then_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let plain = write_config(tmp.path(), "a.json", r#"{"schema_version": 1, "experiment": "zz_map"}"#);
    let pinned = write_config(tmp.path(), "b.json", r#"{"schema_version": 1, "experiment": "zz_map", "workers": 5}"#);
    let workers = |cfg: &Path, env: Option<&str>, flag: Option<&str>| -> Output {
        let mut c = dsfq();
        c.args(["run", cfg.to_str().unwrap(), "--dry-run"]);
        if let Some(f) = flag {
            c.args(["--workers", f]);
        }
        if let Some(e) = env {
            c.env("DSFQ_WORKERS", e);
        }
        c.output().unwrap()
    };
    let n = |o: Output| -> u64 {
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        serde_json::from_slice::<Value>(&o.stdout).unwrap()["workers"].as_u64().unwrap()
    };
    assert_eq!(n(workers(&plain, Some("3"), None)), 3);
    assert_eq!(n(workers(&plain, Some("3"), Some("2"))), 2);
    assert_eq!(n(workers(&pinned, Some("3"), None)), 5);
    assert_eq!(n(workers(&pinned, None, Some("1"))), 1);
    assert_eq!(workers(&plain, Some("zero"), None).status.code(), Some(2));
    assert_eq!(workers(&plain, Some("0"), None).status.code(), Some(2));
}

#[test]
fn spectrum_defaults_give_a_51_row_table_with_units() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"schema_version": 1, "experiment": "spectrum_vs_alpha"}"#);
    let dir = tmp.path().join("out");
    let out = run(&["run", cfg.to_str().unwrap(), "--output", dir.to_str().unwrap(), "--workers", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = csv_lines(&dir.join("spectrum_vs_alpha.csv"));
    assert_eq!(lines[0], "alpha,omega_q_GHz,anharmonicity_GHz");
    assert_eq!(lines.len(), 52);
    assert!(lines[1].starts_with("0.5,") && lines[51].starts_with("1.0,"));
    let m = manifest(&dir);
    assert_eq!(m["status"], "complete");
    assert_eq!(m["points_done"], 51);
    assert_eq!(m["tool"], "dsfq");
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert!(m["error"].is_null());
    assert!(m["timings_s"]["total"].as_f64().unwrap() > 0.0);
    let oracle = &m["oracles"][0];
    assert_eq!(oracle["name"], "cutoff_convergence_GHz");
    assert_eq!(oracle["passed"], true);
    let rec = &m["files"][0];
    let (sha, bytes) = sha256_file(&dir.join("spectrum_vs_alpha.csv")).unwrap();
    assert_eq!(rec["sha256"], sha.as_str());
    assert_eq!(rec["bytes"], bytes);
    assert_eq!(rec["rows"], 51);
    assert!(!dir.join("PARTIAL").exists());
}

#[test]
fn reruns_are_byte_identical_for_any_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"{
        "schema_version": 1,
        "experiment": "flux_dispersion",
        "seed": 7,
        "params": {"phi_ext_over_pi": {"start": 0.98, "stop": 1.02, "points": 9}}
    }"#;
    let cfg = write_config(tmp.path(), "c.json", body);
    let mut seen = Vec::new();
    for (tag, workers) in [("a", "1"), ("b", "3"), ("c", "1")] {
        let dir = tmp.path().join(tag);
        let out = run(&["run", cfg.to_str().unwrap(), "--output", dir.to_str().unwrap(), "--workers", workers]);
        assert!(out.status.success());
        let m = manifest(&dir);
        seen.push((fs::read(dir.join("flux_dispersion.csv")).unwrap(), m["config_sha256"].clone(), m["files"].clone()));
    }
    assert!(seen.windows(2).all(|w| w[0] == w[1]));
    // the hash covers defaults too, so an explicitly spelled default matches
    let explicit = write_config(
        tmp.path(),
        "d.json",
        &body.replace(r#""seed": 7,"#, r#""seed": 7, "workers": null, "output": null,"#),
    );
    let plan = run(&["run", explicit.to_str().unwrap(), "--dry-run"]);
    let plan: Value = serde_json::from_slice(&plan.stdout).unwrap();
    assert_eq!(plan["config_sha256"], seen[0].1);
}

#[test]
fn numerical_failure_keeps_finished_rows_behind_a_partial_marker() {
    // put the resonator exactly on the 0 -> 3 transition at the last flux point
    let spec = CircuitSpec::single_loop(1.0, PI);
    let sol = solve(&spec, 20).unwrap();
    let omega_r = sol.energies[3] - sol.energies[0];
    let tmp = tempfile::tempdir().unwrap();
    let body = format!(
        r#"{{
        "schema_version": 1,
        "experiment": "dispersive_shift_sweep",
        "params": {{
            "phi_ext_over_pi": {{"start": 0.99, "stop": 1.0, "points": 3}},
            "resonator": {{"omega_r": {omega_r:?}, "g": 0.025}},
            "levels": 20
        }}
    }}"#
    );
    let cfg = write_config(tmp.path(), "c.json", &body);
    let dir = tmp.path().join("out");
    let out = run(&["run", cfg.to_str().unwrap(), "--output", dir.to_str().unwrap(), "--workers", "1"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = stderr_report(&out);
    assert_eq!(rep["error"], "numerical");
    assert!(rep["message"].as_str().unwrap().contains("sweep point 2"));
    assert!(dir.join("PARTIAL").exists());
    let m = manifest(&dir);
    assert_eq!(m["status"], "partial");
    assert_eq!(m["points_done"], 2);
    assert_eq!(m["error"]["point"], 2);
    assert_eq!(m["error"]["kind"], "numerical");
    assert_eq!(csv_lines(&dir.join("dispersive_shift_sweep.csv")).len(), 3);
    assert_eq!(m["files"][0]["rows"], 2);
}

#[test]
fn two_qubit_map_writes_the_three_grids() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"{
        "schema_version": 1,
        "experiment": "two_qubit_map",
        "params": {
            "t_a_ns": {"start": 4, "stop": 8, "points": 2},
            "t_w_ns": {"start": 0, "stop": 3, "points": 3},
            "steps_per_ns": 60,
            "monte_carlo_samples": 20000
        }
    }"#;
    let cfg = write_config(tmp.path(), "c.json", body);
    let dir = tmp.path().join("out");
    let out = run(&["run", cfg.to_str().unwrap(), "--output", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for (file, q, unit) in [("entangling_power.csv", "entangling_power", ""), ("phi_cphase.csv", "phi_cphase", "_rad"), ("theta_swap.csv", "theta_swap", "_rad")] {
        let lines = csv_lines(&dir.join(file));
        assert_eq!(lines.len(), 3, "{file}");
        assert_eq!(lines[0], format!("t_a_ns,{q}_at_t_w_0ns{unit},{q}_at_t_w_1.5ns{unit},{q}_at_t_w_3ns{unit}"));
        assert!(lines[1].starts_with("4.0,") && lines[2].starts_with("8.0,"));
        assert_eq!(lines[1].split(',').count(), 4);
    }
    let long = csv_lines(&dir.join("two_qubit_map.csv"));
    assert_eq!(long.len(), 7);
    assert!(long[0].contains("theta_swap_rad") && long[0].contains("gate_time_ns"));
    let m = manifest(&dir);
    let names: Vec<&str> = m["oracles"].as_array().unwrap().iter().map(|o| o["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["computational_identification_overlap", "points_over_leakage_limit", "entangling_power_monte_carlo"]);
    assert_eq!(m["files"].as_array().unwrap().len(), 4);
}
