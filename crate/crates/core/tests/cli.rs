use std::fs;
use std::path::Path;
use std::process::Command;

use cavity_rabi::cli::{run, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION};
use cavity_rabi::closed_form::opencavity_pg;
use cavity_rabi::entangle::lambda4;
use cavity_rabi::evolve::{effective_time, Profile};
use cavity_rabi::presets;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("cavity-rabi").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn rows(csv: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = csv.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let body = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    (header, body)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn simulate_matches_closed_form() {
    let out = cli(&["simulate", "--end-us", "40", "--step-us", "2.5"]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    let (header, body) = rows(&out.stdout);
    assert_eq!(&header[..3], ["t_us", "p_g", "p_g_convolved"]);
    assert_eq!(header.len(), 12);
    assert_eq!(body.len(), 17);
    let profile = Profile::Gaussian {
        geometry: presets::geometry(),
    };
    for row in &body {
        let expected = opencavity_pg(&presets::rates(), &presets::params(), row[0] * 1e-6, &profile).unwrap();
        assert_eq!(row[1], expected);
        assert_eq!(row[2], expected);
        let populations = row[3] + row[4] + row[5];
        assert!((populations - 1.0).abs() < 1e-12);
        assert!((row[4] + row[5] - row[1]).abs() < 1e-12);
    }
}

#[test]
fn entangle_columns_match_library() {
    let out = cli(&["entangle", "--profile", "constant", "--end-us", "20"]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    let (header, body) = rows(&out.stdout);
    assert_eq!(
        header,
        ["t_us", "lambda1", "lambda2", "lambda3", "lambda4", "coherence_re", "coherence_im"]
    );
    let l4 = column(&header, "lambda4");
    for row in &body {
        let expected = lambda4(&presets::rates(), &presets::params(), row[0] * 1e-6, &Profile::Constant).unwrap();
        assert_eq!(row[l4], expected);
        assert!(row[l4] <= 0.0);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = cli(&["simulate", "--delta-t-us", "2.37", "--end-us", "50", "-o", path.to_str().unwrap()]);
        assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn sweep_rows_follow_sweep_order() {
    let out = cli(&["simulate", "--sweep", "gamma3=0:20000:5", "--end-us", "3"]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    let (header, body) = rows(&out.stdout);
    assert_eq!(header[0], "gamma3");
    assert_eq!(body.len(), 5 * 4);
    let swept: Vec<f64> = body.iter().map(|r| r[0]).collect();
    for (i, chunk) in swept.chunks(4).enumerate() {
        assert!(chunk.iter().all(|&v| v == 5000.0 * i as f64));
    }
    let single = cli(&["simulate", "--gamma3", "15000", "--end-us", "3"]);
    let (_, reference) = rows(&single.stdout);
    for (row, expected) in body[12..16].iter().zip(&reference) {
        assert_eq!(&row[1..], &expected[..]);
    }
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn bad_data_rows_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "bad.csv", "t_us,p_g\n0,0\n1,0.5\n2,1.2\n");
    let out = cli(&["fit-rabi", "--data", &data]);
    assert_eq!(out.code, EXIT_VALIDATION);
    assert!(out.stderr.contains("line 4") && out.stderr.contains("1.2"), "{}", out.stderr);

    let headless = write(dir.path(), "headless.csv", "0,0\n1,0.5\n");
    let out = cli(&["fit-rabi", "--data", &headless]);
    assert_eq!(out.code, EXIT_VALIDATION);
    assert!(out.stderr.contains("line 1") && out.stderr.contains("header"), "{}", out.stderr);
}

#[test]
fn config_problems_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let typo = write(dir.path(), "typo.json", "{\n  \"model\": {\n    \"gama3\": 5\n  }\n}\n");
    let out = cli(&["simulate", "--config", &typo]);
    assert_eq!(out.code, EXIT_USAGE);
    assert!(out.stderr.contains("gama3") && out.stderr.contains("line 3"), "{}", out.stderr);

    let unknown = write(dir.path(), "unknown.json", "{\"model\": {\"kind\": \"lorentz\"}}");
    let out = cli(&["simulate", "--config", &unknown]);
    assert_eq!(out.code, EXIT_USAGE);
    assert!(out.stderr.contains("lorentz"));

    let grid = write(dir.path(), "grid.json", "{\"grid\": {\"end_us\": -4}}");
    let out = cli(&["simulate", "--config", &grid]);
    assert_eq!(out.code, EXIT_USAGE);
    assert!(out.stderr.contains("grid.end_us"));

    assert_eq!(cli(&["simulate", "--model", "lorentz"]).code, EXIT_USAGE);
    assert_eq!(cli(&["fit-q", "--sweep", "gamma3=0:1:2"]).code, EXIT_USAGE);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "run.json",
        r#"{"model": {"kind": "microscopic", "gamma1": 900, "gamma2": 400},
            "profile": "constant", "grid": {"end_us": 5}}"#,
    );
    let out = cli(&["simulate", "--config", &config, "--gamma2", "100"]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    let (_, body) = rows(&out.stdout);
    let t = body[5][0] * 1e-6;
    let expected = cavity_rabi::closed_form::scala_pg(presets::COUPLING, 900.0, 100.0, t);
    assert!((body[5][1] - expected).abs() < 1e-14);
}

fn synthetic_data(dir: &Path, effective: bool) -> String {
    let geom = presets::geometry();
    let profile = Profile::Gaussian { geometry: geom };
    let mut text = String::from("t_us,p_g,sigma\n");
    for k in 0..=430 {
        let t = k as f64 * 1e-6;
        let p = opencavity_pg(&presets::rates(), &presets::params(), t, &profile).unwrap();
        let stamp = if effective { effective_time(t, &geom) } else { t };
        text.push_str(&format!("{},{p},0.01\n", stamp * 1e6));
    }
    write(dir, if effective { "eff.csv" } else { "true.csv" }, &text)
}

#[test]
fn fit_rabi_recovers_rates_in_both_conventions() {
    let dir = tempfile::tempdir().unwrap();
    let start = ["--gamma1", "25", "--gamma2", "25", "--gamma3", "8000"];
    let mut fitted = Vec::new();
    for (effective, convention) in [(false, "true"), (true, "effective")] {
        let data = synthetic_data(dir.path(), effective);
        let mut args = vec!["fit-rabi", "--data", &data, "--time-convention", convention];
        args.extend(start);
        let out = cli(&args);
        assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
        let mut lines = out.stdout.lines();
        assert_eq!(lines.next(), Some("parameter,value,standard_error"));
        let values: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert!((values[0] / presets::CAVITY_RATE - 1.0).abs() < 1e-3);
        assert!((values[1] / (presets::INTRA_RATE_RATIO * presets::COUPLING) - 1.0).abs() < 1e-3);
        fitted.push(values);
    }
    for (a, b) in fitted[0].iter().zip(&fitted[1]) {
        assert!((a / b - 1.0).abs() < 1e-6);
    }
}

#[test]
fn fit_q_reports_quality_factor() {
    let out = cli(&["fit-q", "--end-us", "430000", "--step-us", "1000"]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    let mut lines = out.stdout.lines();
    assert_eq!(lines.next(), Some("q,q_error,gamma,time_convention"));
    let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
    let q: f64 = fields[0].parse().unwrap();
    let gamma: f64 = fields[2].parse().unwrap();
    assert!((q / 3.31e10 - 1.0).abs() < 0.01);
    assert!((gamma / presets::CAVITY_RATE - 1.0).abs() < 1e-6);
    assert_eq!(fields[3], "true");
}

#[test]
fn davies_check_passes_at_experiment_parameters() {
    let out = cli(&["davies-check"]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    assert!(out.stderr.contains("equal"));
    assert!(out.stdout.starts_with("bohr_frequency,commutation_defect\n"));
}

#[test]
fn verify_exit_status_reflects_table() {
    let out = cli(&["verify"]);
    let lines: Vec<&str> = out.stdout.lines().collect();
    assert_eq!(lines.len(), 15);
    let failures = lines.iter().filter(|l| l.starts_with("FAIL")).count();
    assert_eq!(out.code == EXIT_OK, failures == 0);
    assert_eq!(lines[14], format!("{}/14 checks passed", 14 - failures));
}

#[test]
fn binary_reports_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_cavity-rabi");
    let ok = Command::new(exe).args(["energy", "--end-us", "2"]).output().unwrap();
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("t_us,energy,energy_convolved\n"));
    let bad = Command::new(exe).args(["simulate", "--profile", "square"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(EXIT_USAGE));
}

#[test]
fn fit_q_reads_energy_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("energy.csv");
    let path = path.to_str().unwrap();
    let out = cli(&["energy", "--end-us", "400000", "--step-us", "2000", "-o", path]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    let out = cli(&["fit-q", "--data", path]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    let gamma: f64 = out.stdout.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!((gamma / presets::CAVITY_RATE - 1.0).abs() < 1e-6);
}

struct ClosedPipe;

impl std::io::Write for ClosedPipe {
    fn write(&mut self, _: &[u8]) -> std::io::Result<usize> {
        Err(std::io::ErrorKind::BrokenPipe.into())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[test]
fn closed_pipe_is_not_an_error() {
    let mut err = Vec::new();
    let code = run(["cavity-rabi", "simulate", "--end-us", "5"], &mut ClosedPipe, &mut err);
    assert_eq!(code, EXIT_OK);
    assert!(err.is_empty());
}
