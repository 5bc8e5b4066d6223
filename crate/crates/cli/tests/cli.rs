use std::fs;
use std::path::Path;
use std::process::Command;

use comoving_cli::{list_scenarios, parse_config, run, write_outputs};

const BIN: &str = env!("CARGO_BIN_EXE_comoving");

fn small_config(field: &str, suites: &str, out: &Path) -> String {
    format!(
        "[field]\nname = {field}\n[numerics]\nstep = 2e-2\nsamples = 3000\nladder_samples = 300\n\
         eps_list = 0.1, 0.05\ngrid = 24\ntime_nodes = 3\n[times]\npairs = 0:0.5\n\
         [set]\nlabel = A\nshape = ball\ncenter = 0.3, 0, 0\nradius = 0.15\n\
         [suites]\nrun = {suites}\n[output]\ndir = {}\n",
        out.display()
    )
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn list_has_scenarios_with_divergence_flags() {
    let text = list_scenarios();
    assert!(text.lines().count() >= 3);
    for name in ["rotation", "contraction", "rough_shear"] {
        assert!(text.contains(name));
    }
    assert!(text.contains("div-free: yes") && text.contains("div-free: no"));
    assert_eq!(text, list_scenarios());
    let out = Command::new(BIN).arg("--list").output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), text);
}

#[test]
fn rotation_reynolds_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(&small_config("rotation", "reynolds", dir.path())).unwrap();
    let summary = run(&cfg).unwrap();
    assert!(summary.passed());
    write_outputs(&summary, dir.path()).unwrap();
    let rows = read_csv(&dir.path().join("reynolds.csv"));
    let trans1: Vec<_> = rows.iter().filter(|r| r[0] == "trans1").collect();
    assert!(!trans1.is_empty());
    for r in trans1 {
        let (residual, threshold): (f64, f64) = (r[6].parse().unwrap(), r[9].parse().unwrap());
        assert!(residual <= threshold);
    }
}

#[test]
fn zero_field_residuals_vanish() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(&small_config(
        "zero",
        "flow-diagnostics, reynolds, commutator",
        dir.path(),
    ))
    .unwrap();
    let summary = run(&cfg).unwrap();
    assert!(summary.passed(), "{:?}", summary.table());
    write_outputs(&summary, dir.path()).unwrap();
    for r in read_csv(&dir.path().join("reynolds.csv")) {
        assert!(r[6].parse::<f64>().unwrap() <= 1e-12, "{r:?}");
    }
    for r in read_csv(&dir.path().join("flow-diagnostics.csv")) {
        assert_eq!(r[2].parse::<f64>().unwrap(), 0.0);
    }
    for r in read_csv(&dir.path().join("commutator.csv")) {
        assert_eq!(r[1].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn unknown_suite_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let path = dir.path().join("bad.ini");
    fs::write(&path, small_config("rotation", "reynolds, plots", &out)).unwrap();
    let res = Command::new(BIN).arg(&path).output().unwrap();
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8(res.stderr).unwrap();
    assert!(err.contains("unknown suite `plots`"), "{err}");
    assert!(!out.exists());
}

#[test]
fn exit_status_reflects_failures() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.ini");
    let text = small_config("contraction", "flow-diagnostics", &dir.path().join("a"));
    fs::write(&path, &text).unwrap();
    assert!(Command::new(BIN).arg(&path).status().unwrap().success());
    let strict = text.replace("[numerics]\n", "[numerics]\ndefect_tol = 1e-300\n");
    fs::write(&path, strict).unwrap();
    let status = Command::new(BIN).arg(&path).status().unwrap();
    assert_eq!(status.code(), Some(1));
    let summary = fs::read_to_string(dir.path().join("a/summary.csv")).unwrap();
    assert!(summary.contains("flow-diagnostics,fail"));
}

#[test]
fn overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.ini");
    fs::write(
        &path,
        small_config("rotation", "reynolds", &dir.path().join("ignored")),
    )
    .unwrap();
    let out = dir.path().join("chosen");
    let status = Command::new(BIN)
        .arg(&path)
        .args(["--suite", "commutator", "--seed", "9", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("commutator.csv").exists());
    assert!(!out.join("reynolds.csv").exists());
    assert!(!dir.path().join("ignored").exists());
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        let path = dir.path().join(format!("{name}.ini"));
        fs::write(
            &path,
            small_config("contraction", "flow-diagnostics, transport, reynolds", &out),
        )
        .unwrap();
        assert!(Command::new(BIN).arg(&path).status().unwrap().success());
        outputs.push(out);
    }
    let mut names: Vec<_> = fs::read_dir(&outputs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 5);
    for name in names {
        assert_eq!(
            fs::read(outputs[0].join(&name)).unwrap(),
            fs::read(outputs[1].join(&name)).unwrap(),
            "{name:?}"
        );
    }
}
