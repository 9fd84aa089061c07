use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use eofm::io::{load_image, load_vector_field};
use eofm::speckle::read_bubbles_csv;

/// A 64×64 phantom keeps every run well under a second.
const SMALL: &[&str] = &[
    "phantom.width=64",
    "phantom.height=64",
    "phantom.inclusion_radius=10",
    "phantom.n_bubbles=20",
    "phantom.compression=2",
    "multiscale.levels=3",
];

fn eofm(dir: &Path, command: &str, extra: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_eofm"));
    cmd.current_dir(dir).arg(command).arg("--set").arg("paths.output_dir=\".\"");
    for s in extra {
        cmd.arg("--set").arg(s);
    }
    cmd.output().unwrap()
}

fn small(extra: &[&'static str]) -> Vec<&'static str> {
    SMALL.iter().chain(extra).copied().collect()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_default_writes_valid_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    ok(&eofm(dir.path(), "simulate", &[]));
    let names: Vec<String> = files(dir.path()).into_iter().map(|(n, _)| n).collect();
    assert_eq!(
        names,
        ["bubbles.csv", "frame0.png", "frame1.png", "manifest_simulate.json", "truth.fld"]
    );
    let f0 = load_image(dir.path().join("frame0.png")).unwrap();
    assert_eq!((f0.geometry().width(), f0.geometry().height()), (256, 256));
    load_image(dir.path().join("frame1.png")).unwrap();
    let truth = load_vector_field(dir.path().join("truth.fld")).unwrap();
    assert!(truth.max_abs() > 0.0);
    let bubbles = read_bubbles_csv(fs::File::open(dir.path().join("bubbles.csv")).unwrap()).unwrap();
    assert_eq!(bubbles.len(), 200);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("manifest_simulate.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        for command in ["simulate", "track", "background", "flow", "eofm", "eval"] {
            ok(&eofm(dir, command, &small(&[])));
        }
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.len(), fb.len());
    for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
        assert_eq!(na, nb);
        assert!(ba == bb, "{na} differs");
    }
}

#[test]
fn zero_compression_gives_identical_frames() {
    let dir = tempfile::tempdir().unwrap();
    ok(&eofm(dir.path(), "simulate", &small(&["phantom.compression=0"])));
    let f0 = fs::read(dir.path().join("frame0.png")).unwrap();
    let f1 = fs::read(dir.path().join("frame1.png")).unwrap();
    assert_eq!(f0, f1);
}

#[test]
fn eofm_writes_field_report_and_maps() {
    let dir = tempfile::tempdir().unwrap();
    ok(&eofm(dir.path(), "simulate", &small(&[])));
    let out = eofm(dir.path(), "eofm", &small(&[]));
    ok(&out);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("metric=l2_relative_percent\n"), "{stdout}");
    for name in [
        "eofm.fld",
        "eofm_bubbles.csv",
        "eofm_u1.png",
        "eofm_u2.png",
        "eofm_error_u1.png",
        "eofm_error_u2.png",
        "eofm_report.txt",
        "eofm_report.csv",
        "manifest_eofm.json",
    ] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let report = fs::read_to_string(dir.path().join("eofm_report.csv")).unwrap();
    let row: Vec<&str> = report.lines().nth(1).unwrap().split(',').collect();
    let e_rel: f64 = row[0].parse().unwrap();
    assert!(e_rel < 15.0, "relative error {e_rel}");

    let eval = eofm(dir.path(), "eval", &small(&[]));
    ok(&eval);
    assert_eq!(fs::read_to_string(dir.path().join("eval_report.csv")).unwrap(), report);
}

#[test]
fn zero_beta_runs_without_tracking() {
    let dir = tempfile::tempdir().unwrap();
    ok(&eofm(dir.path(), "simulate", &small(&[])));
    fs::remove_file(dir.path().join("bubbles.csv")).unwrap();
    ok(&eofm(dir.path(), "eofm", &small(&["solver.beta=0"])));
    assert!(!dir.path().join("eofm_bubbles.csv").exists());
    assert!(dir.path().join("eofm.fld").is_file());
}

#[test]
fn missing_truth_gives_field_only() {
    let dir = tempfile::tempdir().unwrap();
    ok(&eofm(dir.path(), "simulate", &small(&[])));
    fs::remove_file(dir.path().join("truth.fld")).unwrap();
    let out = eofm(dir.path(), "flow", &small(&["solver.bc_mode=\"natural\"", "boundary.preset=\"natural\""]));
    ok(&out);
    assert!(dir.path().join("flow.fld").is_file());
    assert!(!dir.path().join("flow_report.txt").exists());
}

#[test]
fn ablation_table_has_five_numeric_rows() {
    let dir = tempfile::tempdir().unwrap();
    ok(&eofm(dir.path(), "ablation", &small(&[])));
    let text = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["test", "alpha", "beta", "multiscale", "e_rel_u", "e_rel_u1", "e_rel_u2"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        for i in [1, 2, 4, 5, 6] {
            assert!(r[i].parse::<f64>().is_ok(), "{r:?}");
        }
    }
    let md = fs::read_to_string(dir.path().join("ablation.md")).unwrap();
    assert_eq!(md.lines().count(), 7);
}

#[test]
fn config_errors_exit_with_two_and_a_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 3\n[tracker]\npatch_radius = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_eofm"))
        .args(["simulate", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("bad.toml:3"), "{stderr}");
    assert!(stderr.contains("tracker.patch_radius"), "{stderr}");

    let out = eofm(dir.path(), "simulate", &["solver.alpha=0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--set solver.alpha=0"));

    let out = Command::new(env!("CARGO_BIN_EXE_eofm")).arg("nonsense").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = eofm(dir.path(), "eofm", &small(&[]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("paths.frame0"));
}

#[test]
fn non_convergence_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    ok(&eofm(dir.path(), "simulate", &small(&[])));
    let out = eofm(dir.path(), "eofm", &small(&["solver.lin_max_iter=2", "solver.lin_tol=1e-14"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("did not converge"));
}
