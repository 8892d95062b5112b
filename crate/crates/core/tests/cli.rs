use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hele-shaw"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn exec(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn check_prints_derived_constants() {
    let out = exec(&["check", "--config", fixture("tiny.cfg").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    for key in ["config_hash = ", "L = ", "G0 = ", "M0 = ", "d_crit = ", "H7 = "] {
        assert!(stdout.contains(key), "missing {:?} in\n{}", key, stdout);
    }
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = exec(&["run"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn bad_config_lists_every_issue() {
    let out = exec(&["check", "--config", fixture("bad.cfg").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    let err = text(&out.stderr);
    assert!(err.contains("line 1"), "{}", err);
    assert!(err.contains("gamma"), "{}", err);
    assert!(err.contains("line 2"), "{}", err);
}

#[test]
fn unreadable_config_is_an_io_error() {
    let out = exec(&["check", "--config", "/nonexistent/dir/x.cfg"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn gamma_override_is_validated() {
    let out = exec(&["check", "--config", fixture("tiny.cfg").to_str().unwrap(), "--gamma", "0.5"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn nutrient_excursion_exits_with_invariant_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("nutrient_violation.cfg");
    let out = exec(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("nutrient ceiling"));

    // Permissive mode records the violation but finishes.
    let out = exec(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--permissive",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("nutrient ceiling"));
    let report = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(report.contains(",completed,"), "{}", report);
}

fn run_tiny(dir: &Path) {
    let out = exec(&["run", "--config", fixture("tiny.cfg").to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_tiny(a.path());
    run_tiny(b.path());
    let (la, lb) = (listing(a.path()), listing(b.path()));
    assert!(la.iter().any(|(n, _)| n == "timeseries.csv"));
    assert!(la.iter().any(|(n, _)| n == "report.csv"));
    assert!(la.iter().any(|(n, _)| n.starts_with("snapshot_")));
    assert_eq!(la, lb);
}

#[test]
fn snapshots_split_density_into_species() {
    let dir = tempfile::tempdir().unwrap();
    run_tiny(dir.path());
    let snap = fs::read_to_string(dir.path().join("snapshot_00000.csv")).unwrap();
    let header: Vec<&str> = snap.lines().filter(|l| !l.starts_with('#')).take(1).collect();
    assert_eq!(header, ["x,y,n,n1,n2,c,d,p,v"]);
    assert!(snap.contains("# config_hash = "));
    let rows: Vec<Vec<f64>> = snap
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 8);
    for r in rows {
        assert!((r[3] + r[4] - r[2]).abs() <= 1e-14 * r[2].max(1.0));
    }
}
