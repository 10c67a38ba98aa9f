//! End-to-end checks of the command-line binary: exit codes, file outputs,
//! determinism and the override mechanism.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hanle-sim"))
}

fn write_cfg(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = "\
[atom]
f_g = 1
f_e = 2
gamma_r = 2.0
big_gamma = 0.01

[field]
rabi = 3.0
epsilon = 0.2

[doppler]
width = 0
nodes = 1

[scan]
coarse_range = 2.0
coarse_points = 41
fine_points = 41
";

#[test]
fn scan_b_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), SMALL);
    let out = bin()
        .args(["scan-b", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .arg("--threads")
        .arg("1")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("scan_b.csv")).unwrap();
    assert!(csv.starts_with("# hanle-sim scan-b"));
    assert!(csv.contains("omega_g,signal"));
    assert!(dir.path().join("scan_b.dat").exists());
}

#[test]
fn solve_one_zero_drive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), SMALL);
    let out = bin()
        .args(["solve-one", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .args(["--override", "field.rabi=0"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let txt = std::fs::read_to_string(dir.path().join("solve_one.txt")).unwrap();
    assert!(txt.contains("absorption = 0.0000000000000000e0"), "{txt}");
    assert!(txt.contains("3.3333333333333331e-1"), "{txt}");
}

#[test]
fn missing_config_exits_2() {
    let out = bin()
        .args(["scan-b", "--config", "/nonexistent/nowhere.cfg"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn bad_epsilon_override_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), SMALL);
    let out = bin()
        .args(["scan-b", "--config"])
        .arg(&cfg)
        .args(["--override", "field.epsilon=0.9"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("epsilon"), "{stderr}");
}

#[test]
fn forbidden_transition_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), &SMALL.replace("f_e = 2", "f_e = 3"));
    let out = bin()
        .args(["scan-b", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flat_sweep_has_no_plot_data_exits_4() {
    // rabi = 0 makes every curve identically zero: no central structure,
    // so plot emission refuses with an extraction error
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{SMALL}\n[sweep]\nepsilons = 0.0, 0.1\n[output]\nplot = true\n");
    let cfg = write_cfg(dir.path(), &body);
    let out = bin()
        .args(["sweep-eps", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .args(["--override", "field.rabi=0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{out:?}");
}

#[test]
fn byte_identical_across_runs_and_thread_counts() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d1.path(), SMALL);
    for (dir, threads) in [(&d1, "1"), (&d2, "3")] {
        let out = bin()
            .args(["scan-b", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path())
            .args(["--threads", threads])
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    let strip = |p: &Path| {
        // the preamble carries output.dir; mask it before comparing
        std::fs::read_to_string(p.join("scan_b.csv"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("# dir"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(d1.path()), strip(d2.path()));
}

#[test]
fn env_thread_fallback_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), SMALL);
    let out = bin()
        .args(["solve-one", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .env("HANLE_SIM_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = bin()
        .args(["solve-one", "--config"])
        .arg(&cfg)
        .env("HANLE_SIM_THREADS", "garbage")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn find_epsmax_writes_summary_and_scan() {
    // tiny immovable configuration so the search stays cheap
    let dir = tempfile::tempdir().unwrap();
    let body = "\
[atom]
f_g = 1
f_e = 2
big_gamma = 0.05

[field]
rabi = 3.0

[doppler]
width = 0
nodes = 1

[scan]
coarse_range = 3.0
coarse_points = 41
fine_points = 41
max_refine = 3
";
    let cfg = write_cfg(dir.path(), body);
    let out = bin()
        .args(["find-epsmax", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(dir.path().join("epsmax_summary.csv")).unwrap();
    assert!(summary.contains("eps_max,amplitude_max,amplitude_linear,gain,multi_modal"));
    let scan = std::fs::read_to_string(dir.path().join("epsmax_scan.csv")).unwrap();
    assert_eq!(scan.lines().filter(|l| !l.starts_with('#')).count(), 13 + 1);
}
