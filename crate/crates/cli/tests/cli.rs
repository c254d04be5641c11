use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nashflow(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nashflow"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn nashflow")
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn offline_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("cfg.toml");
    let text = format!(
        "{extra}\n[reference]\nfixture_dir = {:?}\noffline = true\n",
        fixtures().to_str().unwrap()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = offline_config(tmp.path(), "t_end = 5.0");
    let out = tmp.path().join("out");
    let o = nashflow(
        &["run", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trajectory.csv", "summary.json", "reference.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(stdout(&o).contains("accelerated_flow"));
}

#[test]
fn flags_override_config_values() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = offline_config(tmp.path(), "t_end = 6.0\nseed = 42");
    let out = tmp.path().join("out");
    let o = nashflow(
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--experiment",
            "example2",
            "--algorithm",
            "hybrid_restart",
            "--disturbance",
            "0.001",
            "--out-dir",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["algorithm"], "hybrid_restart");
    assert_eq!(summary["experiment"], "example2");
    assert_eq!(summary["config"]["disturbance"]["epsilon"], 0.001);
    assert_eq!(summary["config"]["disturbance"]["kind"], "constant");
    assert_eq!(summary["config"]["t_end"], 6.0);
    assert!(summary["jump_count"].as_u64().unwrap() > 0);
}

#[test]
fn seed_flag_selects_the_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = offline_config(tmp.path(), "t_end = 2.0");
    let o = nashflow(&["run", "--config", cfg.to_str().unwrap(), "--seed", "7"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("reference_example1_7.json"), "{err}");
}

#[test]
fn invalid_configs_fail_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[flow]\nr = 1.0\n").unwrap();
    let o = nashflow(&["run", "--config", bad.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("r"));

    std::fs::write(&bad, "unknown_key = 3\n").unwrap();
    let o = nashflow(&["run", "--config", bad.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown_key"));

    let o = nashflow(&["run", "--experiment", "example9"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_writes_a_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = offline_config(tmp.path(), "t_end = 4.0");
    let out = tmp.path().join("sweep");
    let o = nashflow(
        &[
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--param",
            "r",
            "--values",
            "2,3",
            "--out-dir",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(out.join("r_1/summary.json").exists());
}

#[test]
fn compare_writes_an_aligned_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = offline_config(tmp.path(), "t_end = 4.0");
    let out = tmp.path().join("cmp");
    let o = nashflow(
        &[
            "compare",
            "--config",
            cfg.to_str().unwrap(),
            "--algorithms",
            "baseline_primal_dual,accelerated_flow",
            "--points",
            "11",
            "--out-dir",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 12);
    assert!(table.starts_with("elapsed,gap_baseline_primal_dual_eps0,gap_accelerated_flow_eps0"));
}

#[test]
fn compare_needs_two_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = offline_config(tmp.path(), "t_end = 4.0");
    let o = nashflow(&["compare", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solve_reference_matches_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ref");
    let o = nashflow(
        &["solve-reference", "--experiment", "example1", "--out-dir", out.to_str().unwrap()],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let solved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("reference.json")).unwrap()).unwrap();
    let pinned: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(fixtures().join("reference_example1_42.json")).unwrap(),
    )
    .unwrap();
    for key in ["x", "y"] {
        let a = solved[key].as_array().unwrap();
        let b = pinned[key].as_array().unwrap();
        for (p, q) in a.iter().zip(b) {
            assert!((p.as_f64().unwrap() - q.as_f64().unwrap()).abs() < 1e-8);
        }
    }
}

#[test]
fn validate_passes_on_quadratic_and_reports_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("v");
    let o = nashflow(
        &[
            "validate",
            "--experiment",
            "quadratic",
            "--algorithm",
            "hybrid_restart",
            "--out-dir",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("PASS timer_consensus"));
    assert!(!stdout(&o).contains("FAIL"));
    assert!(out.join("validation.json").exists());
}

#[test]
fn validate_skips_undisturbed_checks_for_disturbed_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = offline_config(tmp.path(), "t_end = 5.0\n[disturbance]\nkind = \"constant\"\nepsilon = 0.001");
    let o = nashflow(&["validate", "--config", cfg.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(!stdout(&o).contains("rate_envelope"));
}
