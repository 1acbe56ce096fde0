use std::fs;
use std::process::{Command, Output};

fn lqrflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lqrflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn simulate_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[system]\na = [[0.0]]\nb = [[1.0]]\n\n[init]\nk1 = [[2.0], [0.5]]\nk2 = [[1.0, 0.0]]\n\n[integrator]\nt_end = 5.0\nrecord_stride = 0.05\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = lqrflow(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,gap,grad_norm,d,invariant_drift\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("trajectory.summary.json")).unwrap()).unwrap();
    assert!(summary["invariant_max_drift"].as_f64().unwrap() < 1e-6);
    assert_eq!(summary["config_echo"]["init"]["k1"][0][0].as_f64(), Some(2.0));
}

#[test]
fn malformed_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[system]\na = [[-1.0, 0.0], [0.0]]\nb = [[1.0], [1.0]]\n[init]\ngain = [[1.0, 1.0]]\n").unwrap();
    let out = lqrflow(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 1"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(code(&lqrflow(&["frobnicate"])), 2);
    assert_eq!(code(&lqrflow(&["reproduce", "fig9", "--out", "x"])), 2);
}

#[test]
fn reproduce_is_deterministic_and_profiles_round_trip() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = lqrflow(&["reproduce", "fig2a", "--out", dir.path().to_str().unwrap(), "--seed", "9"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["fig2a_standard.csv", "fig2a_factored.csv", "fig2a_factored.summary.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
    }
    let out = lqrflow(&["profile", "--input", a.path().join("fig2a_standard.csv").to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let fit: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(fit["verdict"], "GLECS-like");
}

#[test]
fn verify_pli_exit_codes() {
    let ok = lqrflow(&["verify-pli", "--a", "-1", "--q", "1", "--r", "1", "--gamma", "1", "--samples", "500", "--seed", "2"]);
    assert_eq!(code(&ok), 0);
    let cert: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(cert["kind"], "gpli");
    assert_eq!(cert["mu"].as_f64(), Some(0.05));

    let bad_gamma = lqrflow(&["verify-pli", "--a", "1", "--q", "1", "--r", "1", "--gamma", "3", "--samples", "10"]);
    assert_eq!(code(&bad_gamma), 2);
}

#[test]
fn profile_of_short_file_fails_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.csv");
    fs::write(&path, "t,gap,grad_norm,d,invariant_drift\n0,1,1,,\n1,0.5,1,,\n").unwrap();
    assert_eq!(code(&lqrflow(&["profile", "--input", path.to_str().unwrap()])), 1);
    assert_eq!(code(&lqrflow(&["profile", "--input", "/nonexistent/file.csv"])), 2);
}
