//! End-to-end checks of the binary: exit codes, structured error output,
//! and artifact determinism across reruns.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_plasma-branch"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = bin().arg("branch").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`p`"), "stderr: {err}");
    assert!(err.contains("\"exit_code\": 1"), "stderr: {err}");
}

#[test]
fn missing_p_names_the_field_with_its_position() {
    let dir = tmp("cli_missing_p");
    let cfg = dir.join("config.json");
    fs::write(&cfg, "{\n}\n").unwrap();
    let out = bin().arg("mesh").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing field `p`"), "stderr: {err}");
    assert!(err.contains("line"), "stderr: {err}");
}

#[test]
fn unknown_subcommand_exits_one_with_json() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("\"exit_code\": 1"), "stderr: {err}");
}

#[test]
fn mesh_run_echoes_defaults_into_the_manifest() {
    let dir = tmp("cli_mesh");
    let cfg = dir.join("config.json");
    fs::write(&cfg, "{\"p\": 2.0, \"resolution\": 8}\n").unwrap();
    let out = bin()
        .arg("mesh")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(dir.join("out/run_manifest.json")).unwrap();
    for expected in [
        "\"subcommand\": \"mesh\"",
        "\"alpha_stop\": 0.001",
        "\"eigen_count\": 6",
        "\"config_hash\"",
        "\"wall_times_ms\"",
    ] {
        assert!(manifest.contains(expected), "manifest lacks {expected}:\n{manifest}");
    }
    let stats = fs::read_to_string(dir.join("out/mesh_stats.json")).unwrap();
    assert!(stats.contains("\"nodes\""), "stats: {stats}");
}

#[test]
fn branch_artifacts_are_identical_across_reruns() {
    let dir = tmp("cli_rerun");
    let cfg = dir.join("config.json");
    fs::write(
        &cfg,
        "{\"p\": 2.0, \"resolution\": 10, \"continuation\": {\"lambda_cap\": 1.0}}\n",
    )
    .unwrap();
    for sub in ["a", "b"] {
        let out = bin()
            .arg("branch")
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(dir.join(sub))
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["branch.csv", "summary.json", "plot.py"] {
        let a = fs::read(dir.join("a").join(name)).unwrap();
        let b = fs::read(dir.join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }
    let csv = fs::read_to_string(dir.join("a/branch.csv")).unwrap();
    assert!(csv.starts_with("# plasma-branch"), "missing header comment");
    assert!(csv.contains("# config_hash = "), "missing hash stamp");
}

#[test]
fn out_dir_falls_back_to_the_environment_override() {
    let dir = tmp("cli_env");
    let cfg = dir.join("config.json");
    fs::write(&cfg, "{\"p\": 2.0, \"resolution\": 8}\n").unwrap();
    let out = bin()
        .arg("mesh")
        .arg("--config")
        .arg(&cfg)
        .env("PLASMA_BRANCH_OUT", dir.join("env_out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.join("env_out/mesh.txt").exists());
}
