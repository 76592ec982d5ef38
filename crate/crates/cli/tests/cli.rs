use std::path::Path;
use std::process::{Command, Output};

const SIMULATE: &str = r#"
version = 1
[environment]
seed = 4
[environment.model.family]
kind = "periodic-random-phase"
period = 1.0
a = { mean = 2.0, terms = [{ k = 1, sin = 0.5 }] }
v = { mean = 0.0, terms = [{ k = 1, cos = 0.2 }] }
g = { mean = 0.0, terms = [{ k = 1, sin = 1.0 }] }
[environment.model.kernel]
amplitude = 0.5
profile = { kind = "exponential", length = 1.0 }
[kernel.levy]
kind = "alpha-stable"
alpha = 1.2
scale = 1.0
[simulation]
horizon = 20.0
dt = 0.01
paths = 300
seed = 1
[gamma]
x_points = 2
z_points = 11
ks_samples = 100
"#;

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let out = dir.join("out");
    let text = format!("{body}\n[output]\ndirectory = {:?}\npaths = 2\n", out.to_string_lossy());
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn levyhom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levyhom"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SIMULATE);
    let cfg = cfg.to_str().unwrap();
    let one = levyhom(&["--threads", "1", "simulate", "--config", cfg]);
    let four = levyhom(&["--threads", "4", "simulate", "--config", cfg]);
    assert_eq!(one.status.code(), Some(0), "{}", String::from_utf8_lossy(&one.stderr));
    assert_eq!(four.status.code(), Some(0));
    // stdout lists the sha256 of every result file
    assert!(one.stdout.len() > 100);
    assert_eq!(one.stdout, four.stdout);
    assert!(tmp.path().join("out/manifest.json").exists());
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), &SIMULATE.replace("seed = 1", "seed = 1\nspeed = 3"));
    let out = levyhom(&["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("speed"));

    let missing = levyhom(&["simulate", "--config", "/nonexistent/config.toml"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn regime_mismatch_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SIMULATE);
    let out = levyhom(&["diffusivity", "--method", "corrector", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diffusive"));
}

#[test]
fn strict_mode_turns_breaches_into_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    // 100 pushforward samples cannot reach a KS distance below 0.02
    let cfg = write_config(tmp.path(), SIMULATE);
    let cfg = cfg.to_str().unwrap();
    let lax = levyhom(&["build-gamma", "--config", cfg]);
    assert_eq!(lax.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&lax.stderr).contains("KS"));
    let strict = levyhom(&["--strict", "build-gamma", "--config", cfg]);
    assert_eq!(strict.status.code(), Some(4));
}
