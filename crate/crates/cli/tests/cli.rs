use std::path::Path;
use std::process::{Command, Output};

fn kdvlab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdvlab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("KDVLAB_OUT")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const ZERO_SPECTRUM: &str = r#"
kind = "spectrum"
modes = 4
n_max = 3
[initial]
recipe = "coefficients"
entries = []
"#;

const ACTIONS: &str = r#"
kind = "actions"
modes = 8
n_max = 6
[initial]
recipe = "coefficients"
entries = [[1, 0.1]]
"#;

#[test]
fn zero_field_spectrum_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", ZERO_SPECTRUM);
    let out = dir.path().join("out");
    let o = kdvlab(&["spectrum", "--config", &cfg, "--out", out.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["spectrum.csv", "spectrum.json", "run.meta.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn small_grid_exits_2_and_names_the_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", &ACTIONS.replace("n_max = 6", "n_max = 6\ngrid = 16"));
    let o = kdvlab(&["actions", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["status"], 2);
    assert!(err["errors"][0].as_str().unwrap().contains("N >= 3K"), "{err}");
    assert!(!dir.path().join("kdvlab-out").exists());
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", &ACTIONS.replace("n_max", "nmax"));
    let o = kdvlab(&["actions", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nmax"));
}

#[test]
fn kind_must_match_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", ACTIONS);
    let o = kdvlab(&["spectrum", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sidecar_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.toml", ACTIONS);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(kdvlab(&["actions", "--config", &cfg, "--out", a.to_str().unwrap()], dir.path()).status.code(), Some(0));
    let side = a.join("actions.json");
    let o = kdvlab(&["actions", "--config", side.to_str().unwrap(), "--out", b.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["actions.csv", "actions.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn env_sets_default_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", ZERO_SPECTRUM);
    let root = dir.path().join("root");
    let o = Command::new(env!("CARGO_BIN_EXE_kdvlab"))
        .args(["spectrum", "--config", &cfg])
        .current_dir(dir.path())
        .env("KDVLAB_OUT", &root)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(root.join("spectrum").join("spectrum.csv").exists());
}

#[test]
fn seed_override_changes_gaussian_data() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
kind = "actions"
modes = 8
n_max = 4
seed = 1
[initial]
recipe = "gaussian"
scale = 1.0
zeta = -2.0
p = 3.0
norm = 0.2
"#;
    let cfg = write(dir.path(), "g.toml", text);
    let run = |seed: &str, out: &str| {
        let o = kdvlab(&["actions", "--config", &cfg, "--seed", seed, "--out", out], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(dir.path().join(out).join("actions.csv")).unwrap()
    };
    assert_ne!(run("1", "x"), run("2", "y"));
    assert_eq!(run("1", "x"), run("1", "z"));
}

#[test]
fn unperturbed_evolve_conserves() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
kind = "evolve"
modes = 8
[initial]
recipe = "coefficients"
entries = [[1, 0.2], [-2, 0.1]]
[time]
t_end = 0.01
dt = 1e-4
sample_every = 10
[observables]
sobolev = [1.0]
"#;
    let cfg = write(dir.path(), "e.toml", text);
    let o = kdvlab(&["evolve", "--config", &cfg, "--out", "e"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = std::fs::read_to_string(dir.path().join("e/trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,tau,norm0,norm1,H"));
    assert_eq!(csv.lines().count(), 1 + 11);
}

#[test]
fn verify_runs_a_subset() {
    let dir = tempfile::tempdir().unwrap();
    let o = kdvlab(&["verify", "--level", "fast", "--out", "v", "1", "4"], dir.path());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count(), 2);
    assert!(dir.path().join("v/verify.csv").exists());
}
