use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_guidance-lab"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const SMALL_RUN: &str = r#"
version = 1
name = "small"
seed = 5
ensemble = 200

[target]
kind = "gaussian"
gamma = 1.0
context = 1.0

[sampler]
kind = "flow"
guidance = { kind = "cfg", w = 2.0 }

[schedule]
steps = 16

[metrics]
reference = 500
"#;

#[test]
fn run_succeeds_and_is_thread_count_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL_RUN).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out_dir, threads) in [(&a, "1"), (&b, "3")] {
        let out = run(&[
            "--config",
            cfg.to_str().unwrap(),
            "--threads",
            threads,
            "--out-dir",
            out_dir.to_str().unwrap(),
            "run",
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let samples = fs::read(a.join("samples.csv")).unwrap();
    assert_eq!(samples, fs::read(b.join("samples.csv")).unwrap());
    assert!(a.join("manifest.json").exists());
}

#[test]
fn seed_flag_changes_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL_RUN).unwrap();
    let read = |seed: &str, sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = run(&["--config", cfg.to_str().unwrap(), "--seed", seed, "--out-dir", out_dir.to_str().unwrap(), "run"]);
        assert_eq!(code(&out), 0);
        fs::read(out_dir.join("samples.csv")).unwrap()
    };
    assert_ne!(read("1", "s1"), read("2", "s2"));
}

#[test]
fn missing_config_flag_exits_2_and_unreadable_file_exits_4() {
    let out = run(&["run"]);
    assert_eq!(code(&out), 2);
    let out = run(&["--config", "/nonexistent/run.toml", "run"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "version = 1\nname = \"x\"\nensemble = -3\n").unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap(), "run"]);
    assert_eq!(code(&out), 2);

    let cfg = dir.path().join("neg.toml");
    fs::write(&cfg, SMALL_RUN.replace("w = 2.0", "w = -1.0")).unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap(), "run"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unwritable_out_dir_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let out = run(&["--out-dir", blocker.join("sub").to_str().unwrap(), "gaussian-theory"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gaussian_theory_writes_scientific_floats() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--config", config("gaussian_theory.toml").to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap(), "gaussian-theory"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "csv"))
        .expect("a csv is written");
    let text = fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    let width = lines.next().unwrap().split(',').count();
    let mut rows = 0;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), width);
        for cell in cells {
            let v: f64 = cell.parse().unwrap();
            if cell.contains('.') {
                assert_eq!(cell, format!("{v:.16e}"), "float cell {cell}");
            }
        }
        rows += 1;
    }
    assert!(rows > 0);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "--config",
        config("sweep_repetitions.toml").to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
        "sweep",
        "--param",
        "repetitions",
        "--values",
        "1,2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let aggregate = fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    assert_eq!(aggregate.lines().count(), 3);

    let out = run(&["--config", config("sweep_repetitions.toml").to_str().unwrap(), "sweep", "--param", "repetitions"]);
    assert_eq!(code(&out), 2);
}
