use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dfsq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfsq")).args(args).env_remove("DFSQ_THREADS").output().expect("dfsq runs")
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_in(dir: &Path, sub: &str, config: &Path, extra: &[&str]) -> Output {
    let out = dir.join("out");
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    dfsq(&args)
}

const SQUARE: &str = r#"{
  "source": {"kind": "power", "n": 1, "k": "1"},
  "function": {"name": "square"},
  "regime": "variable",
  "rates": [5, 6],
  "samples": 65536,
  "seed": 7
}"#;

#[test]
fn unknown_function_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SQUARE.replace("square", "cube"));
    let o = run_in(dir.path(), "design", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("function") && stderr(&o).contains("cube"), "{}", stderr(&o));
}

#[test]
fn schema_errors_exit_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SQUARE.replace("[5, 6]", "[5, \"six\"]"));
    let o = run_in(dir.path(), "simulate", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rates[1]"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), &SQUARE.replace("\"k\": \"1\"", "\"k\": \"-3\""));
    let o = run_in(dir.path(), "simulate", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("source"), "{}", stderr(&o));

    assert_eq!(dfsq(&["design"]).status.code(), Some(2));
}

#[test]
fn unrealizable_rate_exits_3() {
    // Half a bit at fixed rate is one cell, too few to isolate the don't-care interval.
    let dir = tempfile::tempdir().unwrap();
    let body = SQUARE.replace("square", "min_clip").replace("variable", "fixed").replace("[5, 6]", "[0.5]");
    let cfg = write_config(dir.path(), &body);
    let o = run_in(dir.path(), "simulate", &cfg, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn identical_runs_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = write_config(a.path(), SQUARE);
    for (dir, threads) in [(a.path(), "1"), (b.path(), "2")] {
        for sub in ["design", "simulate"] {
            let o = run_in(dir, sub, &cfg, &["--threads", threads]);
            assert!(o.status.success(), "{}", stderr(&o));
        }
    }
    let (fa, fb) = (outputs(&a.path().join("out")), outputs(&b.path().join("out")));
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(names, ["codebook_0.csv", "design.csv", "design_summary.csv", "distortion.csv", "rate.csv"]);
    assert_eq!(fa, fb);
    for (name, bytes) in &fa {
        assert!(!bytes.contains(&b'\r') && bytes.ends_with(b"\n"), "{name}");
    }

    let o = run_in(b.path(), "simulate", &cfg, &["--seed", "8"]);
    assert!(o.status.success());
    assert_ne!(std::fs::read(a.path().join("out/distortion.csv")).unwrap(), std::fs::read(b.path().join("out/distortion.csv")).unwrap());
}

#[test]
fn codebook_has_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SQUARE.replace("variable", "fixed"));
    assert!(run_in(dir.path(), "design", &cfg, &[]).status.success());
    let text = std::fs::read_to_string(dir.path().join("out/codebook_0.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    // Fixed rate at 6 bits: 64 cells tiling [0, 1], each codeword inside its cell.
    assert_eq!(rows.len(), 64);
    assert_eq!(rows[0][1], 0.0);
    assert_eq!(rows[63][2], 1.0);
    for w in rows.windows(2) {
        assert_eq!(w[0][2], w[1][1]);
    }
    assert!(rows.iter().all(|r| r[1] <= r[3] && r[3] <= r[2]));
}

#[test]
fn verify_passes_on_example_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = dfsq(&["verify", "--config", shipped("example1.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{text}{}", stderr(&o));
    assert!(text.lines().count() >= 9 && text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn max_sweep_follows_the_high_resolution_curve() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{
      "source": {"kind": "uniform", "n": 1},
      "function": {"name": "max"},
      "regime": "variable",
      "rates": [6],
      "samples": 65536,
      "seed": 3,
      "n_values": [1, 2, 3, 4]
    }"#;
    let cfg = write_config(dir.path(), body);
    let o = run_in(dir.path(), "sweep", &cfg, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    let mut previous = f64::INFINITY;
    for row in &rows {
        let n: f64 = row[col("n")].parse().unwrap();
        let hr: f64 = row[col("normalized_hr")].parse().unwrap();
        let emp: f64 = row[col("normalized")].parse().unwrap();
        // 12 D 2^{2R̄} for the maximum of n uniforms is n e^{-(n-1)}.
        let expected = n * (1.0 - n).exp();
        assert!((hr / expected - 1.0).abs() < 1e-9, "n = {n}: {hr} vs {expected}");
        assert!((emp / hr - 1.0).abs() < 0.15, "n = {n}: {emp} vs {hr}");
        assert!(emp < previous);
        previous = emp;
    }
}
