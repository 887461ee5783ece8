use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arvdm")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let c = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(c).unwrap().parse().unwrap()).collect()
}

#[test]
fn validate_exit_codes() {
    let ok = run(&["validate", fixture("fifo-w4.ladder").to_str().unwrap()]);
    assert_eq!(code(&ok), 0);
    let bad = run(&["validate", fixture("broken-monotone.ladder").to_str().unwrap()]);
    assert_eq!(code(&bad), 1);
    let stdout = String::from_utf8(bad.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("MONOTONICITY ")));
    assert_eq!(code(&run(&["validate", "/nonexistent/path.ladder"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("garbage.ladder");
    std::fs::write(&garbage, "w = [").unwrap();
    assert_eq!(code(&run(&["validate", garbage.to_str().unwrap()])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn decompose_full_past_has_no_bottleneck() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["decompose", "--config", fixture("desk.toml").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mb = csv_column(&dir.path().join("decompose.csv"), "mb_total");
    assert!(mb[0].abs() <= 1e-9);
    let json = std::fs::read_to_string(dir.path().join("decompose.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(value[0]["report"]["mb"].as_array().unwrap().len(), 3);
}

#[test]
fn decompose_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let o = run(&["decompose", "--config", fixture("sweep-m.toml").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let kl = csv_column(&out.join("decompose.csv"), "measured_joint_kl");
    assert_eq!(kl.len(), 5);
    assert!(kl.windows(2).all(|p| p[1] < p[0]), "{kl:?}");

    let out = dir.path().join("w");
    let o = run(&["decompose", "--config", fixture("sweep-window.toml").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let mb = csv_column(&out.join("decompose.csv"), "mb_total");
    assert!(mb[0] > 0.0);
    assert!(mb.windows(2).all(|p| p[1] <= p[0] + 1e-9), "{mb:?}");
}

#[test]
fn decompose_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model]\nrho = 1.5\n[ladder]\nkind = \"fifo\"\nw = 2\nhorizon = 4\n").unwrap();
    assert_eq!(code(&run(&["decompose", "--config", bad.to_str().unwrap(), "--out", out])), 1);
    std::fs::write(&bad, "[ladder]\nkind = \"spiral\"\n").unwrap();
    assert_eq!(code(&run(&["decompose", "--config", bad.to_str().unwrap(), "--out", out])), 2);
    assert_eq!(code(&run(&["decompose", "--config", "/nonexistent.toml", "--out", out])), 2);
}

#[test]
fn lowerbound_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["lowerbound", "--config", fixture("lowerbound.toml").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("lowerbound.json")).unwrap()).unwrap();
    assert!(json["minimax"]["fraction"].as_f64().unwrap() >= 0.99);
    let one = dir.path().join("one.toml");
    std::fs::write(&one, "seed = 1\n[lowerbound]\ns = 1.0\nn = 1000\ntrials = 10\n").unwrap();
    let o = run(&["lowerbound", "--config", one.to_str().unwrap(), "--out", dir.path().join("one").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().contains("eps=0.0000000000000000e0"));
    std::fs::write(&one, "seed = 1\n[lowerbound]\ns = 1.5\n").unwrap();
    assert_eq!(code(&run(&["lowerbound", "--config", one.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])), 1);
    std::fs::write(&one, "[lowerbound]\ns = 0.5\n").unwrap();
    assert_eq!(code(&run(&["lowerbound", "--config", one.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])), 1);
}

#[test]
fn plot_golden_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["plot", fixture("sweep.csv").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let svg = std::fs::read(dir.path().join("sweep.svg")).unwrap();
    assert_eq!(svg, std::fs::read(fixture("sweep.golden.svg")).unwrap());
    assert_eq!(String::from_utf8(svg).unwrap().matches("<polyline").count(), 3);
    assert_eq!(code(&run(&["plot", fixture("empty.csv").to_str().unwrap(), "--out", dir.path().to_str().unwrap()])), 2);
    let ragged = dir.path().join("ragged.csv");
    std::fs::write(&ragged, "a,b\n1,2\n3\n").unwrap();
    assert_eq!(code(&run(&["plot", ragged.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])), 2);
}

#[test]
fn sample_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let cfg = fixture("sample.toml");
    assert_eq!(code(&run(&["sample", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()])), 0);
    assert_eq!(code(&run(&["sample", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--threads", "2"])), 0);
    assert_eq!(code(&run(&["sample", "--config", cfg.to_str().unwrap(), "--out", c.to_str().unwrap(), "--seed", "12"])), 0);
    let read = |p: &Path| std::fs::read(p.join("samples.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    let text = String::from_utf8(read(&a)).unwrap();
    assert_eq!(text.lines().count(), 201);
    assert!(text.starts_with("y1,y2,y3,y4,y5,y6\n"));
}
