mod common;

use std::path::Path;
use std::process::{Command, Output};

use spcn::image_io::{open_slide, read_all};
use spcn::profile::parse_profile;
use spcn::synthetic::{demo_source, demo_target, SyntheticSlide};

use common::*;

fn spcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spcn"))
        .args(args)
        .env_remove("SPCN_WORKERS")
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fit_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("slide.tif");
    demo_source(384).write_to(&input).unwrap();
    let first = spcn(&["fit", s(&input)]);
    let second = spcn(&["fit", s(&input)]);
    assert_eq!(first.status.code(), Some(0));
    assert_eq!(first.stdout, second.stdout);
    let params = parse_profile(std::str::from_utf8(&first.stdout).unwrap()).unwrap();
    for c in params.basis.columns() {
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(c.iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn normalize_to_own_profile_is_near_identity() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("slide.png");
    let profile = dir.path().join("slide.profile");
    let out = dir.path().join("out.png");
    let slide = SyntheticSlide::new(320, 320, 4).with_eosin_trace(0.0);
    slide.write_to(&input).unwrap();
    assert_eq!(spcn(&["fit", s(&input), "--profile", s(&profile)]).status.code(), Some(0));
    let run = spcn(&["normalize", s(&input), "--target", s(&profile), "--out", s(&out)]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8(run.stdout).unwrap().trim(), s(&out));
    let a = read_all(&*open_slide(&input).unwrap(), 64).unwrap();
    let b = read_all(&*open_slide(&out).unwrap(), 64).unwrap();
    assert!(max_deviation(&a, &b) <= 1);
}

#[test]
fn batch_normalizes_every_file_and_keeps_stdout_clean() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = dir.path().join("in");
    let outputs = dir.path().join("out");
    std::fs::create_dir(&inputs).unwrap();
    let target = dir.path().join("target.png");
    demo_target(256).write_to(&target).unwrap();
    for (i, name) in ["a.png", "b.tif", "c.tiff"].iter().enumerate() {
        SyntheticSlide::new(256, 256, 40 + i as u64).write_to(inputs.join(name)).unwrap();
    }
    let run = spcn(&["batch", s(&inputs), "--target", s(&target), "--out", s(&outputs), "-v"]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| Path::new(l).is_file()));
    for name in ["a_normalized.png", "b_normalized.tif", "c_normalized.tif"] {
        assert!(outputs.join(name).is_file(), "{name}");
    }
    let stderr = String::from_utf8(run.stderr).unwrap();
    assert!(stderr.contains("3 of 3 files normalized"));
    assert!(stderr.contains("INFO"), "verbose logging goes to stderr");
}

#[test]
fn bench_prints_csv() {
    let run = spcn(&["bench", "--sizes", "256,384", "--target-pixels", "5000"]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("edge,stage,seconds,pixels,patches"));
    assert_eq!(lines.count(), 10);
    assert!(String::from_utf8(run.stderr).unwrap().contains("ratio"));
}

#[test]
fn demo_writes_its_files_and_stage_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("demo");
    let csv = dir.path().join("stats.csv");
    let run = spcn(&["demo", "--out", s(&out), "--size", "256", "--stats-csv", s(&csv)]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 4);
    assert!(stdout.lines().all(|l| Path::new(l).is_file()));
    let csv = std::fs::read_to_string(csv).unwrap();
    assert!(csv.starts_with("stage,seconds,pixels,patches\n"));
    for stage in ["sampling", "basis_fit", "stain_stats", "transform", "total"] {
        assert!(csv.lines().any(|l| l.starts_with(&format!("{stage},"))), "{stage}");
    }
}

#[test]
fn worker_count_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("slide.png");
    demo_source(256).write_to(&input).unwrap();
    let bad = Command::new(env!("CARGO_BIN_EXE_spcn"))
        .args(["fit", s(&input)])
        .env("SPCN_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    let flag_wins = Command::new(env!("CARGO_BIN_EXE_spcn"))
        .args(["fit", s(&input), "--workers", "2"])
        .env("SPCN_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(flag_wins.status.code(), Some(0));
}

#[test]
fn missing_input_exits_2() {
    let run = spcn(&["fit", "/nonexistent/slide.png"]);
    assert_eq!(run.status.code(), Some(2));
    assert!(run.stdout.is_empty());
}
