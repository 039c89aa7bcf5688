//! End-to-end tests of the `stem` binary: pipelines across subcommands,
//! config/flag precedence, error reporting, and rerun determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn stem(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stem"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn stem binary")
}

fn stem_ok(dir: &Path, args: &[&str]) -> Output {
    let out = stem(dir, args);
    assert!(
        out.status.success(),
        "stem {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

#[test]
fn gen_then_em_recovers_cluster_means() {
    let dir = tempfile::tempdir().unwrap();
    stem_ok(
        dir.path(),
        &["gen", "--kind", "clusters", "--centers", "2", "--points", "32", "--channels", "4",
          "--sigma", "0.05", "--out", "g", "--seed", "7"],
    );
    stem_ok(
        dir.path(),
        &["em", "--input", "g/data.stem", "--k", "2", "--tau", "0.05", "--iters", "3",
          "--out", "e", "--seed", "7"],
    );
    let data = stem_cli::read_tensor(&dir.path().join("g/data.stem")).unwrap();
    let bases = stem_cli::read_tensor(&dir.path().join("e/bases.stem")).unwrap();
    assert_eq!(bases.dims, vec![2, 4]);
    // Each cluster mean must be approximated by some basis.
    for cluster in 0..2 {
        let mut mean = [0f64; 4];
        for p in 0..32 {
            for ch in 0..4 {
                mean[ch] += data.data[(cluster * 32 + p) * 4 + ch] as f64 / 32.0;
            }
        }
        let close = (0..2).any(|b| {
            (0..4).all(|ch| (bases.data[b * 4 + ch] as f64 - mean[ch]).abs() < 0.05)
        });
        assert!(close, "no basis within 0.05 of cluster {cluster} mean {mean:?}");
    }
    let summary = read_json(dir.path().join("e/em_summary.json"));
    assert_eq!(summary["k"], 2);
    assert_eq!(summary["basis_shifts"].as_array().unwrap().len(), 3);
}

#[test]
fn em_zero_iterations_keeps_initialization() {
    let dir = tempfile::tempdir().unwrap();
    stem_ok(
        dir.path(),
        &["gen", "--kind", "clusters", "--centers", "3", "--points", "10", "--channels", "4",
          "--out", "g"],
    );
    stem_ok(dir.path(), &["em", "--input", "g/data.stem", "--k", "3", "--iters", "0", "--out", "e"]);
    let summary = read_json(dir.path().join("e/em_summary.json"));
    assert!(summary["basis_shifts"].as_array().unwrap().is_empty());
    // Initialization samples pixels, so every basis is some input row.
    let data = stem_cli::read_tensor(&dir.path().join("g/data.stem")).unwrap();
    let bases = stem_cli::read_tensor(&dir.path().join("e/bases.stem")).unwrap();
    for b in 0..3 {
        let row = &bases.data[b * 4..(b + 1) * 4];
        let found = data.data.chunks_exact(4).any(|r| r == row);
        assert!(found, "basis {b} is not an input row");
    }
}

#[test]
fn invert_with_zero_predictor_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    stem_ok(
        dir.path(),
        &["gen", "--kind", "perturbed_video", "--frames", "2", "--height", "12", "--width", "12",
          "--channels", "3", "--sigma", "0.1", "--out", "g"],
    );
    let cfg = dir.path().join("zero.cfg");
    std::fs::write(&cfg, "predictor = zero\nsteps = 50\n").unwrap();
    stem_ok(
        dir.path(),
        &["invert", "--input", "g/data.stem", "--config", "zero.cfg", "--out", "i",
          "--save-trajectory"],
    );
    let summary = read_json(dir.path().join("i/invert_summary.json"));
    assert_eq!(summary["mean_psnr"].as_f64().unwrap(), 99.0, "sentinel for zero MSE");
    let csv = std::fs::read_to_string(dir.path().join("i/invert_metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "frame,psnr,ssim");
    for line in lines {
        let psnr: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(psnr, 99.0);
    }
    let traj = stem_cli::read_tensor(&dir.path().join("i/trajectory.stem")).unwrap();
    assert_eq!(traj.dims, vec![51, 2, 12, 12, 3]);
}

#[test]
fn metrics_on_identical_videos_and_matching_flow() {
    let dir = tempfile::tempdir().unwrap();
    stem_ok(
        dir.path(),
        &["gen", "--kind", "moving_blob", "--frames", "4", "--height", "16", "--width", "16",
          "--channels", "1", "--out", "g"],
    );
    stem_ok(
        dir.path(),
        &["metrics", "--input", "g/data.stem", "--reference", "g/data.stem",
          "--flow", "g/flow.stem", "--out", "m"],
    );
    let summary = read_json(dir.path().join("m/metrics_summary.json"));
    assert_eq!(summary["mean_psnr"].as_f64().unwrap(), 99.0);
    assert!((summary["mean_ssim"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    // The flow matches the blob's motion, so warp error is near zero.
    assert!(summary["mean_warp_error"].as_f64().unwrap() < 1e-4);
}

#[test]
fn metrics_missing_flow_is_a_config_error_with_no_output() {
    let dir = tempfile::tempdir().unwrap();
    stem_ok(
        dir.path(),
        &["gen", "--kind", "perturbed_video", "--frames", "2", "--height", "12", "--width", "12",
          "--channels", "1", "--out", "g"],
    );
    let out = stem(
        dir.path(),
        &["metrics", "--input", "g/data.stem", "--reference", "g/data.stem",
          "--flow", "g/missing.stem", "--out", "m"],
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error: config:"), "stderr: {stderr}");
    assert_eq!(stderr.lines().count(), 1, "single-line diagnostic");
    assert!(!dir.path().join("m/metrics.csv").exists(), "no partial output");
}

#[test]
fn corrupted_tensor_reports_named_error_code() {
    let dir = tempfile::tempdir().unwrap();
    stem_ok(
        dir.path(),
        &["gen", "--kind", "clusters", "--centers", "2", "--points", "4", "--channels", "2",
          "--out", "g"],
    );
    let path = dir.path().join("g/data.stem");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, bytes).unwrap();
    let out = stem(dir.path(), &["em", "--input", "g/data.stem", "--k", "2", "--out", "e"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: bad-magic:"));
}

#[test]
fn stem_threads_env_is_a_fallback_for_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    stem_ok(
        dir.path(),
        &["gen", "--kind", "clusters", "--centers", "2", "--points", "8", "--channels", "2",
          "--out", "g"],
    );
    let from_env = Command::new(env!("CARGO_BIN_EXE_stem"))
        .current_dir(dir.path())
        .env("STEM_THREADS", "4")
        .args(["em", "--input", "g/data.stem", "--k", "2", "--out", "e1"])
        .output()
        .unwrap();
    assert!(from_env.status.success());
    assert_eq!(read_json(dir.path().join("e1/em_summary.json"))["threads"], 4);
    let flag_wins = Command::new(env!("CARGO_BIN_EXE_stem"))
        .current_dir(dir.path())
        .env("STEM_THREADS", "4")
        .args(["em", "--input", "g/data.stem", "--k", "2", "--threads", "2", "--out", "e2"])
        .output()
        .unwrap();
    assert!(flag_wins.status.success());
    assert_eq!(read_json(dir.path().join("e2/em_summary.json"))["threads"], 2);
}

#[test]
fn sweep_k_deduplicates_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    stem_ok(
        dir.path(),
        &["gen", "--kind", "perturbed_video", "--frames", "2", "--height", "12", "--width", "12",
          "--channels", "2", "--sigma", "0.1", "--out", "g"],
    );
    let out = stem_ok(
        dir.path(),
        &["sweep-k", "--input", "g/data.stem", "--k", "4,8,4", "--steps", "5",
          "--out", "s"],
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate K=4"));
    let csv = std::fs::read_to_string(dir.path().join("s/sweep_k.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "header plus two deduplicated rows");
}

#[test]
fn bench_flops_match_library_and_k_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    stem_ok(
        dir.path(),
        &["bench", "--frames", "2", "--height", "8", "--width", "8", "--channels", "8",
          "--head-dim", "8", "--k", "4,8", "--iters", "2", "--no-timing", "--out", "b"],
    );
    let csv = std::fs::read_to_string(dir.path().join("b/bench.csv")).unwrap();
    let mut stem_rows = Vec::new();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let variant = stem_core::AttentionVariant::parse(cols[0]).unwrap();
        let k: usize = cols[1].parse().unwrap();
        let r: usize = cols[7].parse().unwrap();
        let total: u64 = cols[11].parse().unwrap();
        let expected = stem_core::count_flops(variant, 2, 8, 8, 8, 8, k, r).unwrap();
        assert_eq!(total, expected.total(), "row {line}");
        assert_eq!(cols[12], "0.00000000e0", "timing disabled");
        if variant == stem_core::AttentionVariant::Stem {
            stem_rows.push((k, total));
        }
    }
    assert_eq!(stem_rows.len(), 2);
    assert!(stem_rows[0].1 < stem_rows[1].1, "fewer flops at smaller K");
}

#[test]
fn reruns_are_byte_identical_without_timing() {
    let dir = tempfile::tempdir().unwrap();
    let run_all = |tag: &str| {
        stem_ok(
            dir.path(),
            &["gen", "--kind", "perturbed_video", "--frames", "2", "--height", "12",
              "--width", "12", "--channels", "2", "--sigma", "0.1", "--seed", "5",
              "--out", &format!("{tag}/g")],
        );
        stem_ok(
            dir.path(),
            &["em", "--input", &format!("{tag}/g/data.stem"), "--k", "4", "--seed", "5",
              "--threads", "1", "--no-timing", "--out", &format!("{tag}/e")],
        );
        stem_ok(
            dir.path(),
            &["invert", "--input", &format!("{tag}/g/data.stem"), "--k", "4", "--steps", "5",
              "--seed", "5", "--threads", "1", "--no-timing", "--out", &format!("{tag}/i")],
        );
    };
    run_all("a");
    run_all("b");
    for rel in [
        "g/data.stem",
        "e/bases.stem",
        "e/responsibilities.stem",
        "e/em_summary.json",
        "i/z_final.stem",
        "i/recon.stem",
        "i/invert_metrics.csv",
        "i/invert_summary.json",
    ] {
        let a = std::fs::read(dir.path().join("a").join(rel)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(rel)).unwrap();
        assert_eq!(a, b, "rerun differs for {rel}");
    }
}

#[test]
fn config_file_applies_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    stem_ok(
        dir.path(),
        &["gen", "--kind", "clusters", "--centers", "2", "--points", "8", "--channels", "2",
          "--out", "g"],
    );
    std::fs::write(dir.path().join("exp.cfg"), "k = 3\ntau = 0.1\nseed = 9\n").unwrap();
    stem_ok(
        dir.path(),
        &["em", "--input", "g/data.stem", "--config", "exp.cfg", "--tau", "0.2", "--out", "e"],
    );
    let summary = read_json(dir.path().join("e/em_summary.json"));
    assert_eq!(summary["k"], 3);
    assert_eq!(summary["seed"], 9);
    assert!((summary["tau"].as_f64().unwrap() - 0.2).abs() < 1e-6, "flag beats file");
}
