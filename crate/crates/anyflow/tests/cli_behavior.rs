//! End-to-end checks of the command-line surface: exit codes, flag
//! validation order, seeded reproducibility, and output artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use anyflow::flo::read_flo;
use anyflow_tensor::TensorData;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_anyflow"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// One tiny shared training run; several tests only need *a* checkpoint.
fn shared_ckpt() -> &'static Path {
    static CKPT: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    let (_, path) = CKPT.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let o = run(&[
            "train-toy",
            "--steps",
            "2",
            "--batch",
            "1",
            "--iters",
            "2",
            "--seed",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
        let ckpt = out.join("model.afck");
        assert!(ckpt.exists());
        (dir, ckpt)
    });
    path
}

/// Writes a deterministic RGB test image.
fn write_png(path: &Path, h: u32, w: u32, seed: u32) {
    let img = image::RgbImage::from_fn(w, h, |x, y| {
        let v = x.wrapping_mul(31).wrapping_add(y.wrapping_mul(17)).wrapping_add(seed);
        image::Rgb([(v % 251) as u8, (v % 127) as u8, (v % 63) as u8])
    });
    img.save(path).unwrap();
}

#[test]
fn gamma_outside_unit_interval_is_a_usage_error_before_any_io() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = run(&["train-toy", "--gamma", "1.5", "--steps", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));
    assert!(!out.exists(), "output dir must not be created on a usage error");
}

#[test]
fn bad_probability_and_zero_steps_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = run(&["train-toy", "--p-downsample", "1.2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let o = run(&["train-toy", "--steps", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_motion_kind_is_a_usage_error_before_any_io() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = run(&["train-toy", "--kinds", "translate,sideways", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("sideways"));
    assert!(!out.exists(), "output dir must not be created on a usage error");
    let o = run(&["train-toy", "--kinds", ",", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_gradcheck_op_and_wild_eps_are_usage_errors() {
    let o = run(&["gradcheck", "--op", "definitely_not_an_op"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("definitely_not_an_op"));
    let o = run(&["gradcheck", "--op", "relu", "--eps", "0.5"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn single_op_gradcheck_passes_and_prints_a_row() {
    let o = run(&["gradcheck", "--op", "relu"]);
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("relu") && stdout.contains("pass"), "{stdout}");
}

#[test]
fn identical_seeds_give_byte_identical_metric_logs() {
    let dir = tempfile::tempdir().unwrap();
    let mut logs = Vec::new();
    for (i, seed) in [(0, "11"), (1, "11"), (2, "12")] {
        let out = dir.path().join(format!("run{i}"));
        let o = run(&[
            "train-toy",
            "--steps",
            "4",
            "--batch",
            "1",
            "--iters",
            "2",
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
        logs.push(std::fs::read(out.join("metrics.jsonl")).unwrap());
    }
    assert_eq!(logs[0], logs[1], "same seed, same bytes");
    assert_ne!(logs[0], logs[2], "different seed must diverge");
}

#[test]
fn the_seed_env_var_replaces_the_default() {
    let dir = tempfile::tempdir().unwrap();
    let out_env = dir.path().join("env");
    let o = bin()
        .args(["train-toy", "--steps", "3", "--batch", "1", "--iters", "2", "--out"])
        .arg(&out_env)
        .env("ANYFLOW_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);

    let out_flag = dir.path().join("flag");
    let o = run(&[
        "train-toy",
        "--steps",
        "3",
        "--batch",
        "1",
        "--iters",
        "2",
        "--seed",
        "11",
        "--out",
        out_flag.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        std::fs::read(out_env.join("metrics.jsonl")).unwrap(),
        std::fs::read(out_flag.join("metrics.jsonl")).unwrap()
    );
}

#[test]
fn infer_pads_indivisible_inputs_and_scales_output_dims() {
    let dir = tempfile::tempdir().unwrap();
    let (i1, i2) = (dir.path().join("a.png"), dir.path().join("b.png"));
    // 50x70 is not divisible by 8: exercises reflective padding + crop.
    write_png(&i1, 50, 70, 1);
    write_png(&i2, 50, 70, 2);

    let flo = dir.path().join("out.flo");
    let png = dir.path().join("out.png");
    let o = bin()
        .args(["infer", "--iters", "2", "--scale", "1.0"])
        .args(["--ckpt"])
        .arg(shared_ckpt())
        .args(["--img1"])
        .arg(&i1)
        .args(["--img2"])
        .arg(&i2)
        .args(["--out"])
        .arg(&flo)
        .args(["--png"])
        .arg(&png)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    let f = read_flo(&flo).unwrap();
    assert_eq!((f.height(), f.width()), (50, 70));
    assert!(png.exists());

    let o = bin()
        .args(["infer", "--iters", "2", "--scale", "2.0"])
        .args(["--ckpt"])
        .arg(shared_ckpt())
        .args(["--img1"])
        .arg(&i1)
        .args(["--img2"])
        .arg(&i2)
        .args(["--out"])
        .arg(&flo)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let f = read_flo(&flo).unwrap();
    assert_eq!((f.height(), f.width()), (100, 140));
}

#[test]
fn infer_rejects_mismatched_frames_and_reports_missing_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (i1, i2) = (dir.path().join("a.png"), dir.path().join("b.png"));
    write_png(&i1, 32, 48, 1);
    write_png(&i2, 32, 40, 2);
    let flo = dir.path().join("out.flo");

    let o = bin()
        .args(["infer", "--iters", "2"])
        .args(["--ckpt"])
        .arg(shared_ckpt())
        .args(["--img1"])
        .arg(&i1)
        .args(["--img2"])
        .arg(&i2)
        .args(["--out"])
        .arg(&flo)
        .output()
        .unwrap();
    assert_eq!(code(&o), 2, "mismatched sizes are a usage error");

    let o = bin()
        .args(["infer", "--iters", "2", "--ckpt", "/nonexistent/model.afck"])
        .args(["--img1"])
        .arg(&i1)
        .args(["--img2"])
        .arg(&i1)
        .args(["--out"])
        .arg(&flo)
        .output()
        .unwrap();
    assert_eq!(code(&o), 3, "a missing checkpoint fails at run time");

    let o = run(&["infer", "--scale", "0", "--ckpt", "x", "--img1", "a", "--img2", "b", "--out", "c"]);
    assert_eq!(code(&o), 2, "scale 0 is rejected before any file access");
}

#[test]
fn bench_downsample_prints_one_row_per_scale() {
    let o = bin()
        .args([
            "bench-downsample",
            "--n-samples",
            "1",
            "--scales",
            "1.0,0.5",
            "--iters",
            "2",
            "--height",
            "32",
            "--width",
            "48",
        ])
        .args(["--ckpt"])
        .arg(shared_ckpt())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("scale"), "{stdout}");
    assert!(stdout.contains(" 1.00") && stdout.contains(" 0.50"), "{stdout}");
    assert_eq!(stdout.lines().count(), 3, "header plus one row per scale:\n{stdout}");

    let o = run(&["bench-downsample", "--scales", "1.5", "--ckpt", "x"]);
    assert_eq!(code(&o), 2, "scales above 1 are rejected before loading anything");
}

#[test]
fn upsample_flow_writes_side_by_side_images_for_each_scale() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("viz");
    let o = bin()
        .args(["upsample-flow", "--scales", "1,2", "--iters", "2", "--seed", "9"])
        .args(["--ckpt"])
        .arg(shared_ckpt())
        .args(["--out-dir"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    for name in ["x1_implicit.png", "x1_bicubic.png", "x2_implicit.png", "x2_bicubic.png"] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    // At scale 1 the implicit path and the interpolated baseline are the same
    // field, so the renders must agree byte for byte.
    assert_eq!(
        std::fs::read(out.join("x1_implicit.png")).unwrap(),
        std::fs::read(out.join("x1_bicubic.png")).unwrap()
    );
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("/"), "synthetic pairs report epe pairs: {stdout}");

    let o = run(&["upsample-flow", "--baseline", "nearest", "--ckpt", "x", "--out-dir", "y"]);
    assert_eq!(code(&o), 2);
    let o = run(&["upsample-flow", "--scales", "0.5", "--ckpt", "x", "--out-dir", "y"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn trained_checkpoints_round_trip_through_the_cli_formats() {
    // The shared checkpoint must reload and run: guards the save path the
    // other tests depend on.
    let m = anyflow::Model::load(anyflow::ModelConfig::desk(), shared_ckpt()).unwrap();
    let img = TensorData::from_fn(vec![3, 16, 24], |i| (i % 7) as f32 * 0.1);
    let (flows, _) = m.infer(&img, &img, 1, (16, 24)).unwrap();
    assert_eq!((flows[0].height(), flows[0].width()), (16, 24));
}
