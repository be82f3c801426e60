//! Command-line surface: toy training, arbitrary-scale inference, the
//! downsample robustness benchmark, upsampler-vs-interpolation comparison,
//! and finite-difference verification.
//!
//! Exit codes: 0 success, 2 usage error, 3 numeric or I/O failure. The env
//! var `ANYFLOW_SEED` overrides the default of every `--seed` flag.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyflow_tensor::TensorData;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::color::colorize;
use crate::config::{ModelConfig, TrainConfig};
use crate::flo::write_flo;
use crate::flow::FlowField;
use crate::gradreg;
use crate::metrics;
use crate::model::Model;
use crate::resize::{resize_flow_interp, resize_image, Interp};
use crate::synth::{synth_pair, MotionField, MotionKind};
use crate::train;

fn default_seed() -> u64 {
    std::env::var("ANYFLOW_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(7)
}

#[derive(Parser)]
#[command(
    name = "anyflow",
    version,
    about = "Optical flow with implicit arbitrary-scale upsampling",
    after_help = "Exit codes: 0 ok, 2 usage error, 3 numeric/I-O failure.\n\
                  ANYFLOW_SEED overrides the default of every --seed flag."
)]
pub struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the desk-scale model on synthetic pairs and write a checkpoint
    TrainToy(TrainToyArgs),
    /// Estimate flow between two images, decoded at any scale
    Infer(InferArgs),
    /// EPE/F1 vs input downsampling, outputs restored to the original shape
    BenchDownsample(BenchArgs),
    /// Compare implicit upsampling against interpolating the base flow
    UpsampleFlow(UpsampleArgs),
    /// Finite-difference checks of the op registry and the full model
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct TrainToyArgs {
    /// Optimizer steps
    #[arg(long, default_value_t = 3000)]
    steps: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    /// Probability of downsampling the input frames each step
    #[arg(long, default_value_t = 0.5)]
    p_downsample: f64,
    /// Per-iteration loss decay, in (0, 1]
    #[arg(long, default_value_t = 0.8)]
    gamma: f64,
    #[arg(long, default_value_t = default_seed())]
    seed: u64,
    /// Output directory for model.afck and metrics.jsonl
    #[arg(long)]
    out: PathBuf,
    /// Refinement iterations per forward pass
    #[arg(long, default_value_t = 4)]
    iters: usize,
    /// Peak one-cycle learning rate
    #[arg(long, default_value_t = 4e-4)]
    lr: f64,
    /// Motion kinds to sample, comma separated
    #[arg(long, default_value = "translate,rotate")]
    kinds: String,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    img1: PathBuf,
    #[arg(long)]
    img2: PathBuf,
    #[arg(long, default_value_t = 12)]
    iters: usize,
    /// Output resolution as a fraction of the input (0.25 to 4 is practical)
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Destination .flo file
    #[arg(long)]
    out: PathBuf,
    /// Also write a colorized PNG here
    #[arg(long)]
    png: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 20)]
    n_samples: usize,
    /// Input scales to sweep, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5])]
    scales: Vec<f64>,
    #[arg(long, default_value_t = default_seed())]
    seed: u64,
    #[arg(long, default_value_t = 12)]
    iters: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 96)]
    width: usize,
    #[arg(long, default_value_t = 8.0)]
    max_disp: f64,
    /// Write the table as JSON here as well
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct UpsampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// First frame; omit both frames to use a synthetic pair with known flow
    #[arg(long, requires = "img2")]
    img1: Option<PathBuf>,
    #[arg(long, requires = "img1")]
    img2: Option<PathBuf>,
    /// Motion pattern for the synthetic pair (translate|rotate|zoom|two_layer)
    #[arg(long, default_value = "two_layer")]
    synth: String,
    #[arg(long, default_value_t = default_seed())]
    seed: u64,
    /// Upsampling factors relative to the input resolution
    #[arg(long, value_delimiter = ',', default_values_t = [2.0, 3.0])]
    scales: Vec<f64>,
    /// Interpolation baseline: bilinear|bicubic
    #[arg(long, default_value = "bicubic")]
    baseline: String,
    #[arg(long, default_value_t = 12)]
    iters: usize,
    /// Directory for side-by-side PNGs
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// "all", "pipeline", or one op name
    #[arg(long, default_value = "all")]
    op: String,
    /// Central-difference step, within [1e-7, 1e-3]
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Parameter probes for the whole-model check
    #[arg(long, default_value_t = 64)]
    probes: usize,
}

enum CliError {
    Usage(String),
    Run(String),
}

impl CliError {
    fn run(e: impl std::fmt::Display) -> Self {
        CliError::Run(e.to_string())
    }
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        // clap exits 2 on usage errors and 0 for --help/--version
        Err(e) => e.exit(),
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(CliError::Run(m)) => {
            eprintln!("error: {m}");
            3
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Command::TrainToy(a) => cmd_train_toy(a),
        Command::Infer(a) => cmd_infer(a),
        Command::BenchDownsample(a) => cmd_bench_downsample(a),
        Command::UpsampleFlow(a) => cmd_upsample_flow(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

// ---- image plumbing ----------------------------------------------------

fn load_image(path: &Path) -> Result<TensorData<f32>, CliError> {
    let img = image::open(path)
        .map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = p[c] as f32 / 255.0;
        }
    }
    Ok(TensorData::new(vec![3, h, w], data).expect("buffer sized to shape"))
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let m = i % (2 * n - 2);
    if m < n {
        m
    } else {
        2 * n - 2 - m
    }
}

/// Pads bottom/right with mirrored rows/columns so both extents divide by 8.
fn reflect_pad_to8(img: &TensorData<f32>) -> TensorData<f32> {
    let s = img.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let (hp, wp) = (h.div_ceil(8) * 8, w.div_ceil(8) * 8);
    if (hp, wp) == (h, w) {
        return img.clone();
    }
    let src = img.as_slice();
    TensorData::from_fn(vec![c, hp, wp], |i| {
        let x = reflect(i % wp, w);
        let y = reflect((i / wp) % hp, h);
        let ch = i / (hp * wp);
        src[ch * h * w + y * w + x]
    })
}

/// Keeps the top-left `h x w` window (the unpadded region).
fn crop_flow(f: &FlowField, h: usize, w: usize) -> FlowField {
    FlowField::from_fn(h, w, |x, y| {
        let (u, v) = f.get(x as usize, y as usize);
        (u as f64, v as f64)
    })
}

fn scaled_dims(h: usize, w: usize, s: f64) -> (usize, usize) {
    (((h as f64 * s).round() as usize).max(1), ((w as f64 * s).round() as usize).max(1))
}

/// Runs the model on one (possibly indivisible) image pair and returns flow
/// at `scale` times the input resolution.
fn infer_scaled(
    model: &Model,
    img1: &TensorData<f32>,
    img2: &TensorData<f32>,
    iters: usize,
    scale: f64,
) -> Result<FlowField, CliError> {
    let s = img1.shape().to_vec();
    if s != img2.shape() {
        return Err(CliError::Usage(format!(
            "image sizes differ: {:?} vs {:?}",
            &s[1..],
            &img2.shape()[1..]
        )));
    }
    let (h, w) = (s[1], s[2]);
    let (p1, p2) = (reflect_pad_to8(img1), reflect_pad_to8(img2));
    let ps = p1.shape().to_vec();
    let (hp, wp) = (ps[1], ps[2]);
    let target_padded = scaled_dims(hp, wp, scale);
    let (flows, _) = model
        .infer(&p1, &p2, iters, target_padded)
        .map_err(CliError::run)?;
    let (th, tw) = scaled_dims(h, w, scale);
    if (hp, wp) == (h, w) {
        return Ok(flows.into_iter().next().expect("one sample"));
    }
    Ok(crop_flow(&flows[0], th.min(target_padded.0), tw.min(target_padded.1)))
}

// ---- commands ----------------------------------------------------------

fn parse_kinds(spec: &str) -> Result<Vec<MotionKind>, CliError> {
    let kinds: Vec<MotionKind> = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            MotionKind::parse(s).ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown motion kind {s:?}; expected translate, rotate, zoom or two_layer"
                ))
            })
        })
        .collect::<Result<_, _>>()?;
    if kinds.is_empty() {
        return Err(CliError::Usage("--kinds must name at least one motion kind".into()));
    }
    Ok(kinds)
}

fn cmd_train_toy(a: TrainToyArgs) -> Result<(), CliError> {
    if !(a.gamma > 0.0 && a.gamma <= 1.0) {
        return Err(CliError::Usage(format!("--gamma {} outside (0, 1]", a.gamma)));
    }
    if !(0.0..=1.0).contains(&a.p_downsample) {
        return Err(CliError::Usage(format!("--p-downsample {} outside [0, 1]", a.p_downsample)));
    }
    if a.steps == 0 || a.batch == 0 || a.iters == 0 {
        return Err(CliError::Usage("--steps, --batch and --iters must be positive".into()));
    }
    let kinds = parse_kinds(&a.kinds)?;
    fs::create_dir_all(&a.out).map_err(CliError::run)?;

    let cfg = TrainConfig {
        steps: a.steps,
        batch: a.batch,
        p_downsample: a.p_downsample,
        gamma: a.gamma,
        seed: a.seed,
        iters: a.iters,
        lr_peak: a.lr,
        ..TrainConfig::default()
    };
    let mut model = Model::init(ModelConfig::desk(), a.seed);
    eprintln!(
        "training {} steps, batch {}, {} params, seed {}",
        cfg.steps,
        cfg.batch,
        model.param_count(),
        cfg.seed
    );

    let log_path = a.out.join("metrics.jsonl");
    let mut log = fs::File::create(&log_path).map_err(CliError::run)?;
    train::train_loop(&mut model, &cfg, &kinds, |m| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        writeln!(log, "{line}").expect("metrics log writable");
        if m.step % 25 == 0 || m.step + 1 == cfg.steps {
            eprintln!(
                "step {:>5}  loss {:.4}  epe {:.3}  lr {:.2e}  radius {:.2}  {:.0} ms",
                m.step, m.loss, m.epe, m.lr, m.mean_radius, m.wall_ms
            );
        }
    })
    .map_err(CliError::run)?;

    let ckpt = a.out.join("model.afck");
    model.save(&ckpt).map_err(CliError::run)?;
    eprintln!("checkpoint written to {}", ckpt.display());
    Ok(())
}

fn cmd_infer(a: InferArgs) -> Result<(), CliError> {
    if a.scale <= 0.0 || !a.scale.is_finite() {
        return Err(CliError::Usage(format!("--scale {} must be positive", a.scale)));
    }
    if a.iters == 0 {
        return Err(CliError::Usage("--iters must be positive".into()));
    }
    let model = Model::load(ModelConfig::desk(), &a.ckpt).map_err(CliError::run)?;
    let img1 = load_image(&a.img1)?;
    let img2 = load_image(&a.img2)?;
    let flow = infer_scaled(&model, &img1, &img2, a.iters, a.scale)?;
    write_flo(&a.out, &flow).map_err(CliError::run)?;
    println!(
        "{} -> {}x{} flow, mean |f| {:.3} px, wrote {}",
        a.img1.display(),
        flow.width(),
        flow.height(),
        mean_magnitude(&flow),
        a.out.display()
    );
    if let Some(png) = &a.png {
        colorize(&flow, None).save(png).map_err(CliError::run)?;
        println!("visualization written to {}", png.display());
    }
    Ok(())
}

fn mean_magnitude(f: &FlowField) -> f64 {
    let n = (f.height() * f.width()) as f64;
    f.iter_uv().map(|(u, v)| (u as f64).hypot(v as f64)).sum::<f64>() / n
}

#[derive(Serialize)]
struct BenchRow {
    scale: f64,
    input_h: usize,
    input_w: usize,
    epe: f64,
    f1_all: f64,
}

fn round8(v: f64) -> usize {
    (((v / 8.0).round() as usize) * 8).max(8)
}

fn cmd_bench_downsample(a: BenchArgs) -> Result<(), CliError> {
    if a.scales.is_empty() || a.scales.iter().any(|&s| !(0.1..=1.0).contains(&s)) {
        return Err(CliError::Usage("--scales entries must lie in [0.1, 1.0]".into()));
    }
    if a.n_samples == 0 {
        return Err(CliError::Usage("--n-samples must be positive".into()));
    }
    let model = Model::load(ModelConfig::desk(), &a.ckpt).map_err(CliError::run)?;
    let kinds = [MotionKind::Translate, MotionKind::Rotate];
    let samples = train::make_eval_set(a.seed, a.n_samples, &kinds, a.height, a.width, a.max_disp);

    let mut rows = Vec::new();
    for &scale in &a.scales {
        let (ih, iw) = (round8(a.height as f64 * scale), round8(a.width as f64 * scale));
        let (mut epe_sum, mut f1_sum) = (0.0, 0.0);
        for s in &samples {
            let (i1, i2) = if (ih, iw) == (a.height, a.width) {
                (s.img1.clone(), s.img2.clone())
            } else {
                (resize_image(&s.img1, ih, iw), resize_image(&s.img2, ih, iw))
            };
            let (flows, _) = model
                .infer(&i1, &i2, a.iters, (a.height, a.width))
                .map_err(CliError::run)?;
            epe_sum += metrics::epe(&flows[0], &s.gt, &s.valid).map_err(CliError::run)?;
            f1_sum += metrics::f1_all(&flows[0], &s.gt, &s.valid).map_err(CliError::run)?;
        }
        rows.push(BenchRow {
            scale,
            input_h: ih,
            input_w: iw,
            epe: epe_sum / samples.len() as f64,
            f1_all: f1_sum / samples.len() as f64,
        });
    }

    let base = rows.iter().find(|r| r.scale == 1.0).map(|r| r.epe);
    let mut table = String::new();
    let _ = writeln!(table, "{:>6} {:>10} {:>9} {:>9} {:>9}", "scale", "input", "epe", "f1-all", "vs 1.0");
    for r in &rows {
        let ratio = base
            .map(|b| format!("{:9.3}", r.epe / b))
            .unwrap_or_else(|| format!("{:>9}", "-"));
        let _ = writeln!(
            table,
            "{:>6.2} {:>10} {:>9.3} {:>9.3} {}",
            r.scale,
            format!("{}x{}", r.input_h, r.input_w),
            r.epe,
            r.f1_all,
            ratio
        );
    }
    print!("{table}");
    if let Some(out) = &a.out {
        let json = serde_json::to_string_pretty(&rows).expect("rows serialize");
        fs::write(out, json).map_err(CliError::run)?;
        eprintln!("report written to {}", out.display());
    }
    Ok(())
}

fn cmd_upsample_flow(a: UpsampleArgs) -> Result<(), CliError> {
    let interp = Interp::parse(&a.baseline)
        .ok_or_else(|| CliError::Usage(format!("--baseline {} (want bilinear|bicubic)", a.baseline)))?;
    if a.scales.is_empty() || a.scales.iter().any(|&s| s < 1.0 || s > 8.0) {
        return Err(CliError::Usage("--scales entries must lie in [1, 8]".into()));
    }
    let model = Model::load(ModelConfig::desk(), &a.ckpt).map_err(CliError::run)?;

    // User images, or a synthetic pair whose true flow is known at any scale.
    let (img1, img2, motion): (_, _, Option<MotionField>) = match (&a.img1, &a.img2) {
        (Some(p1), Some(p2)) => (load_image(p1)?, load_image(p2)?, None),
        _ => {
            let kind = MotionKind::parse(&a.synth)
                .ok_or_else(|| CliError::Usage(format!("--synth {} unknown", a.synth)))?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let s = synth_pair(&mut rng, kind, 64, 96, 8.0);
            (s.img1, s.img2, Some(s.motion))
        }
    };
    fs::create_dir_all(&a.out_dir).map_err(CliError::run)?;
    let dims = img1.shape().to_vec();
    let (h, w) = (dims[1], dims[2]);

    let base = infer_scaled(&model, &img1, &img2, a.iters, 1.0)?;
    println!("{:>6} {:>12} {:>12} {:>14}", "scale", "implicit", a.baseline, "epe (imp/bas)");
    for &s in &a.scales {
        let implicit = infer_scaled(&model, &img1, &img2, a.iters, s)?;
        let (th, tw) = (implicit.height(), implicit.width());
        let baseline = resize_flow_interp(&base, th, tw, interp);

        let norm = implicit.max_magnitude().max(baseline.max_magnitude());
        let tag = if (s - s.round()).abs() < 1e-9 { format!("x{}", s as i64) } else { format!("x{s}") };
        let pi = a.out_dir.join(format!("{tag}_implicit.png"));
        let pb = a.out_dir.join(format!("{tag}_{}.png", a.baseline));
        colorize(&implicit, Some(norm)).save(&pi).map_err(CliError::run)?;
        colorize(&baseline, Some(norm)).save(&pb).map_err(CliError::run)?;

        let epes = motion
            .as_ref()
            .map(|m| {
                let (gt, valid) = m.ground_truth(h, w, th, tw);
                let ei = metrics::epe(&implicit, &gt, &valid).map_err(CliError::run)?;
                let eb = metrics::epe(&baseline, &gt, &valid).map_err(CliError::run)?;
                Ok::<_, CliError>(format!("{ei:.3} / {eb:.3}"))
            })
            .transpose()?
            .unwrap_or_else(|| "n/a (no ground truth)".into());
        println!("{:>6} {:>12} {:>12} {:>14}", tag, pi.file_name().unwrap().to_string_lossy(), pb.file_name().unwrap().to_string_lossy(), epes);
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    if !(1e-7..=1e-3).contains(&a.eps) {
        return Err(CliError::Usage(format!("--eps {} outside [1e-7, 1e-3]", a.eps)));
    }
    let run_pipeline = a.op == "all" || a.op == "pipeline";
    let fixtures: Vec<_> = if a.op == "all" {
        gradreg::op_fixtures()
    } else if a.op == "pipeline" {
        Vec::new()
    } else {
        vec![gradreg::fixture_by_name(&a.op)
            .ok_or_else(|| CliError::Usage(format!("unknown op {:?}; try --op all", a.op)))?]
    };

    let mut failed = false;
    println!("{:<22} {:>12} {:>7}  status", "op", "max rel", "probes");
    for f in &fixtures {
        let report = f.run_with_eps(a.eps).map_err(CliError::run)?;
        let ok = report.passes(gradreg::OP_TOL);
        failed |= !ok;
        println!(
            "{:<22} {:>12.3e} {:>7}  {}",
            f.name,
            report.max_rel_error,
            report.probes,
            if ok { "pass" } else { "FAIL" }
        );
    }
    if run_pipeline {
        let report = gradreg::pipeline_grad_check(a.eps, a.probes).map_err(CliError::run)?;
        let ok = report.passes(gradreg::PIPELINE_TOL);
        failed |= !ok;
        println!(
            "{:<22} {:>12.3e} {:>7}  {} (tol {:.0e})",
            "full_pipeline",
            report.max_rel_error,
            report.probes,
            if ok { "pass" } else { "FAIL" },
            gradreg::PIPELINE_TOL
        );
    }
    if a.op == "all" {
        // The harness must notice a backward pass that is wrong on purpose.
        let canary = gradreg::harness_canary().map_err(CliError::run)?;
        if canary.passes(gradreg::OP_TOL) {
            failed = true;
            println!("harness canary          NOT flagged: the checker itself is broken");
        } else {
            println!("harness canary: wrong-by-design gradient flagged (max rel {:.2e})", canary.max_rel_error);
        }
    }
    if failed {
        Err(CliError::Run("gradient check failed".into()))
    } else {
        Ok(())
    }
}

