//! Toy training on synthetic pairs.
//!
//! Augmentation downsamples the input frames (dims snapped to multiples of 8)
//! while ground truth and the supervised predictions stay at the original
//! resolution, exercising the arbitrary-scale decoder during training. The
//! loss is an exponentially weighted sum of per-iteration L1 errors.

use std::time::Instant;

use anyflow_tensor::{Scalar, Tape, TensorData, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::TrainConfig;
use crate::model::update::forward;
use crate::model::{Ctx, Model, ModelError};
use crate::synth::{synth_pair, MotionKind, SyntheticSample};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss {loss} at step {step}; aborting the run")]
    NonFinite { step: usize, loss: f64 },
    #[error("gamma {0} must lie in (0, 1]")]
    BadGamma(f64),
    #[error("no prediction to supervise")]
    NoPredictions,
    #[error("validity mask selects no pixels")]
    EmptyMask,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Per-iteration loss weights `(gamma^(N-1), ..., gamma^0)`: later
/// iterations count more.
pub fn loss_weights(iters: usize, gamma: f64) -> Vec<f64> {
    (0..iters).map(|i| gamma.powi((iters - 1 - i) as i32)).collect()
}

/// Exponentially weighted L1 over all iterations' predictions, each compared
/// to ground truth at the original resolution. Per-iteration terms are means
/// over valid elements, so with one iteration and an all-true mask this is
/// exactly the plain mean-L1.
pub fn sequence_loss<T: Scalar>(
    tape: &Tape<T>,
    preds: &[Var],
    gt: &TensorData<T>,
    valid: &[bool],
    gamma: f64,
) -> Result<Var, TrainError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(TrainError::BadGamma(gamma));
    }
    if preds.is_empty() {
        return Err(TrainError::NoPredictions);
    }
    let s = gt.shape().to_vec();
    let (n, hw) = (s[0], s[2] * s[3]);
    assert_eq!(valid.len(), n * hw, "one validity flag per ground-truth pixel");
    let total = 2 * valid.iter().filter(|&&v| v).count();
    if total == 0 {
        return Err(TrainError::EmptyMask);
    }
    let inv = 1.0 / total as f64;
    let weights = TensorData::from_fn(s, |i| {
        // Element index within N x 2 x H x W; both components share the flag.
        let pix = i % hw;
        let sample = i / (2 * hw);
        if valid[sample * hw + pix] {
            T::from_f64(inv)
        } else {
            T::zero()
        }
    });
    let gt_var = tape.constant(gt.clone());
    let mut loss = None;
    for (pred, w) in preds.iter().zip(loss_weights(preds.len(), gamma)) {
        let term = tape.scale(tape.weighted_l1_loss(*pred, gt_var, &weights)?, T::from_f64(w));
        loss = Some(match loss {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(loss.expect("non-empty preds"))
}

/// AdamW with decoupled weight decay; state is aligned with parameter
/// registration order.
pub struct AdamW {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(model: &Model, weight_decay: f64) -> Self {
        let sizes: Vec<usize> = model.store.ids().map(|id| model.store.get(id).numel()).collect();
        AdamW {
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &[Vec<f32>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = model.store.ids().collect();
        for (pi, id) in ids.into_iter().enumerate() {
            let old = model.store.get(id);
            let shape = old.shape().to_vec();
            let mut data = old.to_vec();
            let (m, v) = (&mut self.m[pi], &mut self.v[pi]);
            for (j, x) in data.iter_mut().enumerate() {
                let g = grads[pi][j] as f64;
                let mj = self.beta1 * m[j] as f64 + (1.0 - self.beta1) * g;
                let vj = self.beta2 * v[j] as f64 + (1.0 - self.beta2) * g * g;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let update = (mj / bc1) / ((vj / bc2).sqrt() + self.eps);
                *x = (*x as f64 - lr * update - lr * self.weight_decay * *x as f64) as f32;
            }
            model.store.set(id, TensorData::new(shape, data).unwrap()).expect("shape unchanged");
        }
    }
}

/// 30% linear warmup to the peak, then cosine decay to zero.
pub fn one_cycle_lr(step: usize, total: usize, peak: f64) -> f64 {
    let t = (step as f64 + 1.0) / total.max(1) as f64;
    const WARM: f64 = 0.3;
    if t <= WARM {
        peak * t / WARM
    } else {
        let p = ((t - WARM) / (1.0 - WARM)).min(1.0);
        peak * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

/// Scales gradients in place so their global norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f32>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&g| g as f64 * g as f64)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = (max_norm / norm) as f32;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }
    norm
}

/// Snaps to the nearest multiple of 8, at least 8.
fn round8(v: f64) -> usize {
    (((v / 8.0).round() as usize) * 8).max(8)
}

/// With probability `p`, bilinearly downsamples both frames by independent
/// per-axis factors from `[lo, hi]`; returns the (possibly original) frames
/// and the input size actually used.
pub fn multi_scale_augment(
    rng: &mut impl Rng,
    img1: &TensorData<f32>,
    img2: &TensorData<f32>,
    p: f64,
    lo: f64,
    hi: f64,
) -> (TensorData<f32>, TensorData<f32>, (usize, usize)) {
    let s = img1.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    if p > 0.0 && rng.gen_bool(p.min(1.0)) {
        let sh = rng.gen_range(lo..=hi);
        let sw = rng.gen_range(lo..=hi);
        let (nh, nw) = (round8(h as f64 * sh).min(h), round8(w as f64 * sw).min(w));
        if (nh, nw) != (h, w) {
            return (
                crate::resize::resize_image(img1, nh, nw),
                crate::resize::resize_image(img2, nh, nw),
                (nh, nw),
            );
        }
    }
    (img1.clone(), img2.clone(), (h, w))
}

/// Stacks per-sample frames and ground truth into batched tensors.
pub fn stack_batch(
    samples: &[SyntheticSample],
) -> (TensorData<f32>, TensorData<f32>, TensorData<f32>, Vec<bool>) {
    let n = samples.len();
    let (h, w) = (samples[0].height, samples[0].width);
    let chw = 3 * h * w;
    let mut i1 = Vec::with_capacity(n * chw);
    let mut i2 = Vec::with_capacity(n * chw);
    let mut gt = Vec::with_capacity(n * 2 * h * w);
    let mut valid = Vec::with_capacity(n * h * w);
    for s in samples {
        assert_eq!((s.height, s.width), (h, w), "mixed sample sizes in one batch");
        i1.extend_from_slice(s.img1.as_slice());
        i2.extend_from_slice(s.img2.as_slice());
        gt.extend_from_slice(s.gt.u());
        gt.extend_from_slice(s.gt.v());
        valid.extend_from_slice(&s.valid);
    }
    (
        TensorData::new(vec![n, 3, h, w], i1).unwrap(),
        TensorData::new(vec![n, 3, h, w], i2).unwrap(),
        TensorData::new(vec![n, 2, h, w], gt).unwrap(),
        valid,
    )
}

/// One line of training telemetry (serialized as JSONL by the CLI). Wall
/// time is console-only: the written log must be byte-identical across runs
/// with the same seed.
#[derive(Debug, Clone, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub epe: f64,
    pub lr: f64,
    pub mean_radius: f64,
    #[serde(skip)]
    pub wall_ms: f64,
}

fn batch_epe(pred: &TensorData<f32>, gt: &TensorData<f32>, valid: &[bool]) -> f64 {
    let s = gt.shape();
    let (n, hw) = (s[0], s[2] * s[3]);
    let (p, g) = (pred.as_slice(), gt.as_slice());
    let mut sum = 0.0;
    let mut count = 0usize;
    for b in 0..n {
        let at = b * 2 * hw;
        for i in 0..hw {
            if valid[b * hw + i] {
                let du = (p[at + i] - g[at + i]) as f64;
                let dv = (p[at + hw + i] - g[at + hw + i]) as f64;
                sum += du.hypot(dv);
                count += 1;
            }
        }
    }
    sum / count.max(1) as f64
}

/// Trains in place, invoking `on_step` after every optimizer update. The
/// sample stream, augmentation and init are all driven by `cfg.seed`.
pub fn train_loop(
    model: &mut Model,
    cfg: &TrainConfig,
    kinds: &[MotionKind],
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<Vec<StepMetrics>, TrainError> {
    if !(cfg.gamma > 0.0 && cfg.gamma <= 1.0) {
        return Err(TrainError::BadGamma(cfg.gamma));
    }
    assert!(!kinds.is_empty(), "need at least one motion kind");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(model, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let t0 = Instant::now();
        let samples: Vec<SyntheticSample> = (0..cfg.batch)
            .map(|_| {
                let kind = kinds[rng.gen_range(0..kinds.len())];
                synth_pair(&mut rng, kind, cfg.height, cfg.width, cfg.max_disp)
            })
            .collect();
        let (i1, i2, gt, valid) = stack_batch(&samples);
        let (a1, a2, _input_dims) =
            multi_scale_augment(&mut rng, &i1, &i2, cfg.p_downsample, cfg.scale_lo, cfg.scale_hi);

        let tape: Tape<f32> = Tape::new();
        let bind = model.bind(&tape);
        let ctx = Ctx { cfg: &model.cfg, ids: &model.ids, tape: &tape, bind: &bind };
        let out = forward(
            &ctx,
            tape.constant(a1),
            tape.constant(a2),
            cfg.iters,
            (cfg.height, cfg.width),
            true,
        )?;
        let loss = sequence_loss(&tape, &out.preds, &gt, &valid, cfg.gamma)?;
        let loss_val = tape.value(loss).as_slice()[0] as f64;
        if !loss_val.is_finite() {
            return Err(TrainError::NonFinite { step, loss: loss_val });
        }
        tape.backward(loss)?;

        let mut grads: Vec<Vec<f32>> = model
            .store
            .ids()
            .map(|id| {
                tape.leaf_grad(bind.var(id))
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; model.store.get(id).numel()])
            })
            .collect();
        let pred = tape.value(*out.preds.last().expect("iters >= 1"));
        let radius = tape.value(*out.radii.last().expect("iters >= 1"));
        drop(tape);

        clip_global_norm(&mut grads, cfg.clip_norm);
        let lr = one_cycle_lr(step, cfg.steps, cfg.lr_peak);
        opt.step(model, &grads, lr);

        let metrics = StepMetrics {
            step,
            loss: loss_val,
            epe: batch_epe(&pred, &gt, &valid),
            lr,
            mean_radius: radius.iter().map(|&r| r as f64).sum::<f64>() / radius.numel() as f64,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        };
        on_step(&metrics);
        history.push(metrics);
    }
    Ok(history)
}

/// Fixed held-out samples drawn from their own seed stream.
pub fn make_eval_set(
    seed: u64,
    n: usize,
    kinds: &[MotionKind],
    h: usize,
    w: usize,
    max_disp: f64,
) -> Vec<SyntheticSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| synth_pair(&mut rng, kinds[i % kinds.len()], h, w, max_disp))
        .collect()
}

/// Mean native-resolution EPE over a sample set.
pub fn evaluate(model: &Model, samples: &[SyntheticSample], iters: usize) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    for s in samples {
        let (flows, _) = model.infer(&s.img1, &s.img2, iters, (s.height, s.width))?;
        sum += crate::metrics::epe(&flows[0], &s.gt, &s.valid).expect("synthetic masks are non-empty");
    }
    Ok(sum / samples.len() as f64)
}
