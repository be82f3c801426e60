//! Model assembly: parameter registry, initialization, and the full forward
//! pass shared by training, inference, and 64-bit verification.

pub mod corr;
pub mod encoder;
pub mod update;
pub mod upsampler;

use anyflow_tensor::{
    load_checkpoint_into, save_checkpoint, CheckpointError, ParamId, ParamStore, Result as TResult,
    Scalar, Tape, TensorData, TensorError, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::config::ModelConfig;
use crate::flow::FlowField;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(
        "input {h}x{w} is not divisible by 8; pad {pad_h} rows and {pad_w} columns (reflect padding works well) and crop the output"
    )]
    Indivisible { h: usize, w: usize, pad_h: usize, pad_w: usize },
    #[error("target {th}x{tw} is smaller than the {h8}x{w8} coarse grid; cannot decode below latent resolution")]
    TargetTooSmall { th: usize, tw: usize, h8: usize, w8: usize },
    #[error("bad input images: {0}")]
    BadImages(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Weight and bias of one convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvP {
    pub w: ParamId,
    pub b: ParamId,
}

/// Weight and bias of one dense layer.
#[derive(Debug, Clone, Copy)]
pub struct LinP {
    pub w: ParamId,
    pub b: ParamId,
}

/// Every parameter of the model, grouped by role. Field order mirrors
/// registration order, which fixes checkpoint layout.
#[derive(Debug, Clone)]
pub struct ParamIds {
    /// Feature encoder: two 3x3 convs per stride-2 stage, three stages.
    pub fenc: [ConvP; 6],
    /// Context encoder: same topology, separate weights.
    pub cenc: [ConvP; 6],
    /// 1x1 heads on the context features: initial hidden state (tanh) and
    /// context (relu).
    pub ctx_hidden: ConvP,
    pub ctx_context: ConvP,
    /// Motion encoder.
    pub mot_corr1: ConvP,
    pub mot_corr2: ConvP,
    pub mot_flow1: ConvP,
    pub mot_flow2: ConvP,
    pub mot_out: ConvP,
    /// Multi-scale warp fusion.
    pub fuse_half: ConvP,
    pub fuse_quarter: ConvP,
    pub fuse_out: ConvP,
    /// Conv GRU gates.
    pub gru_z: ConvP,
    pub gru_r: ConvP,
    pub gru_q: ConvP,
    /// Flow delta head.
    pub flow1: ConvP,
    pub flow2: ConvP,
    /// Radius delta head; the final layer starts at zero so the lookup grid
    /// begins exactly at the base radius.
    pub rad1: ConvP,
    pub rad2: ConvP,
    /// Coordinate network decoding upsampling masks.
    pub up: [LinP; 3],
    /// Region summary network (9 patch samples + radius -> 1 value).
    pub reg: [LinP; 3],
}

/// Per-tape parameter bindings, indexed by [`ParamId`]. For training these
/// are `requires_grad` leaves; for verification they can be any vars supplied
/// by a finite-difference harness, in registration order.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Binding { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }
}

/// Binds every parameter of a store onto a tape as gradient leaves.
pub fn bind_store<T: Scalar>(tape: &Tape<T>, store: &ParamStore<T>) -> Binding {
    Binding { vars: store.ids().map(|id| tape.bind_param(store, id)).collect() }
}

/// Forward-pass context: configuration, parameter handles, tape, bindings.
pub struct Ctx<'a, T: Scalar> {
    pub cfg: &'a ModelConfig,
    pub ids: &'a ParamIds,
    pub tape: &'a Tape<T>,
    pub bind: &'a Binding,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn conv(&self, x: Var, p: &ConvP, stride: usize, pad: usize) -> TResult<Var> {
        self.tape.conv2d(x, self.bind.var(p.w), Some(self.bind.var(p.b)), stride, pad)
    }

    pub fn linear(&self, x: Var, p: &LinP) -> TResult<Var> {
        self.tape.linear(x, self.bind.var(p.w), Some(self.bind.var(p.b)))
    }
}

struct Init {
    store: ParamStore<f32>,
    rng: ChaCha8Rng,
}

impl Init {
    /// Uniform(-b, b) with b = sqrt(1 / fan_in); biases start at zero.
    fn conv(&mut self, name: &str, o: usize, c: usize, k: usize) -> ConvP {
        let bound = (1.0 / (c * k * k) as f64).sqrt();
        let data: Vec<f32> =
            (0..o * c * k * k).map(|_| self.rng.gen_range(-bound..bound) as f32).collect();
        ConvP {
            w: self.store.add(format!("{name}.w"), TensorData::new(vec![o, c, k, k], data).unwrap()),
            b: self.store.add(format!("{name}.b"), TensorData::zeros(vec![o])),
        }
    }

    fn conv_zero(&mut self, name: &str, o: usize, c: usize, k: usize) -> ConvP {
        ConvP {
            w: self.store.add(format!("{name}.w"), TensorData::zeros(vec![o, c, k, k])),
            b: self.store.add(format!("{name}.b"), TensorData::zeros(vec![o])),
        }
    }

    fn linear(&mut self, name: &str, o: usize, i: usize) -> LinP {
        let bound = (1.0 / i as f64).sqrt();
        let data: Vec<f32> = (0..o * i).map(|_| self.rng.gen_range(-bound..bound) as f32).collect();
        LinP {
            w: self.store.add(format!("{name}.w"), TensorData::new(vec![o, i], data).unwrap()),
            b: self.store.add(format!("{name}.b"), TensorData::zeros(vec![o])),
        }
    }
}

pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore<f32>,
    pub ids: ParamIds,
}

impl Model {
    pub fn init(cfg: ModelConfig, seed: u64) -> Self {
        let mut b = Init { store: ParamStore::new(), rng: ChaCha8Rng::seed_from_u64(seed) };
        let [c2, c4, c8] = cfg.feat_channels;

        let enc = |b: &mut Init, tag: &str| {
            [
                b.conv(&format!("{tag}.s1.c1"), c2, 3, 3),
                b.conv(&format!("{tag}.s1.c2"), c2, c2, 3),
                b.conv(&format!("{tag}.s2.c1"), c4, c2, 3),
                b.conv(&format!("{tag}.s2.c2"), c4, c4, 3),
                b.conv(&format!("{tag}.s3.c1"), c8, c4, 3),
                b.conv(&format!("{tag}.s3.c2"), c8, c8, 3),
            ]
        };
        let fenc = enc(&mut b, "fenc");
        let cenc = enc(&mut b, "cenc");
        let ctx_hidden = b.conv("ctx.hidden", cfg.hidden, c8, 1);
        let ctx_context = b.conv("ctx.context", cfg.context, c8, 1);

        let mot_corr1 = b.conv("motion.corr1", cfg.motion_corr1, cfg.corr_channels(), 1);
        let mot_corr2 = b.conv("motion.corr2", cfg.motion_corr2, cfg.motion_corr1, 3);
        let mot_flow1 = b.conv("motion.flow1", cfg.motion_flow1, 2, 3);
        let mot_flow2 = b.conv("motion.flow2", cfg.motion_flow2, cfg.motion_flow1, 3);
        let mot_out = b.conv(
            "motion.out",
            cfg.motion_out - 2,
            cfg.motion_corr2 + cfg.motion_flow2,
            3,
        );

        let fuse_half = b.conv("fuse.half", cfg.fuse_half, 2 * c2, 1);
        let fuse_quarter = b.conv("fuse.quarter", cfg.fuse_quarter, 2 * c4, 1);
        let fuse_out =
            b.conv("fuse.out", cfg.fuse_out, 16 * cfg.fuse_half + 4 * cfg.fuse_quarter, 1);

        let gin = cfg.hidden + cfg.gru_input();
        let gru_z = b.conv("gru.z", cfg.hidden, gin, 3);
        let gru_r = b.conv("gru.r", cfg.hidden, gin, 3);
        let gru_q = b.conv("gru.q", cfg.hidden, gin, 3);

        let flow1 = b.conv("head.flow1", cfg.flow_mid, cfg.hidden, 3);
        // Both delta heads start at zero: the first forward pass predicts an
        // exactly-zero flow everywhere and a lookup grid at the base radius,
        // so early training descends from the clean static baseline instead
        // of fighting random per-iteration deltas.
        let flow2 = b.conv_zero("head.flow2", 2, cfg.flow_mid, 3);
        let rad1 = b.conv("head.rad1", cfg.rad_mid, cfg.hidden, 3);
        let rad2 = b.conv_zero("head.rad2", 1, cfg.rad_mid, 3);

        let w = cfg.upsampler_width;
        let up = [
            b.linear("up.l1", w, cfg.upsampler_input()),
            b.linear("up.l2", w, w),
            b.linear("up.l3", 9 * cfg.patch * cfg.patch, w),
        ];
        let rw = cfg.region_width;
        let reg = [
            b.linear("region.l1", rw, 10),
            b.linear("region.l2", rw, rw),
            b.linear("region.l3", 1, rw),
        ];

        let ids = ParamIds {
            fenc,
            cenc,
            ctx_hidden,
            ctx_context,
            mot_corr1,
            mot_corr2,
            mot_flow1,
            mot_flow2,
            mot_out,
            fuse_half,
            fuse_quarter,
            fuse_out,
            gru_z,
            gru_r,
            gru_q,
            flow1,
            flow2,
            rad1,
            rad2,
            up,
            reg,
        };
        Model { cfg, store: b.store, ids }
    }

    pub fn param_count(&self) -> usize {
        self.store.total_elements()
    }

    pub fn bind(&self, tape: &Tape<f32>) -> Binding {
        bind_store(tape, &self.store)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        save_checkpoint(path, &self.store)
    }

    /// Initializes the architecture, then overwrites every parameter from the
    /// checkpoint; names and shapes must match exactly.
    pub fn load(cfg: ModelConfig, path: &Path) -> Result<Self, ModelError> {
        let mut m = Model::init(cfg, 0);
        load_checkpoint_into(path, &mut m.store)?;
        Ok(m)
    }

    /// Convenience inference on one f32 image pair (`[3, H, W]` or
    /// `[N, 3, H, W]`), decoded at `target`. Returns one flow per sample plus
    /// the mean final lookup radius.
    pub fn infer(
        &self,
        img1: &TensorData<f32>,
        img2: &TensorData<f32>,
        iters: usize,
        target: (usize, usize),
    ) -> Result<(Vec<FlowField>, f64), ModelError> {
        if img1.shape() != img2.shape() {
            return Err(ModelError::BadImages(format!(
                "frame shapes differ: {:?} vs {:?}",
                img1.shape(),
                img2.shape()
            )));
        }
        let batched = |t: &TensorData<f32>| -> Result<TensorData<f32>, ModelError> {
            let s = t.shape().to_vec();
            match s.len() {
                4 if s[1] == 3 => Ok(t.clone()),
                3 if s[0] == 3 => Ok(TensorData::new(
                    vec![1, 3, s[1], s[2]],
                    t.to_vec(),
                )
                .expect("same element count")),
                _ => Err(ModelError::BadImages(format!("expected RGB [N,3,H,W] or [3,H,W], got {s:?}"))),
            }
        };
        let (i1, i2) = (batched(img1)?, batched(img2)?);
        let tape: Tape<f32> = Tape::no_grad();
        let bind = self.bind(&tape);
        let ctx = Ctx { cfg: &self.cfg, ids: &self.ids, tape: &tape, bind: &bind };
        let out = update::forward(
            &ctx,
            tape.constant(i1),
            tape.constant(i2),
            iters,
            target,
            false,
        )?;
        let pred = tape.value(*out.preds.last().expect("at least one iteration"));
        let n = pred.shape()[0];
        let flows = (0..n)
            .map(|i| FlowField::from_tensor(&pred, i).expect("forward output is N x 2 x H x W"))
            .collect();
        let radius = tape.value(*out.radii.last().expect("at least one iteration"));
        let mean_radius =
            radius.iter().map(|&r| r as f64).sum::<f64>() / radius.numel() as f64;
        Ok((flows, mean_radius))
    }
}

/// Errors unless both spatial extents divide by 8; reports the padding that
/// would fix it.
pub fn check_dims(h: usize, w: usize) -> Result<(), ModelError> {
    if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
        return Err(ModelError::Indivisible {
            h,
            w,
            pad_h: (8 - h % 8) % 8,
            pad_w: (8 - w % 8) % 8,
        });
    }
    Ok(())
}
