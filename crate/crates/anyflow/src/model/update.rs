//! Recurrent refinement: motion encoding, multi-scale warped-feature fusion,
//! the conv GRU step, and the full forward pass.
//!
//! Each iteration treats the incoming flow as a constant (detached) when
//! computing lookups, warps and motion features, but the accumulation
//! `f_i = f_{i-1} + delta_f_i` itself stays differentiable, as does the
//! radius accumulation. Upsampled flows used only for warping are detached
//! too; gradients reach the upsampler through the per-iteration predictions.

use anyflow_tensor::{Scalar, TensorData, Var};

use crate::config::LookupMode;

use super::corr::{build_corr_pyramid, initial_radius, lookup, update_radius, CorrPyramid};
use super::encoder::{encode_context, encode_features, FeaturePyramid};
use super::upsampler::{upsample_flow_with, QueryGrid};
use super::{Ctx, ModelError};

/// Motion features from the correlation lookup and the current flow:
/// `motion_out - 2` learned channels with the raw flow appended.
pub fn motion_features<T: Scalar>(
    ctx: &Ctx<T>,
    corr_feat: Var,
    flow: Var,
) -> Result<Var, ModelError> {
    let t = ctx.tape;
    let c = t.relu(ctx.conv(corr_feat, &ctx.ids.mot_corr1, 1, 0)?);
    let c = t.relu(ctx.conv(c, &ctx.ids.mot_corr2, 1, 1)?);
    let f = t.relu(ctx.conv(flow, &ctx.ids.mot_flow1, 1, 1)?);
    let f = t.relu(ctx.conv(f, &ctx.ids.mot_flow2, 1, 1)?);
    let m = t.relu(ctx.conv(t.concat(&[c, f], 1)?, &ctx.ids.mot_out, 1, 1)?);
    Ok(t.concat(&[m, flow], 1)?)
}

/// Warped features and their fusion into a 1/8-resolution map.
pub struct FuseOut {
    pub fused: Var,
    /// Frame-2 features warped by the upsampled flow (exposed for tests).
    pub warped_half: Var,
    pub warped_quarter: Var,
}

/// Decodes the coarse flow to 1/2 resolution (detached), halves it again for
/// the 1/4 level, inverse-warps the frame-2 features at both scales, and
/// packs both comparisons back to 1/8 via 1x1 convs and space-to-depth.
pub fn multiscale_warp_fuse<T: Scalar>(
    ctx: &Ctx<T>,
    pyr1: &FeaturePyramid,
    pyr2: &FeaturePyramid,
    flow: Var,
    latent: Var,
    half_grid: &QueryGrid,
) -> Result<FuseOut, ModelError> {
    let t = ctx.tape;
    let flow_half = t.detach(upsample_flow_with(ctx, flow, latent, half_grid)?);
    let flow_quarter = t.scale(t.avg_pool2d(flow_half)?, T::from_f64(0.5));
    let warped_half = t.warp(pyr2.half, flow_half)?;
    let warped_quarter = t.warp(pyr2.quarter, flow_quarter)?;
    let a = t.relu(ctx.conv(t.concat(&[pyr1.half, warped_half], 1)?, &ctx.ids.fuse_half, 1, 0)?);
    let a = t.pixel_unshuffle(a, 4)?;
    let b = t.relu(ctx.conv(
        t.concat(&[pyr1.quarter, warped_quarter], 1)?,
        &ctx.ids.fuse_quarter,
        1,
        0,
    )?);
    let b = t.pixel_unshuffle(b, 2)?;
    let fused = t.relu(ctx.conv(t.concat(&[a, b], 1)?, &ctx.ids.fuse_out, 1, 0)?);
    Ok(FuseOut { fused, warped_half, warped_quarter })
}

pub struct StepOut {
    pub hidden: Var,
    pub delta_flow: Var,
    pub delta_radius: Var,
}

/// One GRU update consuming context, correlation, fused warp features and the
/// motion-encoded current flow. Flow and radius deltas come from separate
/// two-layer conv heads.
pub fn gru_step<T: Scalar>(
    ctx: &Ctx<T>,
    hidden: Var,
    context: Var,
    corr_feat: Var,
    fused: Var,
    flow: Var,
) -> Result<StepOut, ModelError> {
    let t = ctx.tape;
    let motion = motion_features(ctx, corr_feat, flow)?;
    let x = t.concat(&[context, motion, fused], 1)?;
    let hx = t.concat(&[hidden, x], 1)?;
    let z = t.sigmoid(ctx.conv(hx, &ctx.ids.gru_z, 1, 1)?);
    let r = t.sigmoid(ctx.conv(hx, &ctx.ids.gru_r, 1, 1)?);
    let rh = t.mul(r, hidden)?;
    let q = t.tanh(ctx.conv(t.concat(&[rh, x], 1)?, &ctx.ids.gru_q, 1, 1)?);
    let new_hidden = t.add(t.mul(t.one_minus(z), hidden)?, t.mul(z, q)?)?;
    let df = ctx.conv(t.relu(ctx.conv(new_hidden, &ctx.ids.flow1, 1, 1)?), &ctx.ids.flow2, 1, 1)?;
    let dr = ctx.conv(t.relu(ctx.conv(new_hidden, &ctx.ids.rad1, 1, 1)?), &ctx.ids.rad2, 1, 1)?;
    Ok(StepOut { hidden: new_hidden, delta_flow: df, delta_radius: dr })
}

pub struct ForwardOut {
    /// Flow decoded at the target resolution: one entry per iteration when
    /// `upsample_all`, otherwise just the final iteration.
    pub preds: Vec<Var>,
    /// Coarse (1/8) flow after each iteration.
    pub coarse: Vec<Var>,
    /// Radius field after each iteration.
    pub radii: Vec<Var>,
    pub hidden: Var,
}

/// Runs the full model on a batched frame pair.
pub fn forward<T: Scalar>(
    ctx: &Ctx<T>,
    img1: Var,
    img2: Var,
    iters: usize,
    target: (usize, usize),
    upsample_all: bool,
) -> Result<ForwardOut, ModelError> {
    let t = ctx.tape;
    let cfg = ctx.cfg;
    if iters == 0 {
        return Err(ModelError::BadImages("need at least one refinement iteration".into()));
    }
    if t.shape(img1) != t.shape(img2) {
        return Err(ModelError::BadImages(format!(
            "frame shapes differ: {:?} vs {:?}",
            t.shape(img1),
            t.shape(img2)
        )));
    }
    let pyr1 = encode_features(ctx, img1)?;
    let pyr2 = encode_features(ctx, img2)?;
    let corr: CorrPyramid = build_corr_pyramid(t, pyr1.eighth, pyr2.eighth, cfg.levels)?;
    let (mut hidden, context) = encode_context(ctx, img1)?;
    let (n, h8, w8) = (corr.batch, corr.h8, corr.w8);

    let target_grid = QueryGrid::build((h8, w8), target, cfg.patch, cfg.l_pe)?;
    let half_grid = QueryGrid::build((h8, w8), (4 * h8, 4 * w8), cfg.patch, cfg.l_pe)?;

    let mut flow = t.constant(TensorData::zeros(vec![n, 2, h8, w8]));
    let mut radius = initial_radius(t, n, h8, w8, cfg.r0);
    let dynamic = matches!(cfg.mode, LookupMode::Dynamic | LookupMode::Region);

    let mut out = ForwardOut { preds: Vec::new(), coarse: Vec::new(), radii: Vec::new(), hidden };
    for i in 0..iters {
        let fd = t.detach(flow);
        let corr_feat = lookup(ctx, &corr, fd, dynamic.then_some(radius), cfg.mode)?;
        let fuse = multiscale_warp_fuse(ctx, &pyr1, &pyr2, fd, hidden, &half_grid)?;
        let step = gru_step(ctx, hidden, context, corr_feat, fuse.fused, fd)?;
        hidden = step.hidden;
        flow = t.add(flow, step.delta_flow)?;
        if dynamic {
            radius = update_radius(ctx, radius, step.delta_radius)?;
        }
        out.coarse.push(flow);
        out.radii.push(radius);
        if upsample_all || i + 1 == iters {
            out.preds.push(upsample_flow_with(ctx, flow, hidden, &target_grid)?);
        }
    }
    out.hidden = hidden;
    Ok(out)
}
