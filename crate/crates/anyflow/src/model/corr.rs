//! All-pairs correlation pyramid and the three lookup strategies.
//!
//! The volume holds normalized inner products between every pair of 1/8-res
//! feature vectors, reshaped so the match dimension becomes a spatial map per
//! source pixel; coarser levels are 2x2 average pools of it. A lookup samples
//! each level bilinearly on a square grid of `(2*r0+1)^2` points centered at
//! the current match estimate `(x + f) / 2^l`:
//!
//! - fixed: unit grid spacing at every level;
//! - dynamic: spacing `r/r0` from a learned per-pixel radius `r`, so at
//!   `r = r0` the two modes coincide bit for bit (`r0/r0` is exactly 1);
//! - region: dynamic spacing, but each point expands into a 3x3 auxiliary
//!   patch at half the primary spacing whose 9 samples (plus `r`) a small
//!   dense network folds back into one value, leaving channel counts equal.

use anyflow_tensor::{Scalar, Tape, TensorData, Var};

use crate::config::LookupMode;

use super::{Ctx, ModelError};

/// Correlation pyramid; level `l` is rank-4 `(N*H8*W8) x 1 x (H8/2^l) x (W8/2^l)`
/// (extents saturate at 1).
pub struct CorrPyramid {
    pub levels: Vec<Var>,
    pub batch: usize,
    pub h8: usize,
    pub w8: usize,
}

/// Inner products of all feature pairs scaled by `1/sqrt(D)`, then pooled.
pub fn build_corr_pyramid<T: Scalar>(
    tape: &Tape<T>,
    f1: Var,
    f2: Var,
    levels: usize,
) -> Result<CorrPyramid, ModelError> {
    let s = tape.shape(f1);
    if s.len() != 4 {
        return Err(ModelError::BadImages(format!("matching features must be rank 4, got {s:?}")));
    }
    let (n, h8, w8) = (s[0], s[2], s[3]);
    let corr = tape.allpairs_correlation(f1, f2)?;
    let mut level = tape.reshape(corr, vec![n * h8 * w8, 1, h8, w8])?;
    let mut out = Vec::with_capacity(levels);
    out.push(level);
    for _ in 1..levels {
        level = tape.avg_pool2d(level)?;
        out.push(level);
    }
    Ok(CorrPyramid { levels: out, batch: n, h8, w8 })
}

/// Integer offsets of the square lookup grid, y-major, `(2r0+1)^2` entries of
/// `[dx, dy]`.
pub fn square_offsets(r0: usize) -> Vec<[f64; 2]> {
    let r = r0 as i64;
    let mut offs = Vec::with_capacity((2 * r0 + 1) * (2 * r0 + 1));
    for dy in -r..=r {
        for dx in -r..=r {
            offs.push([dx as f64, dy as f64]);
        }
    }
    offs
}

/// Region-encoded table: each primary offset expands into its 3x3 auxiliary
/// patch at half spacing. Primary-major, auxiliary y-major inside, so rows of
/// the sampled values regroup into consecutive 9-blocks per primary point.
pub fn region_offsets(r0: usize) -> Vec<[f64; 2]> {
    let primary = square_offsets(r0);
    let mut offs = Vec::with_capacity(primary.len() * 9);
    for p in &primary {
        for ay in -1..=1i64 {
            for ax in -1..=1i64 {
                offs.push([p[0] + ax as f64 / 2.0, p[1] + ay as f64 / 2.0]);
            }
        }
    }
    offs
}

/// Constant initial radius field (`r0` everywhere), `N x 1 x H8 x W8`.
pub fn initial_radius<T: Scalar>(tape: &Tape<T>, batch: usize, h8: usize, w8: usize, r0: usize) -> Var {
    tape.constant(TensorData::full(vec![batch, 1, h8, w8], T::from_f64(r0 as f64)))
}

/// Accumulates a radius delta and clamps into the legal range.
pub fn update_radius<T: Scalar>(ctx: &Ctx<T>, radius: Var, delta: Var) -> Result<Var, ModelError> {
    let sum = ctx.tape.add(radius, delta)?;
    Ok(ctx.tape.clamp(sum, T::from_f64(ctx.cfg.r_min), T::from_f64(ctx.cfg.r_max)))
}

/// Gathers correlation features around the current flow estimate.
/// `radius` is required for the dynamic and region modes and ignored for
/// fixed. Output is `N x (levels * (2r0+1)^2) x H8 x W8`.
pub fn lookup<T: Scalar>(
    ctx: &Ctx<T>,
    pyr: &CorrPyramid,
    flow: Var,
    radius: Option<Var>,
    mode: LookupMode,
) -> Result<Var, ModelError> {
    let t = ctx.tape;
    let r0 = ctx.cfg.r0;
    let (n, h8, w8) = (pyr.batch, pyr.h8, pyr.w8);
    let b = n * h8 * w8;
    let k = (2 * r0 + 1) * (2 * r0 + 1);
    if matches!(mode, LookupMode::Dynamic | LookupMode::Region) && radius.is_none() {
        return Err(ModelError::BadImages(format!("{mode} lookup needs a radius field")));
    }

    let offs = match mode {
        LookupMode::Fixed | LookupMode::Dynamic => square_offsets(r0),
        LookupMode::Region => region_offsets(r0),
    };
    let radius_for_grid = match mode {
        LookupMode::Fixed => None,
        _ => radius,
    };

    let mut per_level = Vec::with_capacity(pyr.levels.len());
    for (l, &level) in pyr.levels.iter().enumerate() {
        let ls = t.shape(level);
        let (hl, wl) = (ls[2], ls[3]);
        let center_scale = 0.5f64.powi(l as i32);
        let coords = t.lookup_grid(flow, radius_for_grid, &offs, center_scale, r0 as f64)?;
        let planes = t.reshape(level, vec![b, hl, wl])?;
        let mut vals = t.grid_sample_planes(planes, coords)?; // B x K or B x 9K
        if mode == LookupMode::Region {
            let r = radius.expect("checked above");
            let patches = t.reshape(vals, vec![b * k, 9])?;
            let r_rows = t.repeat_rows(t.reshape(r, vec![b, 1])?, k)?;
            let g_in = t.concat(&[patches, r_rows], 1)?;
            let g1 = t.relu(ctx.linear(g_in, &ctx.ids.reg[0])?);
            let g2 = t.relu(ctx.linear(g1, &ctx.ids.reg[1])?);
            let g3 = ctx.linear(g2, &ctx.ids.reg[2])?;
            vals = t.reshape(g3, vec![b, k])?;
        }
        // (N*HW) x K -> N x K x H8 x W8 so points become channels.
        let grouped = t.reshape(vals, vec![n, h8 * w8, k])?;
        per_level.push(t.reshape(t.transpose_last2(grouped)?, vec![n, k, h8, w8])?);
    }
    Ok(t.concat(&per_level, 1)?)
}
