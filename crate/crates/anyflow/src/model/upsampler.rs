//! Implicit flow upsampling to arbitrary target resolutions.
//!
//! The target grid is split into n x n pixel patches, one query per patch.
//! Each query maps to a continuous position on the coarse grid, snaps to its
//! nearest coarse cell v* (ties round down), and a small dense network reads
//! the latent vector at v*, the query offset delta = x_q - v*, and a
//! sin/cos positional encoding of delta. It emits 9 logits per patch pixel;
//! after a softmax these mix the 3x3 coarse neighborhood of v* (edges clamp)
//! into one flow vector per output pixel, with per-axis unit rescaling.
//! Targets that n does not divide are decoded on a padded canvas and
//! center-cropped.

use anyflow_tensor::{MaskPlan, Scalar, TensorData, Var};

use super::{Ctx, ModelError};

/// Sin/cos encoding of a query offset: for each axis (x then y) and each
/// frequency k in 0..l_pe, `sin(2^k pi d)` then `cos(2^k pi d)`. Defined for
/// d in (-1, 1); 4 * l_pe values.
pub fn positional_encode(dx: f64, dy: f64, l_pe: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(4 * l_pe);
    for d in [dx, dy] {
        for k in 0..l_pe {
            let a = (1u64 << k) as f64 * std::f64::consts::PI * d;
            out.push(a.sin());
            out.push(a.cos());
        }
    }
    out
}

/// Precomputed query geometry for one (coarse, target) pair.
pub struct QueryGrid {
    pub plan: MaskPlan,
    /// Requested output extent (the plan's target may be padded above it).
    pub target: (usize, usize),
    /// Per query: raw offset (2) followed by its positional encoding.
    deltas: Vec<f64>,
    delta_width: usize,
}

impl QueryGrid {
    /// `coarse` is the latent extent `(H8, W8)`; `target` must be at least as
    /// large in both axes.
    pub fn build(
        coarse: (usize, usize),
        target: (usize, usize),
        patch: usize,
        l_pe: usize,
    ) -> Result<Self, ModelError> {
        let (h8, w8) = coarse;
        let (th, tw) = target;
        if th < h8 || tw < w8 || th == 0 || tw == 0 {
            return Err(ModelError::TargetTooSmall { th, tw, h8, w8 });
        }
        let hp = th.div_ceil(patch) * patch;
        let wp = tw.div_ceil(patch) * patch;
        let (qh, qw) = (hp / patch, wp / patch);
        // Query centers spread the coarse extent over the padded canvas.
        let sx = w8 as f64 / qw as f64;
        let sy = h8 as f64 / qh as f64;
        let mut cells = Vec::with_capacity(qh * qw);
        let mut deltas = Vec::with_capacity(qh * qw * (2 + 4 * l_pe));
        for qy in 0..qh {
            let ty = (qy as f64 + 0.5) * sy - 0.5;
            let vy = (ty - 0.5).ceil().clamp(0.0, h8 as f64 - 1.0);
            for qx in 0..qw {
                let tx = (qx as f64 + 0.5) * sx - 0.5;
                let vx = (tx - 0.5).ceil().clamp(0.0, w8 as f64 - 1.0);
                cells.push((vy as usize, vx as usize));
                let (dx, dy) = (tx - vx, ty - vy);
                deltas.push(dx);
                deltas.push(dy);
                deltas.extend(positional_encode(dx, dy, l_pe));
            }
        }
        let plan = MaskPlan {
            cells,
            n: patch,
            coarse,
            target: (hp, wp),
            // Value scaling follows the canvas pixel density; the crop below
            // keeps pixel size, so this is exact for divisible targets and
            // consistent for padded ones.
            scale: (wp as f64 / w8 as f64, hp as f64 / h8 as f64),
        };
        Ok(QueryGrid { plan, target, deltas, delta_width: 2 + 4 * l_pe })
    }

    pub fn padded(&self) -> (usize, usize) {
        self.plan.target
    }

    /// Offset-and-encoding rows tiled for a batch of `n` samples.
    fn delta_table<T: Scalar>(&self, n: usize) -> TensorData<T> {
        let q = self.plan.queries();
        let w = self.delta_width;
        TensorData::from_fn(vec![n * q, w], |i| T::from_f64(self.deltas[i % (q * w)]))
    }
}

/// Softmaxed mask weights for every query of the grid: `(N*Q*n^2) x 9` rows
/// that are convex (nonnegative, sum 1).
pub fn query_masks<T: Scalar>(
    ctx: &Ctx<T>,
    latent: Var,
    grid: &QueryGrid,
) -> Result<Var, ModelError> {
    let t = ctx.tape;
    let s = t.shape(latent);
    if s.len() != 4 || (s[2], s[3]) != grid.plan.coarse {
        return Err(ModelError::BadImages(format!(
            "latent {s:?} does not match the {:?} coarse grid",
            grid.plan.coarse
        )));
    }
    let n = s[0];
    let w8 = grid.plan.coarse.1;
    let flat: Vec<usize> = grid.plan.cells.iter().map(|&(y, x)| y * w8 + x).collect();
    let z = t.gather_cells(latent, &flat)?;
    let d = t.constant(grid.delta_table::<T>(n));
    let x = t.concat(&[z, d], 1)?;
    let h1 = t.relu(ctx.linear(x, &ctx.ids.up[0])?);
    let h2 = t.relu(ctx.linear(h1, &ctx.ids.up[1])?);
    let logits = ctx.linear(h2, &ctx.ids.up[2])?;
    let patch2 = ctx.cfg.patch * ctx.cfg.patch;
    let rows = t.reshape(logits, vec![n * grid.plan.queries() * patch2, 9])?;
    Ok(t.softmax(rows, 1)?)
}

/// Decodes a coarse flow field at the grid's target resolution.
pub fn upsample_flow_with<T: Scalar>(
    ctx: &Ctx<T>,
    flow: Var,
    latent: Var,
    grid: &QueryGrid,
) -> Result<Var, ModelError> {
    let masks = query_masks(ctx, latent, grid)?;
    let up = ctx.tape.mask_combine(flow, masks, &grid.plan)?;
    let (th, tw) = grid.target;
    if grid.padded() == (th, tw) {
        Ok(up)
    } else {
        Ok(ctx.tape.crop_spatial(up, th, tw)?)
    }
}

/// Convenience wrapper that builds the query grid on the fly.
pub fn upsample_flow<T: Scalar>(
    ctx: &Ctx<T>,
    flow: Var,
    latent: Var,
    target: (usize, usize),
) -> Result<Var, ModelError> {
    let s = ctx.tape.shape(flow);
    let grid = QueryGrid::build((s[2], s[3]), target, ctx.cfg.patch, ctx.cfg.l_pe)?;
    upsample_flow_with(ctx, flow, latent, &grid)
}
