//! Feature and context encoders.
//!
//! Three stages, each a stride-2 conv followed by a stride-1 conv (both 3x3,
//! relu), tapped after every stage: 1/2, 1/4 and 1/8 resolution. The 1/8
//! features are the matching features for the correlation volume. The context
//! encoder shares the topology with separate weights; two 1x1 heads on its
//! output produce the initial GRU hidden state (tanh) and the context
//! features (relu).

use anyflow_tensor::{Scalar, Var};

use super::{check_dims, ConvP, Ctx, ModelError};

/// Features of one frame at 1/2, 1/4 and 1/8 resolution.
pub struct FeaturePyramid {
    pub half: Var,
    pub quarter: Var,
    pub eighth: Var,
}

fn stages<T: Scalar>(ctx: &Ctx<T>, ids: &[ConvP; 6], images: Var) -> Result<FeaturePyramid, ModelError> {
    let t = ctx.tape;
    let mut x = images;
    let mut taps = Vec::with_capacity(3);
    for s in 0..3 {
        x = t.relu(ctx.conv(x, &ids[2 * s], 2, 1)?);
        x = t.relu(ctx.conv(x, &ids[2 * s + 1], 1, 1)?);
        taps.push(x);
    }
    Ok(FeaturePyramid { half: taps[0], quarter: taps[1], eighth: taps[2] })
}

/// Encodes an `N x 3 x H x W` frame; `H` and `W` must divide by 8.
pub fn encode_features<T: Scalar>(ctx: &Ctx<T>, images: Var) -> Result<FeaturePyramid, ModelError> {
    let s = ctx.tape.shape(images);
    if s.len() != 4 || s[1] != 3 {
        return Err(ModelError::BadImages(format!("expected [N,3,H,W], got {s:?}")));
    }
    check_dims(s[2], s[3])?;
    stages(ctx, &ctx.ids.fenc, images)
}

/// Context path on frame 1: returns `(initial_hidden, context)` at 1/8
/// resolution, squashed by tanh and relu respectively.
pub fn encode_context<T: Scalar>(ctx: &Ctx<T>, images: Var) -> Result<(Var, Var), ModelError> {
    let s = ctx.tape.shape(images);
    if s.len() != 4 || s[1] != 3 {
        return Err(ModelError::BadImages(format!("expected [N,3,H,W], got {s:?}")));
    }
    check_dims(s[2], s[3])?;
    let pyr = stages(ctx, &ctx.ids.cenc, images)?;
    let hidden = ctx.tape.tanh(ctx.conv(pyr.eighth, &ctx.ids.ctx_hidden, 1, 0)?);
    let context = ctx.tape.relu(ctx.conv(pyr.eighth, &ctx.ids.ctx_context, 1, 0)?);
    Ok((hidden, context))
}
