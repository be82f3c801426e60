//! Independent reference implementations shared by the oracle tests. These
//! deliberately avoid the library's own geometry helpers: every formula is
//! restated from scratch so a bug in the engine cannot hide in its oracle.

#![allow(dead_code)]

use anyflow::config::LookupMode;
use anyflow::model::corr::{lookup, CorrPyramid};
use anyflow::model::encoder::encode_features;
use anyflow::model::update::multiscale_warp_fuse;
use anyflow::model::upsampler::{query_masks, upsample_flow, upsample_flow_with, QueryGrid};
use anyflow::model::{bind_store, Ctx, Model};
use anyflow_tensor::{Scalar, Tape, TensorData, Var};

pub fn rand_tensor(shape: Vec<usize>, seed: u64, amp: f64) -> TensorData<f32> {
    TensorData::from_fn(shape, |i| (amp * hash_unit(i as u64, seed)) as f32)
}

/// Bilinear read with zero padding, floor-split weights.
pub fn bilin(p: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (wx, wy) = (x - x0, y - y0);
    let at = |xx: i64, yy: i64| -> f64 {
        if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
            p[yy as usize * w + xx as usize]
        } else {
            0.0
        }
    };
    let (ix, iy) = (x0 as i64, y0 as i64);
    at(ix, iy) * (1.0 - wx) * (1.0 - wy)
        + at(ix + 1, iy) * wx * (1.0 - wy)
        + at(ix, iy + 1) * (1.0 - wx) * wy
        + at(ix + 1, iy + 1) * wx * wy
}

/// Square lookup pattern: y-major, (2r+1)^2 entries of (dx, dy).
pub fn square_pattern(r: i64) -> Vec<(f64, f64)> {
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            v.push((dx as f64, dy as f64));
        }
    }
    v
}

/// Region pattern: each square point expands into a 3x3 patch at half step,
/// primary-major, patch y-major.
pub fn region_pattern(r: i64) -> Vec<(f64, f64)> {
    let mut v = Vec::new();
    for (px, py) in square_pattern(r) {
        for ay in -1..=1i64 {
            for ax in -1..=1i64 {
                v.push((px + ax as f64 * 0.5, py + ay as f64 * 0.5));
            }
        }
    }
    v
}

/// Dense layer in f64: y[o] = sum_i x[i] * w[o][i] + b[o], w stored [out, in].
pub fn dense(x: &[f64], w: &TensorData<f32>, b: &TensorData<f32>) -> Vec<f64> {
    let (o, i) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), i);
    let (dw, db) = (w.as_slice(), b.as_slice());
    (0..o)
        .map(|oo| {
            let mut acc = db[oo] as f64;
            for (ii, xv) in x.iter().enumerate() {
                acc += *xv * dw[oo * i + ii] as f64;
            }
            acc
        })
        .collect()
}

pub fn relu_vec(mut x: Vec<f64>) -> Vec<f64> {
    for v in &mut x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    x
}

/// Nearest coarse index for query `q` of `q_extent` spanning `extent` cells:
/// continuous position t = (q + 0.5) * extent / q_extent - 0.5, snapped by
/// ceil(t - 0.5) (ties round down) and clamped to the grid.
pub fn nearest_cell(q: usize, q_extent: usize, extent: usize) -> (f64, usize) {
    let t = (q as f64 + 0.5) * extent as f64 / q_extent as f64 - 0.5;
    let v = (t - 0.5).ceil().clamp(0.0, extent as f64 - 1.0);
    (t, v as usize)
}

/// Deterministic pseudo-random f64 in [-1, 1) from an index and a seed.
pub fn hash_unit(i: u64, seed: u64) -> f64 {
    let mut z = i.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(seed);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 52) as f64 * 2.0 - 1.0
}

pub fn to_f64(t: &TensorData<f32>) -> Vec<f64> {
    t.as_slice().iter().map(|&v| v as f64).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---- correlation lookup fixtures ----------------------------------------

pub const LK_N: usize = 2;
pub const LK_H8: usize = 8;
pub const LK_W8: usize = 12;
/// Spatial extents of the four pyramid levels under halving that saturates.
pub const LK_LEVEL_DIMS: [(usize, usize); 4] = [(8, 12), (4, 6), (2, 3), (1, 1)];

/// Random pyramid levels, flow and radii. Values are generated as f32 so the
/// f32 engine path and the f64 oracle read identical numbers.
pub struct LookupInputs {
    pub levels: Vec<TensorData<f32>>,
    pub flow: TensorData<f32>,
    pub radius: TensorData<f32>,
}

pub fn lookup_inputs(seed: u64) -> LookupInputs {
    let b = LK_N * LK_H8 * LK_W8;
    let levels = LK_LEVEL_DIMS
        .iter()
        .enumerate()
        .map(|(l, &(hl, wl))| {
            TensorData::from_fn(vec![b, 1, hl, wl], |i| hash_unit(i as u64, seed + l as u64) as f32)
        })
        .collect();
    let flow =
        TensorData::from_fn(vec![LK_N, 2, LK_H8, LK_W8], |i| (2.0 * hash_unit(i as u64, seed + 10)) as f32);
    // Radii span well below and above the base radius.
    let radius = TensorData::from_fn(vec![LK_N, 1, LK_H8, LK_W8], |i| {
        (4.5 + 3.5 * hash_unit(i as u64, seed + 11)) as f32
    });
    LookupInputs { levels, flow, radius }
}

/// Runs the engine lookup on a fresh tape of scalar type `T`.
pub fn engine_lookup<T: Scalar>(
    model: &Model,
    inp: &LookupInputs,
    mode: LookupMode,
    with_radius: bool,
) -> TensorData<T> {
    let tape: Tape<T> = Tape::no_grad();
    let store = model.store.cast::<T>();
    let bind = bind_store(&tape, &store);
    let ctx = Ctx { cfg: &model.cfg, ids: &model.ids, tape: &tape, bind: &bind };
    let levels: Vec<Var> = inp.levels.iter().map(|l| tape.constant(l.cast::<T>())).collect();
    let pyr = CorrPyramid { levels, batch: LK_N, h8: LK_H8, w8: LK_W8 };
    let flow = tape.constant(inp.flow.cast::<T>());
    let radius = with_radius.then(|| tape.constant(inp.radius.cast::<T>()));
    let out = lookup(&ctx, &pyr, flow, radius, mode).expect("lookup");
    assert_eq!(tape.shape(out), vec![LK_N, 4 * 81, LK_H8, LK_W8]);
    tape.value(out)
}

/// Reference gather: channel `l*K + k` of pixel (y, x) samples level `l` at
/// `((x, y) + flow) / 2^l + pattern[k] * spacing`, bilinear, zero padding.
pub fn oracle_gather(
    inp: &LookupInputs,
    pattern: &[(f64, f64)],
    spacing: impl Fn(usize, usize) -> f64,
) -> Vec<f64> {
    let k = pattern.len();
    let fu = to_f64(&inp.flow);
    let hw = LK_H8 * LK_W8;
    let mut out = vec![0.0; LK_N * 4 * k * hw];
    for ni in 0..LK_N {
        for y in 0..LK_H8 {
            for x in 0..LK_W8 {
                let i = y * LK_W8 + x;
                let u = fu[ni * 2 * hw + i];
                let v = fu[(ni * 2 + 1) * hw + i];
                let s = spacing(ni, i);
                let b = ni * hw + i;
                for (l, &(hl, wl)) in LK_LEVEL_DIMS.iter().enumerate() {
                    let plane = to_f64(&inp.levels[l]);
                    let plane = &plane[b * hl * wl..(b + 1) * hl * wl];
                    let cs = 0.5f64.powi(l as i32);
                    let cx = (x as f64 + u) * cs;
                    let cy = (y as f64 + v) * cs;
                    for (ki, &(ox, oy)) in pattern.iter().enumerate() {
                        let val = bilin(plane, hl, wl, cx + ox * s, cy + oy * s);
                        out[((ni * 4 + l) * k + ki) * hw + i] = val;
                    }
                }
            }
        }
    }
    out
}

/// Expected region-mode output: the 729-point gather regrouped into 9-sample
/// patches, each folded through the summary net with plain dot products.
pub fn region_oracle(model: &Model, inp: &LookupInputs) -> Vec<f64> {
    let r = to_f64(&inp.radius);
    let hw = LK_H8 * LK_W8;
    let raw = oracle_gather(inp, &region_pattern(4), |ni, i| r[ni * hw + i] / 4.0);
    let s = &model.store;
    let ids = &model.ids;
    let (w0, b0) = (s.get(ids.reg[0].w), s.get(ids.reg[0].b));
    let (w1, b1) = (s.get(ids.reg[1].w), s.get(ids.reg[1].b));
    let (w2, b2) = (s.get(ids.reg[2].w), s.get(ids.reg[2].b));
    let k = 81;
    let mut want = vec![0.0; LK_N * 4 * k * hw];
    for ni in 0..LK_N {
        for i in 0..hw {
            for l in 0..4 {
                for ki in 0..k {
                    let base = ((ni * 4 + l) * (k * 9) + ki * 9) * hw + i;
                    let mut x: Vec<f64> = (0..9).map(|t| raw[base + t * hw]).collect();
                    x.push(r[ni * hw + i]);
                    let h1 = relu_vec(dense(&x, w0, b0));
                    let h2 = relu_vec(dense(&h1, w1, b1));
                    want[((ni * 4 + l) * k + ki) * hw + i] = dense(&h2, w2, b2)[0];
                }
            }
        }
    }
    want
}

/// Asserts every mask row over `targets` is a convex combination (nonnegative,
/// sums to 1 within 1e-6) and returns how many rows were checked.
pub fn convex_mask_rows(model: &Model, targets: &[(usize, usize)], seed: u64) -> usize {
    let (h8, w8, n) = (6, 8, 2);
    let latent = rand_tensor(vec![n, model.cfg.hidden, h8, w8], seed, 1.5);

    let tape: Tape<f32> = Tape::no_grad();
    let bind = model.bind(&tape);
    let ctx = Ctx { cfg: &model.cfg, ids: &model.ids, tape: &tape, bind: &bind };
    let lat = tape.constant(latent);

    let mut rows_seen = 0usize;
    for &target in targets {
        let grid = QueryGrid::build((h8, w8), target, model.cfg.patch, model.cfg.l_pe).unwrap();
        let masks = tape.value(query_masks(&ctx, lat, &grid).unwrap());
        assert_eq!(masks.shape()[1], 9);
        for row in masks.as_slice().chunks(9) {
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            assert!(row.iter().all(|&v| v >= 0.0), "negative mask weight in {row:?}");
            assert!((sum - 1.0).abs() <= 1e-6, "mask row sums to {sum}");
        }
        rows_seen += masks.shape()[0];
    }
    rows_seen
}

/// Every output pixel must lie between the min and max of the scaled 3x3
/// coarse neighborhood its query snaps to. Cell positions and edge clamping
/// are recomputed here from the resolution ratio alone.
pub fn hull_check(model: &Model, target: (usize, usize), seed: u64) {
    let (h8, w8, n) = (6, 8, 2);
    let flow = rand_tensor(vec![n, 2, h8, w8], seed, 3.0);
    let latent = rand_tensor(vec![n, model.cfg.hidden, h8, w8], seed + 1, 1.5);

    let tape: Tape<f32> = Tape::no_grad();
    let bind = model.bind(&tape);
    let ctx = Ctx { cfg: &model.cfg, ids: &model.ids, tape: &tape, bind: &bind };
    let fv = tape.constant(flow.clone());
    let lv = tape.constant(latent);
    let up = upsample_flow(&ctx, fv, lv, target).unwrap();
    assert_eq!(tape.shape(up), vec![n, 2, target.0, target.1]);
    let up = tape.value(up);

    let patch = model.cfg.patch;
    let hp = target.0.div_ceil(patch) * patch;
    let wp = target.1.div_ceil(patch) * patch;
    let (top, left) = ((hp - target.0) / 2, (wp - target.1) / 2);
    let (scale_u, scale_v) = (wp as f64 / w8 as f64, hp as f64 / h8 as f64);
    let d = up.as_slice();
    let f = flow.as_slice();
    let hw = h8 * w8;
    for ni in 0..n {
        for ch in 0..2 {
            let scale = if ch == 0 { scale_u } else { scale_v };
            for yo in 0..target.0 {
                for xo in 0..target.1 {
                    let (yq, xq) = ((yo + top) / patch, (xo + left) / patch);
                    let (_, cy) = nearest_cell(yq, hp / patch, h8);
                    let (_, cx) = nearest_cell(xq, wp / patch, w8);
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for ty in 0..3i64 {
                        for tx in 0..3i64 {
                            let sy = (cy as i64 + ty - 1).clamp(0, h8 as i64 - 1) as usize;
                            let sx = (cx as i64 + tx - 1).clamp(0, w8 as i64 - 1) as usize;
                            let v = f[(ni * 2 + ch) * hw + sy * w8 + sx] as f64 * scale;
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                    }
                    let got = d[((ni * 2 + ch) * target.0 + yo) * target.1 + xo] as f64;
                    assert!(
                        got >= lo - 1e-5 && got <= hi + 1e-5,
                        "pixel ({yo},{xo}) ch {ch}: {got} outside [{lo}, {hi}]"
                    );
                }
            }
        }
    }
}

/// Decodes a random coarse flow at the native x8 scale and compares against a
/// fixed convex upsampling driven by the same mask rows: output pixel (y, x)
/// mixes the 3x3 neighborhood of cell (y/8, x/8), times 8. Returns the worst
/// absolute difference; both paths run in f64 so disagreement means wrong
/// semantics, not rounding.
pub fn native_scale_vs_fixed_oracle(model: &Model, seed: u64) -> f64 {
    let (h8, w8, n) = (2usize, 3usize, 2usize);
    let (th, tw) = (8 * h8, 8 * w8);
    let flow32 = rand_tensor(vec![n, 2, h8, w8], seed, 3.0);
    let latent32 = rand_tensor(vec![n, model.cfg.hidden, h8, w8], seed + 1, 1.5);

    let store = model.store.cast::<f64>();
    let tape: Tape<f64> = Tape::no_grad();
    let bind = bind_store(&tape, &store);
    let ctx = Ctx { cfg: &model.cfg, ids: &model.ids, tape: &tape, bind: &bind };
    let fv = tape.constant(flow32.cast::<f64>());
    let lv = tape.constant(latent32.cast::<f64>());

    let grid = QueryGrid::build((h8, w8), (th, tw), model.cfg.patch, model.cfg.l_pe).unwrap();
    assert_eq!(grid.padded(), (th, tw));
    let masks = tape.value(query_masks(&ctx, lv, &grid).unwrap());
    let up = tape.value(upsample_flow_with(&ctx, fv, lv, &grid).unwrap());

    let patch = model.cfg.patch;
    let (qh, qw) = (th / patch, tw / patch);
    let m = masks.as_slice();
    let f = flow32.cast::<f64>();
    let f = f.as_slice();
    let hw = h8 * w8;
    let mut worst = 0.0f64;
    for ni in 0..n {
        for ch in 0..2 {
            for y in 0..th {
                for x in 0..tw {
                    let (cy, cx) = (y / 8, x / 8);
                    let q = (y / patch) * qw + x / patch;
                    debug_assert!(q < qh * qw);
                    let p = (y % patch) * patch + x % patch;
                    let row = &m[((ni * qh * qw + q) * patch * patch + p) * 9..][..9];
                    let mut acc = 0.0;
                    for ty in 0..3i64 {
                        for tx in 0..3i64 {
                            let sy = (cy as i64 + ty - 1).clamp(0, h8 as i64 - 1) as usize;
                            let sx = (cx as i64 + tx - 1).clamp(0, w8 as i64 - 1) as usize;
                            acc += row[(ty * 3 + tx) as usize] * f[(ni * 2 + ch) * hw + sy * w8 + sx];
                        }
                    }
                    let want = acc * 8.0;
                    let got = up.as_slice()[((ni * 2 + ch) * th + y) * tw + x];
                    worst = worst.max((got - want).abs());
                }
            }
        }
    }
    worst
}

/// Warping with an everywhere-zero flow must return the features untouched.
pub fn warp_zero_flow_is_identity() {
    let tape: Tape<f32> = Tape::no_grad();
    let feat = rand_tensor(vec![2, 3, 10, 14], 1, 2.0);
    let f = tape.constant(feat.clone());
    let zero = tape.constant(TensorData::zeros(vec![2, 2, 10, 14]));
    let out = tape.value(tape.warp(f, zero).unwrap());
    for (a, b) in out.as_slice().iter().zip(feat.as_slice()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

/// A constant integer flow must shift exactly, zero-filling past the border.
pub fn warp_integer_shift_is_exact() {
    let (h, w) = (9usize, 12usize);
    let (dx, dy) = (3i64, -2i64);
    let tape: Tape<f32> = Tape::no_grad();
    let feat = rand_tensor(vec![1, 2, h, w], 2, 2.0);
    let f = tape.constant(feat.clone());
    let flow = tape.constant(TensorData::from_fn(vec![1, 2, h, w], |i| {
        if i < h * w {
            dx as f32
        } else {
            dy as f32
        }
    }));
    let out = tape.value(tape.warp(f, flow).unwrap());
    let src = feat.as_slice();
    let got = out.as_slice();
    for ch in 0..2 {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (sx, sy) = (x + dx, y + dy);
                let want = if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                    src[(ch * h + sy as usize) * w + sx as usize]
                } else {
                    0.0
                };
                let v = got[(ch * h as usize + y as usize) * w + x as usize];
                assert_eq!(v.to_bits(), want.to_bits(), "ch {ch} pixel ({y},{x})");
            }
        }
    }
}

/// Encoding the same frame twice and fusing under a zero coarse flow must
/// hand the second pyramid's features through both warps bit for bit, and
/// the zero flow itself must decode to exactly zero at every scale.
pub fn self_warp_reproduces_features(model: &Model) {
    let tape: Tape<f32> = Tape::no_grad();
    let bind = model.bind(&tape);
    let ctx = Ctx { cfg: &model.cfg, ids: &model.ids, tape: &tape, bind: &bind };

    let img = tape.constant(rand_tensor(vec![1, 3, 16, 24], 3, 0.5));
    let pyr1 = encode_features(&ctx, img).unwrap();
    let pyr2 = encode_features(&ctx, img).unwrap();
    let (h8, w8) = (2usize, 3usize);

    let zero = tape.constant(TensorData::zeros(vec![1, 2, h8, w8]));
    let latent = tape.constant(rand_tensor(vec![1, model.cfg.hidden, h8, w8], 4, 1.0));
    let up = tape.value(upsample_flow(&ctx, zero, latent, (8, 12)).unwrap());
    assert!(up.as_slice().iter().all(|&v| v == 0.0), "zero flow must decode to zero");

    let half_grid =
        QueryGrid::build((h8, w8), (4 * h8, 4 * w8), model.cfg.patch, model.cfg.l_pe).unwrap();
    let fuse = multiscale_warp_fuse(&ctx, &pyr1, &pyr2, zero, latent, &half_grid).unwrap();
    for (warped, reference) in [(fuse.warped_half, pyr1.half), (fuse.warped_quarter, pyr1.quarter)] {
        let a = tape.value(warped);
        let b = tape.value(reference);
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    assert_eq!(tape.shape(fuse.fused), vec![1, model.cfg.fuse_out, h8, w8]);
}
