use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Floor split of a sampling coordinate into base index and fraction.
#[inline]
fn split<T: Scalar>(v: T) -> (isize, T) {
    let f = v.floor();
    (f.to_f64() as isize, v - f)
}

#[inline]
fn plane_at<T: Scalar>(p: &[T], h: usize, w: usize, x: isize, y: isize) -> T {
    if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
        p[y as usize * w + x as usize]
    } else {
        T::zero()
    }
}

/// Bilinear read with zero padding. Returns (value, d/dx, d/dy).
#[inline]
fn sample_plane<T: Scalar>(p: &[T], h: usize, w: usize, x: T, y: T) -> (T, T, T) {
    let (ix, wx) = split(x);
    let (iy, wy) = split(y);
    let v00 = plane_at(p, h, w, ix, iy);
    let v10 = plane_at(p, h, w, ix + 1, iy);
    let v01 = plane_at(p, h, w, ix, iy + 1);
    let v11 = plane_at(p, h, w, ix + 1, iy + 1);
    let one = T::one();
    let value = v00 * (one - wx) * (one - wy)
        + v10 * wx * (one - wy)
        + v01 * (one - wx) * wy
        + v11 * wx * wy;
    let dx = (one - wy) * (v10 - v00) + wy * (v11 - v01);
    let dy = (one - wx) * (v01 - v00) + wx * (v11 - v10);
    (value, dx, dy)
}

/// Scatter-adds `g` times the bilinear weights onto in-bounds corners.
#[inline]
fn scatter_plane<T: Scalar>(gp: &mut [T], h: usize, w: usize, x: T, y: T, g: T) {
    let (ix, wx) = split(x);
    let (iy, wy) = split(y);
    let one = T::one();
    let mut add = |xx: isize, yy: isize, wgt: T| {
        if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
            let i = yy as usize * w + xx as usize;
            gp[i] = gp[i] + g * wgt;
        }
    };
    add(ix, iy, (one - wx) * (one - wy));
    add(ix + 1, iy, wx * (one - wy));
    add(ix, iy + 1, (one - wx) * wy);
    add(ix + 1, iy + 1, wx * wy);
}

/// Geometry for [`Tape::mask_combine`]: which coarse cell each query patch
/// reads around, the patch factor, and the coarse/padded-target extents.
#[derive(Debug, Clone)]
pub struct MaskPlan {
    /// Per query (row-major over the query grid): nearest coarse cell (y, x).
    pub cells: Vec<(usize, usize)>,
    /// Patch factor; each query emits an n×n block of output pixels.
    pub n: usize,
    /// Coarse grid extent (h, w).
    pub coarse: (usize, usize),
    /// Output extent (h, w); both divisible by `n`.
    pub target: (usize, usize),
    /// Per-axis value scaling applied to (u, v) on the way out.
    pub scale: (f64, f64),
}

impl MaskPlan {
    pub fn queries(&self) -> usize {
        (self.target.0 / self.n) * (self.target.1 / self.n)
    }
}

impl<T: Scalar> Tape<T> {
    /// Bilinear point sampling of one feature map. `coords` holds `(x, y)`
    /// pixel positions; out-of-range reads see zeros. Output row q holds the
    /// C channel values at `coords[q]`.
    pub fn grid_sample_bilinear(&self, feature: Var, coords: Var) -> Result<Var> {
        let (sf, sc) = (self.shape(feature), self.shape(coords));
        if sf.len() != 3 || sc.len() != 2 || sc[1] != 2 {
            return Err(TensorError::shape("grid_sample_bilinear", format!("feature {sf:?}, coords {sc:?}")));
        }
        let (c, h, w) = (sf[0], sf[1], sf[2]);
        let q = sc[0];
        let (df, dc) = (self.data(feature), self.data(coords));
        let mut out = vec![T::zero(); q * c];
        for qi in 0..q {
            let (x, y) = (dc[2 * qi], dc[2 * qi + 1]);
            for ch in 0..c {
                let (v, _, _) = sample_plane(&df[ch * h * w..(ch + 1) * h * w], h, w, x, y);
                out[qi * c + ch] = v;
            }
        }
        Ok(self.push_op(vec![q, c], out, &[feature, coords], || {
            Box::new(move |g, sink| {
                {
                    let gf = sink.buf(feature);
                    for qi in 0..q {
                        let (x, y) = (dc[2 * qi], dc[2 * qi + 1]);
                        for ch in 0..c {
                            scatter_plane(&mut gf[ch * h * w..(ch + 1) * h * w], h, w, x, y, g[qi * c + ch]);
                        }
                    }
                }
                let gc = sink.buf(coords);
                for qi in 0..q {
                    let (x, y) = (dc[2 * qi], dc[2 * qi + 1]);
                    let (mut ax, mut ay) = (T::zero(), T::zero());
                    for ch in 0..c {
                        let (_, dx, dy) = sample_plane(&df[ch * h * w..(ch + 1) * h * w], h, w, x, y);
                        ax = ax + g[qi * c + ch] * dx;
                        ay = ay + g[qi * c + ch] * dy;
                    }
                    gc[2 * qi] = gc[2 * qi] + ax;
                    gc[2 * qi + 1] = gc[2 * qi + 1] + ay;
                }
            })
        }))
    }

    /// Samples plane `b` at its own K coordinates: `planes: B×h×w`,
    /// `coords: B×K×2` of `(x, y)` → `B×K`. Zero padding outside.
    pub fn grid_sample_planes(&self, planes: Var, coords: Var) -> Result<Var> {
        let (sp, sc) = (self.shape(planes), self.shape(coords));
        if sp.len() != 3 || sc.len() != 3 || sc[2] != 2 || sp[0] != sc[0] {
            return Err(TensorError::shape("grid_sample_planes", format!("planes {sp:?}, coords {sc:?}")));
        }
        let (b, h, w) = (sp[0], sp[1], sp[2]);
        let k = sc[1];
        let (dp, dc) = (self.data(planes), self.data(coords));
        let mut out = vec![T::zero(); b * k];
        for bi in 0..b {
            let plane = &dp[bi * h * w..(bi + 1) * h * w];
            for ki in 0..k {
                let idx = (bi * k + ki) * 2;
                let (v, _, _) = sample_plane(plane, h, w, dc[idx], dc[idx + 1]);
                out[bi * k + ki] = v;
            }
        }
        Ok(self.push_op(vec![b, k], out, &[planes, coords], || {
            Box::new(move |g, sink| {
                {
                    let gp = sink.buf(planes);
                    for bi in 0..b {
                        let gplane = &mut gp[bi * h * w..(bi + 1) * h * w];
                        for ki in 0..k {
                            let idx = (bi * k + ki) * 2;
                            scatter_plane(gplane, h, w, dc[idx], dc[idx + 1], g[bi * k + ki]);
                        }
                    }
                }
                let gc = sink.buf(coords);
                for bi in 0..b {
                    let plane = &dp[bi * h * w..(bi + 1) * h * w];
                    for ki in 0..k {
                        let idx = (bi * k + ki) * 2;
                        let (_, dx, dy) = sample_plane(plane, h, w, dc[idx], dc[idx + 1]);
                        let go = g[bi * k + ki];
                        gc[idx] = gc[idx] + go * dx;
                        gc[idx + 1] = gc[idx + 1] + go * dy;
                    }
                }
            })
        }))
    }

    /// Backward warp: `out(x) = feature sampled at x + flow(x)`, per batch
    /// item, zero padding outside. `flow` channel 0 is the x displacement.
    pub fn warp(&self, feature: Var, flow: Var) -> Result<Var> {
        let (sf, sl) = (self.shape(feature), self.shape(flow));
        if sf.len() != 4 || sl.len() != 4 || sl[1] != 2 || sf[0] != sl[0] || sf[2..] != sl[2..] {
            return Err(TensorError::shape("warp", format!("feature {sf:?}, flow {sl:?}")));
        }
        let (n, c, h, w) = (sf[0], sf[1], sf[2], sf[3]);
        let hw = h * w;
        let (df, dl) = (self.data(feature), self.data(flow));
        let mut out = vec![T::zero(); n * c * hw];
        for ni in 0..n {
            let fl = &dl[ni * 2 * hw..(ni + 1) * 2 * hw];
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let sx = T::from_f64(x as f64) + fl[i];
                    let sy = T::from_f64(y as f64) + fl[hw + i];
                    for ch in 0..c {
                        let plane = &df[(ni * c + ch) * hw..(ni * c + ch + 1) * hw];
                        let (v, _, _) = sample_plane(plane, h, w, sx, sy);
                        out[(ni * c + ch) * hw + i] = v;
                    }
                }
            }
        }
        Ok(self.push_op(vec![n, c, h, w], out, &[feature, flow], || {
            Box::new(move |g, sink| {
                {
                    let gf = sink.buf(feature);
                    for ni in 0..n {
                        let fl = &dl[ni * 2 * hw..(ni + 1) * 2 * hw];
                        for y in 0..h {
                            for x in 0..w {
                                let i = y * w + x;
                                let sx = T::from_f64(x as f64) + fl[i];
                                let sy = T::from_f64(y as f64) + fl[hw + i];
                                for ch in 0..c {
                                    let gplane = &mut gf[(ni * c + ch) * hw..(ni * c + ch + 1) * hw];
                                    scatter_plane(gplane, h, w, sx, sy, g[(ni * c + ch) * hw + i]);
                                }
                            }
                        }
                    }
                }
                let gl = sink.buf(flow);
                for ni in 0..n {
                    let fl = &dl[ni * 2 * hw..(ni + 1) * 2 * hw];
                    for y in 0..h {
                        for x in 0..w {
                            let i = y * w + x;
                            let sx = T::from_f64(x as f64) + fl[i];
                            let sy = T::from_f64(y as f64) + fl[hw + i];
                            let (mut ax, mut ay) = (T::zero(), T::zero());
                            for ch in 0..c {
                                let plane = &df[(ni * c + ch) * hw..(ni * c + ch + 1) * hw];
                                let (_, dx, dy) = sample_plane(plane, h, w, sx, sy);
                                let go = g[(ni * c + ch) * hw + i];
                                ax = ax + go * dx;
                                ay = ay + go * dy;
                            }
                            gl[ni * 2 * hw + i] = gl[ni * 2 * hw + i] + ax;
                            gl[(ni * 2 + 1) * hw + i] = gl[(ni * 2 + 1) * hw + i] + ay;
                        }
                    }
                }
            })
        }))
    }

    /// Builds per-pixel sampling grids: row `q = (b·H + y)·W + x` gets
    /// `coords[q][k] = (pos_q + flow_q) · center_scale + offsets[k] · s_q`
    /// where `s_q = radius_q / r0`, or 1 when no radius field is given.
    /// Differentiable in `flow` and `radius`.
    pub fn lookup_grid(
        &self,
        flow: Var,
        radius: Option<Var>,
        offsets: &[[f64; 2]],
        center_scale: f64,
        r0: f64,
    ) -> Result<Var> {
        let sl = self.shape(flow);
        if sl.len() != 4 || sl[1] != 2 {
            return Err(TensorError::shape("lookup_grid", format!("flow {sl:?}")));
        }
        let (n, h, w) = (sl[0], sl[2], sl[3]);
        let hw = h * w;
        if let Some(r) = radius {
            let sr = self.shape(r);
            if sr != vec![n, 1, h, w] {
                return Err(TensorError::shape("lookup_grid", format!("radius {sr:?} vs flow {sl:?}")));
            }
        }
        if offsets.is_empty() || r0 <= 0.0 {
            return Err(TensorError::arg("lookup_grid", "empty offsets or non-positive r0".to_string()));
        }
        let k = offsets.len();
        let cs = T::from_f64(center_scale);
        let r0t = T::from_f64(r0);
        let offs: Vec<[T; 2]> = offsets.iter().map(|o| [T::from_f64(o[0]), T::from_f64(o[1])]).collect();

        let dl = self.data(flow);
        let dr = radius.map(|r| self.data(r));
        let mut out = vec![T::zero(); n * hw * k * 2];
        for ni in 0..n {
            let fl = &dl[ni * 2 * hw..(ni + 1) * 2 * hw];
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let cx = (T::from_f64(x as f64) + fl[i]) * cs;
                    let cy = (T::from_f64(y as f64) + fl[hw + i]) * cs;
                    let s = match &dr {
                        Some(r) => r[ni * hw + i] / r0t,
                        None => T::one(),
                    };
                    let base = (ni * hw + i) * k * 2;
                    for (ki, o) in offs.iter().enumerate() {
                        out[base + 2 * ki] = cx + o[0] * s;
                        out[base + 2 * ki + 1] = cy + o[1] * s;
                    }
                }
            }
        }

        let mut inputs = vec![flow];
        if let Some(r) = radius {
            inputs.push(r);
        }
        Ok(self.push_op(vec![n * hw, k, 2], out, &inputs, || {
            Box::new(move |g, sink| {
                {
                    let gl = sink.buf(flow);
                    for ni in 0..n {
                        for i in 0..hw {
                            let base = (ni * hw + i) * k * 2;
                            let (mut ax, mut ay) = (T::zero(), T::zero());
                            for ki in 0..k {
                                ax = ax + g[base + 2 * ki];
                                ay = ay + g[base + 2 * ki + 1];
                            }
                            gl[ni * 2 * hw + i] = gl[ni * 2 * hw + i] + ax * cs;
                            gl[(ni * 2 + 1) * hw + i] = gl[(ni * 2 + 1) * hw + i] + ay * cs;
                        }
                    }
                }
                if let (Some(rv), Some(_)) = (radius, &dr) {
                    let gr = sink.buf(rv);
                    for ni in 0..n {
                        for i in 0..hw {
                            let base = (ni * hw + i) * k * 2;
                            let mut acc = T::zero();
                            for (ki, o) in offs.iter().enumerate() {
                                acc = acc + g[base + 2 * ki] * o[0] + g[base + 2 * ki + 1] * o[1];
                            }
                            gr[ni * hw + i] = gr[ni * hw + i] + acc / r0t;
                        }
                    }
                }
            })
        }))
    }

    /// Gathers per-pixel feature columns: `x: N×C×H×W`, `cells` holds Q flat
    /// spatial indices (shared across the batch) → `(N·Q)×C`.
    pub fn gather_cells(&self, x: Var, cells: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(TensorError::shape("gather_cells", format!("expected rank 4, got {s:?}")));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        if let Some(&bad) = cells.iter().find(|&&i| i >= hw) {
            return Err(TensorError::arg("gather_cells", format!("cell {bad} out of {hw}")));
        }
        let q = cells.len();
        let dx = self.data(x);
        let mut out = vec![T::zero(); n * q * c];
        for ni in 0..n {
            for (qi, &cell) in cells.iter().enumerate() {
                let row = (ni * q + qi) * c;
                for ch in 0..c {
                    out[row + ch] = dx[(ni * c + ch) * hw + cell];
                }
            }
        }
        let cells_owned = cells.to_vec();
        Ok(self.push_op(vec![n * q, c], out, &[x], || {
            Box::new(move |g, sink| {
                let gx = sink.buf(x);
                for ni in 0..n {
                    for (qi, &cell) in cells_owned.iter().enumerate() {
                        let row = (ni * q + qi) * c;
                        for ch in 0..c {
                            let dst = (ni * c + ch) * hw + cell;
                            gx[dst] = gx[dst] + g[row + ch];
                        }
                    }
                }
            })
        }))
    }

    /// Repeats every row of a `Q×C` matrix `times` times consecutively.
    pub fn repeat_rows(&self, x: Var, times: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || times == 0 {
            return Err(TensorError::arg("repeat_rows", format!("shape {s:?}, times {times}")));
        }
        let (q, c) = (s[0], s[1]);
        let dx = self.data(x);
        let mut out = vec![T::zero(); q * times * c];
        for qi in 0..q {
            let src = &dx[qi * c..(qi + 1) * c];
            for t in 0..times {
                out[(qi * times + t) * c..(qi * times + t + 1) * c].copy_from_slice(src);
            }
        }
        Ok(self.push_op(vec![q * times, c], out, &[x], || {
            Box::new(move |g, sink| {
                let gx = sink.buf(x);
                for qi in 0..q {
                    for t in 0..times {
                        let src = &g[(qi * times + t) * c..(qi * times + t + 1) * c];
                        let dst = &mut gx[qi * c..(qi + 1) * c];
                        for (a, &b) in dst.iter_mut().zip(src) {
                            *a = *a + b;
                        }
                    }
                }
            })
        }))
    }

    /// Convex flow upsampling. Each query's n×n output patch mixes the 3×3
    /// coarse neighborhood around its cell (edge-clamped) with that patch
    /// position's 9 weights, then per-axis value scaling is applied.
    ///
    /// `flow: N×2×Hc×Wc`; `masks: (N·Q·n²)×9` softmaxed rows, query-major
    /// then subpixel row-major.
    pub fn mask_combine(&self, flow: Var, masks: Var, plan: &MaskPlan) -> Result<Var> {
        let (sf, sm) = (self.shape(flow), self.shape(masks));
        let (hc, wc) = plan.coarse;
        let (ho, wo) = plan.target;
        let n_patch = plan.n;
        if sf.len() != 4 || sf[1] != 2 || sf[2] != hc || sf[3] != wc {
            return Err(TensorError::shape("mask_combine", format!("flow {sf:?} vs coarse {:?}", plan.coarse)));
        }
        if n_patch == 0 || ho % n_patch != 0 || wo % n_patch != 0 {
            return Err(TensorError::arg("mask_combine", format!("target {ho}x{wo} not divisible by n={n_patch}")));
        }
        let nb = sf[0];
        let q = plan.queries();
        if plan.cells.len() != q {
            return Err(TensorError::arg("mask_combine", format!("{} cells for {q} queries", plan.cells.len())));
        }
        if sm != vec![nb * q * n_patch * n_patch, 9] {
            return Err(TensorError::shape("mask_combine", format!("masks {sm:?}, expected [{}, 9]", nb * q * n_patch * n_patch)));
        }
        if let Some(&(cy, cx)) = plan.cells.iter().find(|&&(cy, cx)| cy >= hc || cx >= wc) {
            return Err(TensorError::arg("mask_combine", format!("cell ({cy},{cx}) outside {hc}x{wc}")));
        }

        let (df, dm) = (self.data(flow), self.data(masks));
        let qw = wo / n_patch;
        let (su, sv) = (T::from_f64(plan.scale.0), T::from_f64(plan.scale.1));
        let cells = plan.cells.clone();
        let hwc = hc * wc;
        let hwo = ho * wo;
        // clamped flat indices of the 3x3 neighborhood around a cell
        let neighborhood = move |cy: usize, cx: usize| -> [usize; 9] {
            let mut idx = [0usize; 9];
            for (t, (dy, dx)) in (0..9).map(|t| (t / 3, t % 3)).enumerate() {
                let y = (cy + dy).saturating_sub(1).min(hc - 1);
                let x = (cx + dx).saturating_sub(1).min(wc - 1);
                idx[t] = y * wc + x;
            }
            idx
        };

        let mut out = vec![T::zero(); nb * 2 * hwo];
        for ni in 0..nb {
            let fu = &df[ni * 2 * hwc..ni * 2 * hwc + hwc];
            let fv = &df[ni * 2 * hwc + hwc..(ni + 1) * 2 * hwc];
            for (qi, &(cy, cx)) in cells.iter().enumerate() {
                let nbhd = neighborhood(cy, cx);
                let (qy, qx) = (qi / qw, qi % qw);
                for p in 0..n_patch * n_patch {
                    let row = ((ni * q + qi) * n_patch * n_patch + p) * 9;
                    let (mut au, mut av) = (T::zero(), T::zero());
                    for (t, &cell) in nbhd.iter().enumerate() {
                        let m = dm[row + t];
                        au = au + m * fu[cell];
                        av = av + m * fv[cell];
                    }
                    let oy = qy * n_patch + p / n_patch;
                    let ox = qx * n_patch + p % n_patch;
                    out[ni * 2 * hwo + oy * wo + ox] = au * su;
                    out[ni * 2 * hwo + hwo + oy * wo + ox] = av * sv;
                }
            }
        }

        Ok(self.push_op(vec![nb, 2, ho, wo], out, &[flow, masks], || {
            Box::new(move |g, sink| {
                {
                    let gf = sink.buf(flow);
                    for ni in 0..nb {
                        for (qi, &(cy, cx)) in cells.iter().enumerate() {
                            let nbhd = neighborhood(cy, cx);
                            let (qy, qx) = (qi / qw, qi % qw);
                            for p in 0..n_patch * n_patch {
                                let row = ((ni * q + qi) * n_patch * n_patch + p) * 9;
                                let oy = qy * n_patch + p / n_patch;
                                let ox = qx * n_patch + p % n_patch;
                                let gu = g[ni * 2 * hwo + oy * wo + ox] * su;
                                let gv = g[ni * 2 * hwo + hwo + oy * wo + ox] * sv;
                                for (t, &cell) in nbhd.iter().enumerate() {
                                    let m = dm[row + t];
                                    gf[ni * 2 * hwc + cell] = gf[ni * 2 * hwc + cell] + m * gu;
                                    gf[ni * 2 * hwc + hwc + cell] = gf[ni * 2 * hwc + hwc + cell] + m * gv;
                                }
                            }
                        }
                    }
                }
                let gm = sink.buf(masks);
                for ni in 0..nb {
                    let fu = &df[ni * 2 * hwc..ni * 2 * hwc + hwc];
                    let fv = &df[ni * 2 * hwc + hwc..(ni + 1) * 2 * hwc];
                    for (qi, &(cy, cx)) in cells.iter().enumerate() {
                        let nbhd = neighborhood(cy, cx);
                        let (qy, qx) = (qi / qw, qi % qw);
                        for p in 0..n_patch * n_patch {
                            let row = ((ni * q + qi) * n_patch * n_patch + p) * 9;
                            let oy = qy * n_patch + p / n_patch;
                            let ox = qx * n_patch + p % n_patch;
                            let gu = g[ni * 2 * hwo + oy * wo + ox] * su;
                            let gv = g[ni * 2 * hwo + hwo + oy * wo + ox] * sv;
                            for (t, &cell) in nbhd.iter().enumerate() {
                                gm[row + t] = gm[row + t] + gu * fu[cell] + gv * fv[cell];
                            }
                        }
                    }
                }
            })
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::MaskPlan;
    use crate::data::TensorData;
    use crate::tape::Tape;

    #[test]
    fn bilinear_center_is_corner_mean() {
        let t: Tape<f64> = Tape::new();
        let f = t.constant(TensorData::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = t.constant(TensorData::new(vec![3, 2], vec![0.5, 0.5, 1.0, 0.0, -1.0, -1.0]).unwrap());
        let y = t.grid_sample_bilinear(f, c).unwrap();
        let v = t.value(y);
        assert_eq!(v.as_slice(), &[2.5, 2.0, 0.0]);
    }

    #[test]
    fn warp_by_zero_flow_is_identity() {
        let t: Tape<f32> = Tape::new();
        let f = t.constant(TensorData::from_fn(vec![1, 3, 4, 5], |i| i as f32 * 0.25));
        let zero = t.constant(TensorData::zeros(vec![1, 2, 4, 5]));
        let y = t.warp(f, zero).unwrap();
        assert_eq!(t.value(y).as_slice(), t.value(f).as_slice());
    }

    #[test]
    fn warp_by_unit_flow_shifts_columns() {
        let t: Tape<f32> = Tape::new();
        let f = t.constant(TensorData::new(vec![1, 1, 1, 3], vec![10.0, 20.0, 30.0]).unwrap());
        let mut fl = vec![0.0f32; 6];
        fl[..3].fill(1.0); // u = 1, v = 0
        let flow = t.constant(TensorData::new(vec![1, 2, 1, 3], fl).unwrap());
        let y = t.warp(f, flow).unwrap();
        assert_eq!(t.value(y).as_slice(), &[20.0, 30.0, 0.0]);
    }

    #[test]
    fn lookup_grid_unit_radius_matches_no_radius() {
        let t: Tape<f64> = Tape::new();
        let flow = t.constant(TensorData::from_fn(vec![1, 2, 2, 3], |i| (i as f64 * 0.37).sin()));
        let r = t.constant(TensorData::full(vec![1, 1, 2, 3], 4.0));
        let offs: Vec<[f64; 2]> = (-1..=1)
            .flat_map(|dy| (-1..=1).map(move |dx| [dx as f64, dy as f64]))
            .collect();
        let fixed = t.lookup_grid(flow, None, &offs, 0.5, 4.0).unwrap();
        let dynamic = t.lookup_grid(flow, Some(r), &offs, 0.5, 4.0).unwrap();
        assert_eq!(t.value(fixed).as_slice(), t.value(dynamic).as_slice());
    }

    #[test]
    fn gather_cells_reads_channel_columns() {
        let t: Tape<f32> = Tape::new();
        let x = t.constant(TensorData::from_fn(vec![1, 2, 2, 2], |i| i as f32));
        // cell 3 = (y=1, x=1): channel 0 value 3, channel 1 value 7
        let y = t.gather_cells(x, &[3, 0]).unwrap();
        assert_eq!(t.shape(y), vec![2, 2]);
        assert_eq!(t.value(y).as_slice(), &[3.0, 7.0, 0.0, 4.0]);
    }

    #[test]
    fn mask_combine_of_constant_flow_is_constant() {
        let t: Tape<f64> = Tape::new();
        let mut flow_data = vec![1.0; 6];
        flow_data[3..].fill(-2.0); // u = 1, v = -2 on a 1x3 coarse grid
        let flow = t.constant(TensorData::new(vec![1, 2, 1, 3], flow_data).unwrap());
        let plan = MaskPlan {
            cells: vec![(0, 0), (0, 2)],
            n: 2,
            coarse: (1, 3),
            target: (2, 4),
            scale: (4.0 / 3.0, 2.0),
        };
        // 2 queries x 4 subpixels; weight split between two neighbors
        let mut m = vec![0.0; 8 * 9];
        for row in m.chunks_mut(9) {
            row[2] = 0.25;
            row[6] = 0.75;
        }
        let masks = t.constant(TensorData::new(vec![8, 9], m).unwrap());
        let y = t.mask_combine(flow, masks, &plan).unwrap();
        let v = t.value(y);
        for &u in &v.as_slice()[..8] {
            assert!((u - 4.0 / 3.0).abs() < 1e-12);
        }
        for &vv in &v.as_slice()[8..] {
            assert!((vv + 4.0).abs() < 1e-12);
        }
    }
}
