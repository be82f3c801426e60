use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Output extent along one axis under floor semantics.
fn out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

/// Range of output positions whose source index `o*stride + off` lands in
/// `[0, input)`. Returns `start..end`.
fn valid_span(input: usize, out: usize, stride: usize, off: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off < 0 { (-off + s - 1) / s } else { 0 };
    let hi = (input as isize - 1 - off).div_euclid(s);
    let start = lo.max(0) as usize;
    let end = (hi + 1).clamp(0, out as isize) as usize;
    (start, end.max(start))
}

/// Unrolls one `C×H×W` sample into a `(C·k·k) × (H'·W')` column matrix.
fn im2col<T: Scalar>(
    x: &[T],
    cols: &mut [T],
    (c_in, h, w): (usize, usize, usize),
    (ho, wo): (usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
) {
    let p = ho * wo;
    for c in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let off_y = ky as isize - pad as isize;
                let off_x = kx as isize - pad as isize;
                let (x0, x1) = valid_span(w, wo, stride, off_x);
                for oy in 0..ho {
                    let iy = oy as isize * stride as isize + off_y;
                    let dst = &mut cols[row * p + oy * wo..row * p + (oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src_row = &x[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                    dst[..x0].fill(T::zero());
                    dst[x1..].fill(T::zero());
                    if stride == 1 {
                        let ix0 = (x0 as isize + off_x) as usize;
                        dst[x0..x1].copy_from_slice(&src_row[ix0..ix0 + (x1 - x0)]);
                    } else {
                        for ox in x0..x1 {
                            dst[ox] = src_row[(ox as isize * stride as isize + off_x) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column-matrix gradient back onto the input layout.
fn col2im_add<T: Scalar>(
    cols: &[T],
    gx: &mut [T],
    (c_in, h, w): (usize, usize, usize),
    (ho, wo): (usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
) {
    let p = ho * wo;
    for c in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let off_y = ky as isize - pad as isize;
                let off_x = kx as isize - pad as isize;
                let (x0, x1) = valid_span(w, wo, stride, off_x);
                for oy in 0..ho {
                    let iy = oy as isize * stride as isize + off_y;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &cols[row * p + oy * wo..row * p + (oy + 1) * wo];
                    let dst = &mut gx[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                    for ox in x0..x1 {
                        let ix = (ox as isize * stride as isize + off_x) as usize;
                        dst[ix] = dst[ix] + src[ox];
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// 2D convolution, `x: N×C×H×W`, `w: O×C×k×k`, square kernel, symmetric
    /// zero padding. Column buffers are rebuilt in the backward pass instead
    /// of being kept alive.
    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 4 || sw.len() != 4 || sw[2] != sw[3] || sx[1] != sw[1] {
            return Err(TensorError::shape("conv2d", format!("x {sx:?} vs w {sw:?}")));
        }
        if stride == 0 {
            return Err(TensorError::arg("conv2d", "stride must be positive".to_string()));
        }
        let (n, c_in, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (o, k) = (sw[0], sw[2]);
        let (ho, wo) = match (out_dim(h, k, stride, pad), out_dim(wd, k, stride, pad)) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => {
                return Err(TensorError::arg(
                    "conv2d",
                    format!("kernel {k} stride {stride} pad {pad} does not fit {h}x{wd}"),
                ))
            }
        };
        if let Some(bv) = b {
            let sb = self.shape(bv);
            if sb != vec![o] {
                return Err(TensorError::shape("conv2d", format!("bias {sb:?}, expected [{o}]")));
            }
        }

        let ckk = c_in * k * k;
        let p = ho * wo;
        let direct = k == 1 && stride == 1 && pad == 0;
        let (dx, dw) = (self.data(x), self.data(w));
        let mut out = vec![T::zero(); n * o * p];
        let mut scratch = if direct { Vec::new() } else { vec![T::zero(); ckk * p] };
        for i in 0..n {
            let xs = &dx[i * c_in * h * wd..(i + 1) * c_in * h * wd];
            let cols: &[T] = if direct {
                xs
            } else {
                im2col(xs, &mut scratch, (c_in, h, wd), (ho, wo), k, stride, pad);
                &scratch
            };
            T::gemm(
                o, ckk, p,
                T::one(), &dw, ckk as isize, 1,
                cols, p as isize, 1,
                T::zero(), &mut out[i * o * p..(i + 1) * o * p], p as isize, 1,
            );
        }
        if let Some(bv) = b {
            let db = self.data(bv);
            for sample in out.chunks_mut(o * p) {
                for (ch, &bi) in sample.chunks_mut(p).zip(db.iter()) {
                    for v in ch {
                        *v = *v + bi;
                    }
                }
            }
        }

        let mut inputs = vec![x, w];
        if let Some(bv) = b {
            inputs.push(bv);
        }
        Ok(self.push_op(vec![n, o, ho, wo], out, &inputs, || {
            Box::new(move |g, sink| {
                let mut cols = if direct { Vec::new() } else { vec![T::zero(); ckk * p] };
                let mut dcols = if direct { Vec::new() } else { vec![T::zero(); ckk * p] };
                for i in 0..n {
                    let gs = &g[i * o * p..(i + 1) * o * p];
                    {
                        // dw += g · colsᵀ
                        let xs = &dx[i * c_in * h * wd..(i + 1) * c_in * h * wd];
                        let cref: &[T] = if direct {
                            xs
                        } else {
                            im2col(xs, &mut cols, (c_in, h, wd), (ho, wo), k, stride, pad);
                            &cols
                        };
                        T::gemm(
                            o, p, ckk,
                            T::one(), gs, p as isize, 1,
                            cref, 1, p as isize,
                            T::one(), sink.buf(w), ckk as isize, 1,
                        );
                    }
                    // dcols = wᵀ · g, scattered back to the input layout
                    let gxs = sink.buf(x);
                    if direct {
                        T::gemm(
                            ckk, o, p,
                            T::one(), &dw, 1, ckk as isize,
                            gs, p as isize, 1,
                            T::one(), &mut gxs[i * c_in * h * wd..(i + 1) * c_in * h * wd], p as isize, 1,
                        );
                    } else {
                        T::gemm(
                            ckk, o, p,
                            T::one(), &dw, 1, ckk as isize,
                            gs, p as isize, 1,
                            T::zero(), &mut dcols, p as isize, 1,
                        );
                        col2im_add(
                            &dcols,
                            &mut gxs[i * c_in * h * wd..(i + 1) * c_in * h * wd],
                            (c_in, h, wd), (ho, wo), k, stride, pad,
                        );
                    }
                }
                if let Some(bv) = b {
                    let gb = sink.buf(bv);
                    for sample in g.chunks(o * p) {
                        for (gbo, ch) in gb.iter_mut().zip(sample.chunks(p)) {
                            for &v in ch {
                                *gbo = *gbo + v;
                            }
                        }
                    }
                }
            })
        }))
    }

    /// 2×2 mean pooling with stride 2; trailing odd rows/columns are dropped.
    pub fn avg_pool2d(&self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(TensorError::shape("avg_pool2d", format!("expected rank 4, got {s:?}")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if h == 0 || w == 0 {
            return Err(TensorError::arg("avg_pool2d", format!("input {h}x{w} too small")));
        }
        // An axis of extent 1 saturates: the window shrinks to 1 there so
        // repeated pooling bottoms out at 1x1 instead of erroring.
        let (kh, kw) = (2.min(h), 2.min(w));
        let (ho, wo) = ((h / 2).max(1), (w / 2).max(1));
        let dx = self.data(x);
        let inv = T::from_f64(1.0 / (kh * kw) as f64);
        let mut out = vec![T::zero(); n * c * ho * wo];
        for nc in 0..n * c {
            let src = &dx[nc * h * w..(nc + 1) * h * w];
            let dst = &mut out[nc * ho * wo..(nc + 1) * ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let i = kh * oy * w + kw * ox;
                    let mut acc = T::zero();
                    for dy in 0..kh {
                        for dx_ in 0..kw {
                            acc = acc + src[i + dy * w + dx_];
                        }
                    }
                    dst[oy * wo + ox] = acc * inv;
                }
            }
        }
        Ok(self.push_op(vec![n, c, ho, wo], out, &[x], || {
            Box::new(move |g, sink| {
                let gx = sink.buf(x);
                for nc in 0..n * c {
                    let gsrc = &g[nc * ho * wo..(nc + 1) * ho * wo];
                    let gdst = &mut gx[nc * h * w..(nc + 1) * h * w];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let share = gsrc[oy * wo + ox] * inv;
                            let i = kh * oy * w + kw * ox;
                            for dy in 0..kh {
                                for dx_ in 0..kw {
                                    gdst[i + dy * w + dx_] = gdst[i + dy * w + dx_] + share;
                                }
                            }
                        }
                    }
                }
            })
        }))
    }
}
