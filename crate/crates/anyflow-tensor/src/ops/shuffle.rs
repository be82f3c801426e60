use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Copies between `(..., C, H·f, W·f)` and `(..., C·f², H, W)` layouts.
/// `to_depth` selects the space-to-depth direction. Output channel
/// `c·f² + dy·f + dx` holds the `(dy, dx)` phase of input channel `c`.
fn shuffle_copy<T: Scalar>(
    src: &[T],
    dst: &mut [T],
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    to_depth: bool,
    add: bool,
) {
    // (c, h, w) describe the coarse grid; the fine grid is (c·f², h·f, w·f)
    // flattened the other way round.
    for b in 0..batch {
        for ch in 0..c {
            for dy in 0..f {
                for dx in 0..f {
                    let fine_ch = (ch * f + dy) * f + dx;
                    for y in 0..h {
                        let coarse = (((b * c * f * f) + fine_ch) * h + y) * w;
                        let spread = ((b * c + ch) * h * f + y * f + dy) * w * f + dx;
                        for x in 0..w {
                            let (si, di) = if to_depth {
                                (spread + x * f, coarse + x)
                            } else {
                                (coarse + x, spread + x * f)
                            };
                            if add {
                                dst[di] = dst[di] + src[si];
                            } else {
                                dst[di] = src[si];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Space-to-depth: `(..., C, H·f, W·f)` becomes `(..., C·f², H, W)`.
    pub fn pixel_unshuffle(&self, x: Var, f: usize) -> Result<Var> {
        let s = self.shape(x);
        let r = s.len();
        if r < 3 || f == 0 {
            return Err(TensorError::arg("pixel_unshuffle", format!("shape {s:?}, factor {f}")));
        }
        let (c, hf, wf) = (s[r - 3], s[r - 2], s[r - 1]);
        if hf % f != 0 || wf % f != 0 {
            return Err(TensorError::shape("pixel_unshuffle", format!("{hf}x{wf} not divisible by {f}")));
        }
        let (h, w) = (hf / f, wf / f);
        let batch: usize = s[..r - 3].iter().product();
        let mut shape = s.clone();
        shape[r - 3] = c * f * f;
        shape[r - 2] = h;
        shape[r - 1] = w;

        let dx = self.data(x);
        let mut out = vec![T::zero(); dx.len()];
        shuffle_copy(&dx, &mut out, batch, c, h, w, f, true, false);
        Ok(self.push_op(shape, out, &[x], || {
            Box::new(move |g, sink| {
                shuffle_copy(g, sink.buf(x), batch, c, h, w, f, false, true);
            })
        }))
    }

    /// Depth-to-space: `(..., C·f², H, W)` becomes `(..., C, H·f, W·f)`.
    pub fn pixel_shuffle(&self, x: Var, f: usize) -> Result<Var> {
        let s = self.shape(x);
        let r = s.len();
        if r < 3 || f == 0 {
            return Err(TensorError::arg("pixel_shuffle", format!("shape {s:?}, factor {f}")));
        }
        let (cff, h, w) = (s[r - 3], s[r - 2], s[r - 1]);
        if cff % (f * f) != 0 {
            return Err(TensorError::shape("pixel_shuffle", format!("{cff} channels not divisible by {}", f * f)));
        }
        let c = cff / (f * f);
        let batch: usize = s[..r - 3].iter().product();
        let mut shape = s.clone();
        shape[r - 3] = c;
        shape[r - 2] = h * f;
        shape[r - 1] = w * f;

        let dx = self.data(x);
        let mut out = vec![T::zero(); dx.len()];
        shuffle_copy(&dx, &mut out, batch, c, h, w, f, false, false);
        Ok(self.push_op(shape, out, &[x], || {
            Box::new(move |g, sink| {
                shuffle_copy(g, sink.buf(x), batch, c, h, w, f, true, true);
            })
        }))
    }
}
