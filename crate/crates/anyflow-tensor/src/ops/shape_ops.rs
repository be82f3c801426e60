use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

impl<T: Scalar> Tape<T> {
    /// Reinterprets the element buffer under a new shape. Zero-copy; the
    /// gradient passes through unchanged.
    pub fn reshape(&self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let old = self.shape(x);
        let numel: usize = shape.iter().product();
        if numel != self.numel(x) {
            return Err(TensorError::shape("reshape", format!("{old:?} -> {shape:?}")));
        }
        Ok(self.push_view(shape, self.data(x), x, || {
            Box::new(move |g, sink| {
                let gx = sink.buf(x);
                for (a, &b) in gx.iter_mut().zip(g) {
                    *a = *a + b;
                }
            })
        }))
    }

    /// Cuts the gradient path: the result shares the value buffer but is
    /// treated as a constant by `backward`.
    pub fn detach(&self, x: Var) -> Var {
        self.constant(self.value(x))
    }

    /// Center-window crop of the spatial dims of an `N×C×H×W` tensor.
    pub fn crop_spatial(&self, x: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 || h > s[2] || w > s[3] || h == 0 || w == 0 {
            return Err(TensorError::arg("crop_spatial", format!("window {h}x{w} from {s:?}")));
        }
        let (nc, hin, win) = (s[0] * s[1], s[2], s[3]);
        let top = (hin - h) / 2;
        let left = (win - w) / 2;
        let dx = self.data(x);
        let mut out = vec![T::zero(); nc * h * w];
        for p in 0..nc {
            for y in 0..h {
                let src = (p * hin + top + y) * win + left;
                out[(p * h + y) * w..(p * h + y + 1) * w].copy_from_slice(&dx[src..src + w]);
            }
        }
        Ok(self.push_op(vec![s[0], s[1], h, w], out, &[x], || {
            Box::new(move |g, sink| {
                let gx = sink.buf(x);
                for p in 0..nc {
                    for y in 0..h {
                        let dst = (p * hin + top + y) * win + left;
                        let src = &g[(p * h + y) * w..(p * h + y + 1) * w];
                        for (i, &gv) in src.iter().enumerate() {
                            gx[dst + i] = gx[dst + i] + gv;
                        }
                    }
                }
            })
        }))
    }

    /// Concatenates tensors along `axis`. All other dims must agree.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::arg("concat", "no inputs".to_string()));
        }
        let first = self.shape(parts[0]);
        if axis >= first.len() {
            return Err(TensorError::arg("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut axis_lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::shape("concat", format!("{first:?} vs {s:?} along {axis}")));
            }
            axis_lens.push(s[axis]);
        }
        let total: usize = axis_lens.iter().sum();
        let mut shape = first.clone();
        shape[axis] = total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();

        let datas: Vec<_> = parts.iter().map(|&p| self.data(p)).collect();
        let mut out = vec![T::zero(); outer * total * inner];
        for o in 0..outer {
            let mut off = 0;
            for (d, &len) in datas.iter().zip(&axis_lens) {
                let src = &d[o * len * inner..(o + 1) * len * inner];
                let dst = &mut out[(o * total + off) * inner..(o * total + off + len) * inner];
                dst.copy_from_slice(src);
                off += len;
            }
        }

        let parts_owned = parts.to_vec();
        let lens = axis_lens;
        Ok(self.push_op(shape, out, parts, || {
            Box::new(move |g, sink| {
                for o in 0..outer {
                    let mut off = 0;
                    for (&p, &len) in parts_owned.iter().zip(&lens) {
                        let gp = sink.buf(p);
                        let dst = &mut gp[o * len * inner..(o + 1) * len * inner];
                        let src = &g[(o * total + off) * inner..(o * total + off + len) * inner];
                        for (a, &b) in dst.iter_mut().zip(src) {
                            *a = *a + b;
                        }
                        off += len;
                    }
                }
            })
        }))
    }
}
