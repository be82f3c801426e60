use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

impl<T: Scalar> Tape<T> {
    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(TensorError::arg("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let dx = self.data(x);
        let mut out = vec![T::zero(); dx.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut max = T::neg_infinity();
                for j in 0..n {
                    let v = dx[base + j * inner];
                    if v > max {
                        max = v;
                    }
                }
                let mut denom = T::zero();
                for j in 0..n {
                    let e = (dx[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    denom = denom + e;
                }
                for j in 0..n {
                    out[base + j * inner] = out[base + j * inner] / denom;
                }
            }
        }
        let y_arc = std::sync::Arc::new(out.clone());
        Ok(self.push_op(shape, out, &[x], || {
            Box::new(move |g, sink| {
                let gx = sink.buf(x);
                let y = &y_arc;
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let mut dot = T::zero();
                        for j in 0..n {
                            let k = base + j * inner;
                            dot = dot + g[k] * y[k];
                        }
                        for j in 0..n {
                            let k = base + j * inner;
                            gx[k] = gx[k] + y[k] * (g[k] - dot);
                        }
                    }
                }
            })
        }))
    }
}
