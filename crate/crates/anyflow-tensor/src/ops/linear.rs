use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

impl<T: Scalar> Tape<T> {
    /// Dense layer: `y = x · wᵀ + b` with `x: M×K`, `w: O×K`, `b: O`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(TensorError::shape("linear", format!("x {sx:?} vs w {sw:?}")));
        }
        let (m, k, o) = (sx[0], sx[1], sw[0]);
        if let Some(b) = b {
            let sb = self.shape(b);
            if sb != vec![o] {
                return Err(TensorError::shape("linear", format!("bias {sb:?}, expected [{o}]")));
            }
        }
        let (dx, dw) = (self.data(x), self.data(w));
        let mut out = vec![T::zero(); m * o];
        if m * k * o > 0 {
            // B = wᵀ: element (kk, oo) lives at w[oo*k + kk].
            T::gemm(m, k, o, T::one(), &dx, k as isize, 1, &dw, 1, k as isize, T::zero(), &mut out, o as isize, 1);
        }
        if let Some(bv) = b {
            let db = self.data(bv);
            for row in out.chunks_mut(o) {
                for (r, &bi) in row.iter_mut().zip(db.iter()) {
                    *r = *r + bi;
                }
            }
        }
        let mut inputs = vec![x, w];
        if let Some(bv) = b {
            inputs.push(bv);
        }
        Ok(self.push_op(vec![m, o], out, &inputs, || {
            Box::new(move |g, sink| {
                if m * k * o > 0 {
                    // dx += g · w
                    T::gemm(m, o, k, T::one(), g, o as isize, 1, &dw, k as isize, 1, T::one(), sink.buf(x), k as isize, 1);
                    // dw += gᵀ · x
                    T::gemm(o, m, k, T::one(), g, 1, o as isize, &dx, k as isize, 1, T::one(), sink.buf(w), k as isize, 1);
                }
                if let Some(bv) = b {
                    let gb = sink.buf(bv);
                    for row in g.chunks(o) {
                        for (gbo, &gi) in gb.iter_mut().zip(row) {
                            *gbo = *gbo + gi;
                        }
                    }
                }
            })
        }))
    }

    /// Plain matrix product `a (M×K) · b (K×N)`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::shape("matmul", format!("{sa:?} vs {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (da, db) = (self.data(a), self.data(b));
        let mut out = vec![T::zero(); m * n];
        if m * k * n > 0 {
            T::gemm(m, k, n, T::one(), &da, k as isize, 1, &db, n as isize, 1, T::zero(), &mut out, n as isize, 1);
        }
        Ok(self.push_op(vec![m, n], out, &[a, b], || {
            Box::new(move |g, sink| {
                if m * k * n == 0 {
                    return;
                }
                // da += g · bᵀ
                T::gemm(m, n, k, T::one(), g, n as isize, 1, &db, 1, n as isize, T::one(), sink.buf(a), k as isize, 1);
                // db += aᵀ · g
                T::gemm(k, m, n, T::one(), &da, 1, k as isize, g, n as isize, 1, T::one(), sink.buf(b), n as isize, 1);
            })
        }))
    }

    /// Inner products between every pixel pair of two `N×D×H×W` feature
    /// maps, scaled by `1/√D`. Row `(b·H + y)·W + x` of the output holds the
    /// correlation of that source pixel against all target pixels.
    pub fn allpairs_correlation(&self, f1: Var, f2: Var) -> Result<Var> {
        let (s1, s2) = (self.shape(f1), self.shape(f2));
        if s1.len() != 4 || s1 != s2 {
            return Err(TensorError::shape("allpairs_correlation", format!("{s1:?} vs {s2:?}")));
        }
        let (n, d, hw) = (s1[0], s1[1], s1[2] * s1[3]);
        let alpha = T::one() / T::from_f64(d as f64).sqrt();
        let (d1, d2) = (self.data(f1), self.data(f2));
        let mut out = vec![T::zero(); n * hw * hw];
        for i in 0..n {
            let a = &d1[i * d * hw..(i + 1) * d * hw];
            let b = &d2[i * d * hw..(i + 1) * d * hw];
            // aᵀ(HW×D) · b(D×HW), both stored channel-major
            T::gemm(
                hw, d, hw,
                alpha, a, 1, hw as isize,
                b, hw as isize, 1,
                T::zero(), &mut out[i * hw * hw..(i + 1) * hw * hw], hw as isize, 1,
            );
        }
        Ok(self.push_op(vec![n * hw, hw], out, &[f1, f2], || {
            Box::new(move |g, sink| {
                for i in 0..n {
                    let a = &d1[i * d * hw..(i + 1) * d * hw];
                    let b = &d2[i * d * hw..(i + 1) * d * hw];
                    let gs = &g[i * hw * hw..(i + 1) * hw * hw];
                    // dF1 += b · gᵀ ; dF2 += a · g (both scaled by alpha)
                    T::gemm(
                        d, hw, hw,
                        alpha, b, hw as isize, 1,
                        gs, 1, hw as isize,
                        T::one(), &mut sink.buf(f1)[i * d * hw..(i + 1) * d * hw], hw as isize, 1,
                    );
                    T::gemm(
                        d, hw, hw,
                        alpha, a, hw as isize, 1,
                        gs, hw as isize, 1,
                        T::one(), &mut sink.buf(f2)[i * d * hw..(i + 1) * d * hw], hw as isize, 1,
                    );
                }
            })
        }))
    }

    /// Transposes the trailing two axes; leading axes batch.
    pub fn transpose_last2(&self, a: Var) -> Result<Var> {
        let sa = self.shape(a);
        if sa.len() < 2 {
            return Err(TensorError::shape(
                "transpose_last2",
                format!("expected rank >= 2, got {sa:?}"),
            ));
        }
        let (m, n) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let batch = sa[..sa.len() - 2].iter().product::<usize>();
        let da = self.data(a);
        let mut out = vec![T::zero(); batch * m * n];
        for b in 0..batch {
            let src = &da[b * m * n..(b + 1) * m * n];
            let dst = &mut out[b * m * n..(b + 1) * m * n];
            for i in 0..m {
                for j in 0..n {
                    dst[j * m + i] = src[i * n + j];
                }
            }
        }
        let mut shape = sa.clone();
        let r = shape.len();
        shape.swap(r - 2, r - 1);
        Ok(self.push_op(shape, out, &[a], || {
            Box::new(move |g, sink| {
                let ga = sink.buf(a);
                for b in 0..batch {
                    let gsrc = &g[b * m * n..(b + 1) * m * n];
                    let gdst = &mut ga[b * m * n..(b + 1) * m * n];
                    for j in 0..n {
                        for i in 0..m {
                            gdst[i * n + j] = gdst[i * n + j] + gsrc[j * m + i];
                        }
                    }
                }
            })
        }))
    }
}
