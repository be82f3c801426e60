use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

impl<T: Scalar> Tape<T> {
    fn check_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("add", a, b)?;
        let (da, db) = (self.data(a), self.data(b));
        let out: Vec<T> = da.iter().zip(db.iter()).map(|(&x, &y)| x + y).collect();
        Ok(self.push_op(self.shape(a), out, &[a, b], || {
            Box::new(move |g, sink| {
                for (ga, &gi) in sink.buf(a).iter_mut().zip(g) {
                    *ga = *ga + gi;
                }
                for (gb, &gi) in sink.buf(b).iter_mut().zip(g) {
                    *gb = *gb + gi;
                }
            })
        }))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("sub", a, b)?;
        let (da, db) = (self.data(a), self.data(b));
        let out: Vec<T> = da.iter().zip(db.iter()).map(|(&x, &y)| x - y).collect();
        Ok(self.push_op(self.shape(a), out, &[a, b], || {
            Box::new(move |g, sink| {
                for (ga, &gi) in sink.buf(a).iter_mut().zip(g) {
                    *ga = *ga + gi;
                }
                for (gb, &gi) in sink.buf(b).iter_mut().zip(g) {
                    *gb = *gb - gi;
                }
            })
        }))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("mul", a, b)?;
        let (da, db) = (self.data(a), self.data(b));
        let out: Vec<T> = da.iter().zip(db.iter()).map(|(&x, &y)| x * y).collect();
        Ok(self.push_op(self.shape(a), out, &[a, b], || {
            let (da, db) = (da.clone(), db.clone());
            Box::new(move |g, sink| {
                for ((ga, &gi), &y) in sink.buf(a).iter_mut().zip(g).zip(db.iter()) {
                    *ga = *ga + gi * y;
                }
                for ((gb, &gi), &x) in sink.buf(b).iter_mut().zip(g).zip(da.iter()) {
                    *gb = *gb + gi * x;
                }
            })
        }))
    }

    pub fn scale(&self, a: Var, c: T) -> Var {
        let da = self.data(a);
        let out: Vec<T> = da.iter().map(|&x| x * c).collect();
        self.push_op(self.shape(a), out, &[a], || {
            Box::new(move |g, sink| {
                for (ga, &gi) in sink.buf(a).iter_mut().zip(g) {
                    *ga = *ga + gi * c;
                }
            })
        })
    }

    pub fn add_scalar(&self, a: Var, c: T) -> Var {
        let da = self.data(a);
        let out: Vec<T> = da.iter().map(|&x| x + c).collect();
        self.push_op(self.shape(a), out, &[a], || {
            Box::new(move |g, sink| {
                for (ga, &gi) in sink.buf(a).iter_mut().zip(g) {
                    *ga = *ga + gi;
                }
            })
        })
    }

    /// 1 - x, handy for GRU gate mixing.
    pub fn one_minus(&self, a: Var) -> Var {
        self.add_scalar(self.scale(a, -T::one()), T::one())
    }

    pub fn relu(&self, a: Var) -> Var {
        let da = self.data(a);
        let out: Vec<T> = da.iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        self.push_op(self.shape(a), out, &[a], || {
            Box::new(move |g, sink| {
                // Subgradient at 0 is 0.
                for ((ga, &gi), &x) in sink.buf(a).iter_mut().zip(g).zip(da.iter()) {
                    if x > T::zero() {
                        *ga = *ga + gi;
                    }
                }
            })
        })
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let da = self.data(a);
        let out: Vec<T> = da
            .iter()
            .map(|&x| {
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            })
            .collect();
        let saved = out.clone();
        self.push_op(self.shape(a), out, &[a], || {
            Box::new(move |g, sink| {
                for ((ga, &gi), &y) in sink.buf(a).iter_mut().zip(g).zip(saved.iter()) {
                    *ga = *ga + gi * y * (T::one() - y);
                }
            })
        })
    }

    /// Hyperbolic tangent, pinched into the open interval (−1, 1) so
    /// saturated values never reach ±1 exactly.
    pub fn tanh(&self, a: Var) -> Var {
        let da = self.data(a);
        let bound = T::one() - T::epsilon() / (T::one() + T::one());
        let out: Vec<T> = da.iter().map(|&x| x.tanh().max(-bound).min(bound)).collect();
        let saved = out.clone();
        self.push_op(self.shape(a), out, &[a], || {
            Box::new(move |g, sink| {
                for ((ga, &gi), &y) in sink.buf(a).iter_mut().zip(g).zip(saved.iter()) {
                    *ga = *ga + gi * (T::one() - y * y);
                }
            })
        })
    }

    /// Clamp to `[lo, hi]`; gradient passes only strictly inside the band.
    pub fn clamp(&self, a: Var, lo: T, hi: T) -> Var {
        let da = self.data(a);
        let out: Vec<T> = da.iter().map(|&x| x.max(lo).min(hi)).collect();
        self.push_op(self.shape(a), out, &[a], || {
            Box::new(move |g, sink| {
                for ((ga, &gi), &x) in sink.buf(a).iter_mut().zip(g).zip(da.iter()) {
                    if x > lo && x < hi {
                        *ga = *ga + gi;
                    }
                }
            })
        })
    }
}
