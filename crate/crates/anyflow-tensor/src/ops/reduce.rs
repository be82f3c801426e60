use crate::data::TensorData;
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

impl<T: Scalar> Tape<T> {
    pub fn sum_all(&self, a: Var) -> Var {
        let da = self.data(a);
        let s: T = da.iter().copied().sum();
        self.push_op(vec![], vec![s], &[a], || {
            Box::new(move |g, sink| {
                let gi = g[0];
                for ga in sink.buf(a).iter_mut() {
                    *ga = *ga + gi;
                }
            })
        })
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let da = self.data(a);
        let n = T::from_f64(da.len() as f64);
        let s: T = da.iter().copied().sum();
        self.push_op(vec![], vec![s / n], &[a], || {
            Box::new(move |g, sink| {
                let gi = g[0] / n;
                for ga in sink.buf(a).iter_mut() {
                    *ga = *ga + gi;
                }
            })
        })
    }

    /// Mean absolute difference. Subgradient of |·| at 0 is 0.
    pub fn l1_loss(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::shape("l1_loss", format!("{sa:?} vs {sb:?}")));
        }
        let (da, db) = (self.data(a), self.data(b));
        let n = T::from_f64(da.len() as f64);
        let s: T = da.iter().zip(db.iter()).map(|(&x, &y)| (x - y).abs()).sum();
        Ok(self.push_op(vec![], vec![s / n], &[a, b], || {
            Box::new(move |g, sink| {
                let gi = g[0] / n;
                {
                    let ga = sink.buf(a);
                    for ((gaj, &x), &y) in ga.iter_mut().zip(da.iter()).zip(db.iter()) {
                        let d = x - y;
                        if d > T::zero() {
                            *gaj = *gaj + gi;
                        } else if d < T::zero() {
                            *gaj = *gaj - gi;
                        }
                    }
                }
                let gb = sink.buf(b);
                for ((gbj, &x), &y) in gb.iter_mut().zip(da.iter()).zip(db.iter()) {
                    let d = x - y;
                    if d > T::zero() {
                        *gbj = *gbj - gi;
                    } else if d < T::zero() {
                        *gbj = *gbj + gi;
                    }
                }
            })
        }))
    }

    /// Sum of `w_i * |a_i - b_i|`. The caller controls normalization through
    /// the weights (e.g. a validity mask divided by its population count).
    pub fn weighted_l1_loss(&self, a: Var, b: Var, weights: &TensorData<T>) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb || sa != weights.shape() {
            return Err(TensorError::shape(
                "weighted_l1_loss",
                format!("{sa:?} vs {sb:?} vs weights {:?}", weights.shape()),
            ));
        }
        let (da, db) = (self.data(a), self.data(b));
        let w = weights.shared();
        let s: T = da
            .iter()
            .zip(db.iter())
            .zip(w.iter())
            .map(|((&x, &y), &wi)| wi * (x - y).abs())
            .sum();
        Ok(self.push_op(vec![], vec![s], &[a, b], || {
            Box::new(move |g, sink| {
                let gi = g[0];
                {
                    let ga = sink.buf(a);
                    for (j, gaj) in ga.iter_mut().enumerate() {
                        let d = da[j] - db[j];
                        if d > T::zero() {
                            *gaj = *gaj + gi * w[j];
                        } else if d < T::zero() {
                            *gaj = *gaj - gi * w[j];
                        }
                    }
                }
                let gb = sink.buf(b);
                for (j, gbj) in gb.iter_mut().enumerate() {
                    let d = da[j] - db[j];
                    if d > T::zero() {
                        *gbj = *gbj - gi * w[j];
                    } else if d < T::zero() {
                        *gbj = *gbj + gi * w[j];
                    }
                }
            })
        }))
    }
}
