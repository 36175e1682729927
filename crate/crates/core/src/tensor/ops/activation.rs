use crate::error::{bail, Result};
use crate::tensor::{Real, RngState, Tensor};

/// (outer, extent, inner) view of `dims` around `axis`.
fn split_axis(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

impl<F: Real> Tensor<F> {
    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<F>> {
        if axis >= self.rank() {
            bail!(Dimension, "softmax axis {axis} out of range for {}", self.shape());
        }
        let (outer, extent, inner) = split_axis(self.dims(), axis);
        let x = self.data();
        let mut y = vec![F::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * extent + j) * inner + i;
                let max = (0..extent).fold(F::neg_infinity(), |m, j| m.max(x[at(j)]));
                let mut total = F::zero();
                for j in 0..extent {
                    let e = (x[at(j)] - max).exp();
                    y[at(j)] = e;
                    total = total + e;
                }
                for j in 0..extent {
                    y[at(j)] = y[at(j)] / total;
                }
            }
        }
        let probs = y.clone();
        Tensor::from_op("softmax", self.shape().clone(), y, vec![self.clone()], move |g, _| {
            let mut gx = vec![F::zero(); g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * extent + j) * inner + i;
                    let dot = (0..extent).fold(F::zero(), |acc, j| acc + g[at(j)] * probs[at(j)]);
                    for j in 0..extent {
                        gx[at(j)] = probs[at(j)] * (g[at(j)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - p)`, and the
    /// identity when `train` is false.
    pub fn dropout(&self, p: f64, rng: &mut RngState, train: bool) -> Result<Tensor<F>> {
        if !(0.0..1.0).contains(&p) {
            bail!(Parameter, "dropout probability must lie in [0, 1), got {p}");
        }
        if !train || p == 0.0 {
            return Ok(self.clone());
        }
        let keep_scale = F::lit(1.0 / (1.0 - p));
        let mask: Vec<F> = (0..self.numel())
            .map(|_| if rng.uniform() >= p { keep_scale } else { F::zero() })
            .collect();
        let data = self.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        Tensor::from_op("dropout", self.shape().clone(), data, vec![self.clone()], move |g, _| {
            vec![Some(g.iter().zip(&mask).map(|(&gi, &m)| gi * m).collect())]
        })
    }
}
