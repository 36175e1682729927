use crate::error::{bail, Result};
use crate::tensor::{Real, Shape, Tensor};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// How a batch-norm layer obtains its statistics.
#[derive(Debug)]
pub enum BatchNormMode<'a, F: Real> {
    /// Batch statistics; the running statistics are updated in place.
    Train(&'a mut RunningStats<F>),
    /// Running statistics only.
    Eval(&'a RunningStats<F>),
}

/// Per-channel running mean and (unbiased) variance of a batch-norm layer.
#[derive(Clone, Debug)]
pub struct RunningStats<F: Real> {
    pub mean: Tensor<F>,
    pub var: Tensor<F>,
}

impl<F: Real> RunningStats<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros([channels]),
            var: Tensor::ones([channels]),
        }
    }
}

/// Shared backward of a standardisation `y = gamma * xhat + beta` over
/// groups of `n` elements: returns dx for one group.
fn standardize_backward<F: Real>(dxhat: &[F], xhat: &[F], inv_std: F, out: &mut [F]) {
    let n = F::lit(dxhat.len() as f64);
    let sum_d = dxhat.iter().fold(F::zero(), |a, &b| a + b);
    let sum_dx = dxhat
        .iter()
        .zip(xhat)
        .fold(F::zero(), |a, (&d, &x)| a + d * x);
    for ((o, &d), &x) in out.iter_mut().zip(dxhat).zip(xhat) {
        *o = inv_std / n * (n * d - sum_d - x * sum_dx);
    }
}

impl<F: Real> Tensor<F> {
    /// Normalises over the last axis, then applies the affine `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: &Tensor<F>, beta: &Tensor<F>) -> Result<Tensor<F>> {
        let Some(&d) = self.dims().last() else {
            bail!(Dimension, "layer_norm on a scalar");
        };
        gamma.ensure_shape(&[d], "layer_norm gamma")?;
        beta.ensure_shape(&[d], "layer_norm beta")?;
        let rows = self.numel() / d;
        let eps = F::lit(NORM_EPS);
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());

        let mut xhat = vec![F::zero(); x.len()];
        let mut inv_std = vec![F::zero(); rows];
        let mut y = vec![F::zero(); x.len()];
        let nf = F::lit(d as f64);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().fold(F::zero(), |a, &b| a + b) / nf;
            let var = row.iter().fold(F::zero(), |a, &b| a + (b - mean) * (b - mean)) / nf;
            let is = F::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[r * d + j] = xh;
                y[r * d + j] = gm[j] * xh + bt[j];
            }
        }

        let gamma_c = gamma.clone();
        Tensor::from_op(
            "layer_norm",
            self.shape().clone(),
            y,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g, needs| {
                let gm = gamma_c.data();
                let gx = needs[0].then(|| {
                    let mut gx = vec![F::zero(); g.len()];
                    let mut dxhat = vec![F::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            dxhat[j] = g[r * d + j] * gm[j];
                        }
                        standardize_backward(
                            &dxhat,
                            &xhat[r * d..(r + 1) * d],
                            inv_std[r],
                            &mut gx[r * d..(r + 1) * d],
                        );
                    }
                    gx
                });
                let ggamma = needs[1].then(|| {
                    let mut acc = vec![F::zero(); d];
                    for (i, (&gi, &xh)) in g.iter().zip(&xhat).enumerate() {
                        acc[i % d] = acc[i % d] + gi * xh;
                    }
                    acc
                });
                let gbeta = needs[2].then(|| {
                    let mut acc = vec![F::zero(); d];
                    for (i, &gi) in g.iter().enumerate() {
                        acc[i % d] = acc[i % d] + gi;
                    }
                    acc
                });
                vec![gx, ggamma, gbeta]
            },
        )
    }

    /// Batch normalisation of `[b, c, D, H, W]` per channel.
    ///
    /// Training mode normalises with batch statistics (epsilon 1e-5) and folds
    /// them into the running statistics with momentum 0.1; eval mode uses the
    /// running statistics as is.
    pub fn batch_norm3d(
        &self,
        gamma: &Tensor<F>,
        beta: &Tensor<F>,
        mode: BatchNormMode<'_, F>,
    ) -> Result<Tensor<F>> {
        if self.rank() != 5 {
            bail!(Dimension, "batch_norm3d expects [b, c, D, H, W], got {}", self.shape());
        }
        let dims = self.dims();
        let (b, c) = (dims[0], dims[1]);
        let spatial: usize = dims[2..].iter().product();
        gamma.ensure_shape(&[c], "batch_norm3d gamma")?;
        beta.ensure_shape(&[c], "batch_norm3d beta")?;
        let stats: &RunningStats<F> = match &mode {
            BatchNormMode::Train(s) => s,
            BatchNormMode::Eval(s) => s,
        };
        stats.mean.ensure_shape(&[c], "batch_norm3d running mean")?;
        stats.var.ensure_shape(&[c], "batch_norm3d running var")?;
        let count = b * spatial;
        let train = matches!(mode, BatchNormMode::Train(_));
        if train && count <= 1 {
            bail!(
                Degenerate,
                "batch_norm3d in training mode needs more than one value per channel, got {count}"
            );
        }

        let eps = F::lit(NORM_EPS);
        let x = self.data();
        let at = |bi: usize, ci: usize| (bi * c + ci) * spatial;

        let (mean, var) = match mode {
            BatchNormMode::Train(stats) => {
                let nf = F::lit(count as f64);
                let mut mean = vec![F::zero(); c];
                let mut var = vec![F::zero(); c];
                for ci in 0..c {
                    let mut s = F::zero();
                    for bi in 0..b {
                        s = s + x[at(bi, ci)..at(bi, ci) + spatial]
                            .iter()
                            .fold(F::zero(), |a, &v| a + v);
                    }
                    let m = s / nf;
                    let mut ss = F::zero();
                    for bi in 0..b {
                        ss = ss + x[at(bi, ci)..at(bi, ci) + spatial]
                            .iter()
                            .fold(F::zero(), |a, &v| a + (v - m) * (v - m));
                    }
                    mean[ci] = m;
                    var[ci] = ss / nf;
                }
                let momentum = F::lit(BN_MOMENTUM);
                let unbias = F::lit(count as f64 / (count as f64 - 1.0));
                stats.mean.update_data(|rm| {
                    for (r, &m) in rm.iter_mut().zip(&mean) {
                        *r = (F::one() - momentum) * *r + momentum * m;
                    }
                });
                stats.var.update_data(|rv| {
                    for (r, &v) in rv.iter_mut().zip(&var) {
                        *r = (F::one() - momentum) * *r + momentum * v * unbias;
                    }
                });
                (mean, var)
            }
            BatchNormMode::Eval(stats) => (stats.mean.to_vec(), stats.var.to_vec()),
        };

        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let (gm, bt) = (gamma.data(), beta.data());
        let mut xhat = vec![F::zero(); x.len()];
        let mut y = vec![F::zero(); x.len()];
        for bi in 0..b {
            for ci in 0..c {
                let base = at(bi, ci);
                for s in 0..spatial {
                    let xh = (x[base + s] - mean[ci]) * inv_std[ci];
                    xhat[base + s] = xh;
                    y[base + s] = gm[ci] * xh + bt[ci];
                }
            }
        }

        let gamma_c = gamma.clone();
        Tensor::from_op(
            "batch_norm3d",
            Shape::from(dims),
            y,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g, needs| {
                let gm = gamma_c.data();
                let at = |bi: usize, ci: usize| (bi * c + ci) * spatial;
                let gx = needs[0].then(|| {
                    let mut gx = vec![F::zero(); g.len()];
                    if train {
                        let mut dxhat = vec![F::zero(); count];
                        let mut xh = vec![F::zero(); count];
                        let mut out = vec![F::zero(); count];
                        for ci in 0..c {
                            for bi in 0..b {
                                let base = at(bi, ci);
                                for s in 0..spatial {
                                    dxhat[bi * spatial + s] = g[base + s] * gm[ci];
                                    xh[bi * spatial + s] = xhat[base + s];
                                }
                            }
                            standardize_backward(&dxhat, &xh, inv_std[ci], &mut out);
                            for bi in 0..b {
                                let base = at(bi, ci);
                                gx[base..base + spatial]
                                    .copy_from_slice(&out[bi * spatial..(bi + 1) * spatial]);
                            }
                        }
                    } else {
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = at(bi, ci);
                                let k = gm[ci] * inv_std[ci];
                                for s in 0..spatial {
                                    gx[base + s] = g[base + s] * k;
                                }
                            }
                        }
                    }
                    gx
                });
                let ggamma = needs[1].then(|| {
                    let mut acc = vec![F::zero(); c];
                    for bi in 0..b {
                        for (ci, a) in acc.iter_mut().enumerate() {
                            let base = at(bi, ci);
                            for s in 0..spatial {
                                *a = *a + g[base + s] * xhat[base + s];
                            }
                        }
                    }
                    acc
                });
                let gbeta = needs[2].then(|| {
                    let mut acc = vec![F::zero(); c];
                    for bi in 0..b {
                        for (ci, a) in acc.iter_mut().enumerate() {
                            let base = at(bi, ci);
                            *a = *a + g[base..base + spatial].iter().fold(F::zero(), |a, &v| a + v);
                        }
                    }
                    acc
                });
                vec![gx, ggamma, gbeta]
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngState;

    fn random(dims: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = RngState::new(seed);
        let n = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| rng.normal(1.5, 2.0)).collect()).unwrap()
    }

    fn channel_moments(y: &Tensor<f64>, ci: usize) -> (f64, f64) {
        let d = y.dims();
        let (b, c, s) = (d[0], d[1], d[2] * d[3] * d[4]);
        let vals: Vec<f64> = (0..b)
            .flat_map(|bi| y.data()[(bi * c + ci) * s..(bi * c + ci + 1) * s].to_vec())
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn training_mode_standardizes() {
        let x = random(&[2, 3, 2, 2, 2], 1);
        let mut stats = RunningStats::new(3);
        let y = x
            .batch_norm3d(&Tensor::ones([3]), &Tensor::zeros([3]), BatchNormMode::Train(&mut stats))
            .unwrap();
        for ci in 0..3 {
            let (m, v) = channel_moments(&y, ci);
            assert!(m.abs() < 1e-5);
            // biased variance of standardised data is var / (var + eps)
            assert!((v - 1.0).abs() < 1e-5, "{v}");
        }
        // running stats moved away from (0, 1)
        assert!(stats.mean.data().iter().all(|&m| m != 0.0));
    }

    #[test]
    fn affine_shift_and_scale() {
        let x = random(&[2, 2, 2, 2, 2], 2);
        let mut stats = RunningStats::new(2);
        let y = x
            .batch_norm3d(
                &Tensor::full([2], 2.0),
                &Tensor::full([2], 3.0),
                BatchNormMode::Train(&mut stats),
            )
            .unwrap();
        for ci in 0..2 {
            let (m, v) = channel_moments(&y, ci);
            assert!((m - 3.0).abs() < 1e-5);
            assert!((v.sqrt() - 2.0).abs() < 1e-4);
        }
    }

    #[test]
    fn eval_with_unit_stats_is_affine() {
        let x = random(&[1, 2, 2, 2, 2], 3);
        let stats = RunningStats::new(2);
        let gamma = Tensor::from_f64([2], &[0.5, -1.0]).unwrap();
        let beta = Tensor::from_f64([2], &[0.1, 0.2]).unwrap();
        let y = x.batch_norm3d(&gamma, &beta, BatchNormMode::Eval(&stats)).unwrap();
        for (i, (&yv, &xv)) in y.data().iter().zip(x.data()).enumerate() {
            let ci = i / 8;
            let expected = gamma.data()[ci] * xv + beta.data()[ci];
            assert!((yv - expected).abs() < 1e-4 * (1.0 + xv.abs()));
        }
    }

    #[test]
    fn degenerate_training_batch_rejected() {
        let x = Tensor::<f64>::ones([1, 1, 1, 1, 1]);
        let mut stats = RunningStats::new(1);
        let err = x
            .batch_norm3d(&Tensor::ones([1]), &Tensor::zeros([1]), BatchNormMode::Train(&mut stats))
            .unwrap_err();
        assert!(matches!(err, crate::Error::Degenerate(_)));
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let x = random(&[3, 8], 4);
        let y = x.layer_norm(&Tensor::ones([8]), &Tensor::zeros([8])).unwrap();
        for r in 0..3 {
            let row = &y.data()[r * 8..(r + 1) * 8];
            let m = row.iter().sum::<f64>() / 8.0;
            assert!(m.abs() < 1e-9);
        }
    }
}
