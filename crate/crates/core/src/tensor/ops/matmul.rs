use super::elementwise::{broadcast_index_map, broadcast_shape};
use crate::error::{bail, Result};
use crate::tensor::{Real, Shape, Tensor};

/// c[m,p] += a[m,k] * b[k,p]
fn gemm_acc<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let row = &mut c[i * p..(i + 1) * p];
        for l in 0..k {
            let av = a[i * k + l];
            if av == F::zero() {
                continue;
            }
            let brow = &b[l * p..(l + 1) * p];
            for (cv, &bv) in row.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// c[m,k] += g[m,p] * b[k,p]^T
fn gemm_nt_acc<F: Real>(g: &[F], b: &[F], c: &mut [F], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let grow = &g[i * p..(i + 1) * p];
        for l in 0..k {
            let brow = &b[l * p..(l + 1) * p];
            let dot = grow
                .iter()
                .zip(brow)
                .fold(F::zero(), |acc, (&x, &y)| acc + x * y);
            c[i * k + l] = c[i * k + l] + dot;
        }
    }
}

/// c[k,p] += a[m,k]^T * g[m,p]
fn gemm_tn_acc<F: Real>(a: &[F], g: &[F], c: &mut [F], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let grow = &g[i * p..(i + 1) * p];
        for l in 0..k {
            let av = a[i * k + l];
            if av == F::zero() {
                continue;
            }
            let crow = &mut c[l * p..(l + 1) * p];
            for (cv, &gv) in crow.iter_mut().zip(grow) {
                *cv = *cv + av * gv;
            }
        }
    }
}

impl<F: Real> Tensor<F> {
    /// Batched matrix product `[.., m, k] x [.., k, p] -> [.., m, p]` with
    /// broadcasting over the leading dimensions.
    pub fn matmul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        let (ad, bd) = (self.dims(), other.dims());
        if ad.len() < 2 || bd.len() < 2 {
            bail!(
                Dimension,
                "matmul needs rank >= 2 operands, got {} and {}",
                self.shape(),
                other.shape()
            );
        }
        let (m, k) = (ad[ad.len() - 2], ad[ad.len() - 1]);
        let (k2, p) = (bd[bd.len() - 2], bd[bd.len() - 1]);
        let a_batch = &ad[..ad.len() - 2];
        let b_batch = &bd[..bd.len() - 2];
        let batch = match broadcast_shape(a_batch, b_batch) {
            Some(batch) if k == k2 => batch,
            _ => bail!(
                Dimension,
                "matmul shape mismatch: {} x {}",
                self.shape(),
                other.shape()
            ),
        };
        let a_map = broadcast_index_map(a_batch, &batch);
        let b_map = broadcast_index_map(b_batch, &batch);
        let nb = a_map.len();

        let mut out = vec![F::zero(); nb * m * p];
        let (a, b) = (self.data(), other.data());
        for bi in 0..nb {
            let ao = a_map[bi] * m * k;
            let bo = b_map[bi] * k * p;
            gemm_acc(
                &a[ao..ao + m * k],
                &b[bo..bo + k * p],
                &mut out[bi * m * p..(bi + 1) * m * p],
                m,
                k,
                p,
            );
        }

        let mut out_dims = batch;
        out_dims.extend([m, p]);
        let (lhs, rhs) = (self.clone(), other.clone());
        Tensor::from_op(
            "matmul",
            Shape::new(out_dims),
            out,
            vec![self.clone(), other.clone()],
            move |g, needs| {
                let (a, b) = (lhs.data(), rhs.data());
                let ga = needs[0].then(|| {
                    let mut ga = vec![F::zero(); a.len()];
                    for bi in 0..nb {
                        let ao = a_map[bi] * m * k;
                        let bo = b_map[bi] * k * p;
                        gemm_nt_acc(
                            &g[bi * m * p..(bi + 1) * m * p],
                            &b[bo..bo + k * p],
                            &mut ga[ao..ao + m * k],
                            m,
                            k,
                            p,
                        );
                    }
                    ga
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![F::zero(); b.len()];
                    for bi in 0..nb {
                        let ao = a_map[bi] * m * k;
                        let bo = b_map[bi] * k * p;
                        gemm_tn_acc(
                            &a[ao..ao + m * k],
                            &g[bi * m * p..(bi + 1) * m * p],
                            &mut gb[bo..bo + k * p],
                            m,
                            k,
                            p,
                        );
                    }
                    gb
                });
                vec![ga, gb]
            },
        )
    }
}
