use crate::error::{bail, Result};
use crate::tensor::shape::strides;
use crate::tensor::{numel, Real, Shape, Tensor};

impl<F: Real> Tensor<F> {
    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor<F>> {
        if numel(dims) != self.numel() {
            bail!(
                Dimension,
                "cannot reshape {} into {}",
                self.shape(),
                Shape::from(dims)
            );
        }
        Tensor::from_op(
            "reshape",
            Shape::from(dims),
            self.to_vec(),
            vec![self.clone()],
            |g, _| vec![Some(g.to_vec())],
        )
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<F>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            bail!(Dimension, "invalid permutation {:?} for {}", axes, self.shape());
        }
        let in_dims = self.dims();
        let in_strides = strides(in_dims);
        let out_dims: Vec<usize> = axes.iter().map(|&a| in_dims[a]).collect();
        let gather_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();

        // source index for every output position
        let total = self.numel();
        let mut src = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        let mut lin = 0usize;
        for _ in 0..total {
            src.push(lin);
            for d in (0..rank).rev() {
                idx[d] += 1;
                lin += gather_strides[d];
                if idx[d] < out_dims[d] {
                    break;
                }
                lin -= gather_strides[d] * out_dims[d];
                idx[d] = 0;
            }
        }
        let data = src.iter().map(|&i| self.data()[i]).collect();
        Tensor::from_op(
            "permute",
            Shape::new(out_dims),
            data,
            vec![self.clone()],
            move |g, _| {
                let mut gx = vec![F::zero(); total];
                for (&s, &gi) in src.iter().zip(g) {
                    gx[s] = gi;
                }
                vec![Some(gx)]
            },
        )
    }

    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor<F>> {
        let mut axes: Vec<usize> = (0..self.rank()).collect();
        if a >= axes.len() || b >= axes.len() {
            bail!(Dimension, "transpose axes ({a}, {b}) out of range for {}", self.shape());
        }
        axes.swap(a, b);
        self.permute(&axes)
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<F>> {
        let dims = self.dims();
        if axis >= dims.len() || start + len > dims[axis] {
            bail!(
                Dimension,
                "narrow(axis {axis}, {start}..{}) out of range for {}",
                start + len,
                self.shape()
            );
        }
        let outer: usize = dims[..axis].iter().product();
        let inner: usize = dims[axis + 1..].iter().product();
        let extent = dims[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut out_dims = dims.to_vec();
        out_dims[axis] = len;
        let total = self.numel();
        Tensor::from_op(
            "narrow",
            Shape::new(out_dims),
            data,
            vec![self.clone()],
            move |g, _| {
                let mut gx = vec![F::zero(); total];
                for o in 0..outer {
                    let base = (o * extent + start) * inner;
                    gx[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            },
        )
    }

    /// Joins tensors that agree on every axis except `axis`.
    pub fn concat(parts: &[Tensor<F>], axis: usize) -> Result<Tensor<F>> {
        let Some(first) = parts.first() else {
            bail!(Contract, "concat of zero tensors");
        };
        let rank = first.rank();
        if axis >= rank {
            bail!(Dimension, "concat axis {axis} out of range for {}", first.shape());
        }
        for p in parts {
            let ok = p.rank() == rank
                && (0..rank).all(|d| d == axis || p.dims()[d] == first.dims()[d]);
            if !ok {
                bail!(
                    Dimension,
                    "concat along axis {axis}: {} incompatible with {}",
                    p.shape(),
                    first.shape()
                );
            }
        }
        let outer: usize = first.dims()[..axis].iter().product();
        let inner: usize = first.dims()[axis + 1..].iter().product();
        let extents: Vec<usize> = parts.iter().map(|p| p.dims()[axis]).collect();
        let total_extent: usize = extents.iter().sum();

        let mut data = Vec::with_capacity(outer * total_extent * inner);
        for o in 0..outer {
            for (p, &e) in parts.iter().zip(&extents) {
                data.extend_from_slice(&p.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut out_dims = first.dims().to_vec();
        out_dims[axis] = total_extent;
        Tensor::from_op(
            "concat",
            Shape::new(out_dims),
            data,
            parts.to_vec(),
            move |g, needs| {
                let mut grads: Vec<Option<Vec<F>>> = extents
                    .iter()
                    .zip(needs)
                    .map(|(&e, &n)| n.then(|| Vec::with_capacity(outer * e * inner)))
                    .collect();
                let mut offset = 0;
                for _ in 0..outer {
                    for (gp, &e) in grads.iter_mut().zip(&extents) {
                        if let Some(gp) = gp {
                            gp.extend_from_slice(&g[offset..offset + e * inner]);
                        }
                        offset += e * inner;
                    }
                }
                grads
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_2d() {
        let x = Tensor::<f64>::from_f64([2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let t = x.transpose(0, 1).unwrap();
        assert_eq!(t.dims(), &[3, 2]);
        assert_eq!(t.data(), &[1., 4., 2., 5., 3., 6.]);
    }

    #[test]
    fn narrow_and_concat_invert() {
        let x = Tensor::<f64>::from_f64([2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let a = x.narrow(1, 0, 1).unwrap();
        let b = x.narrow(1, 1, 2).unwrap();
        assert_eq!(a.data(), &[1., 4.]);
        let y = Tensor::concat(&[a, b], 1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn invalid_permutation_rejected() {
        let x = Tensor::<f64>::zeros([2, 3]);
        assert!(x.permute(&[0, 0]).is_err());
        assert!(x.reshape(&[4]).is_err());
    }
}
