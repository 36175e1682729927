use crate::error::{bail, Result};
use crate::tensor::branch;
use crate::tensor::{Real, Shape, Tensor};

/// Input linear index of the maximum for every output voxel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices(pub Vec<usize>);

impl<F: Real> Tensor<F> {
    /// Non-overlapping 3D max pooling (`stride == window`).
    ///
    /// Ties resolve to the lowest input linear index; the backward pass routes
    /// each output gradient to that single position.
    pub fn max_pool3d(&self, window: usize) -> Result<(Tensor<F>, PoolIndices)> {
        let dims = self.dims();
        if dims.len() != 5 {
            bail!(Dimension, "max_pool3d expects [b, c, D, H, W], got {}", self.shape());
        }
        if window == 0 || dims[2..].iter().any(|&e| e % window != 0 || e == 0) {
            bail!(
                Dimension,
                "max_pool3d window {window} does not divide spatial extents of {}",
                self.shape()
            );
        }
        let (planes, d, h, w) = (dims[0] * dims[1], dims[2], dims[3], dims[4]);
        let (od, oh, ow) = (d / window, h / window, w / window);
        let in_plane = d * h * w;
        let x = self.data();

        let mut out = Vec::with_capacity(planes * od * oh * ow);
        let mut idx = Vec::with_capacity(out.capacity());
        for p in 0..planes {
            let base = p * in_plane;
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut best = base + ((z * window) * h + y * window) * w + xx * window;
                        let mut best_v = x[best];
                        for dz in 0..window {
                            for dy in 0..window {
                                let row = base + ((z * window + dz) * h + y * window + dy) * w;
                                for dx in 0..window {
                                    let i = row + xx * window + dx;
                                    if x[i] > best_v {
                                        best_v = x[i];
                                        best = i;
                                    }
                                }
                            }
                        }
                        out.push(best_v);
                        idx.push(best);
                    }
                }
            }
        }

        branch::record(idx.iter().map(|&i| i as u64));
        let total = self.numel();
        let indices = PoolIndices(idx.clone());
        let mut out_dims = dims.to_vec();
        out_dims[2..].copy_from_slice(&[od, oh, ow]);
        let y = Tensor::from_op(
            "max_pool3d",
            Shape::new(out_dims),
            out,
            vec![self.clone()],
            move |g, _| {
                let mut gx = vec![F::zero(); total];
                for (&i, &gi) in idx.iter().zip(g) {
                    gx[i] = gx[i] + gi;
                }
                vec![Some(gx)]
            },
        )?;
        Ok((y, indices))
    }
}
