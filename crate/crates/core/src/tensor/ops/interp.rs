use crate::error::{bail, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Corner-aligned sample positions along one axis: `(lo, hi, t)` per output
/// index, with output `i` at source coordinate `i * (src - 1) / (dst - 1)`.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// For every output voxel, the eight (source index, weight) pairs it blends.
fn stencil(src: [usize; 3], dst: [usize; 3]) -> Vec<[(usize, f64); 8]> {
    let tz = axis_taps(src[0], dst[0]);
    let ty = axis_taps(src[1], dst[1]);
    let tx = axis_taps(src[2], dst[2]);
    let at = |z: usize, y: usize, x: usize| (z * src[1] + y) * src[2] + x;
    let mut out = Vec::with_capacity(dst.iter().product());
    for &(z0, z1, wz) in &tz {
        for &(y0, y1, wy) in &ty {
            for &(x0, x1, wx) in &tx {
                out.push([
                    (at(z0, y0, x0), (1.0 - wz) * (1.0 - wy) * (1.0 - wx)),
                    (at(z0, y0, x1), (1.0 - wz) * (1.0 - wy) * wx),
                    (at(z0, y1, x0), (1.0 - wz) * wy * (1.0 - wx)),
                    (at(z0, y1, x1), (1.0 - wz) * wy * wx),
                    (at(z1, y0, x0), wz * (1.0 - wy) * (1.0 - wx)),
                    (at(z1, y0, x1), wz * (1.0 - wy) * wx),
                    (at(z1, y1, x0), wz * wy * (1.0 - wx)),
                    (at(z1, y1, x1), wz * wy * wx),
                ]);
            }
        }
    }
    out
}

/// Trilinear resampling of a `[D, H, W]` raster to any target extents,
/// corner-aligned. Works for both up- and down-sampling.
pub fn resample_trilinear<F: Real>(data: &[F], src: [usize; 3], dst: [usize; 3]) -> Vec<F> {
    if src == dst {
        return data.to_vec();
    }
    stencil(src, dst)
        .iter()
        .map(|taps| {
            taps.iter()
                .filter(|(_, w)| *w != 0.0)
                .fold(F::zero(), |acc, &(i, w)| acc + data[i] * F::lit(w))
        })
        .collect()
}

impl<F: Real> Tensor<F> {
    /// Trilinear upsampling of a `[D, H, W]` tensor; every target extent must
    /// be at least the source extent.
    pub fn trilinear_upsample(&self, target: [usize; 3]) -> Result<Tensor<F>> {
        if self.rank() != 3 {
            bail!(Dimension, "trilinear_upsample expects [D, H, W], got {}", self.shape());
        }
        let src = [self.dims()[0], self.dims()[1], self.dims()[2]];
        if src.iter().zip(&target).any(|(&s, &t)| t < s) {
            bail!(
                Parameter,
                "upsample target {:?} smaller than source {}",
                target,
                self.shape()
            );
        }
        let taps = stencil(src, target);
        let data = taps
            .iter()
            .map(|t| {
                t.iter()
                    .filter(|(_, w)| *w != 0.0)
                    .fold(F::zero(), |acc, &(i, w)| acc + self.data()[i] * F::lit(w))
            })
            .collect();
        let n = self.numel();
        Tensor::from_op(
            "trilinear_upsample",
            Shape::from(target),
            data,
            vec![self.clone()],
            move |g, _| {
                let mut gx = vec![F::zero(); n];
                for (t, &gi) in taps.iter().zip(g) {
                    for &(i, w) in t {
                        gx[i] = gx[i] + gi * F::lit(w);
                    }
                }
                vec![Some(gx)]
            },
        )
    }
}
