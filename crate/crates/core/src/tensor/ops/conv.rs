use crate::error::{bail, Result};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    input: [usize; 3],
    output: [usize; 3],
}

impl Geometry {
    fn in_len(&self) -> usize {
        self.input.iter().product()
    }

    fn out_len(&self) -> usize {
        self.output.iter().product()
    }

    /// Output range along one axis for which `o * stride + kk - pad` lands
    /// inside the input.
    fn valid(&self, axis: usize, kk: usize) -> (usize, usize) {
        let (n_in, n_out) = (self.input[axis] as isize, self.output[axis]);
        let (s, off) = (self.stride as isize, kk as isize - self.pad as isize);
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi = ((n_in - 1 - off).div_euclid(s) + 1).clamp(0, n_out as isize);
        (lo as usize, (hi as usize).max(lo as usize))
    }
}

/// Output extent of a convolution along one axis.
pub fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || k == 0 || k > padded {
        return None;
    }
    Some((padded - k) / stride + 1)
}

impl<F: Real> Tensor<F> {
    /// 3D cross-correlation of `[b, c_in, D, H, W]` with `[c_out, c_in, k, k, k]`.
    pub fn conv3d(
        &self,
        weight: &Tensor<F>,
        bias: &Tensor<F>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<F>> {
        let (xd, wd) = (self.dims(), weight.dims());
        if xd.len() != 5 || wd.len() != 5 {
            bail!(
                Dimension,
                "conv3d expects input [b, c, D, H, W] and weight [o, c, k, k, k], got {} and {}",
                self.shape(),
                weight.shape()
            );
        }
        let k = wd[2];
        if wd[3] != k || wd[4] != k || wd[1] != xd[1] {
            bail!(
                Dimension,
                "conv3d weight {} incompatible with input {}",
                weight.shape(),
                self.shape()
            );
        }
        if stride == 0 {
            bail!(Parameter, "conv3d stride must be >= 1");
        }
        bias.ensure_shape(&[wd[0]], "conv3d bias")?;
        let mut output = [0; 3];
        for a in 0..3 {
            output[a] = match conv_out_extent(xd[2 + a], k, stride, padding) {
                Some(e) => e,
                None => bail!(
                    Dimension,
                    "conv3d kernel {k} larger than padded input {} (padding {padding})",
                    self.shape()
                ),
            };
        }
        let geo = Geometry {
            batch: xd[0],
            c_in: xd[1],
            c_out: wd[0],
            k,
            stride,
            pad: padding,
            input: [xd[2], xd[3], xd[4]],
            output,
        };

        let out = forward(&geo, self.data(), weight.data(), bias.data());
        let (x_c, w_c) = (self.clone(), weight.clone());
        let out_dims = vec![geo.batch, geo.c_out, output[0], output[1], output[2]];
        Tensor::from_op(
            "conv3d",
            Shape::new(out_dims),
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            move |g, needs| {
                let gx = needs[0].then(|| grad_input(&geo, g, w_c.data()));
                let gw = needs[1].then(|| grad_weight(&geo, g, x_c.data()));
                let gb = needs[2].then(|| {
                    let ol = geo.out_len();
                    let mut gb = vec![F::zero(); geo.c_out];
                    for b in 0..geo.batch {
                        for (co, acc) in gb.iter_mut().enumerate() {
                            let base = (b * geo.c_out + co) * ol;
                            *acc = g[base..base + ol].iter().fold(*acc, |a, &v| a + v);
                        }
                    }
                    gb
                });
                vec![gx, gw, gb]
            },
        )
    }
}

/// Visits every (output voxel, input voxel) pair coupled by kernel tap
/// `(kz, ky, kx)`, passing linear offsets within one channel plane.
#[inline]
fn for_each_tap(geo: &Geometry, kz: usize, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize)) {
    let [_, ih, iw] = geo.input;
    let [_, oh, ow] = geo.output;
    let (z0, z1) = geo.valid(0, kz);
    let (y0, y1) = geo.valid(1, ky);
    let (x0, x1) = geo.valid(2, kx);
    if x0 >= x1 {
        return;
    }
    let s = geo.stride;
    for oz in z0..z1 {
        let iz = oz * s + kz - geo.pad;
        for oy in y0..y1 {
            let iy = oy * s + ky - geo.pad;
            let out_row = (oz * oh + oy) * ow;
            let in_row = (iz * ih + iy) * iw;
            let ix0 = x0 * s + kx - geo.pad;
            f(out_row + x0, in_row + ix0, x1 - x0);
        }
    }
}

fn forward<F: Real>(geo: &Geometry, x: &[F], w: &[F], bias: &[F]) -> Vec<F> {
    let (il, ol, k) = (geo.in_len(), geo.out_len(), geo.k);
    let k3 = k * k * k;
    let s = geo.stride;
    let mut out = vec![F::zero(); geo.batch * geo.c_out * ol];
    for b in 0..geo.batch {
        for co in 0..geo.c_out {
            let plane = &mut out[(b * geo.c_out + co) * ol..(b * geo.c_out + co + 1) * ol];
            plane.iter_mut().for_each(|v| *v = bias[co]);
            for ci in 0..geo.c_in {
                let xin = &x[(b * geo.c_in + ci) * il..(b * geo.c_in + ci + 1) * il];
                let wk = &w[(co * geo.c_in + ci) * k3..(co * geo.c_in + ci + 1) * k3];
                for kz in 0..k {
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = wk[(kz * k + ky) * k + kx];
                            for_each_tap(geo, kz, ky, kx, |o, i, n| {
                                let dst = &mut plane[o..o + n];
                                if s == 1 {
                                    for (d, &xv) in dst.iter_mut().zip(&xin[i..i + n]) {
                                        *d = *d + wv * xv;
                                    }
                                } else {
                                    for (j, d) in dst.iter_mut().enumerate() {
                                        *d = *d + wv * xin[i + j * s];
                                    }
                                }
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

fn grad_input<F: Real>(geo: &Geometry, g: &[F], w: &[F]) -> Vec<F> {
    let (il, ol, k) = (geo.in_len(), geo.out_len(), geo.k);
    let k3 = k * k * k;
    let s = geo.stride;
    let mut gx = vec![F::zero(); geo.batch * geo.c_in * il];
    for b in 0..geo.batch {
        for ci in 0..geo.c_in {
            let dst = &mut gx[(b * geo.c_in + ci) * il..(b * geo.c_in + ci + 1) * il];
            for co in 0..geo.c_out {
                let gp = &g[(b * geo.c_out + co) * ol..(b * geo.c_out + co + 1) * ol];
                let wk = &w[(co * geo.c_in + ci) * k3..(co * geo.c_in + ci + 1) * k3];
                for kz in 0..k {
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = wk[(kz * k + ky) * k + kx];
                            for_each_tap(geo, kz, ky, kx, |o, i, n| {
                                for j in 0..n {
                                    let d = &mut dst[i + j * s];
                                    *d = *d + wv * gp[o + j];
                                }
                            });
                        }
                    }
                }
            }
        }
    }
    gx
}

fn grad_weight<F: Real>(geo: &Geometry, g: &[F], x: &[F]) -> Vec<F> {
    let (il, ol, k) = (geo.in_len(), geo.out_len(), geo.k);
    let k3 = k * k * k;
    let s = geo.stride;
    let mut gw = vec![F::zero(); geo.c_out * geo.c_in * k3];
    for co in 0..geo.c_out {
        for ci in 0..geo.c_in {
            let wk = &mut gw[(co * geo.c_in + ci) * k3..(co * geo.c_in + ci + 1) * k3];
            for b in 0..geo.batch {
                let gp = &g[(b * geo.c_out + co) * ol..(b * geo.c_out + co + 1) * ol];
                let xin = &x[(b * geo.c_in + ci) * il..(b * geo.c_in + ci + 1) * il];
                for kz in 0..k {
                    for ky in 0..k {
                        for kx in 0..k {
                            let mut acc = F::zero();
                            for_each_tap(geo, kz, ky, kx, |o, i, n| {
                                for j in 0..n {
                                    acc = acc + gp[o + j] * xin[i + j * s];
                                }
                            });
                            let t = (kz * k + ky) * k + kx;
                            wk[t] = wk[t] + acc;
                        }
                    }
                }
            }
        }
    }
    gw
}
