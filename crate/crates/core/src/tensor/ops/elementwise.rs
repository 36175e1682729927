use crate::error::{bail, Result};
use crate::tensor::shape::strides;
use crate::tensor::branch;
use crate::tensor::{Real, Shape, Tensor};

/// Numpy-style broadcast of two shapes, right-aligned.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of `out` (row-major), the linear index into `src` it
/// reads from under broadcasting.
pub(crate) fn broadcast_index_map(src: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - src.len();
    let src_strides = strides(src);
    let eff: Vec<usize> = (0..out.len())
        .map(|i| {
            if i < offset || src[i - offset] == 1 {
                0
            } else {
                src_strides[i - offset]
            }
        })
        .collect();
    let total: usize = out.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; out.len()];
    let mut lin = 0usize;
    for _ in 0..total {
        map.push(lin);
        for d in (0..out.len()).rev() {
            idx[d] += 1;
            lin += eff[d];
            if idx[d] < out[d] {
                break;
            }
            lin -= eff[d] * out[d];
            idx[d] = 0;
        }
    }
    map
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl<F: Real> Tensor<F> {
    pub fn add(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(other, Binary::Mul)
    }

    fn binary(&self, other: &Tensor<F>, kind: Binary) -> Result<Tensor<F>> {
        let Some(out_dims) = broadcast_shape(self.dims(), other.dims()) else {
            bail!(
                Dimension,
                "cannot broadcast {} with {}",
                self.shape(),
                other.shape()
            );
        };
        let same = self.dims() == other.dims();
        let (ia, ib) = if same {
            (None, None)
        } else {
            (
                Some(broadcast_index_map(self.dims(), &out_dims)),
                Some(broadcast_index_map(other.dims(), &out_dims)),
            )
        };
        let n: usize = out_dims.iter().product();
        let a = self.data();
        let b = other.data();
        let at = |i: usize| ia.as_ref().map_or(i, |m| m[i]);
        let bt = |i: usize| ib.as_ref().map_or(i, |m| m[i]);
        let data: Vec<F> = (0..n)
            .map(|i| {
                let (x, y) = (a[at(i)], b[bt(i)]);
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                }
            })
            .collect();

        let (lhs, rhs) = (self.clone(), other.clone());
        Tensor::from_op(
            match kind {
                Binary::Add => "add",
                Binary::Sub => "sub",
                Binary::Mul => "mul",
            },
            Shape::new(out_dims),
            data,
            vec![self.clone(), other.clone()],
            move |g, needs| {
                let at = |i: usize| ia.as_ref().map_or(i, |m| m[i]);
                let bt = |i: usize| ib.as_ref().map_or(i, |m| m[i]);
                let ga = needs[0].then(|| {
                    let mut ga = vec![F::zero(); lhs.numel()];
                    for (i, &gi) in g.iter().enumerate() {
                        let v = match kind {
                            Binary::Add | Binary::Sub => gi,
                            Binary::Mul => gi * rhs.data()[bt(i)],
                        };
                        ga[at(i)] = ga[at(i)] + v;
                    }
                    ga
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![F::zero(); rhs.numel()];
                    for (i, &gi) in g.iter().enumerate() {
                        let v = match kind {
                            Binary::Add => gi,
                            Binary::Sub => -gi,
                            Binary::Mul => gi * lhs.data()[at(i)],
                        };
                        gb[bt(i)] = gb[bt(i)] + v;
                    }
                    gb
                });
                vec![ga, gb]
            },
        )
    }

    pub fn scale(&self, factor: F) -> Result<Tensor<F>> {
        let data = self.data().iter().map(|&v| v * factor).collect();
        Tensor::from_op(
            "scale",
            self.shape().clone(),
            data,
            vec![self.clone()],
            move |g, _| vec![Some(g.iter().map(|&v| v * factor).collect())],
        )
    }

    pub fn add_scalar(&self, value: F) -> Result<Tensor<F>> {
        let data = self.data().iter().map(|&v| v + value).collect();
        Tensor::from_op(
            "add_scalar",
            self.shape().clone(),
            data,
            vec![self.clone()],
            |g, _| vec![Some(g.to_vec())],
        )
    }

    pub fn relu(&self) -> Result<Tensor<F>> {
        if branch::tracing() {
            branch::record(self.data().chunks(64).map(|c| {
                c.iter().fold(0u64, |bits, &v| bits << 1 | u64::from(v > F::zero()))
            }));
        }
        let data = self.data().iter().map(|&v| v.max(F::zero())).collect();
        let input = self.clone();
        Tensor::from_op(
            "relu",
            self.shape().clone(),
            data,
            vec![self.clone()],
            move |g, _| {
                let gx = g
                    .iter()
                    .zip(input.data())
                    .map(|(&gi, &x)| if x > F::zero() { gi } else { F::zero() })
                    .collect();
                vec![Some(gx)]
            },
        )
    }

    /// Repeats broadcast dimensions to reach `dims`.
    pub fn broadcast_to(&self, dims: &[usize]) -> Result<Tensor<F>> {
        match broadcast_shape(self.dims(), dims) {
            Some(out) if out == dims => {}
            _ => bail!(
                Dimension,
                "cannot broadcast {} to {}",
                self.shape(),
                Shape::from(dims)
            ),
        }
        let map = broadcast_index_map(self.dims(), dims);
        let data = map.iter().map(|&i| self.data()[i]).collect();
        let src_len = self.numel();
        Tensor::from_op(
            "broadcast_to",
            Shape::from(dims),
            data,
            vec![self.clone()],
            move |g, _| {
                let mut gx = vec![F::zero(); src_len];
                for (&i, &gi) in map.iter().zip(g) {
                    gx[i] = gx[i] + gi;
                }
                vec![Some(gx)]
            },
        )
    }
}
