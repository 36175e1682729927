use crate::error::Result;
use crate::tensor::{BatchNormMode, Real, RngState, RunningStats, Tensor};

pub(crate) const INIT_STD: f64 = 0.02;

pub(crate) fn trunc_normal<F: Real>(dims: &[usize], rng: &mut RngState) -> Tensor<F> {
    let n = dims.iter().product();
    let data = (0..n)
        .map(|_| F::lit(rng.truncated_normal(INIT_STD, 2.0)))
        .collect();
    Tensor::from_vec(dims, data)
        .expect("length matches")
        .with_grad(true)
}

pub(crate) fn param_zeros<F: Real>(dims: &[usize]) -> Tensor<F> {
    Tensor::zeros(dims).with_grad(true)
}

pub(crate) fn param_ones<F: Real>(dims: &[usize]) -> Tensor<F> {
    Tensor::ones(dims).with_grad(true)
}

/// `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear<F: Real> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Real> Linear<F> {
    pub fn new(input: usize, output: usize, rng: &mut RngState) -> Self {
        Self {
            weight: trunc_normal(&[input, output], rng),
            bias: param_zeros(&[output]),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        x.matmul(&self.weight)?.add(&self.bias)
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[1]
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm<F: Real> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
}

impl<F: Real> LayerNorm<F> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: param_ones(&[dim]),
            beta: param_zeros(&[dim]),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        x.layer_norm(&self.gamma, &self.beta)
    }
}

/// conv3d -> batchnorm3d -> relu -> maxpool3d
#[derive(Clone, Debug)]
pub struct ConvBlock<F: Real> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
    pub bn_gamma: Tensor<F>,
    pub bn_beta: Tensor<F>,
    pub stats: RunningStats<F>,
}

impl<F: Real> ConvBlock<F> {
    /// Kaiming (fan-in) normal weights, zero bias.
    pub fn new(c_in: usize, c_out: usize, kernel: usize, rng: &mut RngState) -> Self {
        let fan_in = c_in * kernel.pow(3);
        let std = (2.0 / fan_in as f64).sqrt();
        let n = c_out * fan_in;
        let w = (0..n).map(|_| F::lit(rng.normal(0.0, std))).collect();
        Self {
            weight: Tensor::from_vec([c_out, c_in, kernel, kernel, kernel], w)
                .expect("length matches")
                .with_grad(true),
            bias: param_zeros(&[c_out]),
            bn_gamma: param_ones(&[c_out]),
            bn_beta: param_zeros(&[c_out]),
            stats: RunningStats::new(c_out),
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.dims()[2]
    }

    /// `train_stats` selects batch statistics (and updates the running ones).
    pub fn forward(&mut self, x: &Tensor<F>, window: usize, train_stats: bool) -> Result<Tensor<F>> {
        let pad = self.kernel() / 2;
        let y = x.conv3d(&self.weight, &self.bias, 1, pad)?;
        let mode = if train_stats {
            BatchNormMode::Train(&mut self.stats)
        } else {
            BatchNormMode::Eval(&self.stats)
        };
        let y = y.batch_norm3d(&self.bn_gamma, &self.bn_beta, mode)?.relu()?;
        Ok(y.max_pool3d(window)?.0)
    }

    pub fn forward_eval(&self, x: &Tensor<F>, window: usize) -> Result<Tensor<F>> {
        let pad = self.kernel() / 2;
        let y = x.conv3d(&self.weight, &self.bias, 1, pad)?;
        let y = y
            .batch_norm3d(&self.bn_gamma, &self.bn_beta, BatchNormMode::Eval(&self.stats))?
            .relu()?;
        Ok(y.max_pool3d(window)?.0)
    }
}
