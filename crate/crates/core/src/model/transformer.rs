use super::layers::{LayerNorm, Linear};
use crate::error::{bail, Result};
use crate::tensor::{Real, RngState, Tensor};

/// Dropout that is active only when it owns a random stream.
pub(crate) struct Dropout<'a> {
    pub p: f64,
    pub rng: Option<&'a mut RngState>,
}

impl Dropout<'_> {
    pub fn inactive() -> Self {
        Dropout { p: 0.0, rng: None }
    }

    pub fn apply<F: Real>(&mut self, x: &Tensor<F>) -> Result<Tensor<F>> {
        match self.rng.as_deref_mut() {
            Some(rng) => x.dropout(self.p, rng, true),
            None => Ok(x.clone()),
        }
    }
}

/// Pre-norm encoder block:
/// `h = x + MHA(LN1(x))`, `out = h + FFN(LN2(h))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock<F: Real> {
    pub ln1: LayerNorm<F>,
    pub query: Linear<F>,
    pub key: Linear<F>,
    pub value: Linear<F>,
    pub out: Linear<F>,
    pub ln2: LayerNorm<F>,
    pub ffn_in: Linear<F>,
    pub ffn_out: Linear<F>,
    pub num_heads: usize,
}

impl<F: Real> TransformerBlock<F> {
    pub fn new(dim: usize, num_heads: usize, ffn_ratio: usize, rng: &mut RngState) -> Self {
        Self {
            ln1: LayerNorm::new(dim),
            query: Linear::new(dim, dim, rng),
            key: Linear::new(dim, dim, rng),
            value: Linear::new(dim, dim, rng),
            out: Linear::new(dim, dim, rng),
            ln2: LayerNorm::new(dim),
            ffn_in: Linear::new(dim, ffn_ratio * dim, rng),
            ffn_out: Linear::new(ffn_ratio * dim, dim, rng),
            num_heads,
        }
    }

    /// Returns the block output and the attention probabilities
    /// `[b, heads, t, t]` (before attention dropout).
    pub(crate) fn forward(
        &self,
        x: &Tensor<F>,
        dropout: &mut Dropout<'_>,
    ) -> Result<(Tensor<F>, Tensor<F>)> {
        let (attended, probs) = self.attention(&self.ln1.forward(x)?, dropout)?;
        let h = x.add(&attended)?;
        let ff = self.ffn_in.forward(&self.ln2.forward(&h)?)?.relu()?;
        let ff = self.ffn_out.forward(&dropout.apply(&ff)?)?;
        Ok((h.add(&ff)?, probs))
    }

    fn attention(&self, x: &Tensor<F>, dropout: &mut Dropout<'_>) -> Result<(Tensor<F>, Tensor<F>)> {
        let &[b, t, d] = x.dims() else {
            bail!(Dimension, "attention expects [b, t, d], got {}", x.shape());
        };
        let h = self.num_heads;
        if d % h != 0 {
            bail!(Dimension, "embedding {d} not divisible into {h} heads");
        }
        let dh = d / h;
        let split = |y: Tensor<F>| y.reshape(&[b, t, h, dh])?.permute(&[0, 2, 1, 3]);
        let q = split(self.query.forward(x)?)?;
        let k = split(self.key.forward(x)?)?;
        let v = split(self.value.forward(x)?)?;

        let scale = F::lit(1.0 / (dh as f64).sqrt());
        let scores = q.matmul(&k.transpose(2, 3)?)?.scale(scale)?;
        let probs = scores.softmax(3)?;
        let context = dropout.apply(&probs)?.matmul(&v)?;
        let merged = context.permute(&[0, 2, 1, 3])?.reshape(&[b, t, d])?;
        Ok((self.out.forward(&merged)?, probs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(dims: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = RngState::new(seed);
        let n = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = RngState::new(1);
        let block = TransformerBlock::<f64>::new(8, 2, 2, &mut rng);
        let x = random(&[2, 5, 8], 2);
        let (y, probs) = block.forward(&x, &mut Dropout::inactive()).unwrap();
        assert_eq!(y.dims(), &[2, 5, 8]);
        assert_eq!(probs.dims(), &[2, 2, 5, 5]);
        for row in probs.data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_weights_give_residual_identity() {
        let mut rng = RngState::new(3);
        let mut block = TransformerBlock::<f64>::new(4, 2, 2, &mut rng);
        for lin in [
            &mut block.query,
            &mut block.key,
            &mut block.value,
            &mut block.out,
            &mut block.ffn_in,
            &mut block.ffn_out,
        ] {
            lin.weight.update_data(|d| d.fill(0.0));
            lin.bias.update_data(|d| d.fill(0.0));
        }
        let x = random(&[1, 3, 4], 4);
        let (y, _) = block.forward(&x, &mut Dropout::inactive()).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn single_token_attends_to_itself() {
        let mut rng = RngState::new(5);
        let block = TransformerBlock::<f64>::new(4, 2, 2, &mut rng);
        let (_, probs) = block.forward(&random(&[1, 1, 4], 6), &mut Dropout::inactive()).unwrap();
        assert!(probs.data().iter().all(|&p| p == 1.0));
    }
}
