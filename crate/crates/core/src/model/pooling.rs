use super::layers::Linear;
use crate::error::{bail, Result};
use crate::tensor::{Real, Tensor};

/// Hybrid CLS + sequence pooling of encoder output `[b, n + 1, d]`.
///
/// Token 0 is kept as the class token `x_c`. The remaining `n` tokens `x_a`
/// are scored by `g` (a `d -> 1` linear map), the scores are softmaxed over
/// the tokens, and the weighted token sum is concatenated after `x_c`:
///
/// ```text
/// w   = softmax(g(x_a)^T)      [b, 1, n]
/// x_p = w x_a                  [b, 1, d]
/// z   = concat(x_c, x_p)       [b, 2d]
/// ```
pub fn hybrid_pool<F: Real>(tokens: &Tensor<F>, g: &Linear<F>) -> Result<Tensor<F>> {
    let &[b, t, d] = tokens.dims() else {
        bail!(Dimension, "hybrid_pool expects [b, n + 1, d], got {}", tokens.shape());
    };
    if t < 2 {
        bail!(Contract, "hybrid_pool needs at least one patch token besides CLS, got sequence length {t}");
    }
    if g.in_features() != d || g.out_features() != 1 {
        bail!(
            Dimension,
            "sequence-pool scorer must map {d} -> 1, got {}",
            g.weight.shape()
        );
    }
    let n = t - 1;
    let class_token = tokens.narrow(1, 0, 1)?;
    let patches = tokens.narrow(1, 1, n)?;
    let weights = g.forward(&patches)?.transpose(1, 2)?.softmax(2)?;
    let pooled = weights.matmul(&patches)?;
    Tensor::concat(&[class_token, pooled], 2)?.reshape(&[b, 2 * d])
}
