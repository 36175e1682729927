use crate::error::{bail, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Mean cross-entropy of `logits` `[b, C]` against class indices, computed
/// through log-sum-exp.
pub fn cross_entropy<F: Real>(logits: &Tensor<F>, labels: &[usize]) -> Result<Tensor<F>> {
    let &[b, c] = logits.dims() else {
        bail!(Dimension, "cross_entropy expects logits [b, C], got {}", logits.shape());
    };
    if labels.len() != b {
        bail!(Dimension, "{} labels for a batch of {b}", labels.len());
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        bail!(Contract, "label {bad} outside [0, {c})");
    }
    if b == 0 {
        bail!(Contract, "cross_entropy of an empty batch");
    }
    let x = logits.data();
    let mut probs = vec![F::zero(); b * c];
    let mut total = F::zero();
    for (i, &label) in labels.iter().enumerate() {
        let row = &x[i * c..(i + 1) * c];
        let top = crate::metrics::argmax(row);
        let max = row[top];
        // ln(sum exp(x - max)) = ln(1 + rest); ln_1p keeps tiny losses exact
        let rest = (0..c)
            .filter(|&j| j != top)
            .fold(F::zero(), |acc, j| acc + (row[j] - max).exp());
        let log_norm = rest.ln_1p();
        total = total + (max - row[label]) + log_norm;
        for j in 0..c {
            probs[i * c + j] = (row[j] - max - log_norm).exp();
        }
    }
    let inv_b = F::lit(1.0 / b as f64);
    let labels = labels.to_vec();
    Tensor::from_op(
        "cross_entropy",
        Shape::scalar(),
        vec![total * inv_b],
        vec![logits.clone()],
        move |g, _| {
            let scale = g[0] * inv_b;
            let mut gx: Vec<F> = probs.iter().map(|&p| p * scale).collect();
            for (i, &label) in labels.iter().enumerate() {
                gx[i * c + label] = gx[i * c + label] - scale;
            }
            vec![Some(gx)]
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, GradCheckOptions};

    #[test]
    fn uniform_logits() {
        let logits = Tensor::<f64>::zeros([2, 3]);
        let loss = cross_entropy(&logits, &[0, 2]).unwrap().item().unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_prediction() {
        let logits = Tensor::<f64>::from_vec([1, 2], vec![10.0, -10.0]).unwrap();
        let loss = cross_entropy(&logits, &[0]).unwrap().item().unwrap();
        // ln(1 + e^-20)
        let expected = (-20f64).exp().ln_1p();
        assert!((loss - expected).abs() < 1e-20);
        assert!((loss - 2.06e-9).abs() < 0.01e-9);
    }

    #[test]
    fn large_logits_stay_finite() {
        let logits = Tensor::<f32>::from_vec([1, 2], vec![1000.0, -1000.0]).unwrap();
        assert_eq!(cross_entropy(&logits, &[1]).unwrap().item().unwrap(), 2000.0);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::<f64>::zeros([1, 3]);
        assert!(matches!(cross_entropy(&logits, &[3]), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = crate::RngState::new(3);
        let data = (0..12).map(|_| rng.normal(0.0, 2.0)).collect();
        let logits = Tensor::<f64>::from_vec([4, 3], data).unwrap().with_grad(true);
        let report = check_gradients(
            &[logits],
            |x| cross_entropy(&x[0], &[0, 2, 1, 2]),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}
