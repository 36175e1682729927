use crate::error::Result;
use crate::tensor::{Real, Shape, Tensor};

impl<F: Real> Tensor<F> {
    /// Sum of all elements as a scalar tensor.
    pub fn sum(&self) -> Result<Tensor<F>> {
        let total = self.data().iter().fold(F::zero(), |a, &b| a + b);
        let n = self.numel();
        Tensor::from_op("sum", Shape::scalar(), vec![total], vec![self.clone()], move |g, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Result<Tensor<F>> {
        let n = F::lit(self.numel() as f64);
        self.sum()?.scale(F::one() / n)
    }
}
