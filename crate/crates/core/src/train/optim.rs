use std::collections::BTreeMap;

use crate::error::{bail, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
}

/// AdamW with decoupled weight decay. Moments are keyed by parameter name
/// and created on first use.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamW<F> {
    pub config: AdamWConfig,
    pub step: u64,
    pub moments: BTreeMap<String, Moments<F>>,
}

impl<F: Real> AdamW<F> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One update of every parameter that requires a gradient and has one.
    ///
    /// Per element, with `t` the step count after increment:
    ///
    /// ```text
    /// w <- w * (1 - lr * weight_decay)
    /// m <- beta1 * m + (1 - beta1) * g
    /// v <- beta2 * v + (1 - beta2) * g^2
    /// w <- w - lr * (m / (1 - beta1^t)) / (sqrt(v / (1 - beta2^t)) + eps)
    /// ```
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (String, &'a mut Tensor<F>)>,
        lr: f64,
    ) -> Result<()>
    where
        F: 'a,
    {
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let correction1 = F::lit(1.0 - beta1.powi(t));
        let correction2 = F::lit(1.0 - beta2.powi(t));
        let (b1, b2) = (F::lit(beta1), F::lit(beta2));
        let (one_minus_b1, one_minus_b2) = (F::lit(1.0 - beta1), F::lit(1.0 - beta2));
        let decay = F::lit(1.0 - lr * weight_decay);
        let lr = F::lit(lr);
        let eps = F::lit(eps);

        for (name, param) in params {
            if !param.requires_grad() {
                continue;
            }
            let Some(grad) = param.grad() else {
                continue;
            };
            let n = param.numel();
            let state = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![F::zero(); n],
                v: vec![F::zero(); n],
            });
            if state.m.len() != n || state.v.len() != n {
                bail!(Contract, "optimizer state for {name} does not match its {} values", n);
            }
            let g = grad.data();
            param.update_data(|w| {
                for i in 0..n {
                    let m = b1 * state.m[i] + one_minus_b1 * g[i];
                    let v = b2 * state.v[i] + one_minus_b2 * g[i] * g[i];
                    state.m[i] = m;
                    state.v[i] = v;
                    let m_hat = m / correction1;
                    let v_hat = v / correction2;
                    w[i] = w[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
                }
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64]) -> Tensor<f64> {
        Tensor::from_vec([values.len()], values.to_vec()).unwrap().with_grad(true)
    }

    fn set_grad(p: &Tensor<f64>, g: &[f64]) {
        p.zero_grad();
        let probe = Tensor::from_vec([g.len()], g.to_vec()).unwrap();
        p.mul(&probe).unwrap().sum().unwrap().backward().unwrap();
    }

    #[test]
    fn zero_gradient_is_pure_decay() {
        let mut p = param(&[1.5, -2.0, 0.25]);
        set_grad(&p, &[0.0, 0.0, 0.0]);
        let mut opt = AdamW::new(AdamWConfig::default());
        let lr = 1e-3;
        opt.step([("w".to_string(), &mut p)], lr).unwrap();
        let decay = 1.0 - lr * 0.01;
        assert_eq!(p.data(), &[1.5 * decay, -2.0 * decay, 0.25 * decay]);
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(cfg);
        let mut p = param(&[0.0, 0.0]);
        let lr = 0.01;
        let mut last_step = [0.0; 2];
        for _ in 0..2000 {
            set_grad(&p, &[0.3, -5.0]);
            let before = p.to_vec();
            opt.step([("w".to_string(), &mut p)], lr).unwrap();
            last_step = [before[0] - p.data()[0], before[1] - p.data()[1]];
        }
        assert!((last_step[0] - lr).abs() < 1e-3 * lr, "{last_step:?}");
        assert!((last_step[1] + lr).abs() < 1e-3 * lr, "{last_step:?}");
    }

    #[test]
    fn frozen_and_gradless_params_untouched() {
        let mut frozen = Tensor::<f64>::from_vec([2], vec![1.0, 2.0]).unwrap();
        let mut unused = param(&[3.0]);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(
            [("a".to_string(), &mut frozen), ("b".to_string(), &mut unused)],
            0.1,
        )
        .unwrap();
        assert_eq!(frozen.data(), &[1.0, 2.0]);
        assert_eq!(unused.data(), &[3.0]);
        assert!(opt.moments.is_empty());
    }

    #[test]
    fn identical_runs_identical_state() {
        let run = || {
            let mut opt = AdamW::new(AdamWConfig::default());
            let mut p = param(&[0.5, -0.5, 1.0]);
            for k in 0..5 {
                set_grad(&p, &[k as f64, 1.0, -0.5 * k as f64]);
                opt.step([("w".to_string(), &mut p)], 0.01).unwrap();
            }
            (p.to_vec(), opt)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(sa, sb);
    }
}
