//! Central finite-difference verification of analytic gradients.
//!
//! The numeric side only ever evaluates the forward function; it shares no
//! code with the backward closures it checks.

use crate::error::{bail, Result};
use crate::model::{HcctModel, Mode};
use crate::tensor::{no_grad, trace_branches, RngState, Tensor};
use crate::train::cross_entropy;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central difference step.
    pub step: f64,
    /// Check at most this many coordinates per input (sampled without
    /// replacement); `None` checks every coordinate.
    pub max_coords: Option<usize>,
    /// Denominator floor of the relative error, so that gradients that are
    /// zero on both sides do not divide by zero.
    pub floor: f64,
    pub seed: u64,
    /// Exclude coordinates whose difference stencil changes the branch
    /// pattern of a piecewise operation (a ReLU sign or a max-pool winner),
    /// where central differences do not estimate the derivative. Excluded
    /// coordinates are counted and, when sampling, replaced by others.
    pub skip_kinks: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords: None,
            floor: 1e-6,
            seed: 0,
            skip_kinks: false,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, coordinate, analytic, numeric) at the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
    /// Coordinates excluded because their stencil crossed a kink.
    pub kinks: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the backward pass of `f` at `inputs` with central differences.
///
/// `f` must return a scalar and must be deterministic in its inputs.
pub fn check_gradients<F>(
    inputs: &[Tensor<f64>],
    f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach().with_grad(true)).collect();
    let loss = f(&leaves)?;
    if loss.numel() != 1 {
        bail!(Contract, "gradient check needs a scalar function, got {}", loss.shape());
    }
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|t| t.grad().map_or_else(|| vec![0.0; t.numel()], |g| g.to_vec()))
        .collect();
    drop(loss);

    let _guard = no_grad();
    let base_branches = trace_branches(|| f(inputs)).1;
    let mut rng = RngState::new(opts.seed);
    let mut report = GradCheckReport::default();
    for (which, input) in inputs.iter().enumerate() {
        let mut coords: Vec<usize> = (0..input.numel()).collect();
        let limit = opts.max_coords.unwrap_or(coords.len());
        if opts.max_coords.is_some() {
            rng.shuffle(&mut coords);
        }
        let mut checked = 0;
        for &c in &coords {
            if checked == limit {
                break;
            }
            let eval_at = |delta: f64| -> Result<(f64, u64)> {
                let mut args: Vec<Tensor<f64>> = inputs.iter().map(Tensor::detach).collect();
                args[which].update_data(|d| d[c] += delta);
                let (value, branches) = trace_branches(|| f(&args));
                Ok((value?.item()?, branches))
            };
            let (plus, plus_branches) = eval_at(opts.step)?;
            let (minus, minus_branches) = eval_at(-opts.step)?;
            if opts.skip_kinks && (plus_branches != base_branches || minus_branches != base_branches) {
                report.kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[which][c];
            let err = relative_error(a, numeric, opts.floor);
            checked += 1;
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((which, c, a, numeric));
            }
        }
    }
    Ok(report)
}

/// Gradient check of the cross-entropy loss of `model` on one batch with
/// respect to every learnable tensor (sampled per `opts.max_coords`).
///
/// Each evaluation runs on a fresh copy of the model with a dropout stream
/// seeded from `dropout_seed`, so the function is deterministic even in
/// training modes.
pub fn check_model_gradients(
    model: &HcctModel<f64>,
    input: &Tensor<f64>,
    labels: &[usize],
    mode: Mode,
    dropout_seed: u64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let params: Vec<Tensor<f64>> = model.named_params().into_iter().map(|(_, t)| t.clone()).collect();
    check_gradients(
        &params,
        |values| {
            let mut m = model.clone();
            for ((_, slot), v) in m.named_params_mut().into_iter().zip(values) {
                *slot = v.clone();
            }
            let logits = m.forward(input, mode, &mut RngState::new(dropout_seed))?;
            cross_entropy(&logits, labels)
        },
        opts,
    )
}
