use std::cell::Cell;
use std::collections::{HashMap, HashSet};

use super::{Real, Tensor};
use crate::error::{bail, Result};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Whether operations on this thread currently record backward closures.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Restores the previous recording state when dropped.
pub struct NoGradGuard {
    previous: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.previous));
    }
}

/// Disables graph recording on this thread until the guard is dropped.
pub fn no_grad() -> NoGradGuard {
    let previous = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { previous }
}

impl<F: Real> Tensor<F> {
    /// Propagates d(self)/d(leaf) into every leaf that requires a gradient.
    ///
    /// Gradients accumulate across calls until cleared with
    /// [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            bail!(
                Contract,
                "backward() needs a scalar loss, got shape {}",
                self.shape()
            );
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = topological_order(self);
        let mut grads: HashMap<u64, Vec<F>> = HashMap::new();
        grads.insert(self.id(), vec![F::one()]);

        for node in order.iter().rev() {
            let Some(grad) = grads.remove(&node.id()) else {
                continue;
            };
            let Some(grad_fn) = node.grad_fn() else {
                node.accumulate_grad(&grad);
                continue;
            };
            let needs: Vec<bool> = grad_fn.parents.iter().map(Tensor::requires_grad).collect();
            let parent_grads = (grad_fn.apply)(&grad, &needs);
            debug_assert_eq!(parent_grads.len(), grad_fn.parents.len());
            for (parent, pg) in grad_fn.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.len(), parent.numel());
                match grads.get_mut(&parent.id()) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a = *a + b),
                    None => {
                        grads.insert(parent.id(), pg);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Post-order over the recorded graph: parents precede children.
fn topological_order<F: Real>(root: &Tensor<F>) -> Vec<Tensor<F>> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    let mut stack: Vec<(Tensor<F>, bool)> = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        if let Some(grad_fn) = node.grad_fn() {
            for parent in &grad_fn.parents {
                if parent.requires_grad() && !visited.contains(&parent.id()) {
                    stack.push((parent.clone(), false));
                }
            }
        }
    }
    order
}
