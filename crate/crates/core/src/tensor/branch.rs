//! Fingerprints of the branch decisions taken by piecewise operations.
//!
//! While tracing is active, `relu` folds the sign of every input and
//! `max_pool3d` folds every selected index into a running hash. Two
//! evaluations with equal fingerprints took the same branches, so the
//! function is smooth on the segment between them (up to hash collisions).

use std::cell::Cell;

thread_local! {
    static TRACE: Cell<Option<u64>> = const { Cell::new(None) };
}

const SEED: u64 = 0xcbf2_9ce4_8422_2325;

fn mix(state: u64, value: u64) -> u64 {
    let mut z = state ^ value.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn tracing() -> bool {
    TRACE.with(|t| t.get().is_some())
}

/// Folds `values` into the active trace; a no-op when tracing is off.
pub(crate) fn record(values: impl Iterator<Item = u64>) {
    TRACE.with(|t| {
        if let Some(state) = t.get() {
            t.set(Some(values.fold(state, mix)));
        }
    });
}

/// Runs `f` and returns its result with the fingerprint of the branches it
/// took. Nested calls trace independently.
pub fn trace_branches<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let outer = TRACE.with(|t| t.replace(Some(SEED)));
    let out = f();
    let fingerprint = TRACE.with(|t| t.replace(outer)).unwrap_or(SEED);
    (out, fingerprint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn relu_sign_changes_alter_fingerprint() {
        let run = |v: f64| {
            trace_branches(|| {
                Tensor::from_vec([2], vec![v, 1.0]).unwrap().relu().unwrap();
            })
            .1
        };
        assert_eq!(run(0.5), run(0.7));
        assert_ne!(run(0.5), run(-0.5));
    }

    #[test]
    fn off_by_default() {
        assert!(!tracing());
        let (_, inner) = trace_branches(tracing);
        assert_ne!(inner, 0);
    }
}
