//! Switch between the single-threaded reference mode and batch-parallel
//! kernels.
//!
//! Reference mode is the determinism baseline. Parallel mode splits work over
//! independent batch items and reduces partial gradients in batch order, so it
//! agrees with reference mode to rounding.

use std::sync::atomic::{AtomicBool, Ordering};

static REFERENCE_MODE: AtomicBool = AtomicBool::new(false);

pub fn set_reference_mode(on: bool) {
    REFERENCE_MODE.store(on, Ordering::SeqCst);
}

pub fn reference_mode() -> bool {
    REFERENCE_MODE.load(Ordering::SeqCst)
}

/// Apply `f` to each `(index, chunk)` of `data`, in parallel unless reference
/// mode is on.
pub(crate) fn for_each_chunk<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk == 0 {
        return;
    }
    if reference_mode() {
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
}
