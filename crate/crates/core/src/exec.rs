//! Execution backend: index-parallel map plus order-insensitive reductions.
//!
//! Everything funnels through [`map_indexed`], so enabling or disabling the
//! `parallel` feature only changes *who* computes each slot, never the value
//! written into it. Reductions use fixed-shape pairwise summation, which is
//! independent of thread count and schedule.

/// Computes `f(0..n)` into a `Vec`, in parallel when the `parallel` feature
/// is on. Slot `i` always holds `f(i)`.
#[cfg(feature = "parallel")]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Pairwise (cascade) sum: error grows like `O(log n)` instead of `O(n)` and
/// the split points depend only on `len`, so the result is deterministic.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    pairwise_sum_by(xs, |&x| x)
}

/// Pairwise sum of `f(x)` over a slice without materializing the mapped values.
pub(crate) fn pairwise_sum_by<T, F>(xs: &[T], f: F) -> f64
where
    F: Fn(&T) -> f64 + Copy,
{
    if xs.len() <= 64 {
        let mut acc = 0.0;
        for x in xs {
            acc += f(x);
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum_by(&xs[..mid], f) + pairwise_sum_by(&xs[mid..], f)
}
