//! Data-parallel loops; sequential when the `parallel` feature is off.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Sums `f(i)` over `range`, stopping at the first error.
pub(crate) fn try_sum<E: Send>(
    range: std::ops::Range<u64>,
    f: impl Fn(u64) -> Result<u64, E> + Sync + Send,
) -> Result<u64, E> {
    #[cfg(feature = "parallel")]
    return range
        .into_par_iter()
        .map(f)
        .try_reduce(|| 0, |a, b| Ok(a + b));
    #[cfg(not(feature = "parallel"))]
    return range.map(f).sum();
}

/// Maps `f` over `items`, keeping their order.
pub(crate) fn map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    return items.par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return items.iter().map(f).collect();
}
