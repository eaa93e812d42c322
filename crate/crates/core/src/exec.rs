//! Order-preserving map over independent work items. With the `parallel`
//! feature and `parallel = true` the items run on the rayon pool; otherwise
//! sequentially. Results always come back in input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map_ordered<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel && items.len() > 1 {
        return items.par_iter().map(f).collect();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallel;
    items.iter().map(f).collect()
}

/// Whether `parallel = true` actually fans out in this build.
pub const fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}
