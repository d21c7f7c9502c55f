//! Thin indirection over rayon.
//!
//! Every parallel loop in the crate is map-shaped: workers write disjoint
//! outputs and reductions happen sequentially in a fixed order afterwards,
//! so the `parallel` feature changes wall time but never results.

#[cfg(feature = "parallel")]
pub(crate) fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync,
{
    use rayon::prelude::*;
    items
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, item)| f(i, item));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync,
{
    for (i, item) in items.iter_mut().enumerate() {
        f(i, item);
    }
}

/// Sequential reference loop, always available; benches compare it with the
/// rayon path above.
pub(crate) fn for_each_mut_seq<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync,
{
    for (i, item) in items.iter_mut().enumerate() {
        f(i, item);
    }
}
