//! Feature-gated parallel map helpers.
//!
//! With the `parallel` feature the closures run on the rayon pool; without
//! it they run sequentially. Both paths collect into a `Vec` in input
//! order, so callers that reduce the results sequentially get identical
//! (bitwise) output under either feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_slice<'a, T, U, F>(items: &'a [T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&'a T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<'a, T, U, F>(items: &'a [T], f: F) -> Vec<U>
where
    F: Fn(&'a T) -> U,
{
    items.iter().map(f).collect()
}
