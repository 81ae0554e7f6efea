//! Data-parallel helpers. With the `parallel` feature the maps run on the
//! rayon pool; without it they fall back to plain iterators. Every helper
//! preserves input order, so results never depend on the worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `(0..n).map(f).collect()`, possibly in parallel.
#[cfg(feature = "parallel")]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// `items.iter().map(f).collect()`, possibly in parallel.
#[cfg(feature = "parallel")]
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Fills `out[i] = f(i)`. Small arrays stay sequential since a stencil
/// sweep over a few hundred nodes is cheaper than a fork-join.
#[cfg(feature = "parallel")]
pub fn fill_indexed<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    if out.len() >= PAR_STENCIL_MIN {
        out.par_iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
    } else {
        out.iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
    }
}

#[cfg(not(feature = "parallel"))]
pub fn fill_indexed<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    out.iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
}

#[cfg(feature = "parallel")]
const PAR_STENCIL_MIN: usize = 4096;

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maps_preserve_order() {
        let v = map_range(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
        let w = map_slice(&v, |x| x + 1);
        assert_eq!(w[999], 1999);
        let mut out = vec![0.0; 5000];
        fill_indexed(&mut out, |i| i as f64);
        assert_eq!(out[4999], 4999.0);
    }
}
