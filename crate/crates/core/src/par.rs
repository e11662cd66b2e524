//! Execution policy for the data-parallel inner loops.
//!
//! With the `parallel` feature (default) the row-partitioned kernels run on the
//! rayon pool; without it every [`Exec`] value falls back to the sequential
//! path. Each output row is produced by exactly one worker and there is no
//! floating-point reduction across workers, so results do not depend on the
//! policy or the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Runs `f(row, row_slice)` over a row-major buffer of the given width.
pub(crate) fn for_each_row<F>(exec: Exec, data: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    if width == 0 {
        return;
    }
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => data
            .par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row)),
        _ => data
            .chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row)),
    }
}

/// Order-preserving map.
pub fn map<T, U, F>(exec: Exec, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Send + Sync,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

/// Highest score wins; ties go to the smallest id. NaN scores never win.
pub(crate) fn argmax<F>(exec: Exec, ids: &[usize], score: F) -> Option<(usize, f64)>
where
    F: Fn(usize) -> f64 + Send + Sync,
{
    fn better(a: Option<(usize, f64)>, b: Option<(usize, f64)>) -> Option<(usize, f64)> {
        match (a, b) {
            (None, x) | (x, None) => x,
            (Some(x), Some(y)) => {
                if y.1 > x.1 || (y.1 == x.1 && y.0 < x.0) {
                    Some(y)
                } else {
                    Some(x)
                }
            }
        }
    }
    let scored = |&id: &usize| {
        let s = score(id);
        if s.is_nan() {
            None
        } else {
            Some((id, s))
        }
    };
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => ids.par_iter().map(scored).reduce(|| None, better),
        _ => ids.iter().map(scored).fold(None, better),
    }
}
