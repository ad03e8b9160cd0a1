//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the work is spread over the rayon pool;
//! without it, or with [`ExecMode::Sequential`], everything runs on the
//! calling thread. Results are always returned in input order so callers
//! never depend on scheduling.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

pub fn map<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

pub fn map_mut<T, R, F>(mode: ExecMode, items: &mut [T], f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(&mut T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter_mut().map(f).collect();
    }
    let _ = mode;
    items.iter_mut().map(f).collect()
}

pub fn map_range<R, F>(mode: ExecMode, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

pub fn filter<T, F>(mode: ExecMode, items: &[T], pred: F) -> Vec<T>
where
    T: Sync + Send + Copy,
    F: Fn(&T) -> bool + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && items.len() >= 4096 {
        use rayon::prelude::*;
        return items.par_iter().copied().filter(|x| pred(x)).collect();
    }
    let _ = mode;
    items.iter().copied().filter(|x| pred(x)).collect()
}

pub fn any<T, F>(mode: ExecMode, items: &[T], pred: F) -> bool
where
    T: Sync,
    F: Fn(&T) -> bool + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && items.len() >= 4096 {
        use rayon::prelude::*;
        return items.par_iter().any(pred);
    }
    let _ = mode;
    items.iter().any(pred)
}

/// Deterministic sum: per-chunk partial sums are combined in chunk order,
/// so the result does not depend on the number of threads.
pub fn sum_f64<T, F>(mode: ExecMode, items: &[T], f: F) -> f64
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    const CHUNK: usize = 8192;
    let chunks: Vec<&[T]> = items.chunks(CHUNK).collect();
    let partial = map(mode, &chunks, |c| c.iter().map(&f).sum::<f64>());
    partial.into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let v: Vec<u32> = (0..20_000).collect();
        let a = map(ExecMode::Parallel, &v, |x| x * 2);
        let b = map(ExecMode::Sequential, &v, |x| x * 2);
        assert_eq!(a, b);
        let fa = filter(ExecMode::Parallel, &v, |x| x % 7 == 0);
        let fb = filter(ExecMode::Sequential, &v, |x| x % 7 == 0);
        assert_eq!(fa, fb);
        let sa = sum_f64(ExecMode::Parallel, &v, |&x| x as f64 * 0.1);
        let sb = sum_f64(ExecMode::Sequential, &v, |&x| x as f64 * 0.1);
        assert_eq!(sa.to_bits(), sb.to_bits());
        assert!(any(ExecMode::Parallel, &v, |&x| x == 19_999));
    }
}
