//! Data-parallel helpers with a fixed reduction order.
//!
//! Every reduction splits the index range into chunks of [`CHUNK`] cells,
//! sums each chunk with compensated summation and then folds the chunk
//! partials left to right. The partition does not depend on the thread
//! count, so parallel and sequential execution produce bit-identical
//! results. Without the `parallel` feature everything runs on the calling
//! thread.

use std::sync::atomic::{AtomicBool, Ordering};

/// Cells per reduction chunk.
pub const CHUNK: usize = 2048;

/// Below this many cells the parallel path is not worth its overhead.
pub const PAR_THRESHOLD: usize = 16 * 1024;

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Forces all kernels onto the calling thread. Results do not change;
/// this only exists so benchmarks can compare both paths in one binary.
pub fn force_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::Relaxed);
}

/// Whether kernels over `n` cells will fan out to the thread pool.
pub fn runs_parallel(n: usize) -> bool {
    cfg!(feature = "parallel") && n >= PAR_THRESHOLD && !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// Sizes the global worker pool. Only the first call has an effect, and
/// only with the `parallel` feature; returns whether the pool was set.
pub fn set_workers(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        false
    }
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn chunk_sum<F: Fn(usize) -> f64>(start: usize, end: usize, f: &F) -> f64 {
    let mut acc = Compensated::default();
    for i in start..end {
        acc.add(f(i));
    }
    acc.value()
}

/// Deterministic sum of `f(i)` for `i in 0..n`.
pub fn sum_by<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let partials: Vec<f64> = map_chunks(chunks, |c| {
        let start = c * CHUNK;
        chunk_sum(start, (start + CHUNK).min(n), &f)
    }, n);
    let mut acc = Compensated::default();
    for p in partials {
        acc.add(p);
    }
    acc.value()
}

/// Like [`sum_by`] without compensation inside chunks. Same fixed order,
/// so still deterministic; meant for solver inner products.
pub fn plain_sum_by<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let partials: Vec<f64> = map_chunks(chunks, |c| {
        let start = c * CHUNK;
        (start..(start + CHUNK).min(n)).map(&f).sum::<f64>()
    }, n);
    partials.into_iter().sum()
}

/// Maximum of `f(i)` over `0..n`; `f64::NEG_INFINITY` for `n == 0`.
pub fn max_by<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let partials: Vec<f64> = map_chunks(chunks, |c| {
        let start = c * CHUNK;
        (start..(start + CHUNK).min(n)).map(&f).fold(f64::NEG_INFINITY, f64::max)
    }, n);
    partials.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Minimum of `f(i)` over `0..n`; `f64::INFINITY` for `n == 0`.
pub fn min_by<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    -max_by(n, |i| -f(i))
}

/// Writes `f(i)` into `out[i]`.
pub fn fill<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync,
{
    #[cfg(feature = "parallel")]
    if runs_parallel(out.len()) {
        use rayon::prelude::*;
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            let base = c * CHUNK;
            for (k, slot) in chunk.iter_mut().enumerate() {
                *slot = f(base + k);
            }
        });
        return;
    }
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = f(i);
    }
}

/// Allocates a vector of length `n` filled with `f(i)`.
pub fn collect<F>(n: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync,
{
    let mut out = vec![0.0; n];
    fill(&mut out, f);
    out
}

fn map_chunks<T, F>(chunks: usize, f: F, n: usize) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    #[cfg(feature = "parallel")]
    if runs_parallel(n) {
        use rayon::prelude::*;
        return (0..chunks).into_par_iter().map(&f).collect();
    }
    let _ = n;
    (0..chunks).map(f).collect()
}

/// Maps `f` over independent jobs, concurrently when the `parallel`
/// feature is enabled. Output order matches input order.
pub fn map_jobs<I, T, F>(items: Vec<I>, f: F) -> Vec<T>
where
    I: Send,
    T: Send,
    F: Fn(I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if !FORCE_SEQUENTIAL.load(Ordering::Relaxed) {
        use rayon::prelude::*;
        return items.into_par_iter().map(f).collect();
    }
    items.into_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_sums_agree_bitwise() {
        let n = 100_003;
        let f = |i: usize| ((i as f64) * 0.37).sin() * 1e3 + 1e-7 * i as f64;
        let par = sum_by(n, f);
        force_sequential(true);
        let seq = sum_by(n, f);
        force_sequential(false);
        assert_eq!(par.to_bits(), seq.to_bits());
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut acc = Compensated::default();
        acc.add(1.0);
        for _ in 0..1000 {
            acc.add(1e-17);
        }
        acc.add(-1.0);
        assert!((acc.value() - 1e-14).abs() < 1e-24);
    }

    #[test]
    fn extrema_of_empty_range() {
        assert_eq!(max_by(0, |_| 1.0), f64::NEG_INFINITY);
        assert_eq!(min_by(0, |_| 1.0), f64::INFINITY);
    }
}
