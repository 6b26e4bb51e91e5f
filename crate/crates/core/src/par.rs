//! Data-parallel kernels. With the `parallel` feature the row transforms and
//! independent work items fan out over rayon; without it everything runs on
//! the calling thread with identical results.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::Fft;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// In-place 1D transform of every contiguous row of length `n`.
#[cfg(feature = "parallel")]
pub(crate) fn fft_rows(buf: &mut [Complex64], n: usize, fft: &Arc<dyn Fft<f64>>) {
    let scratch_len = fft.get_inplace_scratch_len();
    // Grab a few rows per task so small grids do not drown in scheduling.
    let rows_per_task = (4096 / n).max(1);
    buf.par_chunks_mut(n * rows_per_task).for_each_init(
        || vec![Complex64::new(0.0, 0.0); scratch_len],
        |scratch, rows| fft.process_with_scratch(rows, scratch),
    );
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn fft_rows(buf: &mut [Complex64], _n: usize, fft: &Arc<dyn Fft<f64>>) {
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(buf, &mut scratch);
}

/// Maps `f` over `items`, preserving order. `jobs == 1` forces the
/// sequential path; otherwise the work runs on a pool of `jobs` threads
/// (`0` means rayon's default).
pub fn map_indexed<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if jobs != 1 && items.len() > 1 {
            let run = || items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
            if jobs == 0 {
                return run();
            }
            match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                Ok(pool) => return pool.install(run),
                Err(e) => log::warn!("falling back to sequential map: {e}"),
            }
        }
    }
    let _ = jobs;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Whether the crate was built with the rayon backend.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
