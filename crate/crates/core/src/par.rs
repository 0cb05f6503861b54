//! Data-parallel helpers. With the `parallel` feature the work items run on
//! the rayon pool; without it they run in order on the calling thread. Work
//! is split into fixed-size chunks and results come back in chunk order, so
//! both paths produce identical output regardless of thread count.

use std::ops::Range;

/// Default chunk width for batched per-item work (chains, examples).
pub const CHUNK: usize = 32;

/// Chunk boundaries covering `0..n` in steps of `chunk`.
pub fn chunks(n: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..n).step_by(chunk).map(|s| s..(s + chunk).min(n)).collect()
}

/// Applies `f` to every chunk of `0..n`, returning results in chunk order.
pub fn map_chunks<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let ranges = chunks(n, chunk);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        ranges.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ranges.into_iter().map(f).collect()
    }
}

/// Applies `f` to each index, in parallel when enabled, preserving order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Whether this build uses the rayon pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range() {
        assert_eq!(chunks(70, 32), vec![0..32, 32..64, 64..70]);
        assert!(chunks(0, 32).is_empty());
    }

    #[test]
    fn results_in_chunk_order() {
        let out = map_chunks(100, 7, |r| r.start);
        assert_eq!(out, (0..100).step_by(7).collect::<Vec<_>>());
        assert_eq!(map_indexed(5, |i| i * i), vec![0, 1, 4, 9, 16]);
    }
}
