//! Chunked execution helpers shared by the Monte Carlo and multi-run loops.
//!
//! Work is split into chunks of a fixed size and each chunk owns its RNG
//! substream, so the set of chunk results is identical whether chunks run
//! sequentially or on a rayon pool, at any worker count. Callers combine the
//! returned chunk results in index order, which makes every reduction
//! bit-stable for a given seed.

/// Fixed chunk size for Monte Carlo sample loops.
pub const MC_CHUNK: usize = 8192;

/// Runs `f(chunk_index)` for every chunk index, returning results in index
/// order. Sequential; always available.
pub fn map_chunks_seq<T, F>(n_chunks: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n_chunks).map(f).collect()
}

/// Runs `f(chunk_index)` across the rayon pool, returning results in index
/// order.
#[cfg(feature = "parallel")]
pub fn map_chunks_par<T, F>(n_chunks: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n_chunks).into_par_iter().map(f).collect()
}

/// Default execution: parallel when the `parallel` feature is on, otherwise
/// sequential. Identical results either way.
#[cfg(feature = "parallel")]
pub fn map_chunks<T, F>(n_chunks: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_chunks_par(n_chunks, f)
}

/// Default execution: parallel when the `parallel` feature is on, otherwise
/// sequential. Identical results either way.
#[cfg(not(feature = "parallel"))]
pub fn map_chunks<T, F>(n_chunks: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_chunks_seq(n_chunks, f)
}

/// Splits `total` items into chunks of at most `chunk` items; returns the
/// number of chunks. `chunk_len(i)` below gives each chunk's size.
pub fn n_chunks(total: usize, chunk: usize) -> usize {
    total.div_ceil(chunk)
}

/// Length of chunk `i` when `total` items are split into chunks of `chunk`.
pub fn chunk_len(total: usize, chunk: usize, i: usize) -> usize {
    let start = i * chunk;
    chunk.min(total - start)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunking_covers_total() {
        for total in [0usize, 1, 100, 8192, 8193, 100_000] {
            let n = n_chunks(total, MC_CHUNK);
            let covered: usize = (0..n).map(|i| chunk_len(total, MC_CHUNK, i)).sum();
            assert_eq!(covered, total);
        }
    }

    #[test]
    fn seq_and_default_agree() {
        let f = |i: usize| (i as u64).wrapping_mul(0x9e3779b97f4a7c15);
        assert_eq!(map_chunks_seq(37, f), map_chunks(37, f));
    }
}
