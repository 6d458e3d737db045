//! Counter-based random streams and a deterministic chunked map-reduce.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Samples per chunk; chunk boundaries depend only on the sample count.
pub const CHUNK: u64 = 64;

/// Stream for `(seed, tag, sample)`; independent of the worker that runs it.
pub fn stream(seed: u64, tag: u64, sample: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(sample);
    rng
}

/// Stable 64-bit tag for a label.
pub fn tag(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Run `map(i)` for `i < n`, fold each fixed-size chunk left to right, then merge the
/// chunk results in index order. The result does not depend on the thread count.
pub fn map_reduce<T, M, F, R>(n: u64, identity: F, map: M, reduce: R) -> T
where
    T: Send,
    M: Fn(u64) -> T + Sync + Send,
    F: Fn() -> T + Sync + Send,
    R: Fn(T, T) -> T + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let run_chunk = |c: u64| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        (lo..hi).fold(identity(), |acc, i| reduce(acc, map(i)))
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<T> = {
        use rayon::prelude::*;
        (0..chunks).into_par_iter().map(run_chunk).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<T> = (0..chunks).map(run_chunk).collect();
    parts.into_iter().fold(identity(), reduce)
}

/// Collect `map(i)` for `i < n` in index order.
pub fn map_collect<T, M>(n: u64, map: M) -> Vec<T>
where
    T: Send,
    M: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(map).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(map).collect()
    }
}

/// Run `f` on a pool of `workers` threads (ignored without the `parallel` feature).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    #[cfg(feature = "parallel")]
    {
        if workers == 0 {
            return f();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, 1, 3).gen();
        let b: u64 = stream(7, 1, 3).gen();
        let c: u64 = stream(7, 1, 4).gen();
        let d: u64 = stream(7, 2, 3).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn reduction_independent_of_workers() {
        let f = || {
            map_reduce(
                1000,
                || 0.0f64,
                |i| stream(1, 2, i).gen::<f64>(),
                |a, b| a + b,
            )
        };
        let one = with_workers(1, f);
        let three = with_workers(3, f);
        assert_eq!(one.to_bits(), three.to_bits());
    }
}
