//! Counter-based random streams.
//!
//! Every stream is keyed by `(seed, stream-id)` and advanced by an internal
//! block counter, so any chunk of a Monte Carlo run can be regenerated in
//! isolation. Parallel drivers map a sample chunk index to a stream id; the
//! result of a run never depends on how chunks are scheduled on workers.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Samples per chunk used by the parallel Monte Carlo drivers.
pub const DEFAULT_CHUNK: usize = 8192;

/// A reproducible random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Stream for `index` inside a named domain (e.g. one Monte Carlo driver).
    pub fn for_domain(seed: u64, domain: &str, index: u64) -> Self {
        Self::new(seed, stream_id(domain, index))
    }

    /// Position the stream at an absolute 32-bit word offset.
    pub fn seek(&mut self, word: u128) {
        self.inner.set_word_pos(word);
    }

    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Uniform on the open interval (0, 1); exact zero is rejected.
    #[inline]
    pub fn open_unit(&mut self) -> f64 {
        loop {
            let u = (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Uniform on [0, 1).
    #[inline]
    pub fn unit(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    #[inline]
    pub fn sign(&mut self) -> f64 {
        if self.inner.next_u32() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Stable 64-bit stream id for `(domain, index)`.
pub fn stream_id(domain: &str, index: u64) -> u64 {
    mix64(fnv1a64(domain.as_bytes()) ^ mix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Split `n` samples into fixed-size chunks, run `f(chunk_index, len, stream)`
/// on each in parallel and return the per-chunk results in chunk order.
///
/// Chunk `c` always draws from stream `(seed, stream_id(domain, c))`, so the
/// output is identical for any rayon pool size.
pub fn chunked_map<T, F>(n: usize, chunk: usize, seed: u64, domain: &str, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize, &mut RngStream) -> T + Sync,
{
    assert!(chunk > 0, "chunk size must be positive");
    let n_chunks = n.div_ceil(chunk);
    (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let len = chunk.min(n - c * chunk);
            let mut rng = RngStream::for_domain(seed, domain, c as u64);
            f(c, len, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 4);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn seek_replays_counter() {
        let mut a = RngStream::new(1, 1);
        let _ = a.next_u64();
        let pos = a.word_pos();
        let x = a.next_u64();
        let mut b = RngStream::new(1, 1);
        b.seek(pos);
        assert_eq!(b.next_u64(), x);
    }

    #[test]
    fn open_unit_in_open_interval() {
        let mut r = RngStream::new(0, 0);
        for _ in 0..10_000 {
            let u = r.open_unit();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn chunked_map_independent_of_pool() {
        let run = || {
            chunked_map(10_000, 1000, 5, "t", |_, len, rng| {
                (0..len).map(|_| rng.unit()).sum::<f64>()
            })
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(run);
        assert_eq!(one, three);
        assert_eq!(one.len(), 10);
    }
}
