//! Counter-based random streams and thread-count independent reductions.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Paths are simulated in fixed blocks so parallel sums are bit-identical for
/// any number of threads.
pub const BLOCK: usize = 64;

/// Independent generator for sample `stream` of an experiment seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finaliser of `(master, index)`, used for per-grid-point seeds.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Maps fixed blocks of `0..n` in parallel and folds the results in block order.
pub fn block_reduce<T, E>(
    n: usize,
    map: impl Fn(Range<usize>) -> Result<T, E> + Sync + Send,
    mut merge: impl FnMut(&mut T, T),
) -> Result<Option<T>, E>
where
    T: Send,
    E: Send,
{
    let blocks = n.div_ceil(BLOCK);
    let parts: Vec<Result<T, E>> =
        (0..blocks).into_par_iter().map(|b| map(b * BLOCK..((b + 1) * BLOCK).min(n))).collect();
    let mut acc: Option<T> = None;
    for part in parts {
        let part = part?;
        match acc.as_mut() {
            Some(a) => merge(a, part),
            None => acc = Some(part),
        }
    }
    Ok(acc)
}
