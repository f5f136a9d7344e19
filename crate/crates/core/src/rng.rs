//! Deterministic random streams.
//!
//! Every replica draws from its own ChaCha stream whose seed is a hash of the
//! master seed and the replica coordinates, so extending a grid never
//! perturbs the cells that already exist.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of coordinates into a child seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(master: u64, path: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

/// Draws `m` distinct integers uniformly from `[0, total)`.
///
/// Sparse draws use rejection against the already chosen set; dense draws
/// sample the complement instead. Output order depends only on the stream.
pub fn distinct_indices<R: Rng + ?Sized>(rng: &mut R, total: u64, m: u64) -> Vec<u64> {
    assert!(m <= total, "cannot draw {m} distinct values from {total}");
    if m == total {
        return (0..total).collect();
    }
    if m.saturating_mul(2) <= total {
        let mut seen = std::collections::HashSet::with_capacity(m as usize);
        let mut out = Vec::with_capacity(m as usize);
        while (out.len() as u64) < m {
            let x = rng.random_range(0..total);
            if seen.insert(x) {
                out.push(x);
            }
        }
        out
    } else {
        let mut skip = distinct_indices(rng, total, total - m);
        skip.sort_unstable();
        let mut out = Vec::with_capacity(m as usize);
        let mut it = skip.iter().peekable();
        for x in 0..total {
            if it.peek() == Some(&&x) {
                it.next();
            } else {
                out.push(x);
            }
        }
        out
    }
}

/// Inverse of the row-major enumeration of pairs `i < j` by `j(j−1)/2 + i`.
pub fn triangular_pair(index: u64) -> (u64, u64) {
    let mut j = ((1.0 + (1.0 + 8.0 * index as f64).sqrt()) / 2.0) as u64;
    while j * (j - 1) / 2 > index {
        j -= 1;
    }
    while (j + 1) * j / 2 <= index {
        j += 1;
    }
    (index - j * (j - 1) / 2, j)
}
