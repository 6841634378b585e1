//! Seed handling and chunked parallel sampling.
//!
//! Every sampler in the crate draws rows in fixed-size chunks; chunk `c`
//! uses its own ChaCha stream of the caller's seed. Output therefore depends
//! only on the seed, never on the number of worker threads.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Rows generated per independent RNG stream.
pub const CHUNK_ROWS: usize = 8192;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 mix of `seed` and `tag`, used to give sub-tasks distinct seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates an `n_obs x dim` matrix, filling each row with `fill`.
pub fn sample_rows<F>(n_obs: usize, dim: usize, seed: u64, fill: F) -> DMatrix<f64>
where
    F: Fn(&mut ChaCha8Rng, &mut [f64]) + Sync,
{
    if n_obs == 0 || dim == 0 {
        return DMatrix::zeros(n_obs, dim);
    }
    let n_chunks = n_obs.div_ceil(CHUNK_ROWS);
    let chunks: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let rows = CHUNK_ROWS.min(n_obs - c * CHUNK_ROWS);
            let mut rng = stream_rng(seed, c as u64);
            let mut buf = vec![0.0; rows * dim];
            for row in buf.chunks_exact_mut(dim) {
                fill(&mut rng, row);
            }
            buf
        })
        .collect();
    let mut out = DMatrix::zeros(n_obs, dim);
    let mut r = 0;
    for chunk in &chunks {
        for row in chunk.chunks_exact(dim) {
            for (j, &x) in row.iter().enumerate() {
                out[(r, j)] = x;
            }
            r += 1;
        }
    }
    out
}

/// Deterministic parallel sum over fixed-size chunks.
pub(crate) fn chunked_sum<F, const N: usize>(len: usize, f: F) -> [f64; N]
where
    F: Fn(usize) -> [f64; N] + Sync,
{
    const CHUNK: usize = 16_384;
    let partials: Vec<[f64; N]> = (0..len.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = [0.0; N];
            for k in c * CHUNK..((c + 1) * CHUNK).min(len) {
                let v = f(k);
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
            }
            acc
        })
        .collect();
    let mut total = [0.0; N];
    for p in partials {
        for (t, x) in total.iter_mut().zip(p) {
            *t += x;
        }
    }
    total
}
