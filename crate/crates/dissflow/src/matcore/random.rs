//! Seeded randomness for reproducible experiments.
//!
//! Every random quantity in this crate flows through a ChaCha8 generator
//! keyed by (seed, stream). Ensembles give each realization its own stream
//! so results are independent of evaluation order and thread count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eigen::{EigenError, invert};
use super::matrix::{C64, CMatrix};

/// The one RNG constructor used everywhere.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Dense matrix with i.i.d. entries; real and imaginary parts uniform on
/// [-1, 1]. Row-major fill order is part of the reproducibility contract.
pub fn random_complex_matrix(dim: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let data: Vec<C64> = (0..dim * dim)
        .map(|_| {
            let re = rng.gen_range(-1.0..=1.0);
            let im = rng.gen_range(-1.0..=1.0);
            C64::new(re, im)
        })
        .collect();
    CMatrix::from_vec(dim, data).expect("generated data has the right length")
}

/// Invertible perturbation of the identity, R = I + strength * G with G a
/// fresh random matrix. Resamples (up to 32 times) until R is comfortably
/// invertible, and returns (R, R^{-1}).
pub fn random_preconditioner(
    dim: usize,
    strength: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(CMatrix, CMatrix), EigenError> {
    for _ in 0..32 {
        let g = random_complex_matrix(dim, rng);
        let mut r = CMatrix::identity(dim);
        r.axpy(C64::new(strength, 0.0), &g);
        match invert(&r, "preconditioner") {
            Ok(rinv) => {
                // Guard against near-singular draws: the inverse of a
                // well-conditioned R = I + 0.1 G stays O(1).
                if rinv.max_abs() < 1e6 {
                    return Ok((r, rinv));
                }
            }
            Err(_) => continue,
        }
    }
    Err(EigenError::Singular { context: "preconditioner resampling exhausted" })
}
