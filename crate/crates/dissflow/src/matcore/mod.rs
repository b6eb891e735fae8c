//! Matrix core: dense complex matrices, eigensolving, seeded randomness,
//! and flow invariants.

pub mod eigen;
pub mod fit;
pub mod invariants;
pub mod matrix;
pub mod random;

pub use eigen::{EigenError, EigenPairs, eigen_decomposition, invert, reference_spectrum};
pub use fit::{LinFit, linear_fit};
pub use invariants::{
    i2_diagonal, i2_offdiagonal, invariant_drifts, optimal_assignment, spectral_discrepancy,
    trace_power_invariants,
};
pub use matrix::{C64, CMatrix, MatrixError, commutator, offdiag_norm_sq, split_diag_offdiag};
pub use random::{random_complex_matrix, random_preconditioner, seeded_rng};
