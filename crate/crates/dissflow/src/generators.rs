//! Flow generators.
//!
//! The flow dM/dl = [eta, M] is steered by one of three generator choices,
//! all reducing to the classic Hermitian constructions when M is Hermitian:
//!
//! * `Wegner`: eta = [M†, V] with V the off-diagonal part of M.
//! * `DiagAdjoint`: eta = [D†, V], entrywise (conj(d_n) - conj(d_k)) V_nk.
//! * `WhiteLike`: eta_nk = V_nk / (d_n - d_k), skipping near-degenerate
//!   pairs. This one contracts the off-diagonal invariant at a fixed
//!   exponential rate when it is well defined everywhere.

use serde::{Deserialize, Serialize};

use crate::matcore::matrix::{C64, CMatrix, MatrixError, commutator, split_diag_offdiag};

/// How close two diagonal entries must be for the white-like generator to
/// treat them as degenerate and zero the corresponding eta entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DegeneracyTol {
    /// Threshold = factor * max over pairs |d_n - d_k|. Scale-free default.
    RelativeToMaxGap(f64),
    /// Fixed threshold in the units of the matrix entries.
    Absolute(f64),
}

impl Default for DegeneracyTol {
    fn default() -> Self {
        DegeneracyTol::RelativeToMaxGap(1e-10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GeneratorKind {
    Wegner,
    DiagAdjoint,
    WhiteLike { degeneracy_tol: DegeneracyTol },
}

impl GeneratorKind {
    /// Default white-like generator.
    pub fn white() -> Self {
        GeneratorKind::WhiteLike { degeneracy_tol: DegeneracyTol::default() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GeneratorKind::Wegner => "wegner",
            GeneratorKind::DiagAdjoint => "diag-adjoint",
            GeneratorKind::WhiteLike { .. } => "white",
        }
    }
}

/// Generator matrix plus bookkeeping from its construction.
pub struct GeneratorOutput {
    pub eta: CMatrix,
    /// Ordered off-diagonal entries (n, k) that carried coupling but were
    /// zeroed because |d_n - d_k| fell below the degeneracy threshold.
    /// Always 0 for Wegner and DiagAdjoint.
    pub skipped_pairs: usize,
}

pub fn compute_generator(kind: GeneratorKind, m: &CMatrix) -> Result<GeneratorOutput, MatrixError> {
    match kind {
        GeneratorKind::Wegner => {
            let (_, v) = split_diag_offdiag(m);
            let eta = commutator(&m.adjoint(), &v)?;
            Ok(GeneratorOutput { eta, skipped_pairs: 0 })
        }
        GeneratorKind::DiagAdjoint => {
            let n = m.dim();
            let mut eta = CMatrix::zeros(n);
            for i in 0..n {
                let di = m[(i, i)].conj();
                for k in 0..n {
                    if i != k {
                        eta[(i, k)] = (di - m[(k, k)].conj()) * m[(i, k)];
                    }
                }
            }
            Ok(GeneratorOutput { eta, skipped_pairs: 0 })
        }
        GeneratorKind::WhiteLike { degeneracy_tol } => {
            let n = m.dim();
            let diag = m.diag();
            let tol = match degeneracy_tol {
                DegeneracyTol::Absolute(t) => t,
                DegeneracyTol::RelativeToMaxGap(f) => {
                    let mut max_gap = 0.0f64;
                    for i in 0..n {
                        for k in 0..i {
                            max_gap = max_gap.max((diag[i] - diag[k]).norm());
                        }
                    }
                    f * max_gap
                }
            };
            let mut eta = CMatrix::zeros(n);
            let mut skipped = 0usize;
            for i in 0..n {
                for k in 0..n {
                    if i == k {
                        continue;
                    }
                    let gap = diag[i] - diag[k];
                    if gap.norm() <= tol {
                        if m[(i, k)].norm() > 0.0 {
                            skipped += 1;
                        }
                        continue;
                    }
                    eta[(i, k)] = m[(i, k)] / gap;
                }
            }
            Ok(GeneratorOutput { eta, skipped_pairs: skipped })
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GeneratorError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("white-like generator undefined: {pairs} coupled diagonal pairs degenerate within tolerance")]
    DegenerateDiagonal { pairs: usize },
}

/// Residual |[eta_white, D] + V|_F of the white-like defining relation.
/// Zero (to rounding) wherever the generator is well defined; degenerate
/// coupled pairs make the relation unsolvable, so they are rejected rather
/// than silently skipped.
pub fn check_sw_relation(m: &CMatrix, degeneracy_tol: DegeneracyTol) -> Result<f64, GeneratorError> {
    let out = compute_generator(GeneratorKind::WhiteLike { degeneracy_tol }, m)?;
    if out.skipped_pairs > 0 {
        return Err(GeneratorError::DegenerateDiagonal { pairs: out.skipped_pairs });
    }
    let (d, v) = split_diag_offdiag(m);
    let mut resid = commutator(&out.eta, &d)?;
    resid.axpy(C64::new(1.0, 0.0), &v);
    Ok(resid.frobenius_norm())
}
