//! Concrete model families the flow machinery is exercised on:
//! a box of modes with a single local absorber ([`scattering`]), a
//! disordered open chain losing particles at its center ([`chain`]), and
//! a coupling chart with closed-form flow right-hand sides ([`quadratic`]).

use crate::matcore::eigen::EigenError;

pub mod chain;
pub mod quadratic;
pub mod scattering;

pub use chain::{
    DecayLaw, DisorderSpec, ScanReport, ScanSpec, SizeStats, asymptotic_decay_rate,
    build_disordered_matrix, disorder_scan, has_strongly_dissipative, scan_csv,
};
pub use quadratic::{
    coupling_rhs_diag_adjoint, coupling_rhs_white, couplings_to_matrix, matrix_to_couplings,
};
pub use scattering::{
    ScatteringSpec, build_scattering_matrix, central_eigenvalue, solve_secular,
    strongly_dissipative_eigenvalue, weak_coupling_eigenvalue,
};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model parameters: {reason}")]
    BadParams { reason: String },
    #[error("{formula} estimate needs {needs}; got gamma/v = {ratio:.3}")]
    WrongRegime { formula: &'static str, needs: &'static str, ratio: f64 },
    #[error("secular solver failed: {reason}")]
    SecularFailure { reason: String },
    #[error("spectrum has eigenvalues growing in time: max Im = {max_im:.3e}")]
    UnphysicalGrowth { max_im: f64 },
    #[error("empty spectrum")]
    EmptySpectrum,
    #[error("realization {realization} at {sites} sites has vanishing decay rate")]
    VanishingRate { sites: usize, realization: u64 },
    #[error(transparent)]
    Eigen(#[from] EigenError),
}
