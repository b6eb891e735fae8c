//! Diagonalization of non-Hermitian matrices by continuous similarity
//! flows dM/dl = [eta(l), M(l)].
//!
//! Module map:
//!
//! * [`matcore`]: dense complex matrices, a reference eigensolver,
//!   trace-power invariants, seeded randomness, spectral matching.
//! * [`generators`]: the three flow generators and the defining-relation
//!   check for the white-like choice.
//! * [`flow`]: the embedded Runge-Kutta flow engine with co-flowing
//!   passengers, truncation, preconditioning, and CSV traces.
//! * [`superfermion`]: doubled-space construction for quadratic open
//!   systems and the single-mode closed forms.
//! * [`models`]: concrete problem families (scattering into a structured
//!   bath, disordered chains with local loss) plus their specialized
//!   flow equations.
//! * [`sw`]: perturbative block diagonalization to compare the flow
//!   against order by order.

pub mod flow;
pub mod generators;
pub mod matcore;
pub mod models;
pub mod superfermion;
pub mod sw;

pub use flow::{
    Anomaly, FlowConfig, FlowError, FlowOutcome, FlowRun, FlowTrace, Passenger, PassengerId,
    PreconditionerPolicy, StepMode, StopReason, time_evolution_diagonal,
};
pub use generators::{DegeneracyTol, GeneratorKind, check_sw_relation, compute_generator};
pub use matcore::{
    C64, CMatrix, i2_offdiagonal, random_complex_matrix, reference_spectrum, seeded_rng,
    spectral_discrepancy, trace_power_invariants,
};
pub use superfermion::QuadraticLindblad;
