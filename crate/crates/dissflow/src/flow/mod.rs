//! Flow-equation integration.
//!
//! Integrates dM/dl = [eta(l), M(l)] with a chosen generator until the
//! off-diagonal part is gone (relative to its starting size), the flow-time
//! budget runs out, or the state goes non-finite. Auxiliary objects can ride
//! along ("passengers") so transforms and expectation values stay consistent
//! with the evolving frame:
//!
//! * similarity X: dX/dl = [eta, X]   (a second operator in the same frame)
//! * state P:      dP/dl = eta P      (from identity this accumulates S with
//!   M(l) = S M(0) S^-1)
//! * adjoint O:    dO/dl = -eta† O    (from identity this accumulates
//!   (S†)^-1, so pairings O† P are conserved exactly)
//!
//! Optional ingredients, both off by default: a random similarity
//! preconditioner for initial conditions where the generator vanishes or
//! stalls, and a truncation rule that permanently zeroes off-diagonal
//! entries once they are small and guaranteed not to regrow.

mod rk;
pub mod trace;

use serde::Serialize;

use crate::generators::{GeneratorKind, compute_generator};
use crate::matcore::eigen::EigenError;
use crate::matcore::invariants::{i2_offdiagonal, trace_power_invariants};
use crate::matcore::matrix::{C64, CMatrix, MatrixError, commutator, offdiag_norm_sq};
use crate::matcore::random::{random_preconditioner, seeded_rng};

pub use trace::{FlowTrace, TraceRow};

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error("flow state became non-finite at l = {ell}")]
    NonFinite { ell: f64 },
    #[error("invalid flow configuration: {reason}")]
    BadConfig { reason: String },
    #[error("passenger dimension {got} does not match flow dimension {want}")]
    PassengerDim { want: usize, got: usize },
    #[error("matrix is not diagonal: off-diagonal fraction {ratio:.3e} of its norm")]
    NotDiagonal { ratio: f64 },
}

/// Step-size policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StepMode {
    /// March at `FlowConfig::step` (final step shortened to land on l_max).
    Fixed,
    /// Embedded-error control: accept when the 5th/4th difference is below
    /// error_threshold * max(1, |M|_F), step clamped to [min_step, max_step].
    /// A step at min_step is always accepted (and flagged as an anomaly).
    Adaptive { error_threshold: f64, min_step: f64, max_step: f64 },
}

/// Random similarity conjugation M -> R M R^-1 with R = I + strength * G
/// applied before flowing, lifting flow-stalling structure in the initial
/// condition. Passengers are conjugated consistently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PreconditionerPolicy {
    Off,
    /// Apply only when a stall trigger fires at l = 0.
    Auto { seed: u64, strength: f64 },
    Always { seed: u64, strength: f64 },
}

/// What fired an automatic preconditioner application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PreconditionTrigger {
    /// |eta(0)| is negligible while off-diagonal coupling is present: the
    /// flow would not move (e.g. balanced gain/loss symmetric points).
    FrozenGenerator,
    /// The off-diagonal invariant sum_{n!=k} M_nk M_kn starts at zero, so
    /// its exact contraction cannot certify progress (e.g. triangular
    /// matrices, which every generator leaves triangular).
    ZeroOffdiagInvariant,
    /// The diagonal starts at zero, so gap-driven generators have nothing
    /// to work with.
    ZeroDiagonal,
    /// The white-like generator had to skip degenerate coupled pairs.
    DegenerateCoupledPairs,
}

#[derive(Debug, Clone, Serialize)]
pub enum PreconditionReason {
    Always,
    Auto(Vec<PreconditionTrigger>),
}

#[derive(Debug, Clone, Serialize)]
pub struct PreconditionerReport {
    pub seed: u64,
    pub strength: f64,
    pub reason: PreconditionReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StopReason {
    /// Squared off-diagonal norm fell to stop_offdiag_ratio of its initial
    /// value.
    OffdiagConverged { ell: f64 },
    /// Flow-time budget exhausted first.
    MaxFlowReached,
}

/// Conditions worth reporting that do not abort the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Anomaly {
    /// Adaptive control wanted a smaller step than min_step allows; the
    /// min_step result was accepted anyway. `err` is the embedded estimate.
    MinStepAccepted { ell: f64, err: f64 },
    /// |V|^2 grew between consecutive accepted steps under the Wegner
    /// generator, which should contract it monotonically; `rel_increase`
    /// is the relative growth of the worst step.
    WegnerMonotonicityViolated { ell: f64, rel_increase: f64 },
    /// The white-like generator skipped degenerate coupled pairs during the
    /// flow (entries it can never remove).
    DegenerateCouplingsSkipped { first_ell: f64, max_pairs: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowConfig {
    pub generator: GeneratorKind,
    /// Fixed step size, or the initial step in adaptive mode.
    pub step: f64,
    /// Flow-time budget l_max.
    pub max_flow: f64,
    pub mode: StepMode,
    /// 0 disables truncation. Otherwise an off-diagonal entry is pinned to
    /// zero once |M_nk| and its projected remaining change both fall below
    /// truncation_fraction * |M_nk(0)| * min(1, |V(l)|_F / |V(0)|_F).
    pub truncation_fraction: f64,
    /// Declare convergence when |V(l)|_F^2 <= this ratio times |V(0)|_F^2.
    /// 0 keeps flowing until max_flow (or an exactly diagonal state).
    pub stop_offdiag_ratio: f64,
    /// Record every k-th accepted step (plus l = 0 and the final state).
    pub trace_stride: usize,
    /// Track drifts of I_n = tr[M^n] for n = 1..=count; 0 means dim.
    pub invariant_count: usize,
    pub preconditioner: PreconditionerPolicy,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            generator: GeneratorKind::white(),
            step: 1e-3,
            max_flow: 10.0,
            mode: StepMode::Fixed,
            truncation_fraction: 0.0,
            stop_offdiag_ratio: 1e-12,
            trace_stride: 10,
            invariant_count: 0,
            preconditioner: PreconditionerPolicy::Off,
        }
    }
}

/// Auxiliary object carried through the flow. See the module docs for the
/// equation of motion of each kind.
#[derive(Debug, Clone)]
pub enum Passenger {
    Similarity(CMatrix),
    AdjointMatrix(CMatrix),
    AdjointVector(Vec<C64>),
    StateMatrix(CMatrix),
    StateVector(Vec<C64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassengerId(usize);

impl PassengerId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy)]
enum PassengerKind {
    Similarity,
    Adjoint,
    State,
}

/// Integration payload: the flowing matrix plus passenger payloads.
#[derive(Clone)]
pub(crate) struct Bundle {
    pub(crate) m: CMatrix,
    pub(crate) passengers: Vec<Payload>,
}

#[derive(Clone)]
pub(crate) enum Payload {
    Mat(CMatrix),
    Col(Vec<C64>),
}

impl Payload {
    fn axpy(&mut self, s: f64, other: &Payload) {
        match (self, other) {
            (Payload::Mat(a), Payload::Mat(b)) => a.axpy(C64::new(s, 0.0), b),
            (Payload::Col(a), Payload::Col(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += s * y;
                }
            }
            _ => unreachable!("payload shapes are fixed at construction"),
        }
    }

    fn norm_sqr(&self) -> f64 {
        match self {
            Payload::Mat(a) => a.frobenius_norm_sq(),
            Payload::Col(v) => v.iter().map(|z| z.norm_sqr()).sum(),
        }
    }

    fn zeros_like(&self) -> Payload {
        match self {
            Payload::Mat(a) => Payload::Mat(CMatrix::zeros(a.dim())),
            Payload::Col(v) => Payload::Col(vec![C64::new(0.0, 0.0); v.len()]),
        }
    }
}

impl Bundle {
    fn axpy(&mut self, s: f64, other: &Bundle) {
        self.m.axpy(C64::new(s, 0.0), &other.m);
        for (a, b) in self.passengers.iter_mut().zip(&other.passengers) {
            a.axpy(s, b);
        }
    }

    fn norm(&self) -> f64 {
        let total: f64 = self.m.frobenius_norm_sq()
            + self.passengers.iter().map(Payload::norm_sqr).sum::<f64>();
        total.sqrt()
    }

    fn zeros_like(&self) -> Bundle {
        Bundle {
            m: CMatrix::zeros(self.m.dim()),
            passengers: self.passengers.iter().map(Payload::zeros_like).collect(),
        }
    }
}

/// A configured flow ready to execute.
pub struct FlowRun {
    m: CMatrix,
    config: FlowConfig,
    kinds: Vec<PassengerKind>,
    payloads: Vec<Payload>,
}

/// Result of an executed flow.
#[derive(Debug)]
pub struct FlowOutcome {
    /// Starting matrix after preconditioning (equal to the input when no
    /// preconditioner was applied). Invariant drifts are relative to this.
    pub initial_matrix: CMatrix,
    pub final_matrix: CMatrix,
    pub passengers: Vec<Passenger>,
    pub trace: FlowTrace,
    pub preconditioner: Option<PreconditionerReport>,
    pub stop: StopReason,
    pub anomalies: Vec<Anomaly>,
    pub steps_taken: usize,
    pub steps_rejected: usize,
    /// Off-diagonal entries permanently zeroed by the truncation rule.
    pub pinned_entries: usize,
    pub final_ell: f64,
}

impl FlowOutcome {
    pub fn passenger(&self, id: PassengerId) -> &Passenger {
        &self.passengers[id.0]
    }

    pub fn final_diag(&self) -> Vec<C64> {
        self.final_matrix.diag()
    }

    /// |V(final)|_F / |V(initial)|_F, or 0 when the input was diagonal.
    pub fn offdiag_ratio(&self) -> f64 {
        let v0 = offdiag_norm_sq(&self.initial_matrix);
        if v0 == 0.0 {
            return 0.0;
        }
        (offdiag_norm_sq(&self.final_matrix) / v0).sqrt()
    }
}

impl FlowRun {
    pub fn new(m: CMatrix, config: FlowConfig) -> Result<FlowRun, FlowError> {
        if !m.is_finite() {
            return Err(FlowError::BadConfig { reason: "input matrix has non-finite entries".into() });
        }
        let bad = |reason: &str| Err(FlowError::BadConfig { reason: reason.into() });
        if !(config.step > 0.0 && config.step.is_finite()) {
            return bad("step must be positive and finite");
        }
        if !(config.max_flow > 0.0 && config.max_flow.is_finite()) {
            return bad("max_flow must be positive and finite");
        }
        if !(0.0..1.0).contains(&config.truncation_fraction) {
            return bad("truncation_fraction must lie in [0, 1)");
        }
        if !(config.stop_offdiag_ratio >= 0.0 && config.stop_offdiag_ratio.is_finite()) {
            return bad("stop_offdiag_ratio must be finite and non-negative");
        }
        if config.trace_stride == 0 {
            return bad("trace_stride must be at least 1");
        }
        if let StepMode::Adaptive { error_threshold, min_step, max_step } = config.mode {
            if !(error_threshold > 0.0 && error_threshold.is_finite()) {
                return bad("error_threshold must be positive and finite");
            }
            if !(min_step > 0.0 && min_step <= max_step && max_step.is_finite()) {
                return bad("need 0 < min_step <= max_step < inf");
            }
        }
        if let PreconditionerPolicy::Auto { strength, .. }
        | PreconditionerPolicy::Always { strength, .. } = config.preconditioner
        {
            if !(strength > 0.0 && strength.is_finite()) {
                return bad("preconditioner strength must be positive and finite");
            }
        }
        Ok(FlowRun { m, config, kinds: Vec::new(), payloads: Vec::new() })
    }

    pub fn add_passenger(&mut self, p: Passenger) -> Result<PassengerId, FlowError> {
        let want = self.m.dim();
        let (kind, payload) = match p {
            Passenger::Similarity(x) => (PassengerKind::Similarity, Payload::Mat(x)),
            Passenger::AdjointMatrix(x) => (PassengerKind::Adjoint, Payload::Mat(x)),
            Passenger::AdjointVector(v) => (PassengerKind::Adjoint, Payload::Col(v)),
            Passenger::StateMatrix(x) => (PassengerKind::State, Payload::Mat(x)),
            Passenger::StateVector(v) => (PassengerKind::State, Payload::Col(v)),
        };
        let got = match &payload {
            Payload::Mat(x) => x.dim(),
            Payload::Col(v) => v.len(),
        };
        if got != want {
            return Err(FlowError::PassengerDim { want, got });
        }
        self.kinds.push(kind);
        self.payloads.push(payload);
        Ok(PassengerId(self.kinds.len() - 1))
    }

    /// Run the flow to completion.
    pub fn execute(self) -> Result<FlowOutcome, FlowError> {
        let FlowRun { mut m, config, kinds, mut payloads } = self;
        let dim = m.dim();
        let generator = config.generator;

        // Preconditioning decision happens on the raw initial matrix.
        let precond_report = decide_preconditioner(&config, &m)?;
        if let Some(report) = &precond_report {
            let mut rng = seeded_rng(report.seed, 0);
            let (r, rinv) = random_preconditioner(dim, report.strength, &mut rng)?;
            m = r.mul(&m)?.mul(&rinv)?;
            let radj_inv = rinv.adjoint(); // (R†)^-1 = (R^-1)†
            for (kind, payload) in kinds.iter().zip(payloads.iter_mut()) {
                *payload = match (kind, &*payload) {
                    (PassengerKind::Similarity, Payload::Mat(x)) => {
                        Payload::Mat(r.mul(x)?.mul(&rinv)?)
                    }
                    (PassengerKind::Adjoint, Payload::Mat(x)) => Payload::Mat(radj_inv.mul(x)?),
                    (PassengerKind::Adjoint, Payload::Col(v)) => {
                        Payload::Col(radj_inv.mul_vec(v)?)
                    }
                    (PassengerKind::State, Payload::Mat(x)) => Payload::Mat(r.mul(x)?),
                    (PassengerKind::State, Payload::Col(v)) => Payload::Col(r.mul_vec(v)?),
                    _ => unreachable!("payload shapes are fixed at construction"),
                };
            }
        }

        let initial_matrix = m.clone();
        let invariant_count = if config.invariant_count == 0 { dim } else { config.invariant_count };
        let inv0 = trace_power_invariants(&m, invariant_count);
        let offnorm_sq0 = offdiag_norm_sq(&m);
        let stop_sq = config.stop_offdiag_ratio * offnorm_sq0;
        let initial_abs: Vec<f64> = m.as_slice().iter().map(|z| z.norm()).collect();
        let mut pinned = vec![false; dim * dim];
        let mut pinned_count = 0usize;

        let mut trace = FlowTrace { dim, invariant_count, rows: Vec::new() };
        let record = |trace: &mut FlowTrace, m: &CMatrix, ell: f64| {
            let inv = trace_power_invariants(m, invariant_count);
            trace.rows.push(TraceRow {
                ell,
                diag: m.diag(),
                offnorm_sq: offdiag_norm_sq(m),
                i2off_abs: i2_offdiagonal(m).norm(),
                invariant_drift: inv.iter().zip(&inv0).map(|(a, b)| (a - b).norm()).collect(),
            });
        };

        let mut anomalies: Vec<Anomaly> = Vec::new();
        let mut minstep_noted = false;
        let mut wegner_rise: Option<(f64, f64)> = None; // (ell, worst rel increase)
        let mut prev_offnorm_sq = offnorm_sq0;
        let mut skip_first_ell: Option<f64> = None;
        let mut skip_max_pairs = 0usize;

        let (mut h, h_min, h_max, adaptive_tol) = match config.mode {
            StepMode::Fixed => (config.step, config.step, config.step, 0.0),
            StepMode::Adaptive { error_threshold, min_step, max_step } => {
                (config.step.clamp(min_step, max_step), min_step, max_step, error_threshold)
            }
        };

        let mut y = Bundle { m, passengers: payloads };
        let mut ell = 0.0f64;
        let mut steps_taken = 0usize;
        let mut steps_rejected = 0usize;

        record(&mut trace, &y.m, ell);

        let mut note_skips = |skips: usize, ell: f64| {
            if skips > 0 {
                skip_first_ell.get_or_insert(ell);
            }
            if skips > skip_max_pairs {
                skip_max_pairs = skips;
            }
        };

        let (mut k1, skips) = bundle_rhs(generator, &kinds, &y)?;
        note_skips(skips, ell);

        let stop;
        loop {
            if offdiag_norm_sq(&y.m) <= stop_sq {
                stop = StopReason::OffdiagConverged { ell };
                break;
            }
            let remaining = config.max_flow - ell;
            if remaining <= config.max_flow * 1e-15 {
                stop = StopReason::MaxFlowReached;
                break;
            }

            // Truncation: pin entries that are small now and cannot climb
            // back above threshold in the remaining flow time (first-order
            // bound from the current derivative).
            if config.truncation_fraction > 0.0 {
                let r = (offdiag_norm_sq(&y.m) / offnorm_sq0).sqrt().min(1.0);
                for row in 0..dim {
                    for col in 0..dim {
                        if row == col {
                            continue;
                        }
                        let idx = row * dim + col;
                        if pinned[idx] {
                            continue;
                        }
                        let thr = config.truncation_fraction * initial_abs[idx] * r;
                        if thr > 0.0
                            && y.m[(row, col)].norm() < thr
                            && k1.m[(row, col)].norm() * remaining < thr
                        {
                            pinned[idx] = true;
                            pinned_count += 1;
                            y.m[(row, col)] = C64::new(0.0, 0.0);
                        }
                    }
                }
            }

            // Attempt steps until one is accepted.
            let (y_new, h_used) = loop {
                let h_eff = h.min(remaining);
                let (candidate, err) = rk::cash_karp_step(&y, &k1, h_eff, |b| {
                    bundle_rhs(generator, &kinds, b).map(|(db, _)| db)
                })?;
                match config.mode {
                    StepMode::Fixed => break (candidate, h_eff),
                    StepMode::Adaptive { .. } => {
                        let scale = adaptive_tol * y.m.frobenius_norm().max(1.0);
                        if err <= scale {
                            // Grow the next step from the error headroom.
                            let fac = if err > 0.0 {
                                0.9 * (scale / err).powf(0.2)
                            } else {
                                5.0
                            };
                            h = (h_eff * fac.clamp(0.2, 5.0)).clamp(h_min, h_max);
                            break (candidate, h_eff);
                        }
                        if h_eff <= h_min * (1.0 + 1e-12) {
                            // Cannot shrink further; take it and flag.
                            if !minstep_noted {
                                minstep_noted = true;
                                anomalies.push(Anomaly::MinStepAccepted { ell, err });
                            }
                            h = h_min;
                            break (candidate, h_eff);
                        }
                        steps_rejected += 1;
                        let fac = (0.9 * (scale / err).powf(0.2)).clamp(0.2, 5.0);
                        h = (h_eff * fac).clamp(h_min, h_max);
                    }
                }
            };

            y = y_new;
            ell += h_used;
            steps_taken += 1;
            if config.truncation_fraction > 0.0 && pinned_count > 0 {
                for idx in 0..dim * dim {
                    if pinned[idx] {
                        y.m[(idx / dim, idx % dim)] = C64::new(0.0, 0.0);
                    }
                }
            }
            if !y.m.is_finite() {
                return Err(FlowError::NonFinite { ell });
            }

            let (k1_new, skips) = bundle_rhs(generator, &kinds, &y)?;
            k1 = k1_new;
            note_skips(skips, ell);

            if matches!(generator, GeneratorKind::Wegner) {
                let cur = offdiag_norm_sq(&y.m);
                if cur > prev_offnorm_sq * (1.0 + 1e-8) && prev_offnorm_sq > 0.0 {
                    let rel = cur / prev_offnorm_sq - 1.0;
                    match &mut wegner_rise {
                        Some((_, worst)) if *worst >= rel => {}
                        slot => *slot = Some((ell, rel)),
                    }
                }
                prev_offnorm_sq = cur;
            }
            if steps_taken % config.trace_stride == 0 {
                record(&mut trace, &y.m, ell);
            }
        }

        let need_final_row = trace.rows.last().map(|r| r.ell != ell).unwrap_or(true);
        if need_final_row {
            record(&mut trace, &y.m, ell);
        }
        if let Some((ell, rel_increase)) = wegner_rise {
            anomalies.push(Anomaly::WegnerMonotonicityViolated { ell, rel_increase });
        }
        if let Some(first_ell) = skip_first_ell {
            anomalies.push(Anomaly::DegenerateCouplingsSkipped {
                first_ell,
                max_pairs: skip_max_pairs,
            });
        }

        let passengers = kinds
            .iter()
            .zip(y.passengers)
            .map(|(kind, payload)| match (kind, payload) {
                (PassengerKind::Similarity, Payload::Mat(x)) => Passenger::Similarity(x),
                (PassengerKind::Adjoint, Payload::Mat(x)) => Passenger::AdjointMatrix(x),
                (PassengerKind::Adjoint, Payload::Col(v)) => Passenger::AdjointVector(v),
                (PassengerKind::State, Payload::Mat(x)) => Passenger::StateMatrix(x),
                (PassengerKind::State, Payload::Col(v)) => Passenger::StateVector(v),
                _ => unreachable!("payload shapes are fixed at construction"),
            })
            .collect();

        Ok(FlowOutcome {
            initial_matrix,
            final_matrix: y.m,
            passengers,
            trace,
            preconditioner: precond_report,
            stop,
            anomalies,
            steps_taken,
            steps_rejected,
            pinned_entries: pinned_count,
            final_ell: ell,
        })
    }
}

fn decide_preconditioner(
    config: &FlowConfig,
    m: &CMatrix,
) -> Result<Option<PreconditionerReport>, FlowError> {
    match config.preconditioner {
        PreconditionerPolicy::Off => Ok(None),
        PreconditionerPolicy::Always { seed, strength } => Ok(Some(PreconditionerReport {
            seed,
            strength,
            reason: PreconditionReason::Always,
        })),
        PreconditionerPolicy::Auto { seed, strength } => {
            let vnorm_sq = offdiag_norm_sq(m);
            if vnorm_sq == 0.0 {
                return Ok(None); // already diagonal, nothing to lift
            }
            let vnorm = vnorm_sq.sqrt();
            let out = compute_generator(config.generator, m)?;
            let mut triggers = Vec::new();
            if out.eta.frobenius_norm() < 1e-12 * vnorm {
                triggers.push(PreconditionTrigger::FrozenGenerator);
            }
            if i2_offdiagonal(m).norm() < 1e-12 * vnorm_sq {
                triggers.push(PreconditionTrigger::ZeroOffdiagInvariant);
            }
            let diag_max = m.diag().iter().fold(0.0f64, |a, z| a.max(z.norm()));
            if diag_max < 1e-14 * m.max_abs() {
                triggers.push(PreconditionTrigger::ZeroDiagonal);
            }
            if out.skipped_pairs > 0 {
                triggers.push(PreconditionTrigger::DegenerateCoupledPairs);
            }
            if triggers.is_empty() {
                Ok(None)
            } else {
                Ok(Some(PreconditionerReport {
                    seed,
                    strength,
                    reason: PreconditionReason::Auto(triggers),
                }))
            }
        }
    }
}

/// Bundle derivative: one generator evaluation drives the matrix and every
/// passenger. Returns the skipped degenerate-pair count of the generator.
fn bundle_rhs(
    generator: GeneratorKind,
    kinds: &[PassengerKind],
    y: &Bundle,
) -> Result<(Bundle, usize), FlowError> {
    let out = compute_generator(generator, &y.m)?;
    let eta = out.eta;
    let dm = commutator(&eta, &y.m)?;
    let needs_adjoint = kinds.iter().any(|k| matches!(k, PassengerKind::Adjoint));
    let eta_adj = if needs_adjoint { Some(eta.adjoint()) } else { None };
    let minus_one = C64::new(-1.0, 0.0);
    let mut dpass = Vec::with_capacity(y.passengers.len());
    for (kind, payload) in kinds.iter().zip(&y.passengers) {
        let d = match (kind, payload) {
            (PassengerKind::Similarity, Payload::Mat(x)) => Payload::Mat(commutator(&eta, x)?),
            (PassengerKind::State, Payload::Mat(x)) => Payload::Mat(eta.mul(x)?),
            (PassengerKind::State, Payload::Col(v)) => Payload::Col(eta.mul_vec(v)?),
            (PassengerKind::Adjoint, Payload::Mat(x)) => {
                let ea = eta_adj.as_ref().expect("adjoint computed above");
                Payload::Mat(ea.mul(x)?.scale(minus_one))
            }
            (PassengerKind::Adjoint, Payload::Col(v)) => {
                let ea = eta_adj.as_ref().expect("adjoint computed above");
                Payload::Col(ea.mul_vec(v)?.into_iter().map(|z| -z).collect())
            }
            _ => unreachable!("payload shapes are fixed at construction"),
        };
        dpass.push(d);
    }
    Ok((Bundle { m: dm, passengers: dpass }, out.skipped_pairs))
}

/// Diagonal-frame time evolution: sum_k w_k exp(-i lambda_k t) over the
/// diagonal entries lambda_k of `final_diag`. With lambda = e - i g/2 this
/// decays at rate g/2, so Im(lambda) < 0 modes relax and Im(lambda) > 0
/// modes grow. Rejects matrices whose off-diagonal part exceeds 1e-8 of
/// max(1, |M|_F): evolving an unconverged flow result mode-by-mode would
/// silently drop the residual couplings.
pub fn time_evolution_diagonal(
    final_diag: &CMatrix,
    weights: &[C64],
    t: f64,
) -> Result<C64, FlowError> {
    let dim = final_diag.dim();
    if weights.len() != dim {
        return Err(MatrixError::BadLength { dim, expected: dim, got: weights.len() }.into());
    }
    let off = offdiag_norm_sq(final_diag).sqrt();
    let scale = final_diag.frobenius_norm().max(1.0);
    if off > 1e-8 * scale {
        return Err(FlowError::NotDiagonal { ratio: off / scale });
    }
    let i = C64::new(0.0, 1.0);
    Ok(final_diag
        .diag()
        .iter()
        .zip(weights)
        .map(|(l, w)| w * (-i * l * t).exp())
        .sum())
}
