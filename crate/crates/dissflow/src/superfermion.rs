//! Doubled-space representation of quadratic open-system dynamics.
//!
//! A quadratic problem is described by a single-particle Hamiltonian h and
//! two Hermitian positive semidefinite rate matrices: lambda1 (losses) and
//! lambda2 (gains), all L x L. The full dynamics is generated by a 2L x 2L
//! non-Hermitian matrix M plus a scalar offset K:
//!
//! ```text
//! M = [ h - (i/2)(L1 - L2)    conj(L2)            ]
//!     [ -L1                   h + (i/2)(L1 - L2)  ]
//! K = -tr[h] + (i/2) tr[L1 + L2]
//! ```
//!
//! M obeys the block-swap symmetry S1 M S1 = M† (S1 exchanges the two
//! blocks), so its spectrum is closed under complex conjugation. When L2 is
//! real, M is similar to an upper block-triangular matrix with diagonal
//! blocks h -/+ (i/2)(L1 + L2), halving the problem size.
//!
//! The single-mode (L = 1) problem is parametrized by (alpha, mu1, mu2)
//! with M = [[e + i*alpha, mu2], [-mu1, e - i*alpha]], alpha(0) =
//! -(g1 - g2)/2, mu_i(0) = g_i. It has closed-form flows for several
//! generator choices, used as oracles for the integrator.

use serde::{Deserialize, Serialize};

use crate::flow::{
    FlowConfig, FlowError, FlowRun, Passenger, PreconditionerPolicy, StepMode,
    time_evolution_diagonal,
};
use crate::generators::GeneratorKind;
use crate::matcore::eigen::{EigenError, reference_spectrum};
use crate::matcore::matrix::{C64, CMatrix, MatrixError};

#[derive(Debug, thiserror::Error)]
pub enum SuperfermionError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("{which} must be Hermitian: max |X - X†| = {dev:.3e}")]
    NotHermitian { which: &'static str, dev: f64 },
    #[error("{which} must be positive semidefinite: min eigenvalue {min_eig:.3e}")]
    NotPositive { which: &'static str, min_eig: f64 },
    #[error("block reduction needs a real gain matrix: max |Im lambda2| = {max_imag:.3e}")]
    ComplexLambda2 { max_imag: f64 },
    #[error("no closed-form {generator} flow here: {reason}")]
    NoClosedForm { generator: &'static str, reason: String },
    #[error("invalid rates: {reason}")]
    InvalidRates { reason: String },
    #[error("dimension mismatch: {reason}")]
    BadShape { reason: String },
    #[error("lindblad file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Relative tolerance for the Hermiticity and positivity input checks.
const HERMITICITY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Quadratic open-system problem: Hamiltonian h plus loss/gain rate
/// matrices, all L x L, validated Hermitian (and the rates positive
/// semidefinite) on construction.
#[derive(Debug, Clone)]
pub struct QuadraticLindblad {
    dim: usize,
    h: CMatrix,
    lambda1: CMatrix,
    lambda2: CMatrix,
}

/// Serialized form: square matrices flattened row-major, each complex
/// entry as an [re, im] pair.
#[derive(Serialize, Deserialize)]
struct QuadraticLindbladFile {
    dim: usize,
    h: Vec<[f64; 2]>,
    lambda1: Vec<[f64; 2]>,
    lambda2: Vec<[f64; 2]>,
}

fn hermiticity_deviation(m: &CMatrix) -> f64 {
    m.max_abs_diff(&m.adjoint())
}

fn check_hermitian(m: &CMatrix, which: &'static str) -> Result<(), SuperfermionError> {
    let dev = hermiticity_deviation(m);
    if dev > HERMITICITY_TOL * m.max_abs().max(1.0) {
        return Err(SuperfermionError::NotHermitian { which, dev });
    }
    Ok(())
}

fn check_psd(m: &CMatrix, which: &'static str) -> Result<(), SuperfermionError> {
    // Rate matrices are Hermitian, so the spectrum is real up to rounding;
    // the QR eigensolver is accurate enough for a sign check.
    let spec = reference_spectrum(m)?;
    let min_eig = spec.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    if min_eig < -PSD_TOL * m.max_abs().max(1.0) {
        return Err(SuperfermionError::NotPositive { which, min_eig });
    }
    Ok(())
}

impl QuadraticLindblad {
    pub fn new(
        h: CMatrix,
        lambda1: CMatrix,
        lambda2: CMatrix,
    ) -> Result<QuadraticLindblad, SuperfermionError> {
        let dim = h.dim();
        if lambda1.dim() != dim || lambda2.dim() != dim {
            return Err(SuperfermionError::BadShape {
                reason: format!(
                    "h is {dim}x{dim} but rates are {}x{} and {}x{}",
                    lambda1.dim(),
                    lambda1.dim(),
                    lambda2.dim(),
                    lambda2.dim()
                ),
            });
        }
        check_hermitian(&h, "h")?;
        check_hermitian(&lambda1, "lambda1")?;
        check_hermitian(&lambda2, "lambda2")?;
        check_psd(&lambda1, "lambda1")?;
        check_psd(&lambda2, "lambda2")?;
        Ok(QuadraticLindblad { dim, h, lambda1, lambda2 })
    }

    /// Assemble the rate matrices from jump vectors: each loss channel
    /// couples as L1 += conj(l_m) l_n, each gain channel as
    /// L2 += l_m conj(l_n). Channels are either pure loss or pure gain;
    /// the two lists keep that restriction structural.
    pub fn from_jump_vectors(
        h: CMatrix,
        losses: &[Vec<C64>],
        gains: &[Vec<C64>],
    ) -> Result<QuadraticLindblad, SuperfermionError> {
        let dim = h.dim();
        let mut lambda1 = CMatrix::zeros(dim);
        let mut lambda2 = CMatrix::zeros(dim);
        for (list, mat, conj_first) in
            [(losses, &mut lambda1, true), (gains, &mut lambda2, false)]
        {
            for l in list {
                if l.len() != dim {
                    return Err(SuperfermionError::BadShape {
                        reason: format!("jump vector length {} for dimension {dim}", l.len()),
                    });
                }
                for m in 0..dim {
                    for n in 0..dim {
                        mat[(m, n)] += if conj_first {
                            l[m].conj() * l[n]
                        } else {
                            l[m] * l[n].conj()
                        };
                    }
                }
            }
        }
        QuadraticLindblad::new(h, lambda1, lambda2)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> &CMatrix {
        &self.h
    }

    pub fn lambda1(&self) -> &CMatrix {
        &self.lambda1
    }

    pub fn lambda2(&self) -> &CMatrix {
        &self.lambda2
    }

    /// Doubled 2L x 2L matrix plus the scalar offset K.
    pub fn build_matrix(&self) -> Result<SuperfermionMatrix, SuperfermionError> {
        let l = self.dim;
        let mut m = CMatrix::zeros(2 * l);
        let half_i = C64::new(0.0, 0.5);
        for r in 0..l {
            for c in 0..l {
                let diff = half_i * (self.lambda1[(r, c)] - self.lambda2[(r, c)]);
                m[(r, c)] = self.h[(r, c)] - diff;
                m[(l + r, l + c)] = self.h[(r, c)] + diff;
                m[(r, l + c)] = self.lambda2[(r, c)].conj();
                m[(l + r, c)] = -self.lambda1[(r, c)];
            }
        }
        let rates_trace = self.lambda1.trace() + self.lambda2.trace();
        let constant = -self.h.trace() + C64::new(0.0, 0.5) * rates_trace;
        Ok(SuperfermionMatrix { m, constant })
    }

    /// For a real gain matrix the doubled problem splits into two L x L
    /// blocks, h - (i/2)(L1 + L2) and h + (i/2)(L1 + L2); the second block's
    /// spectrum is the conjugate of the first's. A complex gain matrix
    /// couples the blocks, so it is rejected.
    pub fn reduce_blocks_real_lambda2(&self) -> Result<(CMatrix, CMatrix), SuperfermionError> {
        let max_imag =
            self.lambda2.as_slice().iter().map(|z| z.im.abs()).fold(0.0f64, f64::max);
        if max_imag > HERMITICITY_TOL * self.lambda2.max_abs().max(1.0) {
            return Err(SuperfermionError::ComplexLambda2 { max_imag });
        }
        let l = self.dim;
        let mut minus = CMatrix::zeros(l);
        let mut plus = CMatrix::zeros(l);
        let half_i = C64::new(0.0, 0.5);
        for r in 0..l {
            for c in 0..l {
                let s = half_i * (self.lambda1[(r, c)] + self.lambda2[(r, c)]);
                minus[(r, c)] = self.h[(r, c)] - s;
                plus[(r, c)] = self.h[(r, c)] + s;
            }
        }
        Ok((minus, plus))
    }

    pub fn to_json_string(&self) -> Result<String, SuperfermionError> {
        let pack = |m: &CMatrix| m.as_slice().iter().map(|z| [z.re, z.im]).collect();
        let file = QuadraticLindbladFile {
            dim: self.dim,
            h: pack(&self.h),
            lambda1: pack(&self.lambda1),
            lambda2: pack(&self.lambda2),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json_str(s: &str) -> Result<QuadraticLindblad, SuperfermionError> {
        let file: QuadraticLindbladFile = serde_json::from_str(s)?;
        let unpack = |v: &[[f64; 2]], which: &'static str| -> Result<CMatrix, SuperfermionError> {
            if v.len() != file.dim * file.dim {
                return Err(SuperfermionError::BadShape {
                    reason: format!(
                        "{which} has {} entries, expected {}",
                        v.len(),
                        file.dim * file.dim
                    ),
                });
            }
            let data = v.iter().map(|p| C64::new(p[0], p[1])).collect();
            Ok(CMatrix::from_vec(file.dim, data)?)
        };
        QuadraticLindblad::new(
            unpack(&file.h, "h")?,
            unpack(&file.lambda1, "lambda1")?,
            unpack(&file.lambda2, "lambda2")?,
        )
    }
}

/// Doubled-space matrix and the additive scalar completing the generator.
#[derive(Debug, Clone)]
pub struct SuperfermionMatrix {
    pub m: CMatrix,
    pub constant: C64,
}

impl SuperfermionMatrix {
    /// Residual of the block-swap symmetry S1 M S1 = M† (exact zero up to
    /// rounding for any valid input).
    pub fn symmetry_residual(&self) -> f64 {
        let n = self.m.dim();
        let l = n / 2;
        let mut worst = 0.0f64;
        for r in 0..n {
            for c in 0..n {
                let sr = (r + l) % n;
                let sc = (c + l) % n;
                let dev = (self.m[(sr, sc)] - self.m[(c, r)].conj()).norm();
                worst = worst.max(dev);
            }
        }
        worst
    }
}

/// Single-mode doubled matrix [[e + i*alpha, mu2], [-mu1, e - i*alpha]]
/// with alpha = -(g1 - g2)/2, mu1 = g1, mu2 = g2. Its eigenvalues are
/// e -/+ i (g1 + g2)/2 for any rates.
pub fn single_mode_matrix(eps: f64, g1: f64, g2: f64) -> CMatrix {
    let alpha = -0.5 * (g1 - g2);
    CMatrix::from_vec(
        2,
        vec![
            C64::new(eps, alpha),
            C64::new(g2, 0.0),
            C64::new(-g1, 0.0),
            C64::new(eps, -alpha),
        ],
    )
    .expect("2x2 literal")
}

/// Flow-frame parameters of the single-mode problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleModeParams {
    pub alpha: f64,
    pub mu1: f64,
    pub mu2: f64,
}

impl SingleModeParams {
    /// alpha^2 + mu1 mu2 is conserved by every generator; it equals
    /// (g1 + g2)^2 / 4 on the initial condition.
    pub fn invariant(&self) -> f64 {
        self.alpha * self.alpha + self.mu1 * self.mu2
    }

    /// Read the parameters back off a flowed 2x2 matrix. The flow keeps
    /// alpha and mu real for real initial rates; imaginary residue is
    /// integrator noise and is dropped.
    pub fn from_matrix(m: &CMatrix) -> SingleModeParams {
        SingleModeParams {
            alpha: 0.5 * (m[(0, 0)] - m[(1, 1)]).im,
            mu1: -m[(1, 0)].re,
            mu2: m[(0, 1)].re,
        }
    }
}

fn check_rates(g1: f64, g2: f64) -> Result<(), SuperfermionError> {
    if !(g1 >= 0.0 && g2 >= 0.0 && g1.is_finite() && g2.is_finite()) {
        return Err(SuperfermionError::InvalidRates {
            reason: format!("rates must be finite and non-negative, got ({g1}, {g2})"),
        });
    }
    Ok(())
}

/// Closed-form single-mode flow. Domains:
///
/// * WhiteLike: any g1 != g2 (equal rates freeze the generator at l = 0);
///   mu_i(l) = g_i e^{-l}, alpha from the conserved invariant on the branch
///   continuous with alpha(0) = -(g1 - g2)/2.
/// * DiagAdjoint, loss only (g2 = 0): alpha frozen at -g1/2 and
///   mu1(l) = g1 e^{-g1^2 l}.
/// * Wegner, loss only (g2 = 0): alpha frozen at -g1/2; the mu1 equation
///   dmu1/dl = -g1^2 mu1 - 2 mu1^3 is a Bernoulli ODE with solution
///   mu1(l) = g1 / sqrt(3 e^{2 g1^2 l} - 2).
///
/// Anything else has no catalogued closed form and is rejected.
pub fn single_mode_analytic_flow(
    generator: GeneratorKind,
    g1: f64,
    g2: f64,
    ell: f64,
) -> Result<SingleModeParams, SuperfermionError> {
    check_rates(g1, g2)?;
    match generator {
        GeneratorKind::WhiteLike { .. } => {
            if g1 == g2 {
                return Err(SuperfermionError::NoClosedForm {
                    generator: "white",
                    reason: "equal rates freeze the white-like generator at l = 0".into(),
                });
            }
            let inv0 = 0.25 * (g1 + g2) * (g1 + g2);
            let alpha_sq = inv0 - g1 * g2 * (-2.0 * ell).exp();
            Ok(SingleModeParams {
                alpha: -(g1 - g2).signum() * alpha_sq.max(0.0).sqrt(),
                mu1: g1 * (-ell).exp(),
                mu2: g2 * (-ell).exp(),
            })
        }
        GeneratorKind::DiagAdjoint => {
            if g2 != 0.0 {
                return Err(SuperfermionError::NoClosedForm {
                    generator: "diag-adjoint",
                    reason: "closed form is catalogued for the loss-only case g2 = 0".into(),
                });
            }
            Ok(SingleModeParams {
                alpha: -0.5 * g1,
                mu1: g1 * (-g1 * g1 * ell).exp(),
                mu2: 0.0,
            })
        }
        GeneratorKind::Wegner => {
            if g2 != 0.0 {
                return Err(SuperfermionError::NoClosedForm {
                    generator: "wegner",
                    reason: "closed form is catalogued for the loss-only case g2 = 0".into(),
                });
            }
            let denom = 3.0 * (2.0 * g1 * g1 * ell).exp() - 2.0;
            Ok(SingleModeParams { alpha: -0.5 * g1, mu1: g1 / denom.sqrt(), mu2: 0.0 })
        }
    }
}

/// Parameter-space flow equations, the 2x2 matrix flow projected onto
/// (alpha, mu1, mu2). Useful as an independent cross-check of the matrix
/// integrator.
pub fn single_mode_rhs(
    generator: GeneratorKind,
    p: &SingleModeParams,
) -> Result<SingleModeParams, SuperfermionError> {
    let SingleModeParams { alpha, mu1, mu2 } = *p;
    match generator {
        GeneratorKind::Wegner => Ok(SingleModeParams {
            alpha: 4.0 * alpha * mu1 * mu2,
            mu1: -2.0 * mu1 * (2.0 * alpha * alpha + mu1 * mu1 - mu2 * mu2),
            mu2: -2.0 * mu2 * (2.0 * alpha * alpha - mu1 * mu1 + mu2 * mu2),
        }),
        GeneratorKind::DiagAdjoint => Ok(SingleModeParams {
            alpha: 4.0 * alpha * mu1 * mu2,
            mu1: -4.0 * alpha * alpha * mu1,
            mu2: -4.0 * alpha * alpha * mu2,
        }),
        GeneratorKind::WhiteLike { .. } => {
            if alpha == 0.0 {
                return Err(SuperfermionError::NoClosedForm {
                    generator: "white",
                    reason: "white-like flow undefined at alpha = 0".into(),
                });
            }
            Ok(SingleModeParams { alpha: mu1 * mu2 / alpha, mu1: -mu1, mu2: -mu2 })
        }
    }
}

/// Flow configuration used by the single-mode observable helpers: white
/// generator, adaptive steps, and an automatic preconditioner for the
/// equal-rate point where the bare generator freezes.
fn single_mode_observable_config() -> FlowConfig {
    FlowConfig {
        generator: GeneratorKind::white(),
        step: 1e-3,
        max_flow: 40.0,
        mode: StepMode::Adaptive { error_threshold: 1e-12, min_step: 1e-9, max_step: 0.25 },
        stop_offdiag_ratio: 1e-20,
        preconditioner: PreconditionerPolicy::Auto { seed: 11, strength: 0.1 },
        trace_stride: usize::MAX,
        ..FlowConfig::default()
    }
}

struct SingleModeFlowed {
    /// Eigenvalue with positive imaginary part and its partner.
    lambda_up: C64,
    lambda_down: C64,
    /// Mode-occupation observable co-flowed into the diagonal frame.
    n_ss: f64,
}

/// Flow the single-mode matrix to the diagonal frame carrying the
/// occupation observable n = [[1, 0], [0, 0]] along as a similarity
/// passenger; the steady occupation is its weight on the growing slot.
fn single_mode_flowed(eps: f64, g1: f64, g2: f64) -> Result<SingleModeFlowed, SuperfermionError> {
    check_rates(g1, g2)?;
    if g1 + g2 <= 0.0 {
        return Err(SuperfermionError::InvalidRates {
            reason: "no relaxation without dissipation (g1 + g2 = 0)".into(),
        });
    }
    let m = single_mode_matrix(eps, g1, g2);
    let mut run = FlowRun::new(m, single_mode_observable_config())?;
    let n0 = CMatrix::from_vec(
        2,
        vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)],
    )?;
    let id = run.add_passenger(Passenger::Similarity(n0))?;
    let out = run.execute()?;
    let diag = out.final_diag();
    let (up, down) = if diag[0].im > 0.0 { (0, 1) } else { (1, 0) };
    let x = match out.passenger(id) {
        Passenger::Similarity(x) => x,
        _ => unreachable!("registered as similarity"),
    };
    Ok(SingleModeFlowed {
        lambda_up: diag[up],
        lambda_down: diag[down],
        n_ss: x[(up, up)].re,
    })
}

/// Steady-state occupation of the single decaying mode; equals
/// g2 / (g1 + g2) for any initial occupation.
pub fn single_mode_steady_density(
    eps: f64,
    g1: f64,
    g2: f64,
) -> Result<f64, SuperfermionError> {
    Ok(single_mode_flowed(eps, g1, g2)?.n_ss)
}

/// Occupation n(t) of the single mode starting from n(0) = n0, evaluated
/// with the diagonal-frame evolution: the relaxation rate is the spectral
/// gap between the two doubled-space eigenvalues, and the amplitude is
/// anchored so n(0) = n0 holds exactly.
pub fn single_mode_density_evolution(
    eps: f64,
    g1: f64,
    g2: f64,
    n0: f64,
    ts: &[f64],
) -> Result<Vec<f64>, SuperfermionError> {
    let flowed = single_mode_flowed(eps, g1, g2)?;
    // e^{-i(lambda_down - lambda_up)t} = e^{-(g1 + g2)t}: a pure decay
    // built from the flowed eigenvalue pair.
    let rate = CMatrix::from_diag(&[
        C64::new(0.0, 0.0),
        flowed.lambda_down - flowed.lambda_up,
    ]);
    let weights = [
        C64::new(flowed.n_ss, 0.0),
        C64::new(n0 - flowed.n_ss, 0.0),
    ];
    ts.iter()
        .map(|&t| Ok(time_evolution_diagonal(&rate, &weights, t)?.re))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::StopReason;
    use crate::matcore::invariants::spectral_discrepancy;
    use crate::matcore::random::{random_complex_matrix, seeded_rng};
    use rand::Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    /// Random valid problem via jump vectors (rates PSD by construction).
    fn random_problem(dim: usize, seed: u64, real_gains: bool) -> QuadraticLindblad {
        let mut rng = seeded_rng(seed, 0);
        let g = random_complex_matrix(dim, &mut rng);
        let mut h = g.clone();
        // (G + G†)/2 is Hermitian.
        h.axpy(c(1.0, 0.0), &g.adjoint());
        h = h.scale(c(0.5, 0.0));
        let mut vector = |real: bool| -> Vec<C64> {
            (0..dim)
                .map(|_| {
                    let re = rng.gen_range(-1.0..=1.0);
                    let im = if real { 0.0 } else { rng.gen_range(-1.0..=1.0) };
                    c(re, im)
                })
                .collect()
        };
        let losses = vec![vector(false), vector(false)];
        let gains = vec![vector(real_gains)];
        QuadraticLindblad::from_jump_vectors(h, &losses, &gains).unwrap()
    }

    #[test]
    fn doubled_matrix_has_block_swap_symmetry() {
        for seed in 0..5 {
            let ql = random_problem(4, 100 + seed, false);
            let sf = ql.build_matrix().unwrap();
            assert_eq!(sf.m.dim(), 8);
            assert!(sf.symmetry_residual() < 1e-14, "residual {:.2e}", sf.symmetry_residual());
        }
    }

    #[test]
    fn doubled_spectrum_closed_under_conjugation() {
        let ql = random_problem(5, 7, false);
        let sf = ql.build_matrix().unwrap();
        let spec = reference_spectrum(&sf.m).unwrap();
        let conj: Vec<C64> = spec.iter().map(|z| z.conj()).collect();
        assert!(spectral_discrepancy(&spec, &conj).unwrap() < 1e-9);
    }

    #[test]
    fn constant_combines_hamiltonian_and_rate_traces() {
        let ql = random_problem(3, 9, false);
        let sf = ql.build_matrix().unwrap();
        let want = -ql.h().trace() + c(0.0, 0.5) * (ql.lambda1().trace() + ql.lambda2().trace());
        assert!((sf.constant - want).norm() < 1e-13);
    }

    #[test]
    fn real_gain_reduction_reproduces_the_doubled_spectrum() {
        let ql = random_problem(4, 11, true);
        let (minus, plus) = ql.reduce_blocks_real_lambda2().unwrap();
        let mut union = reference_spectrum(&minus).unwrap();
        union.extend(reference_spectrum(&plus).unwrap());
        let full = reference_spectrum(&ql.build_matrix().unwrap().m).unwrap();
        assert!(spectral_discrepancy(&union, &full).unwrap() < 1e-8);
        // The plus block's spectrum is the conjugate of the minus block's.
        let minus_conj: Vec<C64> =
            reference_spectrum(&minus).unwrap().iter().map(|z| z.conj()).collect();
        let plus_spec = reference_spectrum(&plus).unwrap();
        assert!(spectral_discrepancy(&minus_conj, &plus_spec).unwrap() < 1e-9);
    }

    #[test]
    fn complex_gain_matrix_is_rejected_by_the_reduction() {
        let ql = random_problem(3, 13, false);
        assert!(matches!(
            ql.reduce_blocks_real_lambda2(),
            Err(SuperfermionError::ComplexLambda2 { .. })
        ));
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        let h = CMatrix::from_vec(2, vec![c(1.0, 0.0), c(0.5, 0.1), c(0.5, 0.2), c(2.0, 0.0)])
            .unwrap();
        let id = CMatrix::identity(2);
        assert!(matches!(
            QuadraticLindblad::new(h, id.clone(), id.clone()),
            Err(SuperfermionError::NotHermitian { which: "h", .. })
        ));
        let good_h = CMatrix::from_diag(&[c(1.0, 0.0), c(2.0, 0.0)]);
        let negative = CMatrix::from_diag(&[c(1.0, 0.0), c(-0.5, 0.0)]);
        assert!(matches!(
            QuadraticLindblad::new(good_h.clone(), negative, id.clone()),
            Err(SuperfermionError::NotPositive { which: "lambda1", .. })
        ));
        let wrong = CMatrix::identity(3);
        assert!(matches!(
            QuadraticLindblad::new(good_h, id.clone(), wrong),
            Err(SuperfermionError::BadShape { .. })
        ));
    }

    #[test]
    fn jump_vectors_build_gram_rates() {
        let h = CMatrix::zeros(2);
        let l1 = vec![c(1.0, 0.0), c(0.0, 1.0)];
        let ql = QuadraticLindblad::from_jump_vectors(h, &[l1.clone()], &[]).unwrap();
        for m in 0..2 {
            for n in 0..2 {
                let want = l1[m].conj() * l1[n];
                assert!((ql.lambda1()[(m, n)] - want).norm() < 1e-15);
            }
        }
        assert_eq!(ql.lambda2().max_abs(), 0.0);
    }

    #[test]
    fn json_round_trip_preserves_the_problem() {
        let ql = random_problem(3, 17, false);
        let s = ql.to_json_string().unwrap();
        let back = QuadraticLindblad::from_json_str(&s).unwrap();
        assert!(back.h().max_abs_diff(ql.h()) < 1e-15);
        assert!(back.lambda1().max_abs_diff(ql.lambda1()) < 1e-15);
        assert!(back.lambda2().max_abs_diff(ql.lambda2()) < 1e-15);
        assert!(QuadraticLindblad::from_json_str("{\"dim\": 1}").is_err());
    }

    #[test]
    fn single_mode_matrix_matches_the_doubled_construction() {
        let (eps, g1, g2) = (0.7, 1.3, 0.4);
        let direct = single_mode_matrix(eps, g1, g2);
        let ql = QuadraticLindblad::new(
            CMatrix::from_diag(&[c(eps, 0.0)]),
            CMatrix::from_diag(&[c(g1, 0.0)]),
            CMatrix::from_diag(&[c(g2, 0.0)]),
        )
        .unwrap();
        let sf = ql.build_matrix().unwrap();
        assert!(direct.max_abs_diff(&sf.m) < 1e-15);
        // Eigenvalues eps -/+ i (g1 + g2)/2.
        let want = vec![c(eps, -0.5 * (g1 + g2)), c(eps, 0.5 * (g1 + g2))];
        let got = reference_spectrum(&direct).unwrap();
        assert!(spectral_discrepancy(&want, &got).unwrap() < 1e-12);
    }

    fn flow_single_mode(generator: GeneratorKind, eps: f64, g1: f64, g2: f64, ell: f64) -> CMatrix {
        let config = FlowConfig {
            generator,
            step: 1e-3,
            max_flow: ell,
            stop_offdiag_ratio: 0.0,
            trace_stride: usize::MAX,
            ..FlowConfig::default()
        };
        FlowRun::new(single_mode_matrix(eps, g1, g2), config)
            .unwrap()
            .execute()
            .unwrap()
            .final_matrix
    }

    #[test]
    fn white_closed_form_matches_the_matrix_flow() {
        for (g1, g2) in [(1.7, 0.4), (0.4, 1.7), (2.0, 0.0)] {
            let ell = 2.0;
            let got = SingleModeParams::from_matrix(&flow_single_mode(
                GeneratorKind::white(),
                0.3,
                g1,
                g2,
                ell,
            ));
            let want = single_mode_analytic_flow(GeneratorKind::white(), g1, g2, ell).unwrap();
            assert!((got.alpha - want.alpha).abs() < 1e-9, "alpha {got:?} vs {want:?}");
            assert!((got.mu1 - want.mu1).abs() < 1e-9);
            assert!((got.mu2 - want.mu2).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_only_closed_forms_match_the_matrix_flow() {
        for generator in [GeneratorKind::Wegner, GeneratorKind::DiagAdjoint] {
            for g1 in [0.6, 1.4] {
                for ell in [0.3, 1.0] {
                    let got = SingleModeParams::from_matrix(&flow_single_mode(
                        generator, -0.2, g1, 0.0, ell,
                    ));
                    let want = single_mode_analytic_flow(generator, g1, 0.0, ell).unwrap();
                    assert!(
                        (got.mu1 - want.mu1).abs() < 1e-9,
                        "{} g1 {g1} l {ell}: {} vs {}",
                        generator.name(),
                        got.mu1,
                        want.mu1
                    );
                    assert!((got.alpha - want.alpha).abs() < 1e-9);
                    assert!(got.mu2.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn closed_forms_reject_uncatalogued_domains() {
        assert!(matches!(
            single_mode_analytic_flow(GeneratorKind::white(), 1.0, 1.0, 0.5),
            Err(SuperfermionError::NoClosedForm { .. })
        ));
        for generator in [GeneratorKind::Wegner, GeneratorKind::DiagAdjoint] {
            assert!(matches!(
                single_mode_analytic_flow(generator, 1.0, 0.5, 0.5),
                Err(SuperfermionError::NoClosedForm { .. })
            ));
        }
        assert!(single_mode_analytic_flow(GeneratorKind::white(), -1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn parameter_rhs_integrates_to_the_closed_forms() {
        // Plain RK4 on (alpha, mu1, mu2), independent of the matrix engine.
        let step = |gen: GeneratorKind, p: SingleModeParams, h: f64| -> SingleModeParams {
            let add = |a: &SingleModeParams, b: &SingleModeParams, s: f64| SingleModeParams {
                alpha: a.alpha + s * b.alpha,
                mu1: a.mu1 + s * b.mu1,
                mu2: a.mu2 + s * b.mu2,
            };
            let k1 = single_mode_rhs(gen, &p).unwrap();
            let k2 = single_mode_rhs(gen, &add(&p, &k1, 0.5 * h)).unwrap();
            let k3 = single_mode_rhs(gen, &add(&p, &k2, 0.5 * h)).unwrap();
            let k4 = single_mode_rhs(gen, &add(&p, &k3, h)).unwrap();
            let mut out = add(&p, &k1, h / 6.0);
            out = add(&out, &k2, h / 3.0);
            out = add(&out, &k3, h / 3.0);
            add(&out, &k4, h / 6.0)
        };
        let cases = [
            (GeneratorKind::white(), 1.7, 0.4),
            (GeneratorKind::Wegner, 1.1, 0.0),
            (GeneratorKind::DiagAdjoint, 1.1, 0.0),
        ];
        for (gen, g1, g2) in cases {
            let mut p = SingleModeParams { alpha: -0.5 * (g1 - g2), mu1: g1, mu2: g2 };
            let h = 1e-3;
            let steps = 800;
            for _ in 0..steps {
                p = step(gen, p, h);
            }
            let want = single_mode_analytic_flow(gen, g1, g2, h * steps as f64).unwrap();
            assert!((p.alpha - want.alpha).abs() < 1e-10, "{}", gen.name());
            assert!((p.mu1 - want.mu1).abs() < 1e-10, "{}", gen.name());
            assert!((p.mu2 - want.mu2).abs() < 1e-10, "{}", gen.name());
            // The quadratic invariant is conserved along the way.
            assert!((p.invariant() - 0.25 * (g1 + g2) * (g1 + g2)).abs() < 1e-10);
        }
    }

    #[test]
    fn steady_density_is_the_gain_fraction() {
        for (g1, g2) in [(1.5, 0.5), (0.2, 1.8), (2.0, 0.0), (0.9, 0.9)] {
            let n = single_mode_steady_density(0.4, g1, g2).unwrap();
            let want = g2 / (g1 + g2);
            assert!(
                (n - want).abs() < 1e-8,
                "({g1}, {g2}): {n} vs {want}"
            );
        }
        assert!(matches!(
            single_mode_steady_density(0.4, 0.0, 0.0),
            Err(SuperfermionError::InvalidRates { .. })
        ));
    }

    #[test]
    fn density_evolution_anchors_and_relaxes() {
        let (eps, g1, g2, n0) = (0.3, 1.2, 0.6, 0.85);
        let ts: Vec<f64> = (0..20).map(|k| 0.25 * k as f64).collect();
        let ns = single_mode_density_evolution(eps, g1, g2, n0, &ts).unwrap();
        let n_ss = g2 / (g1 + g2);
        for (&t, &n) in ts.iter().zip(&ns) {
            let want = n_ss + (n0 - n_ss) * (-(g1 + g2) * t).exp();
            assert!((n - want).abs() < 1e-8, "t = {t}: {n} vs {want}");
        }
        assert!((ns[0] - n0).abs() < 1e-9);
    }

    #[test]
    fn equal_rate_point_flows_through_the_preconditioner() {
        // g1 = g2 freezes the bare white generator; the observable helpers
        // must still converge (and land on n_ss = 1/2).
        let m = single_mode_matrix(0.0, 0.7, 0.7);
        let out = FlowRun::new(m, single_mode_observable_config())
            .unwrap()
            .execute()
            .unwrap();
        assert!(out.preconditioner.is_some());
        assert!(matches!(out.stop, StopReason::OffdiagConverged { .. }));
        let n = single_mode_steady_density(0.0, 0.7, 0.7).unwrap();
        assert!((n - 0.5).abs() < 1e-8);
    }
}
