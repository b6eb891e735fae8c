//! Single dissipative scatterer coupled to a box of propagating modes.
//!
//! Modes at momenta indexed j = -j_cutoff..=j_cutoff carry energies
//! eps_j = (2 pi v / box) j; a local absorber couples every mode to every
//! other with uniform strength, shifting all matrix entries by
//! -i gamma / (2 box). One eigenvalue separates from the rest and carries
//! most of the decay; closed-form estimates exist in both coupling
//! regimes, and an exact secular equation covers everything in between.

use num_complex::Complex;

use super::ModelError;
use crate::matcore::matrix::{C64, CMatrix};

/// Geometry and coupling of the scattering problem.
#[derive(Debug, Clone, Copy)]
pub struct ScatteringSpec {
    /// Mode velocity v > 0.
    pub velocity: f64,
    /// Absorber strength gamma >= 0.
    pub gamma: f64,
    /// Box length; sets the level spacing eps0 = 2 pi v / box.
    pub box_size: f64,
    /// Momentum cutoff: modes j = -j_cutoff..=j_cutoff.
    pub j_cutoff: usize,
}

impl ScatteringSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.velocity > 0.0 && self.velocity.is_finite()) {
            return Err(ModelError::BadParams { reason: "velocity must be positive".into() });
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(ModelError::BadParams { reason: "gamma must be non-negative".into() });
        }
        if !(self.box_size > 0.0 && self.box_size.is_finite()) {
            return Err(ModelError::BadParams { reason: "box size must be positive".into() });
        }
        if self.j_cutoff == 0 {
            return Err(ModelError::BadParams { reason: "j_cutoff must be at least 1".into() });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        2 * self.j_cutoff + 1
    }

    /// Level spacing eps0 = 2 pi v / box.
    pub fn level_spacing(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.velocity / self.box_size
    }
}

/// M_kk = eps_k - i gamma/(2 box), M_kq = -i gamma/(2 box): the loss-only
/// reduced block with a rank-one absorber coupling all modes.
pub fn build_scattering_matrix(spec: &ScatteringSpec) -> Result<CMatrix, ModelError> {
    spec.validate()?;
    let dim = spec.dim();
    let eps0 = spec.level_spacing();
    let jc = spec.j_cutoff as i64;
    let shift = C64::new(0.0, -0.5 * spec.gamma / spec.box_size);
    let mut m = CMatrix::zeros(dim);
    for (row, j) in (-jc..=jc).enumerate() {
        for col in 0..dim {
            m[(row, col)] = shift;
        }
        m[(row, row)] += Complex::new(eps0 * j as f64, 0.0);
    }
    Ok(m)
}

/// Decay rate (imaginary part) of the separated eigenvalue for strong
/// absorbers, lambda_I = eps0 j_cutoff tan((pi/2)(4v/gamma - 1)); valid
/// only for gamma > 4v.
pub fn strongly_dissipative_eigenvalue(spec: &ScatteringSpec) -> Result<f64, ModelError> {
    spec.validate()?;
    let ratio = spec.gamma / spec.velocity;
    if ratio <= 4.0 {
        return Err(ModelError::WrongRegime {
            formula: "strong-absorber tangent",
            needs: "gamma > 4v",
            ratio,
        });
    }
    let arg = 0.5 * std::f64::consts::PI * (4.0 * spec.velocity / spec.gamma - 1.0);
    Ok(spec.level_spacing() * spec.j_cutoff as f64 * arg.tan())
}

/// Decay rate of the separated eigenvalue for weak absorbers,
/// lambda_I = -(v/box) ln((4v/gamma + 1)/(4v/gamma - 1)); valid only for
/// gamma < 4v.
pub fn weak_coupling_eigenvalue(spec: &ScatteringSpec) -> Result<f64, ModelError> {
    spec.validate()?;
    let ratio = spec.gamma / spec.velocity;
    if ratio >= 4.0 {
        return Err(ModelError::WrongRegime {
            formula: "weak-coupling logarithm",
            needs: "gamma < 4v",
            ratio,
        });
    }
    let r = 4.0 * spec.velocity / spec.gamma;
    Ok(-(spec.velocity / spec.box_size) * ((r + 1.0) / (r - 1.0)).ln())
}

/// coth(x) computed from e^{2x} so it stays finite for very negative x.
fn coth(x: f64) -> f64 {
    let e = (2.0 * x).exp();
    (e + 1.0) / (e - 1.0)
}

/// Solve the finite-cutoff secular equation
/// coth(x) + 4v/gamma - (2/pi) atan(x / (pi j_cutoff)) = 0 for x < 0 and
/// return lambda_I = eps0 x / pi. Valid in both coupling regimes; the
/// root is bracketed by doubling from [-1, -1e-12] and bisected until
/// |f(x)| < 1e-12.
pub fn solve_secular(spec: &ScatteringSpec) -> Result<f64, ModelError> {
    spec.validate()?;
    if spec.gamma == 0.0 {
        return Err(ModelError::BadParams { reason: "secular equation needs gamma > 0".into() });
    }
    let jc = spec.j_cutoff as f64;
    let c = 4.0 * spec.velocity / spec.gamma;
    let f = |x: f64| coth(x) + c - (2.0 / std::f64::consts::PI) * (x / (std::f64::consts::PI * jc)).atan();

    // f -> -inf as x -> 0^- and f -> c + 1 > 0 as x -> -inf: a sign change
    // always exists. Walk b outward until it is found.
    let a = -1e-12;
    if f(a) >= 0.0 {
        return Err(ModelError::SecularFailure {
            reason: "no negative divergence near the origin".into(),
        });
    }
    let mut b = -1.0;
    let mut expansions = 0;
    while f(b) < 0.0 {
        b *= 2.0;
        expansions += 1;
        if expansions > 200 {
            return Err(ModelError::SecularFailure {
                reason: "bracket expansion exhausted".into(),
            });
        }
    }
    let (mut lo, mut hi) = (b, a); // f(lo) > 0, f(hi) < 0
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..400 {
        mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() < 1e-12 {
            break;
        }
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if f(mid).abs() >= 1e-12 {
        return Err(ModelError::SecularFailure {
            reason: format!("bisection stalled at |f| = {:.3e}", f(mid).abs()),
        });
    }
    Ok(spec.level_spacing() * mid / std::f64::consts::PI)
}

/// The separated dissipative eigenvalue sits at the center of the band:
/// pick the spectrum entry with the smallest |Re|.
pub fn central_eigenvalue(spectrum: &[C64]) -> Result<C64, ModelError> {
    spectrum
        .iter()
        .copied()
        .min_by(|a, b| a.re.abs().total_cmp(&b.re.abs()))
        .ok_or(ModelError::EmptySpectrum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::eigen::reference_spectrum;

    fn spec(gamma_over_v: f64, j_cutoff: usize) -> ScatteringSpec {
        let velocity = 1.0;
        ScatteringSpec {
            velocity,
            gamma: gamma_over_v * velocity,
            box_size: (2 * j_cutoff + 1) as f64,
            j_cutoff,
        }
    }

    #[test]
    fn matrix_layout_and_trace() {
        let s = spec(5.0, 3);
        let m = build_scattering_matrix(&s).unwrap();
        assert_eq!(m.dim(), 7);
        let eps0 = s.level_spacing();
        // Central row: diagonal eps_0 = 0, uniform imaginary coupling.
        assert!((m[(3, 3)] - C64::new(0.0, -0.5 * s.gamma / s.box_size)).norm() < 1e-15);
        assert!((m[(0, 0)].re + 3.0 * eps0).abs() < 1e-12);
        assert!((m[(6, 0)] - C64::new(0.0, -0.5 * s.gamma / s.box_size)).norm() < 1e-15);
        // Total decay is fixed by the absorber: sum Im = -(2jc+1) gamma/(2 box).
        let total_im: f64 = reference_spectrum(&m).unwrap().iter().map(|z| z.im).sum();
        let want = -(s.dim() as f64) * s.gamma / (2.0 * s.box_size);
        assert!((total_im - want).abs() < 1e-10);
    }

    #[test]
    fn regime_guards() {
        assert!(matches!(
            strongly_dissipative_eigenvalue(&spec(3.0, 10)),
            Err(ModelError::WrongRegime { .. })
        ));
        assert!(matches!(
            weak_coupling_eigenvalue(&spec(5.0, 10)),
            Err(ModelError::WrongRegime { .. })
        ));
        assert!(build_scattering_matrix(&ScatteringSpec {
            velocity: 0.0,
            gamma: 1.0,
            box_size: 1.0,
            j_cutoff: 1
        })
        .is_err());
    }

    #[test]
    fn closed_forms_track_the_exact_central_eigenvalue() {
        // Large cutoff: both asymptotic estimates land within a few percent
        // of the exact diagonalization; the secular root does better.
        let jc = 100;
        for gov in [0.5, 1.0, 2.0] {
            let s = spec(gov, jc);
            let m = build_scattering_matrix(&s).unwrap();
            let lam = central_eigenvalue(&reference_spectrum(&m).unwrap()).unwrap();
            let log_est = weak_coupling_eigenvalue(&s).unwrap();
            let rel = (log_est - lam.im).abs() / lam.im.abs();
            assert!(rel < 0.05, "gamma/v {gov}: log estimate off by {rel:.3}");
            let sec = solve_secular(&s).unwrap();
            let rel_sec = (sec - lam.im).abs() / lam.im.abs();
            assert!(rel_sec < 0.01, "gamma/v {gov}: secular off by {rel_sec:.3}");
        }
        for gov in [5.0, 6.0, 8.0] {
            let s = spec(gov, jc);
            let m = build_scattering_matrix(&s).unwrap();
            let lam = central_eigenvalue(&reference_spectrum(&m).unwrap()).unwrap();
            let tan_est = strongly_dissipative_eigenvalue(&s).unwrap();
            let rel = (tan_est - lam.im).abs() / lam.im.abs();
            assert!(rel < 0.05, "gamma/v {gov}: tan estimate off by {rel:.3}");
            let sec = solve_secular(&s).unwrap();
            let rel_sec = (sec - lam.im).abs() / lam.im.abs();
            assert!(rel_sec < 0.01, "gamma/v {gov}: secular off by {rel_sec:.3}");
        }
    }

    #[test]
    fn secular_root_is_a_root() {
        let s = spec(5.0, 15);
        let lam = solve_secular(&s).unwrap();
        let x = lam * std::f64::consts::PI / s.level_spacing();
        let c = 4.0 * s.velocity / s.gamma;
        let f = coth(x) + c
            - (2.0 / std::f64::consts::PI) * (x / (std::f64::consts::PI * 15.0)).atan();
        assert!(f.abs() < 1e-12);
        assert!(lam < 0.0);
    }
}
