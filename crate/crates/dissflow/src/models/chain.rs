//! Open tight-binding chain with on-site disorder and a single lossy site
//! at its center, plus a scan utility that measures how the slowest decay
//! rate shrinks with chain length.
//!
//! The effective single-particle matrix is real symmetric apart from one
//! imaginary diagonal shift, so every eigenvalue either pairs with a decay
//! rate -Im(lambda) >= 0 or signals a construction bug. The scan averages
//! the slowest rate over disorder realizations and decides between an
//! exponential and an algebraic law for its length dependence by comparing
//! least-squares residuals in the two charts (rate vs length, both logged
//! appropriately).

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::ModelError;
use crate::matcore::eigen::reference_spectrum;
use crate::matcore::fit::{LinFit, linear_fit};
use crate::matcore::matrix::{C64, CMatrix};
use crate::matcore::random::seeded_rng;

/// One disordered chain family: fixed couplings, seeded randomness.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DisorderSpec {
    /// Number of lattice sites, at least 2.
    pub sites: usize,
    /// Nearest-neighbour hopping J > 0.
    pub hopping: f64,
    /// On-site energies are drawn uniformly from [-disorder, disorder].
    pub disorder: f64,
    /// Loss rate of the absorber at the central site.
    pub gamma: f64,
    /// Base seed; realizations index independent streams under it.
    pub seed: u64,
}

impl DisorderSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.sites < 2 {
            return Err(ModelError::BadParams { reason: "chain needs at least 2 sites".into() });
        }
        if !(self.hopping > 0.0 && self.hopping.is_finite()) {
            return Err(ModelError::BadParams { reason: "hopping must be positive".into() });
        }
        if !(self.disorder >= 0.0 && self.disorder.is_finite()) {
            return Err(ModelError::BadParams { reason: "disorder must be non-negative".into() });
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(ModelError::BadParams { reason: "gamma must be non-negative".into() });
        }
        Ok(())
    }

    /// Index of the absorbing site: the middle, rounded right for even
    /// lengths.
    pub fn center(&self) -> usize {
        self.sites / 2
    }
}

/// Build one realization: diag(h_j) - J on the two off-diagonals (open
/// ends), with -i gamma/2 added at the central site. Realizations are
/// independent RNG streams, so any subset can be rebuilt without drawing
/// the others.
pub fn build_disordered_matrix(
    spec: &DisorderSpec,
    realization: u64,
) -> Result<CMatrix, ModelError> {
    spec.validate()?;
    let n = spec.sites;
    let mut rng = seeded_rng(spec.seed, realization);
    let mut m = CMatrix::zeros(n);
    for j in 0..n {
        let h = if spec.disorder > 0.0 {
            rng.gen_range(-spec.disorder..=spec.disorder)
        } else {
            0.0
        };
        m[(j, j)] = C64::new(h, 0.0);
    }
    for j in 0..n - 1 {
        m[(j, j + 1)] = C64::new(-spec.hopping, 0.0);
        m[(j + 1, j)] = C64::new(-spec.hopping, 0.0);
    }
    let c = spec.center();
    m[(c, c)] += C64::new(0.0, -0.5 * spec.gamma);
    Ok(m)
}

/// Slowest decay rate min(-Im lambda) of a loss-only spectrum. Rejects
/// spectra with a genuinely positive imaginary part (growth in time);
/// rounding-level positives are clamped to zero.
pub fn asymptotic_decay_rate(spectrum: &[C64]) -> Result<f64, ModelError> {
    if spectrum.is_empty() {
        return Err(ModelError::EmptySpectrum);
    }
    let scale = spectrum.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    let max_im = spectrum.iter().fold(f64::NEG_INFINITY, |a, z| a.max(z.im));
    if max_im > 1e-10 * scale {
        return Err(ModelError::UnphysicalGrowth { max_im });
    }
    Ok((-max_im).max(0.0))
}

/// True when one decay rate separates from the bulk: max |Im| exceeds
/// `multiplier` times the median |Im|.
pub fn has_strongly_dissipative(spectrum: &[C64], multiplier: f64) -> bool {
    if spectrum.is_empty() {
        return false;
    }
    let mut ims: Vec<f64> = spectrum.iter().map(|z| z.im.abs()).collect();
    ims.sort_by(f64::total_cmp);
    let n = ims.len();
    let median = if n % 2 == 1 { ims[n / 2] } else { 0.5 * (ims[n / 2 - 1] + ims[n / 2]) };
    ims[n - 1] > multiplier * median
}

/// Scan request: the chain family swept over several lengths.
#[derive(Debug, Clone, Serialize)]
pub struct ScanSpec {
    pub hopping: f64,
    pub disorder: f64,
    pub gamma: f64,
    pub seed: u64,
    pub sizes: Vec<usize>,
    pub realizations: usize,
}

/// Disorder-averaged decay statistics at one chain length.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SizeStats {
    pub sites: usize,
    pub mean_rate: f64,
    pub stderr_rate: f64,
    pub mean_log_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DecayLaw {
    Exponential,
    Algebraic,
}

/// Scan outcome: per-size statistics plus the two candidate laws for
/// mean rate vs length. `exponential_fit` regresses ln(mean) on length,
/// `algebraic_fit` regresses ln(mean) on ln(length); the law with the
/// smaller summed squared residual is `preferred`.
#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub spec: ScanSpec,
    pub sizes: Vec<SizeStats>,
    pub exponential_fit: LinFit,
    pub algebraic_fit: LinFit,
    pub preferred: DecayLaw,
}

/// Average the slowest decay rate over disorder realizations at each
/// length and fit both decay laws. Realizations are exactly diagonalized
/// in parallel; results are deterministic for a fixed spec.
pub fn disorder_scan(scan: &ScanSpec) -> Result<ScanReport, ModelError> {
    if scan.sizes.len() < 2 {
        return Err(ModelError::BadParams { reason: "scan needs at least 2 sizes".into() });
    }
    if scan.realizations == 0 {
        return Err(ModelError::BadParams { reason: "scan needs at least 1 realization".into() });
    }
    if !(scan.gamma > 0.0) {
        return Err(ModelError::BadParams {
            reason: "scan needs gamma > 0 so decay rates stay positive".into(),
        });
    }
    let mut stats = Vec::with_capacity(scan.sizes.len());
    for &sites in &scan.sizes {
        let spec = DisorderSpec {
            sites,
            hopping: scan.hopping,
            disorder: scan.disorder,
            gamma: scan.gamma,
            seed: scan.seed,
        };
        let rates: Vec<f64> = (0..scan.realizations as u64)
            .into_par_iter()
            .map(|r| -> Result<f64, ModelError> {
                let m = build_disordered_matrix(&spec, r)?;
                asymptotic_decay_rate(&reference_spectrum(&m)?)
            })
            .collect::<Result<_, _>>()?;
        if let Some(r) = rates.iter().position(|&g| g <= 0.0) {
            return Err(ModelError::VanishingRate { sites, realization: r as u64 });
        }
        let n = rates.len() as f64;
        let mean = rates.iter().sum::<f64>() / n;
        let var = if rates.len() > 1 {
            rates.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let mean_log = rates.iter().map(|g| g.ln()).sum::<f64>() / n;
        stats.push(SizeStats {
            sites,
            mean_rate: mean,
            stderr_rate: (var / n).sqrt(),
            mean_log_rate: mean_log,
        });
    }
    let log_means: Vec<f64> = stats.iter().map(|s| s.mean_rate.ln()).collect();
    let lengths: Vec<f64> = stats.iter().map(|s| s.sites as f64).collect();
    let log_lengths: Vec<f64> = lengths.iter().map(|l| l.ln()).collect();
    let exponential_fit = linear_fit(&lengths, &log_means);
    let algebraic_fit = linear_fit(&log_lengths, &log_means);
    let preferred = if exponential_fit.residual_sq <= algebraic_fit.residual_sq {
        DecayLaw::Exponential
    } else {
        DecayLaw::Algebraic
    };
    Ok(ScanReport { spec: scan.clone(), sizes: stats, exponential_fit, algebraic_fit, preferred })
}

/// Per-size scan table as CSV.
pub fn scan_csv(report: &ScanReport) -> String {
    let mut out = String::from("sites,mean_rate,stderr_rate,mean_log_rate\n");
    for s in &report.sizes {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e}\n",
            s.sites, s.mean_rate, s.stderr_rate, s.mean_log_rate
        ));
    }
    out
}
