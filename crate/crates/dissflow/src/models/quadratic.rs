//! Coupling chart for matrices whose off-diagonal entries carry an
//! explicit factor i, plus closed-form flow right-hand sides in that chart.
//!
//! Writing m_kq = i g_kq (k != q) and m_kk = g_kk makes loss-generated
//! couplings real and keeps them real along the flow for the generators
//! below. The specialized right-hand sides expand [eta, m] entrywise, so
//! they cost O(n^3) with no generator matrix built; they must agree with
//! the generic commutator path to rounding, which the tests pin.

use num_complex::Complex;

use crate::generators::DegeneracyTol;
use crate::matcore::matrix::{C64, CMatrix};

/// m from g: diagonal copied, off-diagonal multiplied by i.
pub fn couplings_to_matrix(g: &CMatrix) -> CMatrix {
    let n = g.dim();
    let i = C64::new(0.0, 1.0);
    let mut m = CMatrix::zeros(n);
    for r in 0..n {
        for c in 0..n {
            m[(r, c)] = if r == c { g[(r, c)] } else { i * g[(r, c)] };
        }
    }
    m
}

/// g from m: diagonal copied, off-diagonal multiplied by -i. Inverse of
/// [`couplings_to_matrix`]; also maps d(m)/dl to d(g)/dl since the chart
/// is linear.
pub fn matrix_to_couplings(m: &CMatrix) -> CMatrix {
    let n = m.dim();
    let mi = C64::new(0.0, -1.0);
    let mut g = CMatrix::zeros(n);
    for r in 0..n {
        for c in 0..n {
            g[(r, c)] = if r == c { m[(r, c)] } else { mi * m[(r, c)] };
        }
    }
    g
}

/// d(g)/dl for the diagonal-adjoint generator, entirely in the coupling
/// chart:
///
///   d(g_kk) = -2 sum_{s != k} conj(g_kk - g_ss) g_ks g_sk
///   d(g_kq) = -|g_kk - g_qq|^2 g_kq
///             + i sum_{s not in {k,q}} g_ks g_sq (conj(g_kk) + conj(g_qq) - 2 conj(g_ss))
pub fn coupling_rhs_diag_adjoint(g: &CMatrix) -> CMatrix {
    let n = g.dim();
    let diag = g.diag();
    let i = C64::new(0.0, 1.0);
    let mut out = CMatrix::zeros(n);
    for k in 0..n {
        let mut dk = C64::new(0.0, 0.0);
        for s in 0..n {
            if s == k {
                continue;
            }
            dk -= 2.0 * (diag[k] - diag[s]).conj() * g[(k, s)] * g[(s, k)];
        }
        out[(k, k)] = dk;
        for q in 0..n {
            if q == k {
                continue;
            }
            let gap = diag[k] - diag[q];
            let mut dkq = -Complex::new(gap.norm_sqr(), 0.0) * g[(k, q)];
            for s in 0..n {
                if s == k || s == q {
                    continue;
                }
                dkq += i * g[(k, s)] * g[(s, q)] * (diag[k].conj() + diag[q].conj() - 2.0 * diag[s].conj());
            }
            out[(k, q)] = dkq;
        }
    }
    out
}

/// d(g)/dl for the white-like generator in the coupling chart:
///
///   d(g_kk) = -2 sum_{s != k} g_ks g_sk / (g_kk - g_ss)
///   d(g_kq) = -g_kq
///             + i sum_{s not in {k,q}} g_ks g_sq (2 g_ss - g_qq - g_kk)
///                 / ((g_kk - g_ss)(g_ss - g_qq))
///
/// Terms whose diagonal gap falls within the degeneracy tolerance are
/// dropped (including the leading -g_kq term when the (k,q) gap itself is
/// degenerate); the second return value counts dropped terms with nonzero
/// coupling product. Mirrors the pair-skipping of the generator itself.
pub fn coupling_rhs_white(g: &CMatrix, degeneracy_tol: DegeneracyTol) -> (CMatrix, usize) {
    let n = g.dim();
    let diag = g.diag();
    let tol = match degeneracy_tol {
        DegeneracyTol::Absolute(t) => t,
        DegeneracyTol::RelativeToMaxGap(f) => {
            let mut max_gap = 0.0f64;
            for a in 0..n {
                for b in 0..a {
                    max_gap = max_gap.max((diag[a] - diag[b]).norm());
                }
            }
            f * max_gap
        }
    };
    let i = C64::new(0.0, 1.0);
    let mut out = CMatrix::zeros(n);
    let mut skipped = 0usize;
    for k in 0..n {
        let mut dk = C64::new(0.0, 0.0);
        for s in 0..n {
            if s == k {
                continue;
            }
            let prod = g[(k, s)] * g[(s, k)];
            if prod.norm() == 0.0 {
                continue;
            }
            let gap = diag[k] - diag[s];
            if gap.norm() <= tol {
                skipped += 1;
                continue;
            }
            dk -= 2.0 * prod / gap;
        }
        out[(k, k)] = dk;
        for q in 0..n {
            if q == k {
                continue;
            }
            let mut dkq = C64::new(0.0, 0.0);
            let kq_gap = diag[k] - diag[q];
            if g[(k, q)].norm() > 0.0 {
                if kq_gap.norm() <= tol {
                    skipped += 1;
                } else {
                    dkq -= g[(k, q)];
                }
            }
            for s in 0..n {
                if s == k || s == q {
                    continue;
                }
                let prod = g[(k, s)] * g[(s, q)];
                if prod.norm() == 0.0 {
                    continue;
                }
                let gap_ks = diag[k] - diag[s];
                let gap_sq = diag[s] - diag[q];
                if gap_ks.norm() <= tol || gap_sq.norm() <= tol {
                    skipped += 1;
                    continue;
                }
                dkq += i * prod * (2.0 * diag[s] - diag[q] - diag[k]) / (gap_ks * gap_sq);
            }
            out[(k, q)] = dkq;
        }
    }
    (out, skipped)
}
