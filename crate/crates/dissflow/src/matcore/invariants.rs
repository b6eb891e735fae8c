//! Conserved quantities of the flow and spectral comparison utilities.
//!
//! The similarity flow preserves every trace power I_n = tr[M^n]; drifts in
//! these are the primary integration-quality diagnostic. The off-diagonal
//! part of I_2 is tracked separately because one generator contracts it at a
//! known exact rate.

use super::matrix::{C64, CMatrix, MatrixError};

/// I_n = tr[M^n] for n = 1..=count.
pub fn trace_power_invariants(m: &CMatrix, count: usize) -> Vec<C64> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    let mut power = m.clone();
    out.push(power.trace());
    for _ in 1..count {
        power = power.mul(m).expect("same dimension by construction");
        out.push(power.trace());
    }
    out
}

/// Off-diagonal part of I_2: sum over n != k of M_nk M_kn.
/// Equals tr[M^2] minus the sum of squared diagonal entries.
pub fn i2_offdiagonal(m: &CMatrix) -> C64 {
    let n = m.dim();
    let mut s = C64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            if i != k {
                s += m[(i, k)] * m[(k, i)];
            }
        }
    }
    s
}

/// Diagonal part of I_2: sum of squared diagonal entries, so that
/// i2_diagonal(m) + i2_offdiagonal(m) == tr[M^2] up to rounding.
pub fn i2_diagonal(m: &CMatrix) -> C64 {
    (0..m.dim()).map(|i| m[(i, i)] * m[(i, i)]).sum()
}

/// Largest absolute drift per invariant order: |I_n(a) - I_n(b)|.
pub fn invariant_drifts(a: &CMatrix, b: &CMatrix, count: usize) -> Vec<f64> {
    let ia = trace_power_invariants(a, count);
    let ib = trace_power_invariants(b, count);
    ia.iter().zip(&ib).map(|(x, y)| (x - y).norm()).collect()
}

/// Minimum-cost row-to-column assignment (Hungarian algorithm, O(n^3)).
/// `cost` is a square matrix flattened row-major. Returns perm with
/// perm[row] = column.
pub fn optimal_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n*n");
    if n == 0 {
        return Vec::new();
    }
    // Potentials-based shortest augmenting path formulation. Index 0 is a
    // virtual column/row; real indices are 1..=n.
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j] = row assigned to column j
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            perm[p[j] - 1] = j - 1;
        }
    }
    perm
}

/// Root-sum-square distance between two spectra under the optimal pairing:
/// Delta = sqrt( min over permutations of sum_i |a_i - b_perm(i)|^2 ).
pub fn spectral_discrepancy(a: &[C64], b: &[C64]) -> Result<f64, MatrixError> {
    if a.len() != b.len() {
        return Err(MatrixError::SpectrumLengthMismatch { left: a.len(), right: b.len() });
    }
    let n = a.len();
    if n == 0 {
        return Ok(0.0);
    }
    let cost: Vec<f64> = a
        .iter()
        .flat_map(|&x| b.iter().map(move |&y| (x - y).norm_sqr()))
        .collect();
    let perm = optimal_assignment(&cost, n);
    let total: f64 = (0..n).map(|i| (a[i] - b[perm[i]]).norm_sqr()).sum();
    Ok(total.sqrt())
}
