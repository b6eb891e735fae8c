//! Embedded Runge-Kutta step for the flow bundle.
//!
//! Cash-Karp 5(4) pair: six stages, fifth-order advance, embedded
//! fourth-order solution for the error estimate. Chosen over Fehlberg and
//! Dormand-Prince after head-to-head accuracy runs on this problem family.
//! The pair is not FSAL, so the caller recomputes the first stage at each
//! accepted state (which it needs anyway for the truncation guard).

use super::{Bundle, FlowError};

const A: [[f64; 5]; 6] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0],
    [3.0 / 10.0, -9.0 / 10.0, 6.0 / 5.0, 0.0, 0.0],
    [-11.0 / 54.0, 5.0 / 2.0, -70.0 / 27.0, 35.0 / 27.0, 0.0],
    [
        1631.0 / 55296.0,
        175.0 / 512.0,
        575.0 / 13824.0,
        44275.0 / 110592.0,
        253.0 / 4096.0,
    ],
];

const B5: [f64; 6] = [
    37.0 / 378.0,
    0.0,
    250.0 / 621.0,
    125.0 / 594.0,
    0.0,
    512.0 / 1771.0,
];

const B4: [f64; 6] = [
    2825.0 / 27648.0,
    0.0,
    18575.0 / 48384.0,
    13525.0 / 55296.0,
    277.0 / 14336.0,
    1.0 / 4.0,
];

/// One trial step of size h from y, with k1 = rhs(y) supplied by the caller.
/// Returns the fifth-order advance and the Frobenius norm of the embedded
/// 5th-minus-4th difference over the whole bundle.
pub(super) fn cash_karp_step<F>(
    y: &Bundle,
    k1: &Bundle,
    h: f64,
    mut rhs: F,
) -> Result<(Bundle, f64), FlowError>
where
    F: FnMut(&Bundle) -> Result<Bundle, FlowError>,
{
    let mut ks: Vec<Bundle> = Vec::with_capacity(6);
    ks.push(k1.clone());
    for stage in 1..6 {
        let mut ystage = y.clone();
        for (j, k) in ks.iter().enumerate() {
            let a = A[stage][j];
            if a != 0.0 {
                ystage.axpy(h * a, k);
            }
        }
        ks.push(rhs(&ystage)?);
    }
    let mut y5 = y.clone();
    let mut errb = y.zeros_like();
    for (i, k) in ks.iter().enumerate() {
        if B5[i] != 0.0 {
            y5.axpy(h * B5[i], k);
        }
        let d = B5[i] - B4[i];
        if d != 0.0 {
            errb.axpy(h * d, k);
        }
    }
    Ok((y5, errb.norm()))
}
