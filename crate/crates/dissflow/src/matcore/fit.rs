//! Ordinary least squares for the decay-law and scaling fits.

use serde::Serialize;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination in [0, 1] (1 for a perfect line).
    pub r_squared: f64,
    /// Sum of squared residuals, for comparing competing models on the
    /// same observations.
    pub residual_sq: f64,
}

/// Least-squares line through (xs, ys). Callers guarantee at least two
/// distinct x values; degenerate inputs yield a flat fit rather than NaN.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinFit {
    assert_eq!(xs.len(), ys.len(), "fit needs paired observations");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let residual_sq: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - residual_sq / syy } else { 1.0 };
    LinFit { slope, intercept, r_squared, residual_sq }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_recovered() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| -2.0 * x + 0.5).collect();
        let fit = linear_fit(&xs, &ys);
        assert!((fit.slope + 2.0).abs() < 1e-14);
        assert!((fit.intercept - 0.5).abs() < 1e-14);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit.residual_sq < 1e-24);
    }

    #[test]
    fn scatter_reduces_r_squared() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let ys = [0.1, 0.9, 2.2, 2.8, 4.1];
        let fit = linear_fit(&xs, &ys);
        assert!(fit.slope > 0.9 && fit.slope < 1.1);
        assert!(fit.r_squared > 0.97 && fit.r_squared < 1.0);
    }
}
