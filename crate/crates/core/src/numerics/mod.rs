//! Special functions and least squares.

mod beta;
mod normal;
mod ols;

pub use beta::{
    beta_quantile, ln_gamma, regularized_incomplete_beta, student_t_cdf, student_t_quantile,
    student_t_two_sided_p,
};
pub use normal::{
    erf, erfc, folded_normal_cdf, folded_normal_quantile, normal_cdf, normal_pdf, normal_quantile,
    StandardDistribution, QUANTILE_TOLERANCE,
};
pub use ols::{ols_fit, OlsFit};

/// Pairwise summation; deterministic for a given slice order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Median with the even-count convention of averaging the two central values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Least-squares slope of y on x (with intercept).
pub fn slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
