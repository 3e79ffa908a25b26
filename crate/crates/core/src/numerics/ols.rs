//! Ordinary least squares by Householder QR.

use serde::{Deserialize, Serialize};

use super::beta::{student_t_quantile, student_t_two_sided_p};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub t_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub r_squared: f64,
    pub residual_dof: usize,
    pub residuals: Vec<f64>,
}

impl OlsFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum()
    }
}

/// Fit `response ~ design` where `design` rows already include any intercept
/// column. R² is measured around the response mean.
pub fn ols_fit(design: &[Vec<f64>], response: &[f64]) -> Result<OlsFit> {
    let n = design.len();
    if n != response.len() {
        return Err(Error::Shape(format!(
            "design has {n} rows but response has {} entries",
            response.len()
        )));
    }
    let p = design.first().map_or(0, Vec::len);
    if p == 0 {
        return Err(Error::Shape("design has no columns".into()));
    }
    if let Some(i) = design.iter().position(|r| r.len() != p) {
        return Err(Error::Shape(format!("design row {i} has {} columns, expected {p}", design[i].len())));
    }
    if n < p + 1 {
        return Err(Error::DegreesOfFreedom { rows: n, cols: p });
    }
    if design.iter().flatten().chain(response).any(|v| !v.is_finite()) {
        return Err(Error::Shape("non-finite value in regression input".into()));
    }

    // Column-major working copy, reduced in place to R.
    let mut a: Vec<Vec<f64>> = (0..p).map(|j| design.iter().map(|r| r[j]).collect()).collect();
    let mut qty = response.to_vec();
    let scale = a
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let rank_tol = scale * n as f64 * f64::EPSILON * 16.0;

    for k in 0..p {
        let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= rank_tol {
            return Err(Error::Singular(format!("design column {k} is linearly dependent on earlier columns")));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        let reflect = |col: &mut [f64]| {
            let dot: f64 = v.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, vi) in col.iter_mut().zip(&v) {
                *c -= f * vi;
            }
        };
        for col in a.iter_mut().skip(k + 1) {
            reflect(&mut col[k..]);
        }
        reflect(&mut qty[k..]);
        a[k][k] = alpha;
        for x in a[k][k + 1..].iter_mut() {
            *x = 0.0;
        }
        if alpha.abs() <= rank_tol {
            return Err(Error::Singular(format!("design column {k} is numerically rank deficient")));
        }
    }

    // R[i][j] = a[j][i] for i <= j.
    let r = |i: usize, j: usize| a[j][i];
    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|j| r(i, j) * beta[j]).sum();
        beta[i] = (qty[i] - s) / r(i, i);
    }

    // R^{-1}, upper triangular, column by column.
    let mut rinv = vec![vec![0.0; p]; p];
    for j in 0..p {
        rinv[j][j] = 1.0 / r(j, j);
        for i in (0..j).rev() {
            let s: f64 = (i + 1..=j).map(|k| r(i, k) * rinv[k][j]).sum();
            rinv[i][j] = -s / r(i, i);
        }
    }

    let residuals: Vec<f64> = design
        .iter()
        .zip(response)
        .map(|(row, y)| y - row.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>())
        .collect();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let mean = response.iter().sum::<f64>() / n as f64;
    let tss: f64 = response.iter().map(|y| (y - mean) * (y - mean)).sum();
    let r_squared = if tss > 0.0 { (1.0 - rss / tss).clamp(0.0, 1.0) } else { 1.0 };

    let dof = n - p;
    let sigma2 = rss / dof as f64;
    let tcrit = student_t_quantile(0.975, dof as f64)?;
    let mut out = OlsFit {
        coefficients: beta.clone(),
        standard_errors: Vec::with_capacity(p),
        t_values: Vec::with_capacity(p),
        p_values: Vec::with_capacity(p),
        ci_low: Vec::with_capacity(p),
        ci_high: Vec::with_capacity(p),
        r_squared,
        residual_dof: dof,
        residuals,
    };
    for (j, &b) in beta.iter().enumerate() {
        let var: f64 = rinv[j].iter().map(|v| v * v).sum::<f64>() * sigma2;
        let se = var.sqrt();
        let t = if se > 0.0 { b / se } else if b == 0.0 { 0.0 } else { f64::INFINITY.copysign(b) };
        out.standard_errors.push(se);
        out.t_values.push(t);
        out.p_values.push(student_t_two_sided_p(t, dof as f64)?);
        out.ci_low.push(b - tcrit * se);
        out.ci_high.push(b + tcrit * se);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Normal-equations oracle with Gaussian elimination and partial pivoting.
    fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let p = x[0].len();
        let mut m = vec![vec![0.0; p + 1]; p];
        for (row, &yi) in x.iter().zip(y) {
            for i in 0..p {
                for j in 0..p {
                    m[i][j] += row[i] * row[j];
                }
                m[i][p] += row[i] * yi;
            }
        }
        for c in 0..p {
            let piv = (c..p).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
            m.swap(c, piv);
            for r in 0..p {
                if r != c {
                    let f = m[r][c] / m[c][c];
                    for k in c..=p {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
        (0..p).map(|i| m[i][p] / m[i][i]).collect()
    }

    #[test]
    fn exact_line() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 1.0]).collect();
        let y: Vec<f64> = (0..5).map(|i| 2.0 * i as f64 + 1.0).collect();
        let fit = ols_fit(&x, &y).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(fit.residual_dof, 3);
    }

    #[test]
    fn random_system_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<Vec<f64>> = (0..20)
            .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(0.0..5.0), 1.0])
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| 0.7 * r[0] - 1.3 * r[1] + 0.2 + rng.random_range(-0.5..0.5))
            .collect();
        let fit = ols_fit(&x, &y).unwrap();
        let oracle = normal_equations(&x, &y);
        for (a, b) in fit.coefficients.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        for j in 0..3 {
            let dot: f64 = x.iter().zip(&fit.residuals).map(|(r, e)| r[j] * e).sum();
            let xn: f64 = x.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt();
            let en: f64 = fit.residuals.iter().map(|e| e * e).sum::<f64>().sqrt();
            assert!(dot.abs() <= 1e-8 * xn * en.max(1.0));
            assert!(fit.ci_low[j] <= fit.coefficients[j] && fit.coefficients[j] <= fit.ci_high[j]);
        }
    }

    #[test]
    fn standard_errors_match_textbook_simple_regression() {
        // For y = a + b x, se(b) = sqrt(s^2 / Sxx).
        let xs = [1.0, 2.0, 4.0, 5.0, 7.0, 8.0];
        let ys = [2.1, 3.9, 8.2, 9.8, 14.5, 15.7];
        let design: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x, 1.0]).collect();
        let fit = ols_fit(&design, &ys).unwrap();
        let mx = xs.iter().sum::<f64>() / 6.0;
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let s2 = fit.residuals.iter().map(|e| e * e).sum::<f64>() / 4.0;
        assert!((fit.standard_errors[0] - (s2 / sxx).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_designs() {
        let x = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0], vec![4.0, 8.0]];
        assert!(matches!(ols_fit(&x, &[1.0, 2.0, 3.0, 4.0]), Err(Error::Singular(_))));
        let x = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(ols_fit(&x, &[1.0, 2.0]), Err(Error::DegreesOfFreedom { .. })));
    }
}
