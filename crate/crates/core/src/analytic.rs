//! Closed-form per-example and average-case vulnerability of the simplified
//! model, and the Monte Carlo estimators they need.
//!
//! Everything here is in natural log; the regression module works in log10.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numerics::{normal_quantile, pairwise_sum, StandardDistribution};
use crate::rng::{stream, tag, StreamRng};
use crate::simmodel::{dot, gaussian_vector, orthonormal_means, SimplifiedModelConfig};

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;
const SQRT_HALF_PI: f64 = 1.253_314_137_315_500_3;

/// Distribution of t_x under IN and OUT: mu + sigma * T with T standardised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationScalePair {
    pub mu_in: f64,
    pub mu_out: f64,
    pub sigma: f64,
    #[serde(default)]
    pub base_distribution: StandardDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VulnerabilityKind {
    LiraExact,
    LiraLoglaw,
    RmiaBound,
    AverageCase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticVulnerability {
    pub kind: VulnerabilityKind,
    pub fpr: f64,
    pub tpr: f64,
    /// ln(tpr - fpr); `None` when tpr <= fpr.
    pub log_gap: Option<f64>,
    /// Set when IN and OUT locations coincide, so the attack has no signal.
    #[serde(default)]
    pub degenerate: bool,
}

fn log_gap(tpr: f64, fpr: f64) -> Option<f64> {
    (tpr > fpr).then(|| (tpr - fpr).ln())
}

fn check_rate(name: &str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("{name} = {p} outside (0, 1)")))
    }
}

/// Exact TPR at a given FPR for a likelihood-ratio test on a location-scale
/// statistic with infinitely many shadow models.
pub fn lira_tpr_per_example(pair: &LocationScalePair, fpr: f64) -> Result<AnalyticVulnerability> {
    check_rate("fpr", fpr)?;
    if !(pair.sigma > 0.0 && pair.sigma.is_finite()) {
        return Err(domain(format!("sigma = {} must be positive", pair.sigma)));
    }
    let f = pair.base_distribution;
    let shift = (pair.mu_in - pair.mu_out) / pair.sigma;
    let tpr = if shift > 0.0 {
        f.sf(f.upper_quantile(fpr)? - shift)
    } else if shift < 0.0 {
        f.cdf(f.quantile(fpr)? - shift)
    } else {
        fpr
    };
    // Rounding can push the difference a hair below zero for tiny shifts.
    let tpr = tpr.max(fpr);
    Ok(AnalyticVulnerability {
        kind: VulnerabilityKind::LiraExact,
        fpr,
        tpr,
        log_gap: log_gap(tpr, fpr),
        degenerate: shift == 0.0,
    })
}

/// Whether LiRA fitted on an approximate distribution (estimates `mu_in_hat`,
/// `mu_out_hat`) can still reach `fpr` with a threshold beta >= 1.
pub fn relaxed_knowledge_condition(pair: &LocationScalePair, mu_in_hat: f64, mu_out_hat: f64, fpr: f64) -> Result<bool> {
    check_rate("fpr", fpr)?;
    let f = pair.base_distribution;
    let mid = 0.5 * (mu_in_hat + mu_out_hat);
    Ok(if mu_in_hat > mu_out_hat {
        pair.sigma * f.upper_quantile(fpr)? - mid + pair.mu_out >= 0.0
    } else {
        pair.sigma * f.quantile(fpr)? - mid + pair.mu_out <= 0.0
    })
}

fn check_vectors(x: &[f64], m_x: &[f64], shots: usize, s: f64) -> Result<()> {
    if x.len() != m_x.len() {
        return Err(Error::Shape(format!("x has dimension {}, m_x has {}", x.len(), m_x.len())));
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(domain("x must be nonzero"));
    }
    if shots < 2 {
        return Err(domain(format!("shots = {shots} must be at least 2")));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(domain(format!("in-class std {s} must be positive")));
    }
    Ok(())
}

/// <x, x - m_x>.
pub fn membership_signal(x: &[f64], m_x: &[f64]) -> f64 {
    x.iter().zip(m_x).map(|(a, m)| a * (a - m)).sum()
}

/// Location-scale parameters of the own-class score of x in the simplified
/// model: the IN/OUT gap is <x, x - m_x>/S and the scale is s ||x|| / sqrt(S).
pub fn simplified_pair(x: &[f64], m_x: &[f64], shots: usize, s: f64) -> Result<LocationScalePair> {
    check_vectors(x, m_x, shots, s)?;
    let k = shots as f64;
    let base = dot(x, m_x);
    Ok(LocationScalePair {
        mu_in: base + membership_signal(x, m_x) / k,
        mu_out: base,
        sigma: s * dot(x, x).sqrt() / k.sqrt(),
        base_distribution: StandardDistribution::StandardNormal,
    })
}

/// TPR = Phi(Phi^{-1}(fpr) + |<x, x - m_x>| / (sqrt(S) s ||x||)).
pub fn lira_tpr_simplified(x: &[f64], m_x: &[f64], shots: usize, s: f64, fpr: f64) -> Result<AnalyticVulnerability> {
    lira_tpr_per_example(&simplified_pair(x, m_x, shots, s)?, fpr)
}

/// Large-S approximation of ln(TPR - FPR):
/// -ln(S)/2 - Phi^{-1}(fpr)^2/2 + ln(|<x, x - m_x>| / (||x|| s sqrt(2 pi))).
/// Returns -inf when the signal is zero.
pub fn lira_loglaw(x: &[f64], m_x: &[f64], shots: usize, s: f64, fpr: f64) -> Result<f64> {
    check_vectors(x, m_x, shots, s)?;
    check_rate("fpr", fpr)?;
    let q = normal_quantile(fpr)?;
    let signal = membership_signal(x, m_x).abs() / (dot(x, x).sqrt() * s * SQRT_2PI);
    Ok(-0.5 * (shots as f64).ln() - 0.5 * q * q + signal.ln())
}

/// Upper bound on the log-law obtained with |<x, u>| <= ||x|| ||u||.
pub fn lira_loglaw_cap(x: &[f64], m_x: &[f64], shots: usize, s: f64, fpr: f64) -> Result<f64> {
    check_vectors(x, m_x, shots, s)?;
    check_rate("fpr", fpr)?;
    let q = normal_quantile(fpr)?;
    let dist: f64 = x.iter().zip(m_x).map(|(a, m)| (a - m) * (a - m)).sum::<f64>().sqrt();
    Ok(-0.5 * (shots as f64).ln() - 0.5 * q * q + (dist / (s * SQRT_2PI)).ln())
}

/// Source of labelled reference points z with their true class means.
pub trait ZSampler {
    /// A z from the target's class (`same_class`) or from a different class.
    /// `None` means the sampler is exhausted.
    fn draw(&mut self, same_class: bool) -> Option<(Vec<f64>, Vec<f64>)>;
}

/// Fresh draws from the simplified-model distribution.
pub struct SimplifiedZSampler {
    means: Vec<f64>,
    num_classes: usize,
    dimension: usize,
    class_of_x: usize,
    s: f64,
    rng: StreamRng,
}

impl SimplifiedZSampler {
    pub fn new(means: Vec<f64>, num_classes: usize, class_of_x: usize, s: f64, seed: u64) -> Self {
        let dimension = means.len() / num_classes;
        Self { means, num_classes, dimension, class_of_x, s, rng: stream(seed, &[tag::Z_SAMPLER]) }
    }
}

impl ZSampler for SimplifiedZSampler {
    fn draw(&mut self, same_class: bool) -> Option<(Vec<f64>, Vec<f64>)> {
        let c = if same_class {
            self.class_of_x
        } else {
            if self.num_classes < 2 {
                return None;
            }
            let k = self.rng.random_range(0..self.num_classes - 1);
            if k >= self.class_of_x {
                k + 1
            } else {
                k
            }
        };
        let m = self.means[c * self.dimension..(c + 1) * self.dimension].to_vec();
        let z = m.iter().zip(gaussian_vector(&mut self.rng, self.dimension)).map(|(a, e)| a + self.s * e).collect();
        Some((z, m))
    }
}

/// A fixed list of reference points, consumed in order.
pub struct FiniteZSampler {
    same: std::vec::IntoIter<(Vec<f64>, Vec<f64>)>,
    other: std::vec::IntoIter<(Vec<f64>, Vec<f64>)>,
}

impl FiniteZSampler {
    pub fn new(same: Vec<(Vec<f64>, Vec<f64>)>, other: Vec<(Vec<f64>, Vec<f64>)>) -> Self {
        Self { same: same.into_iter(), other: other.into_iter() }
    }
}

impl ZSampler for FiniteZSampler {
    fn draw(&mut self, same_class: bool) -> Option<(Vec<f64>, Vec<f64>)> {
        if same_class {
            self.same.next()
        } else {
            self.other.next()
        }
    }
}

/// Monte Carlo estimates entering the RMIA bound for one target example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmiaBoundTerms {
    /// E_z|q| in the infinite-shadow limit, including the 1/(S s²) factor.
    pub q_expectation: f64,
    /// E_z|A| in the infinite-shadow limit, including the 1/(sqrt(S) s) factor.
    pub a_expectation: f64,
    pub alpha: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmiaBound {
    pub vulnerability: AnalyticVulnerability,
    pub terms: RmiaBoundTerms,
    /// -ln(S)/2 - Phi^{-1}(alpha)²/2 + ln(psi / sqrt(pi/2)).
    pub log_gap_bound: f64,
    /// ln of the first-order gap p_|t|(F_|t|^{-1}(1 - alpha)) psi / (sqrt(S) s).
    pub log_gap_linearized: f64,
    pub same_class_draws: usize,
    pub other_class_draws: usize,
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Stratified Monte Carlo estimate of psi(x, C) and the E|q|, E|A| terms.
#[allow(clippy::too_many_arguments)]
pub fn rmia_bound_terms(
    x: &[f64],
    m_x: &[f64],
    num_classes: usize,
    shots: usize,
    s: f64,
    alpha: f64,
    z_sampler: &mut dyn ZSampler,
    num_z: usize,
) -> Result<(RmiaBoundTerms, usize, usize)> {
    check_vectors(x, m_x, shots, s)?;
    check_rate("alpha", alpha)?;
    if num_classes < 1 {
        return Err(domain("num_classes must be at least 1"));
    }
    let want_other = if num_classes > 1 { num_z / 2 } else { 0 };
    let want_same = num_z - want_other;
    let (nx, dx) = (norm(x), norm(&sub(x, m_x)));
    let sig_x = membership_signal(x, m_x) / nx;

    let (mut same_sq, mut same_abs, mut same_q, mut same_a) = (vec![], vec![], vec![], vec![]);
    for _ in 0..want_same {
        let Some((z, _)) = z_sampler.draw(true) else { break };
        let d = sub(x, &z);
        let dist = norm(&d);
        same_sq.push(2.0 * dist * dist);
        same_abs.push(2.0 * dist);
        let (u, v) = (dot(x, &d) / nx, dot(&z, &d) / norm(&z));
        same_q.push(u * u + v * v);
        same_a.push((u + v).abs());
    }
    let (mut other_sq, mut other_abs, mut other_q, mut other_a) = (vec![], vec![], vec![], vec![]);
    for _ in 0..want_other {
        let Some((z, m_z)) = z_sampler.draw(false) else { break };
        let dz = norm(&sub(&z, &m_z));
        other_sq.push(dx * dx + dz * dz);
        other_abs.push(dx + dz);
        let v = membership_signal(&z, &m_z) / norm(&z);
        other_q.push(sig_x * sig_x + v * v);
        other_a.push((sig_x + v).abs());
    }
    let (got_same, got_other) = (same_sq.len(), other_sq.len());
    if got_same < want_same || got_other < want_other || got_same == 0 {
        return Err(Error::Estimation { same_class: got_same, other_class: got_other });
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { pairwise_sum(v) / v.len() as f64 };
    let c1 = (num_classes - 1) as f64;
    let den = mean(&same_abs) + c1 * mean(&other_abs);
    // All distances zero: x coincides with every reference and carries no signal.
    let psi = if den > 0.0 { (mean(&same_sq) + c1 * mean(&other_sq)) / den } else { 0.0 };
    let (k, c) = (shots as f64, num_classes as f64);
    let q_expectation = (mean(&same_q) + c1 * mean(&other_q)) / (c * k * s * s);
    let a_expectation = (mean(&same_a) + c1 * mean(&other_a)) / (c * k.sqrt() * s);
    Ok((RmiaBoundTerms { q_expectation, a_expectation, alpha, psi }, got_same, got_other))
}

/// Upper bound on the per-example RMIA TPR at a level alpha >= FPR:
/// 1 - F_|t|(F_|t|^{-1}(1 - alpha) - psi / (sqrt(S) s)).
#[allow(clippy::too_many_arguments)]
pub fn rmia_bound_per_example(
    x: &[f64],
    m_x: &[f64],
    num_classes: usize,
    shots: usize,
    s: f64,
    alpha: f64,
    z_sampler: &mut dyn ZSampler,
    num_z: usize,
) -> Result<RmiaBound> {
    let (terms, same, other) = rmia_bound_terms(x, m_x, num_classes, shots, s, alpha, z_sampler, num_z)?;
    let folded = StandardDistribution::FoldedStandardNormal;
    let q = folded.upper_quantile(alpha)?;
    let shift = terms.psi / ((shots as f64).sqrt() * s);
    let tpr = folded.sf(q - shift).max(alpha);
    let z = normal_quantile(alpha)?;
    let log_gap_bound = -0.5 * (shots as f64).ln() - 0.5 * z * z + (terms.psi / SQRT_HALF_PI).ln();
    let log_gap_linearized = (-0.5 * q * q) - SQRT_HALF_PI.ln() + shift.ln();
    Ok(RmiaBound {
        vulnerability: AnalyticVulnerability {
            kind: VulnerabilityKind::RmiaBound,
            fpr: alpha,
            tpr,
            log_gap: log_gap(tpr, alpha),
            degenerate: terms.psi == 0.0,
        },
        terms,
        log_gap_bound,
        log_gap_linearized,
        same_class_draws: same,
        other_class_draws: other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AverageKind {
    Lira,
    Rmia,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageCase {
    pub attack: AverageKind,
    pub shots: usize,
    pub num_x: usize,
    /// Power-law value; `tpr` is fpr + exp(log_gap).
    pub vulnerability: AnalyticVulnerability,
    /// Mean over x of the exact per-example TPR (LiRA) or of the per-example
    /// bound (RMIA), for comparison with the power-law value.
    pub mean_per_example_tpr: f64,
    /// The expectation inside the log: E[<x, x-m>/(sqrt(2 pi) ||x|| s)] or E[psi/sqrt(2 pi)].
    pub expectation: f64,
}

/// Draw target x from the simplified-model distribution: uniform class, then
/// N(m_c, s² I). Returns (x, m_x, class).
pub fn sample_target(means: &[f64], num_classes: usize, s: f64, rng: &mut StreamRng) -> (Vec<f64>, Vec<f64>, usize) {
    let d = means.len() / num_classes;
    let c = rng.random_range(0..num_classes);
    let m = means[c * d..(c + 1) * d].to_vec();
    let x = m.iter().zip(gaussian_vector(rng, d)).map(|(a, e)| a + s * e).collect();
    (x, m, c)
}

/// Average-case power law over `num_x` targets. `level` is the FPR (LiRA) or
/// alpha (RMIA); `num_z` reference draws per target are used for RMIA.
pub fn average_case(
    kind: AverageKind,
    config: &SimplifiedModelConfig,
    level: f64,
    num_x: usize,
    num_z: usize,
) -> Result<AverageCase> {
    config.validate()?;
    check_rate("fpr", level)?;
    if num_x < 100 {
        return Err(domain(format!("num_x = {num_x}; at least 100 targets are required")));
    }
    let (c, s, k) = (config.num_classes, config.in_class_std, config.shots);
    let means = orthonormal_means(c, config.dimension, &mut stream(config.seed, &[tag::POOL]))?;
    let per_x: Vec<(f64, f64)> = (0..num_x)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(config.seed, &[tag::TARGET_X, i as u64]);
            let (x, m, cls) = sample_target(&means, c, s, &mut rng);
            match kind {
                AverageKind::Lira => {
                    let e = membership_signal(&x, &m) / (SQRT_2PI * norm(&x) * s);
                    Ok((e, lira_tpr_simplified(&x, &m, k, s, level)?.tpr))
                }
                AverageKind::Rmia => {
                    let mut zs = SimplifiedZSampler::new(means.clone(), c, cls, s, crate::rng::derive_seed(config.seed, &[i as u64]));
                    let b = rmia_bound_per_example(&x, &m, c, k, s, level, &mut zs, num_z)?;
                    Ok((b.terms.psi / SQRT_2PI, b.vulnerability.tpr))
                }
            }
        })
        .collect::<Result<_>>()?;
    let e: Vec<f64> = per_x.iter().map(|p| p.0).collect();
    let t: Vec<f64> = per_x.iter().map(|p| p.1).collect();
    let expectation = pairwise_sum(&e) / num_x as f64;
    let mean_tpr = pairwise_sum(&t) / num_x as f64;
    let z = normal_quantile(level)?;
    let lg = -0.5 * (k as f64).ln() - 0.5 * z * z + expectation.ln();
    Ok(AverageCase {
        attack: kind,
        shots: k,
        num_x,
        vulnerability: AnalyticVulnerability {
            kind: VulnerabilityKind::AverageCase,
            fpr: level,
            tpr: (level + lg.exp()).min(1.0),
            log_gap: expectation.is_finite().then_some(lg).filter(|v| v.is_finite()),
            degenerate: false,
        },
        mean_per_example_tpr: mean_tpr,
        expectation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallFprRow {
    #[serde(rename = "S")]
    pub shots: usize,
    pub fpr: f64,
    #[serde(rename = "true")]
    pub true_gap: f64,
    #[serde(rename = "approx")]
    pub approx_gap: f64,
    pub ratio: f64,
}

/// Compare the exact TPR - FPR of one sampled target with its large-S
/// approximation over a grid of shots and FPRs.
pub fn small_fpr_validation(
    shots_grid: &[usize],
    fprs: &[f64],
    dimension: usize,
    s: f64,
    seed: u64,
) -> Result<Vec<SmallFprRow>> {
    let means = orthonormal_means(1, dimension, &mut stream(seed, &[tag::POOL]))?;
    let (x, m, _) = sample_target(&means, 1, s, &mut stream(seed, &[tag::TARGET_X]));
    small_fpr_rows(&x, &m, shots_grid, fprs, s)
}

/// The same table for a given target.
pub fn small_fpr_rows(x: &[f64], m: &[f64], shots_grid: &[usize], fprs: &[f64], s: f64) -> Result<Vec<SmallFprRow>> {
    let mut rows = Vec::with_capacity(shots_grid.len() * fprs.len());
    for &fpr in fprs {
        for &k in shots_grid {
            let exact = lira_tpr_simplified(x, m, k, s, fpr)?;
            let true_gap = exact.tpr - fpr;
            let approx_gap = lira_loglaw(x, m, k, s, fpr)?.exp();
            rows.push(SmallFprRow { shots: k, fpr, true_gap, approx_gap, ratio: approx_gap / true_gap });
        }
    }
    Ok(rows)
}

/// Sample one target example for diagnostics and tests.
pub fn sample_simplified_target(dimension: usize, num_classes: usize, s: f64, seed: u64) -> Result<(Vec<f64>, Vec<f64>, usize, Vec<f64>)> {
    let means = orthonormal_means(num_classes, dimension, &mut stream(seed, &[tag::POOL]))?;
    let (x, m, c) = sample_target(&means, num_classes, s, &mut stream(seed, &[tag::TARGET_X]));
    Ok((x, m, c, means))
}
