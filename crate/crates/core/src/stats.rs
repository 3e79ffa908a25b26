//! Exact binomial intervals and multi-seed aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::numerics::{beta_quantile, median};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClopperPearsonInterval {
    pub tp: u64,
    pub p: u64,
    pub confidence: f64,
    pub low: f64,
    pub high: f64,
}

impl ClopperPearsonInterval {
    pub fn rate(&self) -> f64 {
        self.tp as f64 / self.p as f64
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.high - self.low)
    }

    pub fn contains(&self, value: f64) -> bool {
        self.low <= value && value <= self.high
    }
}

/// Two-sided Clopper-Pearson interval for `tp` successes out of `p` trials.
pub fn clopper_pearson(tp: u64, p: u64, confidence: f64) -> Result<ClopperPearsonInterval> {
    if p == 0 {
        return Err(domain("clopper_pearson: need at least one trial"));
    }
    if tp > p {
        return Err(domain(format!("clopper_pearson: tp = {tp} exceeds p = {p}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(domain(format!("clopper_pearson: confidence {confidence} outside (0, 1)")));
    }
    let alpha = 1.0 - confidence;
    let (k, n) = (tp as f64, p as f64);
    let low = if tp == 0 { 0.0 } else { beta_quantile(alpha / 2.0, k, n - k + 1.0)? };
    let high = if tp == p { 1.0 } else { beta_quantile(1.0 - alpha / 2.0, k + 1.0, n - k)? };
    Ok(ClopperPearsonInterval { tp, p, confidence, low, high })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub per_seed_values: Vec<f64>,
    pub median: f64,
    pub ci_low_min: f64,
    pub ci_high_max: f64,
}

/// Median of per-seed point values with the envelope of their intervals.
pub fn aggregate_seeds(values: &[f64], intervals: &[(f64, f64)]) -> Result<SeedAggregate> {
    if values.is_empty() {
        return Err(domain("aggregate_seeds: no seeds"));
    }
    if values.len() != intervals.len() {
        return Err(domain(format!(
            "aggregate_seeds: {} values but {} intervals",
            values.len(),
            intervals.len()
        )));
    }
    let median = median(values).expect("nonempty");
    let ci_low_min = intervals.iter().map(|i| i.0).fold(f64::INFINITY, f64::min);
    let ci_high_max = intervals.iter().map(|i| i.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(SeedAggregate { per_seed_values: values.to_vec(), median, ci_low_min, ci_high_max })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_intervals() {
        let ci = clopper_pearson(0, 100, 0.95).unwrap();
        assert_eq!(ci.low, 0.0);
        assert!((ci.high - (1.0 - 0.025_f64.powf(0.01))).abs() < 1e-12);
        assert!((ci.high - 0.036_217).abs() < 1e-6);
        let ci = clopper_pearson(100, 100, 0.95).unwrap();
        assert_eq!(ci.high, 1.0);
        assert!((ci.low - 0.025_f64.powf(0.01)).abs() < 1e-12);
        let ci = clopper_pearson(50, 100, 0.95).unwrap();
        assert!((ci.low - 0.398_32).abs() < 1e-5, "{ci:?}");
        assert!((ci.high - 0.601_68).abs() < 1e-5, "{ci:?}");
        assert!(clopper_pearson(5, 4, 0.95).is_err());
        assert!(clopper_pearson(0, 0, 0.95).is_err());
    }

    #[test]
    fn matches_statrs_beta_inverse() {
        use statrs::distribution::{Beta, ContinuousCDF};
        for &(tp, p) in &[(1u64, 10u64), (7, 1000), (333, 1000), (9990, 10_000)] {
            let ci = clopper_pearson(tp, p, 0.95).unwrap();
            let lo = Beta::new(tp as f64, (p - tp + 1) as f64).unwrap().inverse_cdf(0.025);
            let hi = Beta::new((tp + 1) as f64, (p - tp) as f64).unwrap().inverse_cdf(0.975);
            assert!((ci.low - lo).abs() < 1e-8, "{tp}/{p}");
            assert!((ci.high - hi).abs() < 1e-8, "{tp}/{p}");
        }
    }

    #[test]
    fn aggregation() {
        let a = aggregate_seeds(&[0.3], &[(0.2, 0.4)]).unwrap();
        assert_eq!((a.median, a.ci_low_min, a.ci_high_max), (0.3, 0.2, 0.4));
        let a = aggregate_seeds(&[0.5; 6], &[(0.4, 0.6); 6]).unwrap();
        assert_eq!((a.median, a.ci_low_min, a.ci_high_max), (0.5, 0.4, 0.6));
        let vals = [0.9, 0.1, 0.4, 0.3, 0.7, 0.2];
        let ivs: Vec<_> = vals.iter().map(|v| (v - 0.05, v + 0.05)).collect();
        let a = aggregate_seeds(&vals, &ivs).unwrap();
        let mut sorted = vals.to_vec();
        sorted.sort_by(f64::total_cmp);
        assert!((a.median - (sorted[2] + sorted[3]) / 2.0).abs() < 1e-15);
        assert!((a.ci_low_min - 0.05).abs() < 1e-15 && (a.ci_high_max - 0.95).abs() < 1e-15);
        assert!(aggregate_seeds(&[], &[]).is_err());
    }
}
