//! Standard normal and folded-normal distributions.
//!
//! The cdf is built on `erfc`, evaluated by a positive-term series below
//! 2.5 and a Lentz continued fraction above it, which keeps relative accuracy
//! deep in the lower tail where TPR at FPR = 1e-5 lives.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const SQRT_2PI: f64 = 2.506_628_274_631_000_7;
const SERIES_LIMIT: f64 = 2.5;

/// Residual accepted by the quantile functions, |cdf(q(p)) - p|.
pub const QUANTILE_TOLERANCE: f64 = 1e-10;

/// erf(x) for 0 <= x, via erf(x) = 2/sqrt(pi) e^{-x^2} sum 2^n x^{2n+1} / (2n+1)!!.
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
        if term <= sum * 1e-17 || n > 500.0 {
            break;
        }
    }
    2.0 * FRAC_1_SQRT_PI * (-x2).exp() * sum
}

/// erfc(x) for x >= SERIES_LIMIT by modified Lentz on
/// x + (1/2)/(x + 1/(x + (3/2)/(x + ...))).
fn erfc_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for i in 1..2000 {
        let a = i as f64 * 0.5;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    FRAC_1_SQRT_PI * (-x * x).exp() / f
}

/// Complementary error function for any finite argument.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        2.0 - erfc(-x)
    } else if x < SERIES_LIMIT {
        1.0 - erf_series(x)
    } else {
        erfc_continued_fraction(x)
    }
}

pub fn erf(x: f64) -> f64 {
    if x < 0.0 {
        -erf(-x)
    } else if x < SERIES_LIMIT {
        erf_series(x)
    } else {
        1.0 - erfc_continued_fraction(x)
    }
}

pub(crate) fn phi(x: f64) -> f64 {
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    let y = x * std::f64::consts::FRAC_1_SQRT_2;
    if x < 0.0 {
        0.5 * erfc(-y)
    } else {
        1.0 - 0.5 * erfc(y)
    }
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Standard normal cdf.
pub fn normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(domain(format!("normal_cdf: non-finite input {x}")));
    }
    Ok(phi(x))
}

/// Acklam's rational approximation, lower half only (p <= 0.5).
fn acklam_lower(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    if p < 0.024_25 {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

fn lower_quantile(p: f64) -> f64 {
    let mut x = acklam_lower(p);
    // Halley steps against the accurate cdf.
    for _ in 0..3 {
        let e = phi(x) - p;
        let u = e * SQRT_2PI * (0.5 * x * x).exp();
        let step = u / (1.0 + 0.5 * x * u);
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    if (phi(x) - p).abs() <= QUANTILE_TOLERANCE * p.max(1e-300).min(1.0) {
        return x;
    }
    // Bracketed bisection fallback.
    let (mut lo, mut hi) = (-40.0_f64, 0.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Inverse of the standard normal cdf on (0, 1).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(domain(format!("normal_quantile: p = {p} outside (0, 1)")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p < 0.5 {
        Ok(lower_quantile(p))
    } else {
        // 1 - p is exact for p in [0.5, 1).
        Ok(-lower_quantile(1.0 - p))
    }
}

/// cdf of |Z| for standard normal Z: 2 Phi(x) - 1.
pub fn folded_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(domain(format!("folded_normal_cdf: x = {x} must be finite and >= 0")));
    }
    Ok(erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

pub fn folded_normal_quantile(p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(domain(format!("folded_normal_quantile: p = {p} outside [0, 1)")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    // Solve on the upper tail of the normal: Phi(x) = (1 + p) / 2.
    Ok(-lower_quantile(0.5 * (1.0 - p)))
}

/// Standardised base distribution of a location-scale family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StandardDistribution {
    #[default]
    StandardNormal,
    FoldedStandardNormal,
}

impl StandardDistribution {
    /// cdf extended to the whole real line (the folded cdf is 0 below 0).
    pub fn cdf(self, x: f64) -> f64 {
        match self {
            Self::StandardNormal => phi(x),
            Self::FoldedStandardNormal => {
                if x <= 0.0 {
                    0.0
                } else if x.is_infinite() {
                    1.0
                } else {
                    erf(x * std::f64::consts::FRAC_1_SQRT_2)
                }
            }
        }
    }

    /// Survival function 1 - cdf, computed without cancellation.
    pub fn sf(self, x: f64) -> f64 {
        match self {
            Self::StandardNormal => phi(-x),
            Self::FoldedStandardNormal => {
                if x <= 0.0 {
                    1.0
                } else {
                    erfc(x * std::f64::consts::FRAC_1_SQRT_2)
                }
            }
        }
    }

    pub fn quantile(self, p: f64) -> Result<f64> {
        match self {
            Self::StandardNormal => normal_quantile(p),
            Self::FoldedStandardNormal => folded_normal_quantile(p),
        }
    }

    /// Quantile of the upper tail: x with sf(x) = p.
    pub fn upper_quantile(self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(domain(format!("upper_quantile: p = {p} outside (0, 1)")));
        }
        match self {
            Self::StandardNormal => Ok(-lower_quantile_checked(p)),
            Self::FoldedStandardNormal => Ok(-lower_quantile_checked(0.5 * p)),
        }
    }
}

fn lower_quantile_checked(p: f64) -> f64 {
    if p == 0.5 {
        0.0
    } else if p < 0.5 {
        lower_quantile(p)
    } else {
        -lower_quantile(1.0 - p)
    }
}
