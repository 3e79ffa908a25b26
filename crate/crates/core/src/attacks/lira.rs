use rayon::prelude::*;

use super::{AttackConfig, LooScores, ScoreMatrix, VarianceMode};
use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn log_normal_density(t: f64, mu: f64, sd: f64) -> f64 {
    let z = (t - mu) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// log N(t; mu_in, sd_in²) - log N(t; mu_out, sd_out²).
pub fn lira_log_lr(t: f64, mu_in: f64, sd_in: f64, mu_out: f64, sd_out: f64) -> f64 {
    log_normal_density(t, mu_in, sd_in) - log_normal_density(t, mu_out, sd_out)
}

/// Centered IN/OUT sums for one example over all models.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Moments {
    center: f64,
    n_in: f64,
    sum_in: f64,
    sq_in: f64,
    n_out: f64,
    sum_out: f64,
    sq_out: f64,
}

/// Leave-one-out estimates for one (example, target) pair.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GroupStats {
    pub mu_in: f64,
    pub var_in: f64,
    pub mu_out: f64,
    pub var_out: f64,
    pub n_in: f64,
    pub n_out: f64,
}

impl Moments {
    pub(crate) fn of_row(row: &[f64], member: &[bool]) -> Self {
        let center = row.iter().sum::<f64>() / row.len() as f64;
        let mut m = Moments { center, ..Default::default() };
        for (&t, &b) in row.iter().zip(member) {
            let d = t - center;
            if b {
                m.n_in += 1.0;
                m.sum_in += d;
                m.sq_in += d * d;
            } else {
                m.n_out += 1.0;
                m.sum_out += d;
                m.sq_out += d * d;
            }
        }
        m
    }

    /// Statistics with model value `t` (membership `b`) removed.
    pub(crate) fn without(&self, t: f64, b: bool) -> GroupStats {
        let d = t - self.center;
        let (mut m, d_in, d_out) = (*self, if b { d } else { 0.0 }, if b { 0.0 } else { d });
        if b {
            m.n_in -= 1.0;
        } else {
            m.n_out -= 1.0;
        }
        m.sum_in -= d_in;
        m.sq_in -= d_in * d_in;
        m.sum_out -= d_out;
        m.sq_out -= d_out * d_out;
        let var = |n: f64, s: f64, q: f64| if n > 1.0 { ((q - s * s / n) / (n - 1.0)).max(0.0) } else { f64::NAN };
        GroupStats {
            mu_in: self.center + m.sum_in / m.n_in,
            var_in: var(m.n_in, m.sum_in, m.sq_in),
            mu_out: self.center + m.sum_out / m.n_out,
            var_out: var(m.n_out, m.sum_out, m.sq_out),
            n_in: m.n_in,
            n_out: m.n_out,
        }
    }
}

impl GroupStats {
    /// Pooled standard deviation of the IN and OUT groups.
    pub(crate) fn pooled_sd(&self) -> f64 {
        (((self.n_in - 1.0) * self.var_in + (self.n_out - 1.0) * self.var_out) / (self.n_in + self.n_out - 2.0)).sqrt()
    }
}

/// Pooled leave-one-out standard deviation of every (example, target) pair,
/// floored; returns the values (example-major) and the clamp count.
pub fn shared_sigma(matrix: &ScoreMatrix, floor: f64) -> Result<(Vec<f64>, u64)> {
    let m = matrix.num_models();
    let rows: Vec<(Vec<f64>, u64)> = (0..matrix.num_examples())
        .into_par_iter()
        .map(|x| {
            let row = matrix.row(x);
            let member = matrix.membership_row(x);
            let mom = Moments::of_row(row, member);
            let mut clamped = 0;
            let mut out = Vec::with_capacity(m);
            for j in 0..m {
                let g = mom.without(row[j], member[j]);
                check_counts(x, j, &g)?;
                let sd = g.pooled_sd();
                out.push(if sd < floor {
                    clamped += 1;
                    floor
                } else {
                    sd
                });
            }
            Ok((out, clamped))
        })
        .collect::<Result<_>>()?;
    let clamped = rows.iter().map(|r| r.1).sum();
    Ok((rows.into_iter().flat_map(|r| r.0).collect(), clamped))
}

fn check_counts(x: usize, target: usize, g: &GroupStats) -> Result<()> {
    if g.n_in < 2.0 || g.n_out < 2.0 {
        return Err(Error::Statistics {
            example: x,
            detail: format!(
                "only {} IN and {} OUT shadow models remain when model {target} is the target",
                g.n_in, g.n_out
            ),
        });
    }
    Ok(())
}

fn floor_sd(var: f64, floor: f64, clamped: &mut u64) -> f64 {
    let sd = var.sqrt();
    if sd < floor {
        *clamped += 1;
        floor
    } else {
        sd
    }
}

fn lira_row(x: usize, matrix: &ScoreMatrix, targets: &[usize], config: &AttackConfig) -> Result<(Vec<f64>, u64)> {
    let row = matrix.row(x);
    let member = matrix.membership_row(x);
    let mom = Moments::of_row(row, member);
    let mut clamped = 0;
    let mut out = Vec::with_capacity(targets.len());
    for &j in targets {
        let g = mom.without(row[j], member[j]);
        check_counts(x, j, &g)?;
        let t = row[j];
        let score = match config.variance_mode {
            VarianceMode::Shared => {
                let sd = floor_sd(g.pooled_sd().powi(2), config.sigma_floor, &mut clamped);
                lira_log_lr(t, g.mu_in, sd, g.mu_out, sd)
            }
            VarianceMode::Separate => {
                let sd_in = floor_sd(g.var_in, config.sigma_floor, &mut clamped);
                let sd_out = floor_sd(g.var_out, config.sigma_floor, &mut clamped);
                lira_log_lr(t, g.mu_in, sd_in, g.mu_out, sd_out)
            }
        };
        out.push(score);
    }
    Ok((out, clamped))
}

/// LiRA log-likelihood ratios of every example against one target model,
/// using all other models as shadows. Returns scores and the clamp count.
pub fn lira_scores(matrix: &ScoreMatrix, target: usize, config: &AttackConfig) -> Result<(Vec<f64>, u64)> {
    config.validate()?;
    if target >= matrix.num_models() {
        return Err(Error::Configuration(format!(
            "target model {target} out of range for {} models",
            matrix.num_models()
        )));
    }
    let rows: Vec<(Vec<f64>, u64)> = (0..matrix.num_examples())
        .into_par_iter()
        .map(|x| lira_row(x, matrix, &[target], config))
        .collect::<Result<_>>()?;
    let clamped = rows.iter().map(|r| r.1).sum();
    Ok((rows.into_iter().map(|r| r.0[0]).collect(), clamped))
}

/// LiRA against every model in turn (leave-one-out).
pub fn lira_scores_all(matrix: &ScoreMatrix, config: &AttackConfig) -> Result<LooScores> {
    config.validate()?;
    let targets: Vec<usize> = (0..matrix.num_models()).collect();
    let rows: Vec<(Vec<f64>, u64)> = (0..matrix.num_examples())
        .into_par_iter()
        .map(|x| lira_row(x, matrix, &targets, config))
        .collect::<Result<_>>()?;
    Ok(LooScores {
        num_examples: matrix.num_examples(),
        num_models: matrix.num_models(),
        sigma_clamped: rows.iter().map(|r| r.1).sum(),
        scores: rows.into_iter().flat_map(|r| r.0).collect(),
        skipped_pairs: 0,
        without_reference: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::AttackKind;

    #[test]
    fn log_lr_examples() {
        for t in [-3.0, 0.0, 0.7, 10.0] {
            assert_eq!(lira_log_lr(t, 0.4, 2.0, 0.4, 2.0), 0.0);
        }
        let direct = (-0.0f64).exp().ln() - (-0.5f64).exp().ln();
        assert!((lira_log_lr(1.0, 1.0, 1.0, 0.0, 1.0) - direct).abs() < 1e-15);
        assert!((lira_log_lr(1.0, 1.0, 1.0, 0.0, 1.0) - 0.5).abs() < 1e-15);
    }

    fn tiny_matrix() -> ScoreMatrix {
        let scores = vec![
            1.0, 0.2, 0.9, 0.1, 1.1, 0.3, //
            0.5, 0.4, 0.6, 0.55, 0.3, 0.45,
        ];
        let membership = vec![
            true, false, true, false, true, false, //
            false, true, true, false, false, true,
        ];
        ScoreMatrix::new(2, 6, scores, membership, vec![0, 1]).unwrap()
    }

    #[test]
    fn leave_one_out_matches_direct_computation() {
        let m = tiny_matrix();
        for mode in [VarianceMode::Shared, VarianceMode::Separate] {
            let cfg = AttackConfig { variance_mode: mode, ..AttackConfig::new(AttackKind::Lira) };
            let all = lira_scores_all(&m, &cfg).unwrap();
            for target in 0..6 {
                let (single, _) = lira_scores(&m, target, &cfg).unwrap();
                for x in 0..2 {
                    let (mut ins, mut outs) = (vec![], vec![]);
                    for j in (0..6).filter(|&j| j != target) {
                        if m.is_member(x, j) { ins.push(m.score(x, j)) } else { outs.push(m.score(x, j)) }
                    }
                    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                    let var = |v: &[f64]| {
                        let mu = mean(v);
                        v.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64
                    };
                    let (si, so) = match mode {
                        VarianceMode::Separate => (var(&ins).sqrt(), var(&outs).sqrt()),
                        VarianceMode::Shared => {
                            let p = ((ins.len() - 1) as f64 * var(&ins) + (outs.len() - 1) as f64 * var(&outs))
                                / (ins.len() + outs.len() - 2) as f64;
                            (p.sqrt(), p.sqrt())
                        }
                    };
                    let want = lira_log_lr(m.score(x, target), mean(&ins), si, mean(&outs), so);
                    assert!((all.score(x, target) - want).abs() < 1e-10);
                    assert!((single[x] - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn insufficient_shadows_is_an_error() {
        let m = ScoreMatrix::new(1, 4, vec![1.0, 0.0, 1.0, 0.0], vec![true, false, true, false], vec![0]).unwrap();
        let err = lira_scores(&m, 0, &AttackConfig::new(AttackKind::Lira)).unwrap_err();
        assert!(matches!(err, Error::Statistics { example: 0, .. }));
    }

    #[test]
    fn floor_is_reported() {
        let m = ScoreMatrix::new(1, 6, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0], vec![true, false, true, false, true, false], vec![0])
            .unwrap();
        let cfg = AttackConfig::new(AttackKind::Lira);
        let all = lira_scores_all(&m, &cfg).unwrap();
        assert_eq!(all.sigma_clamped, 12);
        assert!(all.scores.iter().all(|s| s.is_finite()));
    }
}
