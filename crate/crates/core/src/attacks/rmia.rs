use rand::seq::index::sample;
use rayon::prelude::*;

use super::lira::shared_sigma;
use super::{AttackConfig, LooScores, ScoreMatrix, VarianceMode};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn log_density(t: f64, mu: f64, sd: f64) -> f64 {
    let z = (t - mu) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// Pairwise log LR(x, z) with one scale per example:
/// [(t_x - mu_zx)² - (t_x - mu_xx)²] / 2 sd_x² + [(t_z - mu_zz)² - (t_z - mu_xz)²] / 2 sd_z².
#[allow(clippy::too_many_arguments)]
pub fn rmia_log_lr_shared(
    t_x: f64,
    t_z: f64,
    mu_xx: f64,
    mu_xz: f64,
    mu_zx: f64,
    mu_zz: f64,
    sd_x: f64,
    sd_z: f64,
) -> f64 {
    ((t_x - mu_zx).powi(2) - (t_x - mu_xx).powi(2)) / (2.0 * sd_x * sd_x)
        + ((t_z - mu_zz).powi(2) - (t_z - mu_xz).powi(2)) / (2.0 * sd_z * sd_z)
}

/// Uniform sample of at most `num_z` distinct example indices.
pub fn reference_candidates(num_examples: usize, num_z: usize, seed: u64) -> Vec<usize> {
    let k = num_z.min(num_examples);
    let mut rng = stream(seed, &[tag::RMIA_Z]);
    let mut idx = sample(&mut rng, num_examples, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Sums of t_x and t_z (centered) over one side of a pair split.
#[derive(Default, Clone, Copy)]
struct Side {
    n: f64,
    sx: f64,
    sz: f64,
    qx: f64,
    qz: f64,
}

impl Side {
    fn add(&mut self, dx: f64, dz: f64) {
        self.n += 1.0;
        self.sx += dx;
        self.sz += dz;
        self.qx += dx * dx;
        self.qz += dz * dz;
    }

    fn remove(mut self, dx: f64, dz: f64) -> Self {
        self.n -= 1.0;
        self.sx -= dx;
        self.sz -= dz;
        self.qx -= dx * dx;
        self.qz -= dz * dz;
        self
    }

    fn var(n: f64, s: f64, q: f64) -> f64 {
        ((q - s * s / n) / (n - 1.0)).max(0.0)
    }
}

struct RowOutcome {
    hits: Vec<u32>,
    valid: Vec<u32>,
    skipped: u64,
    clamped: u64,
}

struct Context<'a> {
    matrix: &'a ScoreMatrix,
    config: &'a AttackConfig,
    candidates: &'a [usize],
    targets: &'a [usize],
    sigma: Option<Vec<f64>>,
    row_mean: Vec<f64>,
    log_gamma: f64,
}

impl Context<'_> {
    fn floor(&self, sd: f64, clamped: &mut u64) -> f64 {
        if sd < self.config.sigma_floor {
            *clamped += 1;
            self.config.sigma_floor
        } else {
            sd
        }
    }

    fn row(&self, x: usize) -> RowOutcome {
        let m = self.matrix;
        let nm = m.num_models();
        let (row_x, mem_x, cx) = (m.row(x), m.membership_row(x), self.row_mean[x]);
        let mut out = RowOutcome {
            hits: vec![0; self.targets.len()],
            valid: vec![0; self.targets.len()],
            skipped: 0,
            clamped: 0,
        };
        let min_n = match self.config.variance_mode {
            VarianceMode::Shared => 1.0,
            VarianceMode::Separate => 2.0,
        };
        for &z in self.candidates {
            if z == x {
                continue;
            }
            let (row_z, mem_z, cz) = (m.row(z), m.membership_row(z), self.row_mean[z]);
            // a: x IN, z OUT; b: x OUT, z IN.
            let (mut a, mut b) = (Side::default(), Side::default());
            for j in 0..nm {
                match (mem_x[j], mem_z[j]) {
                    (true, false) => a.add(row_x[j] - cx, row_z[j] - cz),
                    (false, true) => b.add(row_x[j] - cx, row_z[j] - cz),
                    _ => {}
                }
            }
            for (k, &t) in self.targets.iter().enumerate() {
                if mem_z[t] {
                    continue;
                }
                let (tx, tz) = (row_x[t], row_z[t]);
                let a = if mem_x[t] { a.remove(tx - cx, tz - cz) } else { a };
                if a.n < min_n || b.n < min_n {
                    out.skipped += 1;
                    continue;
                }
                let mu_xx = cx + a.sx / a.n;
                let mu_xz = cz + a.sz / a.n;
                let mu_zx = cx + b.sx / b.n;
                let mu_zz = cz + b.sz / b.n;
                let llr = match &self.sigma {
                    Some(sig) => {
                        let sd_x = sig[x * nm + t];
                        let sd_z = sig[z * nm + t];
                        rmia_log_lr_shared(tx, tz, mu_xx, mu_xz, mu_zx, mu_zz, sd_x, sd_z)
                    }
                    None => {
                        let c = &mut out.clamped;
                        let s_xx = self.floor(Side::var(a.n, a.sx, a.qx).sqrt(), c);
                        let s_xz = self.floor(Side::var(a.n, a.sz, a.qz).sqrt(), c);
                        let s_zx = self.floor(Side::var(b.n, b.sx, b.qx).sqrt(), c);
                        let s_zz = self.floor(Side::var(b.n, b.sz, b.qz).sqrt(), c);
                        log_density(tx, mu_xx, s_xx) + log_density(tz, mu_xz, s_xz)
                            - log_density(tx, mu_zx, s_zx)
                            - log_density(tz, mu_zz, s_zz)
                    }
                };
                out.valid[k] += 1;
                if llr >= self.log_gamma {
                    out.hits[k] += 1;
                }
            }
        }
        out
    }
}

fn run(matrix: &ScoreMatrix, candidates: &[usize], targets: &[usize], config: &AttackConfig) -> Result<LooScores> {
    config.validate()?;
    if candidates.is_empty() {
        return Err(Error::Configuration("RMIA needs at least one reference example z".into()));
    }
    if let Some(&bad) = candidates.iter().find(|&&z| z >= matrix.num_examples()) {
        return Err(Error::Configuration(format!("reference example {bad} out of range")));
    }
    let (sigma, clamped_sigma) = match config.variance_mode {
        VarianceMode::Shared => {
            let (s, c) = shared_sigma(matrix, config.sigma_floor)?;
            (Some(s), c)
        }
        VarianceMode::Separate => (None, 0),
    };
    let row_mean = (0..matrix.num_examples())
        .map(|x| matrix.row(x).iter().sum::<f64>() / matrix.num_models() as f64)
        .collect();
    let ctx = Context {
        matrix,
        config,
        candidates,
        targets,
        sigma,
        row_mean,
        log_gamma: config.rmia_gamma.ln(),
    };
    let rows: Vec<RowOutcome> = (0..matrix.num_examples()).into_par_iter().map(|x| ctx.row(x)).collect();
    let mut scores = Vec::with_capacity(rows.len() * targets.len());
    let (mut skipped, mut clamped, mut without) = (0, clamped_sigma, 0);
    for r in &rows {
        skipped += r.skipped;
        clamped += r.clamped;
        for (h, v) in r.hits.iter().zip(&r.valid) {
            if *v == 0 {
                without += 1;
                scores.push(0.0);
            } else {
                scores.push(*h as f64 / *v as f64);
            }
        }
    }
    Ok(LooScores {
        num_examples: matrix.num_examples(),
        num_models: targets.len(),
        scores,
        sigma_clamped: clamped,
        skipped_pairs: skipped,
        without_reference: without,
    })
}

/// RMIA scores of every example against one target model. `z_pool` must hold
/// examples outside the target's training set.
pub fn rmia_scores(matrix: &ScoreMatrix, target: usize, z_pool: &[usize], config: &AttackConfig) -> Result<LooScores> {
    if target >= matrix.num_models() {
        return Err(Error::Configuration(format!(
            "target model {target} out of range for {} models",
            matrix.num_models()
        )));
    }
    if let Some(&z) = z_pool.iter().find(|&&z| z < matrix.num_examples() && matrix.is_member(z, target)) {
        return Err(Error::Configuration(format!(
            "reference example {z} is a member of target model {target}"
        )));
    }
    run(matrix, z_pool, &[target], config)
}

/// RMIA against every model in turn. For each target the references are the
/// candidates outside that target's training set, excluding x itself.
pub fn rmia_scores_all(matrix: &ScoreMatrix, candidates: &[usize], config: &AttackConfig) -> Result<LooScores> {
    let targets: Vec<usize> = (0..matrix.num_models()).collect();
    run(matrix, candidates, &targets, config)
}
