//! Shadow-model bookkeeping, LiRA and RMIA scoring, and low-FPR evaluation.

mod ingest;
mod lira;
mod matrix;
mod rmia;
mod roc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ingest::{read_score_csv, write_score_csv, MatrixSidecar};
pub use lira::{lira_log_lr, lira_scores, lira_scores_all, shared_sigma};
pub use matrix::{shadow_split, ScoreMatrix};
pub use rmia::{reference_candidates, rmia_log_lr_shared, rmia_scores, rmia_scores_all};
pub use roc::{evaluate_leave_one_out, roc_and_tpr, AttackResult, RocPoint, TprAtFpr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Lira,
    Rmia,
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Lira => "lira",
            Self::Rmia => "rmia",
        })
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lira" => Ok(Self::Lira),
            "rmia" => Ok(Self::Rmia),
            other => Err(Error::Configuration(format!("unknown attack '{other}' (expected lira or rmia)"))),
        }
    }
}

/// How Gaussian scales are estimated from shadow models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMode {
    /// Separate IN and OUT standard deviations.
    #[default]
    Separate,
    /// One pooled standard deviation per example.
    Shared,
}

fn default_gamma() -> f64 {
    2.0
}

fn default_num_z() -> usize {
    10_000
}

fn default_sigma_floor() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub attack: AttackKind,
    #[serde(default)]
    pub variance_mode: VarianceMode,
    #[serde(default = "default_gamma")]
    pub rmia_gamma: f64,
    /// Upper bound on the number of reference examples z; the effective
    /// count is min(rmia_num_z, available candidates).
    #[serde(default = "default_num_z")]
    pub rmia_num_z: usize,
    #[serde(default = "default_sigma_floor")]
    pub sigma_floor: f64,
}

impl AttackConfig {
    pub fn new(attack: AttackKind) -> Self {
        Self {
            attack,
            variance_mode: VarianceMode::default(),
            rmia_gamma: default_gamma(),
            rmia_num_z: default_num_z(),
            sigma_floor: default_sigma_floor(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rmia_gamma > 1.0 && self.rmia_gamma.is_finite()) {
            return Err(Error::Configuration(format!("rmia_gamma must exceed 1, got {}", self.rmia_gamma)));
        }
        if self.rmia_num_z < 1 {
            return Err(Error::Configuration("rmia_num_z must be at least 1".into()));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::Configuration(format!("sigma_floor must be positive, got {}", self.sigma_floor)));
        }
        Ok(())
    }
}

/// Leave-one-out scores: entry `x * M + m` is the score of example `x` when
/// model `m` is the target and the other M - 1 models are shadows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooScores {
    pub num_examples: usize,
    pub num_models: usize,
    pub scores: Vec<f64>,
    /// Standard deviations raised to the floor.
    pub sigma_clamped: u64,
    /// RMIA (x, z) pairs without enough shadow models on one side.
    pub skipped_pairs: u64,
    /// RMIA (x, target) cases where no reference z was usable; scored 0.
    pub without_reference: u64,
}

impl LooScores {
    pub fn score(&self, example: usize, model: usize) -> f64 {
        self.scores[example * self.num_models + model]
    }
}

/// Leave-one-out scores for the configured attack.
pub fn attack_leave_one_out(matrix: &ScoreMatrix, config: &AttackConfig, seed: u64) -> Result<LooScores> {
    config.validate()?;
    match config.attack {
        AttackKind::Lira => lira_scores_all(matrix, config),
        AttackKind::Rmia => {
            let z = reference_candidates(matrix.num_examples(), config.rmia_num_z, seed);
            rmia_scores_all(matrix, &z, config)
        }
    }
}
