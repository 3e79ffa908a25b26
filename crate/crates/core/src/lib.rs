//! Membership-inference vulnerability simulation and auditing.
//!
//! The crate simulates a nearest-class-mean model trained on few examples per
//! class, attacks it with LiRA and RMIA, evaluates TPR at low FPR with exact
//! binomial intervals, evaluates the closed-form per-example vulnerability
//! laws, and fits the log-log regression of vulnerability on shots and
//! classes.

pub mod analytic;
pub mod attacks;
pub mod error;
pub mod experiment;
pub mod lawfit;
pub mod numerics;
pub mod rng;
pub mod simmodel;
pub mod stats;

pub use error::{Error, Result};
pub use analytic::{AnalyticVulnerability, LocationScalePair, RmiaBoundTerms};
pub use attacks::{AttackConfig, AttackKind, AttackResult, ScoreMatrix, VarianceMode};
pub use experiment::{AnalyticConfig, ExperimentConfig, RunManifest};
pub use lawfit::{ModelForm, PowerLawFit, VulnerabilityRecord};
pub use numerics::{OlsFit, StandardDistribution};
pub use simmodel::{ClusterClassifier, SamplePool, SimplifiedModelConfig};
pub use stats::{ClopperPearsonInterval, SeedAggregate};
