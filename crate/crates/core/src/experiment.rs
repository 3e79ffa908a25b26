//! Sweep runner shared by the command-line tool and the test suites:
//! simulated cells, seed aggregation, and analytic tables.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{
    average_case, lira_loglaw, lira_loglaw_cap, lira_tpr_simplified, rmia_bound_per_example,
    sample_simplified_target, small_fpr_rows, AverageKind, SimplifiedZSampler, SmallFprRow,
};
use crate::attacks::{attack_leave_one_out, evaluate_leave_one_out, AttackConfig, AttackKind, ScoreMatrix, TprAtFpr, VarianceMode};
use crate::error::{Error, Result};
use crate::numerics::{median, slope};
use crate::rng::{derive_seed, tag};
use crate::simmodel::{generate_pool, simulate_score_matrix, stratified_masks, SimplifiedModelConfig};
use crate::stats::aggregate_seeds;

fn default_pool_factor() -> usize {
    2
}

/// Parameters of the simulated world shared by every cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub dimension: usize,
    pub in_class_std: f64,
    #[serde(default = "default_pool_factor")]
    pub pool_factor: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub shots: Vec<usize>,
    pub classes: Vec<usize>,
}

fn default_roc_points() -> usize {
    400
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: WorldConfig,
    pub attacks: Vec<AttackConfig>,
    pub num_models: usize,
    pub sweep: SweepConfig,
    pub fprs: Vec<f64>,
    pub num_seeds: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    /// Also write each cell's score matrix as CSV plus sidecar.
    #[serde(default)]
    pub export_matrices: bool,
    /// ROC curves stored per cell are thinned to about this many points.
    #[serde(default = "default_roc_points")]
    pub roc_points: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Configuration(m));
        if self.sweep.shots.is_empty() || self.sweep.classes.is_empty() {
            return bad("sweep.shots and sweep.classes must be nonempty".into());
        }
        if self.attacks.is_empty() {
            return bad("attacks must list at least one attack".into());
        }
        if self.fprs.is_empty() {
            return bad("fprs must be nonempty".into());
        }
        if let Some(f) = self.fprs.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
            return bad(format!("fpr {f} outside (0, 1)"));
        }
        if self.num_seeds < 1 {
            return bad("num_seeds must be at least 1".into());
        }
        if self.num_models < 4 {
            return bad(format!("num_models must be at least 4, got {}", self.num_models));
        }
        for a in &self.attacks {
            a.validate()?;
        }
        for &c in &self.sweep.classes {
            for &s in &self.sweep.shots {
                self.cell_model(c, s, 0).validate()?;
            }
        }
        Ok(())
    }

    pub fn cell_seed(&self, num_classes: usize, shots: usize, seed_index: usize) -> u64 {
        derive_seed(self.model.seed, &[tag::CELL, num_classes as u64, shots as u64, seed_index as u64])
    }

    pub fn cell_model(&self, num_classes: usize, shots: usize, seed_index: usize) -> SimplifiedModelConfig {
        SimplifiedModelConfig {
            num_classes,
            shots,
            dimension: self.model.dimension,
            in_class_std: self.model.in_class_std,
            pool_factor: self.model.pool_factor,
            seed: self.cell_seed(num_classes, shots, seed_index),
        }
    }

    /// All (C, S, seed index) cells in a fixed order.
    pub fn cells(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for &c in &self.sweep.classes {
            for &s in &self.sweep.shots {
                for i in 0..self.num_seeds {
                    out.push((c, s, i));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAttack {
    pub attack: AttackKind,
    pub variance_mode: VarianceMode,
    pub tpr_at: Vec<TprAtFpr>,
    pub roc: Vec<crate::attacks::RocPoint>,
    pub sigma_clamped: u64,
    pub skipped_pairs: u64,
    pub without_reference: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub num_classes: usize,
    pub shots: usize,
    pub seed_index: usize,
    pub seed: u64,
    pub num_models: usize,
    pub num_examples: usize,
    pub attacks: Vec<CellAttack>,
}

/// Score matrix of one cell: pool, stratified split, one classifier per model.
pub fn cell_matrix(config: &ExperimentConfig, num_classes: usize, shots: usize, seed_index: usize) -> Result<ScoreMatrix> {
    let model = config.cell_model(num_classes, shots, seed_index);
    let pool = generate_pool(&model)?;
    let masks = stratified_masks(&pool, shots, config.num_models, model.seed)?;
    simulate_score_matrix(&pool, &masks)
}

/// Run every configured attack leave-one-out on a score matrix.
pub fn attack_matrix(
    matrix: &ScoreMatrix,
    attacks: &[AttackConfig],
    fprs: &[f64],
    seed: u64,
    roc_points: usize,
) -> Result<Vec<CellAttack>> {
    attacks
        .iter()
        .map(|a| {
            let loo = attack_leave_one_out(matrix, a, seed)?;
            let mut res = evaluate_leave_one_out(matrix, &loo, fprs)?;
            res.thin_roc(roc_points);
            Ok(CellAttack {
                attack: a.attack,
                variance_mode: a.variance_mode,
                tpr_at: res.tpr_at,
                roc: res.roc,
                sigma_clamped: loo.sigma_clamped,
                skipped_pairs: loo.skipped_pairs,
                without_reference: loo.without_reference,
            })
        })
        .collect()
}

pub fn run_cell(config: &ExperimentConfig, num_classes: usize, shots: usize, seed_index: usize) -> Result<CellResult> {
    let matrix = cell_matrix(config, num_classes, shots, seed_index)?;
    let seed = config.cell_seed(num_classes, shots, seed_index);
    Ok(CellResult {
        num_classes,
        shots,
        seed_index,
        seed,
        num_models: config.num_models,
        num_examples: matrix.num_examples(),
        attacks: attack_matrix(&matrix, &config.attacks, &config.fprs, seed, config.roc_points)?,
    })
}

/// Run all cells in parallel; failures are kept per cell.
pub fn run_cells(config: &ExperimentConfig) -> Vec<(usize, usize, usize, Result<CellResult>, f64)> {
    config
        .cells()
        .into_par_iter()
        .map(|(c, s, i)| {
            let start = Instant::now();
            let r = run_cell(config, c, s, i);
            (c, s, i, r, start.elapsed().as_secs_f64())
        })
        .collect()
}

/// Seed-aggregated operating point for one (attack, C, S, FPR).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub attack: AttackKind,
    #[serde(rename = "C")]
    pub num_classes: usize,
    #[serde(rename = "S")]
    pub shots: usize,
    pub fpr: f64,
    pub num_seeds: usize,
    pub median_tpr: f64,
    pub median_achieved_fpr: f64,
    pub ci_low_min: f64,
    pub ci_high_max: f64,
    pub log10_s: f64,
    /// log10(median TPR - requested FPR), empty when not positive.
    pub log10_gap: Option<f64>,
}

pub fn summarize(cells: &[CellResult]) -> Result<Vec<SummaryRow>> {
    let mut keys: Vec<(AttackKind, usize, usize, u64)> = Vec::new();
    for c in cells {
        for a in &c.attacks {
            for t in &a.tpr_at {
                let k = (a.attack, c.num_classes, c.shots, t.requested_fpr.to_bits());
                if !keys.contains(&k) {
                    keys.push(k);
                }
            }
        }
    }
    keys.iter()
        .map(|&(attack, nc, s, fbits)| {
            let f = f64::from_bits(fbits);
            let pts: Vec<&TprAtFpr> = cells
                .iter()
                .filter(|c| c.num_classes == nc && c.shots == s)
                .flat_map(|c| c.attacks.iter().filter(|a| a.attack == attack))
                .flat_map(|a| a.tpr_at.iter().filter(|t| t.requested_fpr == f))
                .collect();
            let vals: Vec<f64> = pts.iter().map(|t| t.tpr).collect();
            let ivs: Vec<(f64, f64)> = pts.iter().map(|t| (t.interval.low, t.interval.high)).collect();
            let agg = aggregate_seeds(&vals, &ivs)?;
            let achieved: Vec<f64> = pts.iter().map(|t| t.achieved_fpr).collect();
            let gap = agg.median - f;
            Ok(SummaryRow {
                attack,
                num_classes: nc,
                shots: s,
                fpr: f,
                num_seeds: pts.len(),
                median_tpr: agg.median,
                median_achieved_fpr: median(&achieved).unwrap_or(f64::NAN),
                ci_low_min: agg.ci_low_min,
                ci_high_max: agg.ci_high_max,
                log10_s: (s as f64).log10(),
                log10_gap: (gap > 0.0).then(|| gap.log10()),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub attack: AttackKind,
    #[serde(rename = "C")]
    pub num_classes: usize,
    pub fpr: f64,
    /// Least-squares slope of log10(median TPR - FPR) on log10 S.
    pub slope: Option<f64>,
    pub points_used: usize,
    pub points_dropped: usize,
}

pub fn slopes(summary: &[SummaryRow]) -> Vec<SlopeRow> {
    let mut keys: Vec<(AttackKind, usize, u64)> = Vec::new();
    for r in summary {
        let k = (r.attack, r.num_classes, r.fpr.to_bits());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.iter()
        .map(|&(attack, nc, fbits)| {
            let rows: Vec<&SummaryRow> = summary
                .iter()
                .filter(|r| r.attack == attack && r.num_classes == nc && r.fpr.to_bits() == fbits)
                .collect();
            let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(|r| r.log10_gap.map(|g| (r.log10_s, g))).unzip();
            SlopeRow {
                attack,
                num_classes: nc,
                fpr: f64::from_bits(fbits),
                slope: slope(&x, &y),
                points_used: x.len(),
                points_dropped: rows.len() - x.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    #[serde(rename = "C")]
    pub num_classes: usize,
    #[serde(rename = "S")]
    pub shots: usize,
    pub seed_index: usize,
    pub status: String,
    pub file: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub matrix_files: Vec<String>,
    pub error: Option<String>,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cells: Vec<CellEntry>,
    pub tables: Vec<String>,
    pub failed_cells: usize,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Write rows as CSV with a trailing `config_hash` column.
fn write_table<T: Serialize>(path: &Path, rows: &[T], config_hash: &str) -> Result<()> {
    #[derive(Serialize)]
    struct Tagged<'a, T> {
        #[serde(flatten)]
        row: &'a T,
        config_hash: &'a str,
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = true;
    for row in rows {
        // csv cannot serialize flattened maps; go through a JSON object.
        let v = serde_json::to_value(Tagged { row, config_hash })?;
        let obj = v.as_object().expect("rows serialize to objects");
        if header {
            w.write_record(obj.keys())?;
            header = false;
        }
        w.write_record(obj.values().map(|v| match v {
            serde_json::Value::Null => String::new(),
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        }))?;
    }
    w.flush()?;
    Ok(())
}

/// Run a simulation sweep and persist cells, tables and the manifest into
/// `out_dir`. Returns the manifest; failed cells are recorded, not fatal.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path, config_hash: &str, tool_version: &str) -> Result<RunManifest> {
    config.validate()?;
    let cell_dir = out_dir.join("cells");
    fs::create_dir_all(&cell_dir)?;
    let outcomes = run_cells(config);
    let mut entries = Vec::new();
    let mut ok_cells = Vec::new();
    for (c, s, i, res, secs) in outcomes {
        let stem = format!("cell_C{c}_S{s}_seed{i}");
        let mut entry = CellEntry {
            num_classes: c,
            shots: s,
            seed_index: i,
            status: "ok".into(),
            file: None,
            matrix_files: vec![],
            error: None,
            wall_clock_seconds: secs,
        };
        match res {
            Ok(cell) => {
                let rel = format!("cells/{stem}.json");
                write_json(&out_dir.join(&rel), &cell)?;
                entry.file = Some(rel);
                if config.export_matrices {
                    let m = cell_matrix(config, c, s, i)?;
                    let csv_rel = format!("cells/{stem}_scores.csv");
                    let side_rel = format!("cells/{stem}_scores.json");
                    let side = crate::attacks::write_score_csv(&m, fs::File::create(out_dir.join(&csv_rel))?)?;
                    write_json(&out_dir.join(&side_rel), &side)?;
                    entry.matrix_files = vec![csv_rel, side_rel];
                }
                ok_cells.push(cell);
            }
            Err(e) => {
                entry.status = "failed".into();
                entry.error = Some(e.to_string());
            }
        }
        entries.push(entry);
    }
    let summary = summarize(&ok_cells)?;
    write_table(&out_dir.join("summary.csv"), &summary, config_hash)?;
    write_table(&out_dir.join("slopes.csv"), &slopes(&summary), config_hash)?;
    let failed = entries.iter().filter(|e| e.status != "ok").count();
    let manifest = RunManifest {
        tool_version: tool_version.into(),
        command: "simulate".into(),
        config_hash: config_hash.into(),
        config: serde_json::to_value(config)?,
        cells: entries,
        tables: vec!["summary.csv".into(), "slopes.csv".into()],
        failed_cells: failed,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Analytic tables.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub shots: Vec<usize>,
    pub fprs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AverageSpec {
    pub shots: Vec<usize>,
    pub fprs: Vec<f64>,
    pub num_x: usize,
    #[serde(default = "default_average_attacks")]
    pub attacks: Vec<AverageKind>,
    #[serde(default = "default_num_z")]
    pub num_z: usize,
}

fn default_average_attacks() -> Vec<AverageKind> {
    vec![AverageKind::Lira]
}

fn default_num_z() -> usize {
    2000
}

fn default_num_targets() -> usize {
    5
}

/// An explicit target example and its class mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub x: Vec<f64>,
    pub m_x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticConfig {
    pub dimension: usize,
    pub in_class_std: f64,
    #[serde(default = "one")]
    pub num_classes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_num_targets")]
    pub num_targets: usize,
    /// Extra targets evaluated alongside the sampled ones.
    #[serde(default)]
    pub targets: Vec<TargetSpec>,
    #[serde(default)]
    pub small_fpr: Option<GridSpec>,
    #[serde(default)]
    pub lira_grid: Option<GridSpec>,
    #[serde(default)]
    pub average_case: Option<AverageSpec>,
    #[serde(default)]
    pub rmia_bound: Option<RmiaBoundSpec>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmiaBoundSpec {
    pub shots: Vec<usize>,
    pub alphas: Vec<f64>,
    #[serde(default = "default_num_z")]
    pub num_z: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiraGridRow {
    pub target: usize,
    #[serde(rename = "S")]
    pub shots: usize,
    pub fpr: f64,
    pub tpr: f64,
    pub log_gap: Option<f64>,
    pub loglaw: f64,
    pub cap: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiraSlopeRow {
    pub target: usize,
    pub fpr: f64,
    /// Slope of ln(TPR - FPR) on ln S; empty for degenerate targets.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub attack: AverageKind,
    #[serde(rename = "S")]
    pub shots: usize,
    pub level: f64,
    pub log_gap: Option<f64>,
    pub tpr: f64,
    pub mean_per_example_tpr: f64,
    pub expectation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmiaBoundRow {
    pub target: usize,
    #[serde(rename = "S")]
    pub shots: usize,
    pub alpha: f64,
    pub bound: f64,
    pub log_gap_bound: f64,
    pub log_gap_linearized: f64,
    pub psi: f64,
    pub q_expectation: f64,
    pub a_expectation: f64,
}

/// Everything an analytic run produces.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalyticTables {
    pub small_fpr: Vec<SmallFprRow>,
    pub lira_grid: Vec<LiraGridRow>,
    pub lira_slopes: Vec<LiraSlopeRow>,
    pub average: Vec<AverageRow>,
    pub rmia_bound: Vec<RmiaBoundRow>,
}

impl AnalyticConfig {
    /// Sampled targets (x, m_x, class) followed by explicit ones (class 0).
    fn targets(&self) -> Result<(Vec<(Vec<f64>, Vec<f64>, usize)>, Vec<f64>)> {
        let (_, _, _, means) = sample_simplified_target(self.dimension, self.num_classes, self.in_class_std, self.seed)?;
        let mut out = Vec::new();
        for i in 0..self.num_targets {
            let (x, m, c, _) = sample_simplified_target(
                self.dimension,
                self.num_classes,
                self.in_class_std,
                derive_seed(self.seed, &[tag::TARGET_X, i as u64]),
            )?;
            // Re-express the target relative to this run's class means.
            let d = self.dimension;
            let shift: Vec<f64> = x.iter().zip(&m).map(|(a, b)| a - b).collect();
            let mc = means[c * d..(c + 1) * d].to_vec();
            let x = mc.iter().zip(&shift).map(|(a, b)| a + b).collect();
            out.push((x, mc, c));
        }
        for t in &self.targets {
            if t.x.len() != self.dimension || t.m_x.len() != self.dimension {
                return Err(Error::Configuration(format!(
                    "explicit target has dimension {} / {}, expected {}",
                    t.x.len(),
                    t.m_x.len(),
                    self.dimension
                )));
            }
            out.push((t.x.clone(), t.m_x.clone(), 0));
        }
        Ok((out, means))
    }
}

pub fn analytic_tables(config: &AnalyticConfig) -> Result<AnalyticTables> {
    if config.num_classes > config.dimension {
        return Err(Error::InfeasibleOrthogonality { classes: config.num_classes, dimension: config.dimension });
    }
    let mut t = AnalyticTables::default();
    let (targets, means) = config.targets()?;
    let s = config.in_class_std;
    if let Some(g) = &config.small_fpr {
        let (x, m, _) = targets.first().ok_or_else(|| Error::Configuration("small_fpr needs a target".into()))?;
        t.small_fpr = small_fpr_rows(x, m, &g.shots, &g.fprs, s)?;
    }
    if let Some(g) = &config.lira_grid {
        for (i, (x, m, _)) in targets.iter().enumerate() {
            for &f in &g.fprs {
                let (mut ls, mut lg) = (vec![], vec![]);
                for &k in &g.shots {
                    let v = lira_tpr_simplified(x, m, k, s, f)?;
                    if let Some(g) = v.log_gap {
                        ls.push((k as f64).ln());
                        lg.push(g);
                    }
                    t.lira_grid.push(LiraGridRow {
                        target: i,
                        shots: k,
                        fpr: f,
                        tpr: v.tpr,
                        log_gap: v.log_gap,
                        loglaw: lira_loglaw(x, m, k, s, f)?,
                        cap: lira_loglaw_cap(x, m, k, s, f)?,
                        degenerate: v.degenerate,
                    });
                }
                t.lira_slopes.push(LiraSlopeRow { target: i, fpr: f, slope: slope(&ls, &lg) });
            }
        }
    }
    if let Some(a) = &config.average_case {
        for &kind in &a.attacks {
            for &f in &a.fprs {
                for &k in &a.shots {
                    let model = SimplifiedModelConfig {
                        num_classes: config.num_classes,
                        shots: k,
                        dimension: config.dimension,
                        in_class_std: s,
                        pool_factor: 2,
                        seed: config.seed,
                    };
                    let r = average_case(kind, &model, f, a.num_x, a.num_z)?;
                    t.average.push(AverageRow {
                        attack: kind,
                        shots: k,
                        level: f,
                        log_gap: r.vulnerability.log_gap,
                        tpr: r.vulnerability.tpr,
                        mean_per_example_tpr: r.mean_per_example_tpr,
                        expectation: r.expectation,
                    });
                }
            }
        }
    }
    if let Some(b) = &config.rmia_bound {
        for (i, (x, m, c)) in targets.iter().enumerate() {
            for &alpha in &b.alphas {
                for &k in &b.shots {
                    let mut zs = SimplifiedZSampler::new(
                        means.clone(),
                        config.num_classes,
                        *c,
                        s,
                        derive_seed(config.seed, &[tag::Z_SAMPLER, i as u64]),
                    );
                    let r = rmia_bound_per_example(x, m, config.num_classes, k, s, alpha, &mut zs, b.num_z)?;
                    t.rmia_bound.push(RmiaBoundRow {
                        target: i,
                        shots: k,
                        alpha,
                        bound: r.vulnerability.tpr,
                        log_gap_bound: r.log_gap_bound,
                        log_gap_linearized: r.log_gap_linearized,
                        psi: r.terms.psi,
                        q_expectation: r.terms.q_expectation,
                        a_expectation: r.terms.a_expectation,
                    });
                }
            }
        }
    }
    Ok(t)
}

/// Compute and persist the analytic tables plus a manifest.
pub fn run_analytic(config: &AnalyticConfig, out_dir: &Path, config_hash: &str, tool_version: &str) -> Result<RunManifest> {
    fs::create_dir_all(out_dir)?;
    let t = analytic_tables(config)?;
    let mut tables = Vec::new();
    let mut emit = |name: &str, write: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        write(&out_dir.join(name))?;
        tables.push(name.to_string());
        Ok(())
    };
    if config.small_fpr.is_some() {
        emit("small_fpr_validation.csv", &|p| write_table(p, &t.small_fpr, config_hash))?;
    }
    if config.lira_grid.is_some() {
        emit("lira_grid.csv", &|p| write_table(p, &t.lira_grid, config_hash))?;
        emit("lira_slopes.csv", &|p| write_table(p, &t.lira_slopes, config_hash))?;
    }
    if config.average_case.is_some() {
        emit("average_case.csv", &|p| write_table(p, &t.average, config_hash))?;
    }
    if config.rmia_bound.is_some() {
        emit("rmia_bound.csv", &|p| write_table(p, &t.rmia_bound, config_hash))?;
    }
    let manifest = RunManifest {
        tool_version: tool_version.into(),
        command: "analytic".into(),
        config_hash: config_hash.into(),
        config: serde_json::to_value(config)?,
        cells: vec![],
        tables,
        failed_cells: 0,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            model: WorldConfig { dimension: 8, in_class_std: 0.1, pool_factor: 2, seed: 1 },
            attacks: vec![AttackConfig::new(AttackKind::Lira), AttackConfig { rmia_num_z: 8, ..AttackConfig::new(AttackKind::Rmia) }],
            num_models: 8,
            sweep: SweepConfig { shots: vec![4, 8], classes: vec![2] },
            fprs: vec![0.1, 0.5],
            num_seeds: 2,
            output_dir: None,
            workers: None,
            export_matrices: false,
            roc_points: 50,
        }
    }

    #[test]
    fn cells_are_deterministic() {
        let cfg = tiny();
        let a = run_cell(&cfg, 2, 4, 1).unwrap();
        let b = run_cell(&cfg, 2, 4, 1).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_ne!(cfg.cell_seed(2, 4, 0), cfg.cell_seed(2, 4, 1));
    }

    #[test]
    fn summary_and_slopes() {
        let cfg = tiny();
        let cells: Vec<CellResult> = run_cells(&cfg).into_iter().map(|c| c.3.unwrap()).collect();
        let sum = summarize(&cells).unwrap();
        assert_eq!(sum.len(), 2 * 2 * 2);
        assert!(sum.iter().all(|r| r.num_seeds == 2 && r.ci_low_min <= r.median_tpr && r.median_tpr <= r.ci_high_max));
        let sl = slopes(&sum);
        assert_eq!(sl.len(), 4);
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut cfg = tiny();
        cfg.fprs = vec![1.5];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny();
        cfg.sweep.classes = vec![20];
        assert!(matches!(cfg.validate(), Err(Error::InfeasibleOrthogonality { .. })));
    }

    #[test]
    fn degenerate_target_is_flagged() {
        let m: Vec<f64> = (0..4).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
        let cfg = AnalyticConfig {
            dimension: 4,
            in_class_std: 0.1,
            num_classes: 1,
            seed: 0,
            num_targets: 1,
            targets: vec![TargetSpec { x: m.clone(), m_x: m }],
            small_fpr: None,
            lira_grid: Some(GridSpec { shots: vec![10, 100], fprs: vec![0.1] }),
            average_case: None,
            rmia_bound: None,
            output_dir: None,
        };
        let t = analytic_tables(&cfg).unwrap();
        let deg: Vec<_> = t.lira_grid.iter().filter(|r| r.target == 1).collect();
        assert!(deg.iter().all(|r| r.degenerate && r.log_gap.is_none()));
        assert!(t.lira_slopes.iter().any(|r| r.target == 1 && r.slope.is_none()));
    }
}
