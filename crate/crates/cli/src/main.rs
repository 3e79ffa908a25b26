//! `mialaw`: simulate membership-inference sweeps, evaluate closed forms,
//! fit power laws and attack ingested score matrices.
//!
//! Exit codes: 0 success, 1 runtime or partial failure, 2 usage error.
//! Option precedence: command-line flag, then config file field, then the
//! `MIALAW_WORKERS` environment variable (worker count only), then defaults.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use mialaw::attacks::{attack_leave_one_out, evaluate_leave_one_out, read_score_csv, MatrixSidecar};
use mialaw::experiment::{run_analytic, run_experiment, SlopeRow, SummaryRow};
use mialaw::lawfit::{bundled, fit_power_law, read_records, report_rows, test_r2, CoefficientRow, RecordSource};
use mialaw::{AnalyticConfig, AttackConfig, AttackKind, ExperimentConfig, ModelForm, RunManifest, ScoreMatrix, VarianceMode};

const VERSION: &str = env!("CARGO_PKG_VERSION");
const WORKERS_ENV: &str = "MIALAW_WORKERS";

#[derive(Parser)]
#[command(name = "mialaw", version, about = "Membership-inference vulnerability simulation and power-law fitting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulated (C, S, seed) sweep and write cells, tables and a manifest.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Override num_seeds.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Also write each cell's score matrix (CSV plus sidecar).
        #[arg(long)]
        export_matrices: bool,
    },
    /// Evaluate closed-form vulnerabilities and bounds into CSV tables.
    Analytic {
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Fit log10(TPR - FPR) on log10 S and log10 C.
    Fit {
        /// `bundled:<name>` or a CSV file with columns dataset,C,S,fpr,tpr.
        dataset: String,
        #[arg(long)]
        fpr: f64,
        #[arg(long, default_value = "gap")]
        form: ModelForm,
        /// Second dataset for an out-of-sample R².
        #[arg(long)]
        predict_on: Option<String>,
        /// Write the JSON report here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Validate a score CSV plus JSON sidecar and store it as a matrix file.
    Ingest {
        scores: PathBuf,
        sidecar: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Leave-one-out attack on a stored score matrix.
    Attack(AttackArgs),
    /// Summarize a finished simulation run directory.
    Report { run_dir: PathBuf },
}

#[derive(Args)]
struct AttackArgs {
    matrix: PathBuf,
    #[arg(long, default_value = "lira")]
    attack: AttackKind,
    #[arg(long, value_parser = parse_variance_mode)]
    variance_mode: Option<VarianceMode>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    num_z: Option<usize>,
    #[arg(long)]
    sigma_floor: Option<f64>,
    #[arg(long = "fpr", value_delimiter = ',', default_values_t = vec![0.1, 0.01, 0.001])]
    fprs: Vec<f64>,
    /// Seed for the RMIA reference sample.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Shuffle membership labels first (null check).
    #[arg(long)]
    permute_seed: Option<u64>,
    /// Keep at most this many ROC points.
    #[arg(long, default_value_t = 1000)]
    roc_points: usize,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn parse_variance_mode(s: &str) -> Result<VarianceMode, String> {
    match s {
        "shared" => Ok(VarianceMode::Shared),
        "separate" => Ok(VarianceMode::Separate),
        other => Err(format!("unknown variance mode '{other}' (expected shared or separate)")),
    }
}

/// Errors caused by the invocation or configuration rather than the run.
#[derive(Debug)]
struct UsageError(anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    UsageError(e.into()).into()
}

fn read_config<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let file = File::open(path).with_context(|| format!("cannot open config {}", path.display())).map_err(usage)?;
    let de = &mut serde_json::Deserializer::from_reader(BufReader::new(file));
    serde_path_to_error::deserialize(de)
        .map_err(|e| usage(anyhow!("{}: invalid config at '{}': {}", path.display(), e.path(), e.inner())))
}

/// Hash of the settings that determine the numbers; output location, worker
/// count and export flags are excluded so reruns elsewhere share a hash.
fn config_hash<T: Serialize>(config: &T) -> anyhow::Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(config)?)))
}

fn resolve_workers(flag: Option<usize>, config: Option<usize>) -> anyhow::Result<Option<usize>> {
    if let Some(w) = flag.or(config) {
        return Ok(Some(w));
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v.parse().map(Some).map_err(|_| usage(anyhow!("{WORKERS_ENV}={v} is not a worker count"))),
        Err(_) => Ok(None),
    }
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    match workers {
        Some(0) => Err(usage(anyhow!("worker count must be at least 1"))),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
        None => Ok(f()),
    }
}

fn output_dir(flag: Option<PathBuf>, config: &Option<PathBuf>) -> anyhow::Result<PathBuf> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| usage(anyhow!("no output directory: pass --output-dir or set output_dir in the config")))
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("cannot write {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn simulate(
    path: &Path,
    out: Option<PathBuf>,
    seeds: Option<usize>,
    workers: Option<usize>,
    export: bool,
) -> anyhow::Result<ExitCode> {
    let mut config: ExperimentConfig = read_config(path)?;
    let dir = output_dir(out, &config.output_dir)?;
    if let Some(n) = seeds {
        config.num_seeds = n;
    }
    config.export_matrices |= export;
    config.output_dir = Some(dir.clone());
    config.validate().map_err(usage)?;
    let workers = resolve_workers(workers, config.workers)?;
    let hash = config_hash(&ExperimentConfig {
        output_dir: None,
        workers: None,
        export_matrices: false,
        ..config.clone()
    })?;
    let manifest = with_workers(workers, || run_experiment(&config, &dir, &hash, VERSION))??;
    eprintln!(
        "{} cells, {} failed; results in {}",
        manifest.cells.len(),
        manifest.failed_cells,
        dir.display()
    );
    for c in manifest.cells.iter().filter(|c| c.status != "ok") {
        eprintln!("cell C={} S={} seed={} failed: {}", c.num_classes, c.shots, c.seed_index, c.error.as_deref().unwrap_or(""));
    }
    Ok(if manifest.failed_cells > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn analytic(path: &Path, out: Option<PathBuf>, workers: Option<usize>) -> anyhow::Result<ExitCode> {
    let mut config: AnalyticConfig = read_config(path)?;
    let dir = output_dir(out, &config.output_dir)?;
    let hash = config_hash(&AnalyticConfig { output_dir: None, ..config.clone() })?;
    config.output_dir = Some(dir.clone());
    let workers = resolve_workers(workers, None)?;
    let manifest = with_workers(workers, || run_analytic(&config, &dir, &hash, VERSION))?.map_err(|e| match e {
        mialaw::Error::Configuration(_) | mialaw::Error::Domain(_) | mialaw::Error::InfeasibleOrthogonality { .. } => usage(e),
        other => other.into(),
    })?;
    eprintln!("wrote {} to {}", manifest.tables.join(", "), dir.display());
    Ok(ExitCode::SUCCESS)
}

fn load_records(source: &str) -> anyhow::Result<Vec<mialaw::VulnerabilityRecord>> {
    if let Some(name) = source.strip_prefix("bundled:") {
        return bundled(name).map_err(usage);
    }
    let file = File::open(source).with_context(|| format!("cannot open {source}")).map_err(usage)?;
    read_records(BufReader::new(file), RecordSource::Ingested).with_context(|| format!("reading {source}"))
}

#[derive(Serialize)]
struct FitReport {
    dataset: String,
    fit: mialaw::PowerLawFit,
    coefficients: Vec<CoefficientRow>,
    predict_on: Option<String>,
    test_r2: Option<f64>,
}

fn fit(dataset: &str, fpr: f64, form: ModelForm, predict_on: Option<String>, output: Option<PathBuf>) -> anyhow::Result<ExitCode> {
    if !(fpr > 0.0 && fpr < 1.0) {
        return Err(usage(anyhow!("--fpr must lie in (0, 1), got {fpr}")));
    }
    let records = load_records(dataset)?;
    let fit = fit_power_law(&records, fpr, form)?;
    let r2 = match &predict_on {
        Some(p) => Some(test_r2(&fit, &load_records(p)?)?),
        None => None,
    };
    let report = FitReport {
        dataset: dataset.to_string(),
        coefficients: report_rows(&fit, r2),
        fit,
        predict_on,
        test_r2: r2,
    };
    write_json(output.as_deref(), &report)?;
    Ok(ExitCode::SUCCESS)
}

fn ingest(scores: &Path, sidecar: &Path, output: &Path) -> anyhow::Result<ExitCode> {
    let side: MatrixSidecar = read_config(sidecar)?;
    let file = File::open(scores).with_context(|| format!("cannot open {}", scores.display())).map_err(usage)?;
    let matrix = read_score_csv(BufReader::new(file), side).with_context(|| format!("ingesting {}", scores.display()))?;
    let m = matrix.num_models();
    for x in 0..matrix.num_examples() {
        let ins = matrix.membership_row(x).iter().filter(|&&b| b).count();
        if ins * 2 != m {
            eprintln!("warning: example {x} is IN for {ins} of {m} models (unbalanced)");
        }
    }
    let mut w = BufWriter::new(File::create(output).with_context(|| format!("cannot write {}", output.display()))?);
    serde_json::to_writer(&mut w, &matrix)?;
    w.flush()?;
    eprintln!("{} examples x {} models -> {}", matrix.num_examples(), m, output.display());
    Ok(ExitCode::SUCCESS)
}

fn attack(args: AttackArgs) -> anyhow::Result<ExitCode> {
    let file = File::open(&args.matrix).with_context(|| format!("cannot open {}", args.matrix.display())).map_err(usage)?;
    let de = &mut serde_json::Deserializer::from_reader(BufReader::new(file));
    let mut matrix: ScoreMatrix = serde_path_to_error::deserialize(de)
        .map_err(|e| anyhow!("{}: invalid matrix at '{}': {}", args.matrix.display(), e.path(), e.inner()))?;
    if let Some(seed) = args.permute_seed {
        matrix = matrix.with_permuted_membership(seed);
    }
    let mut config = AttackConfig::new(args.attack);
    if let Some(v) = args.variance_mode {
        config.variance_mode = v;
    }
    if let Some(g) = args.gamma {
        config.rmia_gamma = g;
    }
    if let Some(z) = args.num_z {
        config.rmia_num_z = z;
    }
    if let Some(f) = args.sigma_floor {
        config.sigma_floor = f;
    }
    config.validate().map_err(usage)?;
    let loo = attack_leave_one_out(&matrix, &config, args.seed)?;
    let mut result = evaluate_leave_one_out(&matrix, &loo, &args.fprs).map_err(usage)?;
    result.thin_roc(args.roc_points);
    result.per_example_score = loo.scores.clone();
    if loo.sigma_clamped > 0 || loo.skipped_pairs > 0 || loo.without_reference > 0 {
        eprintln!(
            "note: {} standard deviations clamped, {} reference pairs skipped, {} cases without a reference",
            loo.sigma_clamped, loo.skipped_pairs, loo.without_reference
        );
    }
    #[derive(Serialize)]
    struct Report<'a> {
        config: &'a AttackConfig,
        seed: u64,
        permute_seed: Option<u64>,
        num_examples: usize,
        num_models: usize,
        sigma_clamped: u64,
        skipped_pairs: u64,
        without_reference: u64,
        result: &'a mialaw::AttackResult,
    }
    write_json(
        args.output.as_deref(),
        &Report {
            config: &config,
            seed: args.seed,
            permute_seed: args.permute_seed,
            num_examples: matrix.num_examples(),
            num_models: matrix.num_models(),
            sigma_clamped: loo.sigma_clamped,
            skipped_pairs: loo.skipped_pairs,
            without_reference: loo.without_reference,
            result: &result,
        },
    )?;
    Ok(ExitCode::SUCCESS)
}

fn read_table<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    rdr.deserialize().collect::<Result<_, _>>().with_context(|| format!("parsing {}", path.display()))
}

fn report(dir: &Path) -> anyhow::Result<ExitCode> {
    let text = fs::read_to_string(dir.join("manifest.json"))
        .with_context(|| format!("no manifest in {}", dir.display()))
        .map_err(usage)?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    let missing: Vec<&str> = manifest
        .cells
        .iter()
        .flat_map(|c| c.file.iter().chain(&c.matrix_files))
        .chain(&manifest.tables)
        .map(String::as_str)
        .filter(|f| !dir.join(f).exists())
        .collect();
    println!("run: {} (tool {}, config {})", manifest.command, manifest.tool_version, &manifest.config_hash[..12]);
    let seconds: f64 = manifest.cells.iter().map(|c| c.wall_clock_seconds).sum();
    println!("cells: {} ok, {} failed, {seconds:.1}s of cell time", manifest.cells.len() - manifest.failed_cells, manifest.failed_cells);
    if manifest.command == "simulate" {
        let summary: Vec<SummaryRow> = read_table(&dir.join("summary.csv"))?;
        println!("\n{:<6} {:>4} {:>6} {:>8} {:>10} {:>21} {:>10}", "attack", "C", "S", "fpr", "median_tpr", "seed CI envelope", "log10_gap");
        for r in &summary {
            println!(
                "{:<6} {:>4} {:>6} {:>8} {:>10.4} {:>10.4}-{:<10.4} {:>10}",
                r.attack.to_string(),
                r.num_classes,
                r.shots,
                r.fpr,
                r.median_tpr,
                r.ci_low_min,
                r.ci_high_max,
                r.log10_gap.map_or("-".into(), |g| format!("{g:.3}"))
            );
        }
        let slopes: Vec<SlopeRow> = read_table(&dir.join("slopes.csv"))?;
        println!("\n{:<6} {:>4} {:>8} {:>8} {:>6}", "attack", "C", "fpr", "slope", "points");
        for r in &slopes {
            println!(
                "{:<6} {:>4} {:>8} {:>8} {:>6}",
                r.attack.to_string(),
                r.num_classes,
                r.fpr,
                r.slope.map_or("-".into(), |s| format!("{s:.3}")),
                r.points_used
            );
        }
    } else {
        println!("tables: {}", manifest.tables.join(", "));
    }
    if !missing.is_empty() {
        bail!("manifest references missing files: {}", missing.join(", "));
    }
    Ok(if manifest.failed_cells > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Simulate { config, output_dir, seeds, workers, export_matrices } => {
            simulate(&config, output_dir, seeds, workers, export_matrices)
        }
        Command::Analytic { config, output_dir, workers } => analytic(&config, output_dir, workers),
        Command::Fit { dataset, fpr, form, predict_on, output } => fit(&dataset, fpr, form, predict_on, output),
        Command::Ingest { scores, sidecar, output } => ingest(&scores, &sidecar, &output),
        Command::Attack(args) => attack(args),
        Command::Report { run_dir } => report(&run_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() || matches!(e.downcast_ref::<mialaw::Error>(), Some(mialaw::Error::UnknownDataset { .. })) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
