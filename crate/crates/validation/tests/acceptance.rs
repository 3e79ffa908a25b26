//! Acceptance suite: one PASS/FAIL line per criterion. Runs as a plain binary
//! so the lines are always printed; exits nonzero if any criterion fails.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use mialaw::analytic::{
    lira_tpr_simplified, rmia_bound_per_example, sample_simplified_target, small_fpr_validation, SimplifiedZSampler,
};
use mialaw::attacks::{attack_leave_one_out, evaluate_leave_one_out, lira_scores_all, roc_and_tpr};
use mialaw::experiment::{run_cells, slopes, summarize, CellResult, ExperimentConfig, SweepConfig, WorldConfig};
use mialaw::lawfit::{bundled, fit_power_law, test_r2};
use mialaw::numerics::median;
use mialaw::rng::{derive_seed, stream};
use mialaw::simmodel::{generate_pool, simulate_score_matrix, stratified_masks, SimplifiedModelConfig};
use mialaw::stats::clopper_pearson;
use mialaw::{AttackConfig, AttackKind, ModelForm, ScoreMatrix, VarianceMode};

struct Outcome {
    pass: bool,
    detail: String,
}

fn line(id: usize, name: &str, started: Instant, out: &Outcome) {
    println!(
        "criterion {id} [{}] {name}: {} ({:.1}s)",
        if out.pass { "PASS" } else { "FAIL" },
        out.detail,
        started.elapsed().as_secs_f64()
    );
}

fn sweep_config() -> ExperimentConfig {
    ExperimentConfig {
        model: WorldConfig { dimension: 128, in_class_std: 0.1, pool_factor: 2, seed: 2024 },
        attacks: vec![
            AttackConfig::new(AttackKind::Lira),
            AttackConfig { rmia_num_z: 256, ..AttackConfig::new(AttackKind::Rmia) },
        ],
        num_models: 128,
        sweep: SweepConfig { shots: vec![16, 32, 64, 128, 256], classes: vec![10] },
        fprs: vec![0.1],
        num_seeds: 4,
        output_dir: None,
        workers: None,
        export_matrices: false,
        roc_points: 200,
    }
}

fn sweep_slope(cells: &[CellResult], attack: AttackKind) -> (Option<f64>, Vec<(usize, f64)>) {
    let sum = summarize(cells).expect("summary");
    let pts = sum.iter().filter(|r| r.attack == attack).map(|r| (r.shots, r.median_tpr - r.fpr)).collect();
    let s = slopes(&sum).into_iter().find(|r| r.attack == attack).and_then(|r| r.slope);
    (s, pts)
}

fn fmt_pts(pts: &[(usize, f64)]) -> String {
    pts.iter().map(|(s, g)| format!("S={s}:{g:.4}")).collect::<Vec<_>>().join(" ")
}

fn criterion_1(lira: (Option<f64>, Vec<(usize, f64)>)) -> Outcome {
    let (slope, pts) = lira;
    let pass = slope.is_some_and(|b| (-0.65..=-0.35).contains(&b));
    Outcome { pass, detail: format!("LiRA slope {slope:.3?} in [-0.65, -0.35]; median gaps {}", fmt_pts(&pts)) }
}

fn criterion_2() -> Outcome {
    let shots = bundled("vitb_head_shots").expect("bundled table");
    let r50 = bundled("r50_head_shots").expect("bundled table");
    let f3 = fit_power_law(&shots, 0.001, ModelForm::Gap).expect("fit");
    let f1 = fit_power_law(&shots, 0.1, ModelForm::Gap).expect("fit");
    let r2_test = test_r2(&f3, &r50).expect("test r2");
    let mut combined = shots.clone();
    combined.extend(bundled("vitb_head_classes").expect("bundled table"));
    let fc = fit_power_law(&combined, 0.001, ModelForm::Gap).expect("fit");
    let pass = (f3.beta_s + 0.627).abs() <= 0.05
        && (f3.beta_c - 0.300).abs() <= 0.08
        && f3.ols.r_squared >= 0.90
        && (f1.beta_s + 0.506).abs() <= 0.05
        && r2_test >= 0.70;
    Outcome {
        pass,
        detail: format!(
            "fpr=0.001 beta_S={:.3} beta_C={:.3} R2={:.3}; fpr=0.1 beta_S={:.3}; R-50 test R2={:.3} \
             [info: shots+classes tables pooled give beta_S={:.3} beta_C={:.3}]",
            f3.beta_s, f3.beta_c, f3.ols.r_squared, f1.beta_s, r2_test, fc.beta_s, fc.beta_c
        ),
    }
}

/// Scores of fixed targets under synthetic shadow models: each model's class
/// mean is the average of S draws from N(m_x, s² I), with x replacing one draw
/// for IN models. The sum of draws is drawn as a single Gaussian vector.
fn synthetic_shadow_matrix(targets: &[(Vec<f64>, Vec<f64>)], shots: usize, s: f64, models: usize, seed: u64) -> ScoreMatrix {
    let d = targets[0].0.len();
    let mut scores = Vec::with_capacity(targets.len() * models);
    let mut membership = Vec::with_capacity(targets.len() * models);
    for (i, (x, m)) in targets.iter().enumerate() {
        let mut rng = stream(seed, &[i as u64]);
        for j in 0..models {
            let is_in = j % 2 == 0;
            let n_draws = if is_in { shots - 1 } else { shots };
            let spread = s * (n_draws as f64).sqrt();
            let mut score = 0.0;
            for k in 0..d {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                let sum = n_draws as f64 * m[k] + spread * g + if is_in { x[k] } else { 0.0 };
                score += x[k] * sum / shots as f64;
            }
            scores.push(score);
            membership.push(is_in);
        }
    }
    ScoreMatrix::new(targets.len(), models, scores, membership, vec![0; targets.len()]).expect("valid matrix")
}

fn criterion_3() -> Outcome {
    let (d, s, c, m_models) = (100, 0.1, 2, 1024);
    let targets: Vec<(Vec<f64>, Vec<f64>)> = (0..10)
        .map(|i| {
            let (x, m, _, _) = sample_simplified_target(d, c, s, 900 + i).expect("target");
            (x, m)
        })
        .collect();
    let config = AttackConfig { variance_mode: VarianceMode::Shared, ..AttackConfig::new(AttackKind::Lira) };
    let (mut worst, mut checked, mut misses) = (0.0f64, 0, 0);
    for shots in [100, 1000] {
        let matrix = synthetic_shadow_matrix(&targets, shots, s, m_models, 77 + shots as u64);
        let loo = lira_scores_all(&matrix, &config).expect("lira");
        for (i, (x, m)) in targets.iter().enumerate() {
            let row: Vec<f64> = (0..m_models).map(|j| loo.score(i, j)).collect();
            let res = roc_and_tpr(&row, matrix.membership_row(i), &[0.1, 0.01]).expect("roc");
            for t in &res.tpr_at {
                let want = lira_tpr_simplified(x, m, shots, s, t.requested_fpr).expect("analytic").tpr;
                let hw = t.interval.half_width().max(1e-12);
                let z = (t.tpr - want).abs() / hw;
                worst = worst.max(z);
                checked += 1;
                if z > 3.0 {
                    misses += 1;
                }
            }
        }
    }
    Outcome {
        pass: misses == 0,
        detail: format!("{checked} comparisons, {misses} beyond 3 CP half-widths, worst {worst:.2} half-widths"),
    }
}

fn criterion_4() -> Outcome {
    let (c, s, d, models) = (2, 0.1, 50, 256);
    let attack = AttackConfig { rmia_num_z: 512, ..AttackConfig::new(AttackKind::Rmia) };
    let (mut checked, mut failures, mut flagged, mut worst) = (0, 0, 0, f64::NEG_INFINITY);
    for shots in [10usize, 100, 1000] {
        let cfg = SimplifiedModelConfig { num_classes: c, shots, dimension: d, in_class_std: s, pool_factor: 2, seed: 11 };
        let pool = generate_pool(&cfg).expect("pool");
        let masks = stratified_masks(&pool, shots, models, 12).expect("masks");
        let matrix = simulate_score_matrix(&pool, &masks).expect("matrix");
        let loo = attack_leave_one_out(&matrix, &attack, 13).expect("rmia");
        let n = matrix.num_examples();
        for (k, x_idx) in (0..6).map(|k| k * n / 6).enumerate() {
            let row: Vec<f64> = (0..models).map(|j| loo.score(x_idx, j)).collect();
            let cls = pool.labels[x_idx];
            for alpha in [0.2, 0.1] {
                let emp = roc_and_tpr(&row, matrix.membership_row(x_idx), &[alpha]).expect("roc").tpr_at[0].clone();
                let mut zs = SimplifiedZSampler::new(pool.true_means.clone(), c, cls, s, derive_seed(14, &[k as u64]));
                let bound = rmia_bound_per_example(pool.vector(x_idx), pool.true_mean(cls), c, shots, s, alpha, &mut zs, 20_000)
                    .expect("bound")
                    .vulnerability
                    .tpr;
                let excess = (emp.tpr - bound) / emp.interval.half_width().max(1e-12);
                checked += 1;
                if excess > 3.0 {
                    if shots <= 10 {
                        flagged += 1;
                    } else {
                        failures += 1;
                    }
                }
                if shots > 10 {
                    worst = worst.max(excess);
                }
            }
        }
    }
    Outcome {
        pass: failures == 0,
        detail: format!(
            "{checked} comparisons, {failures} exceed bound by > 3 CP half-widths, {flagged} flagged unstable at S=10, \
             worst excess at S>=100 {worst:.2} half-widths"
        ),
    }
}

fn criterion_5() -> Outcome {
    let rows = small_fpr_validation(&[10, 100, 1000, 10_000, 100_000], &[0.1, 1e-5], 100, 0.1, 5).expect("table");
    let ratio = |s: usize, f: f64| rows.iter().find(|r| r.shots == s && r.fpr == f).expect("row").ratio;
    let (small, large) = (ratio(10, 1e-5), ratio(10_000, 0.1));
    Outcome {
        pass: small <= 1.0 && large >= 0.98,
        detail: format!(
            "ratio at S=10, fpr=1e-5: {small:.4} (<= 1); ratio at S=1e4, fpr=0.1: {large:.4} (>= 0.98); \
             [info: ratio at S=1e5, fpr=0.1: {:.4}]",
            ratio(100_000, 0.1)
        ),
    }
}

fn criterion_6() -> Outcome {
    let mut worst = 1.0f64;
    let mut cells = Vec::new();
    for (i, &p) in [0.001, 0.05, 0.5].iter().enumerate() {
        for (j, &n) in [100u64, 10_000].iter().enumerate() {
            let mut rng = stream(606, &[i as u64, j as u64]);
            let dist = Binomial::new(n, p).expect("binomial");
            let mut cache: HashMap<u64, bool> = HashMap::new();
            let mut covered = 0;
            for _ in 0..10_000 {
                let k = dist.sample(&mut rng);
                let hit = *cache.entry(k).or_insert_with(|| clopper_pearson(k, n, 0.95).expect("cp").contains(p));
                covered += hit as u32;
            }
            let cov = covered as f64 / 10_000.0;
            worst = worst.min(cov);
            cells.push(format!("p={p},n={n}:{cov:.4}"));
        }
    }
    Outcome { pass: worst >= 0.93, detail: format!("min coverage {worst:.4} (>= 0.93); {}", cells.join(" ")) }
}

fn criterion_7() -> Outcome {
    let cfg = SimplifiedModelConfig { num_classes: 10, shots: 16, dimension: 128, in_class_std: 0.1, pool_factor: 2, seed: 70 };
    let pool = generate_pool(&cfg).expect("pool");
    let masks = stratified_masks(&pool, 16, 64, 71).expect("masks");
    let matrix = simulate_score_matrix(&pool, &masks).expect("matrix");
    let fpr = 0.1;
    let mut pass = true;
    let mut parts = Vec::new();
    for attack in [AttackConfig::new(AttackKind::Lira), AttackConfig { rmia_num_z: 320, ..AttackConfig::new(AttackKind::Rmia) }] {
        let (mut tprs, mut achieved, mut positives) = (vec![], vec![], 0);
        for k in 0..20 {
            let permuted = matrix.with_permuted_membership(derive_seed(72, &[k]));
            let loo = attack_leave_one_out(&permuted, &attack, 73 + k).expect("attack");
            let r = evaluate_leave_one_out(&permuted, &loo, &[fpr]).expect("roc");
            tprs.push(r.tpr_at[0].tpr);
            achieved.push(r.tpr_at[0].achieved_fpr);
            positives = r.tpr_at[0].positives;
        }
        let med = median(&tprs).expect("median");
        let target = median(&achieved).expect("median");
        let ci = clopper_pearson((target * positives as f64).round() as u64, positives, 0.95).expect("cp");
        let ok = ci.contains(med);
        pass &= ok;
        parts.push(format!(
            "{}: median TPR {med:.4}, achieved FPR {target:.4}, CP [{:.4}, {:.4}] {}",
            attack.attack,
            ci.low,
            ci.high,
            if ok { "ok" } else { "outside" }
        ));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn criterion_8(lira: Option<f64>, rmia: (Option<f64>, Vec<(usize, f64)>)) -> Outcome {
    let (rs, pts) = rmia;
    let pass = matches!((lira, rs), (Some(a), Some(b)) if (a - b).abs() <= 0.2);
    Outcome {
        pass,
        detail: format!("RMIA slope {rs:.3?} vs LiRA slope {lira:.3?} (within 0.2); RMIA median gaps {}", fmt_pts(&pts)),
    }
}

fn main() -> ExitCode {
    let mut all = true;
    let mut record = |id, name, started, out: Outcome| {
        line(id, name, started, &out);
        all &= out.pass;
    };

    let t = Instant::now();
    let cfg = sweep_config();
    let cells: Vec<CellResult> = run_cells(&cfg).into_iter().map(|c| c.3.expect("cell")).collect();
    let lira = sweep_slope(&cells, AttackKind::Lira);
    let rmia = sweep_slope(&cells, AttackKind::Rmia);
    let lira_slope = lira.0;
    record(1, "power-law slope of simulated LiRA", t, criterion_1(lira));

    let t = Instant::now();
    record(2, "regression on bundled fine-tuning medians", t, criterion_2());
    let t = Instant::now();
    record(3, "closed-form LiRA TPR vs synthetic shadow models", t, criterion_3());
    let t = Instant::now();
    record(4, "RMIA upper bound vs empirical RMIA", t, criterion_4());
    let t = Instant::now();
    record(5, "large-S approximation ratio", t, criterion_5());
    let t = Instant::now();
    record(6, "Clopper-Pearson coverage", t, criterion_6());
    let t = Instant::now();
    record(7, "no signal under permuted membership", t, criterion_7());
    let t = Instant::now();
    record(8, "RMIA and LiRA slopes agree", t, criterion_8(lira_slope, rmia));

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
