//! Log-log regression of membership-inference vulnerability on shots and
//! classes: log10(tpr - fpr) = beta_S log10 S + beta_C log10 C + beta_0.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ols_fit, OlsFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordSource {
    Bundled,
    Simulation,
    #[default]
    Ingested,
}

/// Median TPR at one FPR for one (dataset, C, S) configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilityRecord {
    #[serde(rename = "dataset")]
    pub dataset_name: String,
    #[serde(rename = "C")]
    pub num_classes: u32,
    #[serde(rename = "S")]
    pub shots: u32,
    pub fpr: f64,
    pub tpr: f64,
    #[serde(skip, default)]
    pub source: RecordSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelForm {
    /// Response log10(tpr - fpr).
    #[default]
    Gap,
    /// Response log10(tpr).
    TprOnly,
}

impl std::str::FromStr for ModelForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gap" => Ok(Self::Gap),
            "tpr-only" => Ok(Self::TprOnly),
            other => Err(Error::Configuration(format!("unknown model form '{other}' (expected gap or tpr-only)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub fpr: f64,
    pub model_form: ModelForm,
    pub beta_s: f64,
    /// Zero and excluded from the design when every record has the same C.
    pub beta_c: f64,
    pub beta_0: f64,
    pub classes_varied: bool,
    pub ols: OlsFit,
    pub n_used: usize,
    pub n_dropped: usize,
}

const BUNDLED: &[(&str, &str)] = &[
    ("vitb_head_shots", include_str!("../data/vitb_head_shots.csv")),
    ("r50_head_shots", include_str!("../data/r50_head_shots.csv")),
    ("vitb_head_classes", include_str!("../data/vitb_head_classes.csv")),
    ("r50_head_classes", include_str!("../data/r50_head_classes.csv")),
    ("film_scratch_comparison", include_str!("../data/film_scratch_comparison.csv")),
];

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|b| b.0).collect()
}

/// Median LiRA results shipped with the crate (per dataset, C, S, FPR).
pub fn bundled(name: &str) -> Result<Vec<VulnerabilityRecord>> {
    let name = name.strip_suffix(".csv").unwrap_or(name);
    let (_, text) = BUNDLED.iter().find(|b| b.0 == name).ok_or_else(|| Error::UnknownDataset {
        name: name.to_string(),
        available: bundled_names().join(", "),
    })?;
    read_records(text.as_bytes(), RecordSource::Bundled)
}

/// Parse `dataset,C,S,fpr,tpr` records.
pub fn read_records<R: Read>(reader: R, source: RecordSource) -> Result<Vec<VulnerabilityRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let mut r: VulnerabilityRecord =
            record.deserialize(Some(&headers)).map_err(|e| Error::Ingest { line, detail: e.to_string() })?;
        if !(r.fpr > 0.0 && r.fpr < 1.0) || !(0.0..=1.0).contains(&r.tpr) {
            return Err(Error::Ingest { line, detail: format!("fpr {} / tpr {} out of range", r.fpr, r.tpr) });
        }
        if r.num_classes == 0 || r.shots == 0 {
            return Err(Error::Ingest { line, detail: "C and S must be positive".into() });
        }
        r.source = source;
        out.push(r);
    }
    Ok(out)
}

fn same_fpr(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

fn response(form: ModelForm, tpr: f64, fpr: f64) -> Option<f64> {
    match form {
        ModelForm::Gap if tpr > fpr => Some((tpr - fpr).log10()),
        ModelForm::TprOnly if tpr > 0.0 => Some(tpr.log10()),
        _ => None,
    }
}

/// OLS fit on the records at `fpr`. Records whose response is undefined
/// (tpr <= fpr for the gap form) are dropped and counted.
pub fn fit_power_law(records: &[VulnerabilityRecord], fpr: f64, form: ModelForm) -> Result<PowerLawFit> {
    let at: Vec<&VulnerabilityRecord> = records.iter().filter(|r| same_fpr(r.fpr, fpr)).collect();
    let (used, dropped): (Vec<&VulnerabilityRecord>, Vec<&VulnerabilityRecord>) = at.into_iter().partition(|r| response(form, r.tpr, fpr).is_some());
    if used.len() < 4 {
        let names: Vec<String> = dropped
            .iter()
            .map(|r| format!("{} (C={}, S={}, tpr={})", r.dataset_name, r.num_classes, r.shots, r.tpr))
            .collect();
        return Err(Error::Fit(format!(
            "{} usable records at fpr={fpr} (need 4); dropped: [{}]",
            used.len(),
            names.join("; ")
        )));
    }
    let classes_varied = used.iter().any(|r| r.num_classes != used[0].num_classes);
    let design: Vec<Vec<f64>> = used
        .iter()
        .map(|r| {
            let mut row = vec![f64::from(r.shots).log10()];
            if classes_varied {
                row.push(f64::from(r.num_classes).log10());
            }
            row.push(1.0);
            row
        })
        .collect();
    let y: Vec<f64> = used.iter().map(|r| response(form, r.tpr, fpr).expect("filtered")).collect();
    let ols = ols_fit(&design, &y)?;
    let (beta_s, beta_c, beta_0) = if classes_varied {
        (ols.coefficients[0], ols.coefficients[1], ols.coefficients[2])
    } else {
        (ols.coefficients[0], 0.0, ols.coefficients[1])
    };
    Ok(PowerLawFit {
        fpr,
        model_form: form,
        beta_s,
        beta_c,
        beta_0,
        classes_varied,
        ols,
        n_used: used.len(),
        n_dropped: dropped.len(),
    })
}

impl PowerLawFit {
    /// Fitted response (log10 scale) at (C, S).
    pub fn linear_predictor(&self, num_classes: f64, shots: f64) -> f64 {
        self.beta_s * shots.log10() + self.beta_c * num_classes.log10() + self.beta_0
    }
}

/// Predicted TPR at the fit's FPR. The gap form never predicts below fpr.
pub fn predict(fit: &PowerLawFit, num_classes: f64, shots: f64) -> f64 {
    let v = 10f64.powf(fit.linear_predictor(num_classes, shots));
    match fit.model_form {
        ModelForm::Gap => (fit.fpr + v).clamp(fit.fpr, 1.0),
        ModelForm::TprOnly => v.clamp(0.0, 1.0),
    }
}

/// Out-of-sample R² of the fit's response on other records at the same FPR.
/// Unlike the in-sample value this can be negative.
pub fn test_r2(fit: &PowerLawFit, records: &[VulnerabilityRecord]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| same_fpr(r.fpr, fit.fpr))
        .filter_map(|r| {
            response(fit.model_form, r.tpr, fit.fpr)
                .map(|y| (y, fit.linear_predictor(f64::from(r.num_classes), f64::from(r.shots))))
        })
        .collect();
    if pts.len() < 2 {
        return Err(Error::Fit(format!("only {} usable test records at fpr={}", pts.len(), fit.fpr)));
    }
    let mean = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let ss_res: f64 = pts.iter().map(|(y, yh)| (y - yh).powi(2)).sum();
    let ss_tot: f64 = pts.iter().map(|(y, _)| (y - mean).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// One coefficient row of a fit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub coeff: String,
    pub fpr: f64,
    pub value: f64,
    pub std_error: f64,
    pub t: f64,
    pub p: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub r2: f64,
    pub test_r2: Option<f64>,
}

pub fn report_rows(fit: &PowerLawFit, test_r2: Option<f64>) -> Vec<CoefficientRow> {
    let names: &[&str] = if fit.classes_varied { &["beta_S", "beta_C", "beta_0"] } else { &["beta_S", "beta_0"] };
    names
        .iter()
        .enumerate()
        .map(|(i, n)| CoefficientRow {
            coeff: n.to_string(),
            fpr: fit.fpr,
            value: fit.ols.coefficients[i],
            std_error: fit.ols.standard_errors[i],
            t: fit.ols.t_values[i],
            p: fit.ols.p_values[i],
            ci_low: fit.ols.ci_low[i],
            ci_high: fit.ols.ci_high[i],
            r2: fit.ols.r_squared,
            test_r2,
        })
        .collect()
}
