use serde::{Deserialize, Serialize};

use super::{LooScores, ScoreMatrix};
use crate::error::{Error, Result};
use crate::stats::{clopper_pearson, ClopperPearsonInterval};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// Operating point chosen for one requested FPR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TprAtFpr {
    pub requested_fpr: f64,
    pub achieved_fpr: f64,
    pub tpr: f64,
    pub true_positives: u64,
    pub positives: u64,
    pub false_positives: u64,
    pub negatives: u64,
    /// Examples scoring strictly above this value are flagged as members;
    /// `None` means every example is flagged.
    pub threshold: Option<f64>,
    pub interval: ClopperPearsonInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_example_score: Vec<f64>,
    pub roc: Vec<RocPoint>,
    pub tpr_at: Vec<TprAtFpr>,
}

impl AttackResult {
    pub fn at(&self, fpr: f64) -> Option<&TprAtFpr> {
        self.tpr_at.iter().find(|t| t.requested_fpr == fpr)
    }

    /// Keep at most about `max_points` ROC points, spaced evenly in log FPR
    /// so the low-FPR region stays resolved. Endpoints are always kept.
    pub fn thin_roc(&mut self, max_points: usize) {
        if self.roc.len() <= max_points || max_points < 3 {
            return;
        }
        let first_positive = self.roc.iter().map(|p| p.fpr).find(|&f| f > 0.0).unwrap_or(1.0);
        let lo = first_positive.log10();
        let steps = max_points - 2;
        let mut kept = vec![self.roc[0]];
        let mut idx = 1;
        for k in 0..=steps {
            let grid = 10f64.powf(lo + (0.0 - lo) * k as f64 / steps as f64);
            let mut last = None;
            while idx < self.roc.len() && self.roc[idx].fpr <= grid {
                last = Some(self.roc[idx]);
                idx += 1;
            }
            if let Some(p) = last {
                kept.push(p);
            }
        }
        if kept.last() != self.roc.last() {
            kept.push(*self.roc.last().expect("nonempty"));
        }
        self.roc = kept;
    }
}

/// ROC curve (ties grouped) and TPR at each requested FPR. The operating point
/// for FPR f is the lowest threshold whose achieved FPR does not exceed f.
pub fn roc_and_tpr(scores: &[f64], is_member: &[bool], requested_fprs: &[f64]) -> Result<AttackResult> {
    let mut result = roc_core(scores, is_member, requested_fprs)?;
    result.per_example_score = scores.to_vec();
    Ok(result)
}

fn roc_core(scores: &[f64], is_member: &[bool], requested_fprs: &[f64]) -> Result<AttackResult> {
    if scores.len() != is_member.len() {
        return Err(Error::Evaluation(format!(
            "{} scores but {} membership labels",
            scores.len(),
            is_member.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Evaluation("NaN score".into()));
    }
    if let Some(f) = requested_fprs.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
        return Err(Error::Evaluation(format!("requested FPR {f} outside (0, 1)")));
    }
    let positives = is_member.iter().filter(|&&b| b).count() as u64;
    let negatives = is_member.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Evaluation(format!(
            "need both members and non-members, got {positives} and {negatives}"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // Cumulative counts after each tie group, with the group's score.
    let mut groups: Vec<(u64, u64, f64)> = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if is_member[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        groups.push((tp, fp, s));
    }

    let mut roc = Vec::with_capacity(groups.len() + 1);
    roc.push(RocPoint { fpr: 0.0, tpr: 0.0 });
    roc.extend(groups.iter().map(|&(tp, fp, _)| RocPoint {
        fpr: fp as f64 / negatives as f64,
        tpr: tp as f64 / positives as f64,
    }));

    let mut tpr_at = Vec::with_capacity(requested_fprs.len());
    for &f in requested_fprs {
        // Groups are in order of increasing fp, so binary search the last
        // group whose FPR is within budget.
        let k = groups.partition_point(|&(_, fp, _)| fp as f64 / negatives as f64 <= f);
        let (tp, fp, threshold) = if k == 0 {
            (0, 0, Some(groups[0].2))
        } else {
            let (tp, fp, _) = groups[k - 1];
            (tp, fp, groups.get(k).map(|g| g.2))
        };
        tpr_at.push(TprAtFpr {
            requested_fpr: f,
            achieved_fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
            true_positives: tp,
            positives,
            false_positives: fp,
            negatives,
            threshold,
            interval: clopper_pearson(tp, positives, 0.95)?,
        });
    }
    Ok(AttackResult { per_example_score: Vec::new(), roc, tpr_at })
}

/// Pool every (example, target) leave-one-out decision into one ROC.
/// Per-example scores are not retained.
pub fn evaluate_leave_one_out(matrix: &ScoreMatrix, loo: &LooScores, requested_fprs: &[f64]) -> Result<AttackResult> {
    if loo.num_examples != matrix.num_examples() || loo.num_models != matrix.num_models() {
        return Err(Error::Shape("leave-one-out scores do not match the matrix".into()));
    }
    let member: Vec<bool> = (0..matrix.num_examples())
        .flat_map(|x| matrix.membership_row(x).iter().copied())
        .collect();
    roc_core(&loo.scores, &member, requested_fprs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfectly_separated() {
        let scores = [0.9, 0.8, 0.7, 0.2, 0.1, 0.0];
        let member = [true, true, true, false, false, false];
        let r = roc_and_tpr(&scores, &member, &[0.1]).unwrap();
        assert_eq!(r.tpr_at[0].tpr, 1.0);
        assert_eq!(r.tpr_at[0].achieved_fpr, 0.0);
        assert_eq!(r.tpr_at[0].threshold, Some(0.2));
        assert_eq!(r.roc.first(), Some(&RocPoint { fpr: 0.0, tpr: 0.0 }));
        assert_eq!(r.roc.last(), Some(&RocPoint { fpr: 1.0, tpr: 1.0 }));
    }

    #[test]
    fn ties_are_grouped() {
        let scores = [1.0, 1.0, 1.0, 0.0];
        let member = [true, false, true, false];
        let r = roc_and_tpr(&scores, &member, &[0.4, 0.6]).unwrap();
        assert_eq!(r.roc.len(), 3);
        assert_eq!((r.tpr_at[0].tpr, r.tpr_at[0].achieved_fpr), (0.0, 0.0));
        assert_eq!((r.tpr_at[1].tpr, r.tpr_at[1].achieved_fpr), (1.0, 0.5));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(roc_and_tpr(&[0.1, 0.2], &[true, true], &[0.1]).is_err());
        assert!(roc_and_tpr(&[0.1, 0.2], &[true, false], &[1.0]).is_err());
        assert!(roc_and_tpr(&[0.1, f64::NAN], &[true, false], &[0.1]).is_err());
    }

    #[test]
    fn thinning_keeps_endpoints_and_shape() {
        let n = 5000;
        let scores: Vec<f64> = (0..n).map(|i| ((i * 7919) % n) as f64).collect();
        let member: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let mut r = roc_and_tpr(&scores, &member, &[0.01]).unwrap();
        let full = r.roc.clone();
        r.thin_roc(100);
        assert!(r.roc.len() <= 102);
        assert_eq!(r.roc[0], full[0]);
        assert_eq!(r.roc.last(), full.last());
        assert!(r.roc.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
    }
}
