//! Detector-level safeguards for a chosen threshold.
//!
//! With `i` the fraction of correct detections kept and `m` the fraction of
//! false detections removed, thresholding never hurts precision iff
//! `1 - i <= m`, and never hurts F1 iff `(1 - i)(|FD| + |CD| + |MD|) <= m |FD|`.
//! Recall can only go down. Removed CDs become missed detections, so the
//! label total `|CD| + |MD|` is conserved.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{CategorizedSet, CategoryCounts};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequirementReport {
    pub i: f64,
    pub m: f64,
    pub req_2a_pass: bool,
    pub req_2b_pass: bool,
    pub recall_pre: f64,
    pub recall_post: f64,
    pub precision_pre: f64,
    pub precision_post: f64,
    pub f1_pre: f64,
    pub f1_post: f64,
}

/// Fractions of CDs kept (`score <= delta`) and FDs removed (`score > delta`).
pub fn rates_after_threshold(categorized: &CategorizedSet, scores: &[f64], delta: f64) -> Result<(f64, f64)> {
    if scores.len() != categorized.per_detection.len() {
        return Err(Error::DimensionMismatch {
            expected: categorized.per_detection.len(),
            got: scores.len(),
        });
    }
    let (cd, fd) = categorized.split_scores(scores);
    if cd.is_empty() || fd.is_empty() {
        return Err(Error::DegenerateData(format!(
            "rates need at least one CD and one FD (τ = {}: {} CD, {} FD)",
            categorized.tau,
            cd.len(),
            fd.len()
        )));
    }
    let kept = cd.iter().filter(|&&s| s <= delta).count() as f64 / cd.len() as f64;
    let removed = fd.iter().filter(|&&s| s > delta).count() as f64 / fd.len() as f64;
    Ok((kept, removed))
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Evaluates both requirements and the before/after recall, precision and F1.
pub fn check_requirements(i: f64, m: f64, counts: CategoryCounts) -> RequirementReport {
    let cd = counts.cd as f64;
    let fd = counts.fd as f64;
    let md = counts.md as f64;

    let recall_pre = ratio(cd, cd + md);
    let precision_pre = ratio(cd, cd + fd);
    let f1_pre = ratio(cd, cd + 0.5 * fd + 0.5 * md);

    let kept = i * cd;
    let recall_post = ratio(kept, kept + md + (1.0 - i) * cd);
    let precision_post = ratio(kept, kept + (1.0 - m) * fd);
    let f1_post = ratio(kept, 0.5 * ((1.0 + i) * cd + (1.0 - m) * fd + md));

    RequirementReport {
        i,
        m,
        req_2a_pass: 1.0 - i <= m,
        req_2b_pass: (1.0 - i) * (fd + cd + md) <= m * fd,
        recall_pre,
        recall_post,
        precision_pre,
        precision_post,
        f1_pre,
        f1_post,
    }
}
