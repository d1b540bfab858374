//! ROC construction over uncertainty scores, budget-optimal threshold
//! selection, and separation/thresholding metrics.
//!
//! False detections are the positive class: a detection is removed iff its
//! score is strictly greater than the threshold, so FPR is the fraction of
//! correct detections removed and TPR the fraction of false ones removed.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Budget, UseCase};

/// Slack applied to budget comparisons on rates, absorbing representation error in `1 - b`.
pub const RATE_EPS: f64 = 1e-12;

/// Default histogram resolution for [`jsd`].
pub const DEFAULT_JSD_BINS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub delta: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC sweep ordered by descending threshold, i.e. ascending rates.
///
/// The first point sits above every score (0, 0) and the last below every score (1, 1).
/// Interior thresholds are midpoints between consecutive distinct scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub n_cd: usize,
    pub n_fd: usize,
}

fn sentinel_pad(x: f64) -> f64 {
    x.abs().max(1.0)
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    // adjacent floats: never let the threshold reach the upper score
    if mid >= hi {
        lo
    } else {
        mid
    }
}

/// Builds the ROC curve of CD scores (negatives) against FD scores (positives).
pub fn build_roc(scores_cd: &[f64], scores_fd: &[f64]) -> Result<RocCurve> {
    if scores_cd.is_empty() || scores_fd.is_empty() {
        return Err(Error::DegenerateRoc(format!(
            "need at least one CD and one FD score, got {} and {}",
            scores_cd.len(),
            scores_fd.len()
        )));
    }
    if scores_cd.iter().chain(scores_fd).any(|s| !s.is_finite()) {
        return Err(Error::DegenerateRoc("non-finite score".into()));
    }

    let mut pooled: Vec<(f64, bool)> = scores_cd
        .iter()
        .map(|&s| (s, false))
        .chain(scores_fd.iter().map(|&s| (s, true)))
        .collect();
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0));

    let n_cd = scores_cd.len();
    let n_fd = scores_fd.len();
    let (ncd, nfd) = (n_cd as f64, n_fd as f64);

    let max = pooled[0].0;
    let min = pooled[pooled.len() - 1].0;
    let mut points = vec![RocPoint {
        delta: max + sentinel_pad(max),
        fpr: 0.0,
        tpr: 0.0,
    }];

    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < pooled.len() {
        let score = pooled[i].0;
        while i < pooled.len() && pooled[i].0 == score {
            if pooled[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let delta = if i < pooled.len() {
            midpoint(pooled[i].0, score)
        } else {
            min - sentinel_pad(min)
        };
        points.push(RocPoint {
            delta,
            fpr: fp as f64 / ncd,
            tpr: tp as f64 / nfd,
        });
    }

    Ok(RocCurve { points, n_cd, n_fd })
}

impl RocCurve {
    /// Writes the sweep as CSV with header `delta,fpr,tpr`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "delta,fpr,tpr")?;
        for p in &self.points {
            writeln!(out, "{},{},{}", p.delta, p.fpr, p.tpr)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub delta: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub fnr: f64,
    pub tnr: f64,
    pub tau: Option<f64>,
    pub budget: Budget,
}

impl OperatingPoint {
    pub fn from_rates(delta: f64, fpr: f64, tpr: f64, budget: Budget) -> Self {
        Self {
            delta,
            fpr,
            tpr,
            fnr: 1.0 - tpr,
            tnr: 1.0 - fpr,
            tau: None,
            budget,
        }
    }

    pub fn at_tau(mut self, tau: f64) -> Self {
        self.tau = Some(tau);
        self
    }

    /// Per-step optimization loss: FNR when retaining CDs, FPR when removing FDs.
    pub fn step_loss(&self) -> f64 {
        match self.budget.use_case {
            UseCase::RetainCd => self.fnr,
            UseCase::RemoveFd => self.fpr,
        }
    }

    /// TPR when retaining CDs (FD@CD), TNR when removing FDs (CD@FD).
    pub fn metric(&self) -> f64 {
        match self.budget.use_case {
            UseCase::RetainCd => self.tpr,
            UseCase::RemoveFd => self.tnr,
        }
    }
}

/// Is `p` admissible under the budget?
pub fn satisfies_budget(fpr: f64, tpr: f64, budget: &Budget) -> bool {
    match budget.use_case {
        UseCase::RetainCd => fpr <= (1.0 - budget.value) + RATE_EPS,
        UseCase::RemoveFd => tpr >= budget.value - RATE_EPS,
    }
}

/// Ordering used to pick among admissible points: `true` if `a` is strictly preferred to `b`.
///
/// RetainCD: higher TPR, then lower FPR, then larger δ.
/// RemoveFD: lower FPR, then higher TPR, then larger δ.
pub fn is_preferred(a: &RocPoint, b: &RocPoint, use_case: UseCase) -> bool {
    let key = |p: &RocPoint| match use_case {
        UseCase::RetainCd => (p.tpr, -p.fpr, p.delta),
        UseCase::RemoveFd => (-p.fpr, p.tpr, p.delta),
    };
    let (ka, kb) = (key(a), key(b));
    ka.0.total_cmp(&kb.0)
        .then(ka.1.total_cmp(&kb.1))
        .then(ka.2.total_cmp(&kb.2))
        .is_gt()
}

/// Budget-optimal operating point on the curve.
pub fn select_threshold(roc: &RocCurve, budget: &Budget) -> OperatingPoint {
    let mut best: Option<&RocPoint> = None;
    for p in roc.points.iter().filter(|p| satisfies_budget(p.fpr, p.tpr, budget)) {
        if best.is_none_or(|b| is_preferred(p, b, budget.use_case)) {
            best = Some(p);
        }
    }
    // The (0,0) and (1,1) sentinels make both feasible sets non-empty.
    let p = best.expect("ROC sentinels guarantee a feasible point");
    OperatingPoint::from_rates(p.delta, p.fpr, p.tpr, *budget)
}

/// Trapezoidal area under the curve; ties contribute half.
pub fn auc(roc: &RocCurve) -> f64 {
    roc.points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Jensen-Shannon divergence (base 2) between two normalized histograms.
pub fn jsd_histograms(p: &[f64], q: &[f64]) -> f64 {
    fn kl_to_mix(a: &[f64], m: &[f64]) -> f64 {
        a.iter()
            .zip(m)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (x / y).log2())
            .sum()
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl_to_mix(p, &m) + 0.5 * kl_to_mix(q, &m)).clamp(0.0, 1.0)
}

/// Normalized histogram over `bins` equal-width bins spanning `[lo, hi]`, last bin closed.
pub fn histogram(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    for &s in samples {
        let k = if width > 0.0 {
            (((s - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[k] += 1.0;
    }
    let n = samples.len() as f64;
    counts.iter_mut().for_each(|c| *c /= n);
    counts
}

/// JSD between the CD and FD score distributions on a shared binning over the pooled range.
pub fn jsd(scores_cd: &[f64], scores_fd: &[f64], bins: usize) -> Result<f64> {
    if scores_cd.is_empty() || scores_fd.is_empty() {
        return Err(Error::EmptyInput("jsd needs non-empty samples"));
    }
    if bins < 2 {
        return Err(Error::Config(format!("jsd bin count {bins} < 2")));
    }
    let (lo, hi) = scores_cd
        .iter()
        .chain(scores_fd)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let p = histogram(scores_cd, lo, hi, bins);
    let q = histogram(scores_fd, lo, hi, bins);
    Ok(jsd_histograms(&p, &q))
}

/// Balanced accuracy `(TPR + TNR) / 2`.
pub fn bacc(op: &OperatingPoint) -> f64 {
    (op.tpr + op.tnr) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauDetail {
    pub tau: Option<f64>,
    pub delta: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub fnr: f64,
    pub tnr: f64,
    pub bacc: f64,
    pub auc: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdingMetrics {
    pub use_case: UseCase,
    /// `"fd_at_cd"` or `"cd_at_fd"`.
    pub metric_name: String,
    /// Mean over τ of TPR (RetainCD) or TNR (RemoveFD) at the selected points.
    pub metric: f64,
    pub bacc_mean: f64,
    pub per_tau: Vec<TauDetail>,
}

/// Aggregates per-τ operating points into FD@CD(b) / CD@FD(b) and mean BAcc.
pub fn thresholding_metrics(per_tau: &[(RocCurve, OperatingPoint)], budget: &Budget) -> Result<ThresholdingMetrics> {
    if per_tau.is_empty() {
        return Err(Error::EmptyInput("thresholding metrics need at least one τ"));
    }
    let details: Vec<TauDetail> = per_tau
        .iter()
        .map(|(roc, op)| TauDetail {
            tau: op.tau,
            delta: op.delta,
            fpr: op.fpr,
            tpr: op.tpr,
            fnr: op.fnr,
            tnr: op.tnr,
            bacc: bacc(op),
            auc: auc(roc),
            metric: op.metric(),
        })
        .collect();
    let n = details.len() as f64;
    Ok(ThresholdingMetrics {
        use_case: budget.use_case,
        metric_name: budget.use_case.metric_name().to_owned(),
        metric: details.iter().map(|d| d.metric).sum::<f64>() / n,
        bacc_mean: details.iter().map(|d| d.bacc).sum::<f64>() / n,
        per_tau: details,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CD: [f64; 3] = [0.1, 0.2, 0.3];
    const FD: [f64; 2] = [0.25, 0.4];

    fn rates_at(roc: &RocCurve, delta: f64) -> (f64, f64) {
        let p = roc.points.iter().find(|p| (p.delta - delta).abs() < 1e-12).unwrap();
        (p.fpr, p.tpr)
    }

    #[test]
    fn worked_curve() {
        let roc = build_roc(&CD, &FD).unwrap();
        assert_eq!(rates_at(&roc, 0.35), (0.0, 0.5));
        let (fpr, tpr) = rates_at(&roc, 0.225);
        assert!((fpr - 1.0 / 3.0).abs() < 1e-12 && tpr == 1.0);
        assert_eq!(roc.points.first().map(|p| (p.fpr, p.tpr)), Some((0.0, 0.0)));
        assert_eq!(roc.points.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
        assert!(roc.points.windows(2).all(|w| w[0].delta > w[1].delta
            && w[0].fpr <= w[1].fpr
            && w[0].tpr <= w[1].tpr));
    }

    #[test]
    fn separated_curve_has_perfect_point() {
        let roc = build_roc(&[0.1], &[0.9]).unwrap();
        assert!(roc.points.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
    }

    #[test]
    fn tied_scores_collapse() {
        let roc = build_roc(&[0.3, 0.3], &[0.3]).unwrap();
        let rates: Vec<_> = roc.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(rates, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(build_roc(&[], &[0.1]), Err(Error::DegenerateRoc(_))));
        assert!(build_roc(&[0.1], &[]).is_err());
        assert!(build_roc(&[f64::NAN], &[0.1]).is_err());
    }

    #[test]
    fn sentinels_bracket_extreme_scores() {
        let roc = build_roc(&[1e20], &[1e20]).unwrap();
        assert!(roc.points[0].delta > 1e20);
        assert!(roc.points[1].delta < 1e20);
    }

    #[test]
    fn select_retain_cd() {
        let roc = build_roc(&CD, &FD).unwrap();
        let op = select_threshold(&roc, &Budget::retain_cd(0.95).unwrap());
        assert_eq!((op.delta, op.fpr, op.tpr), (0.35, 0.0, 0.5));
        assert_eq!(op.fnr, 0.5);
        assert_eq!(op.tnr, 1.0);
    }

    #[test]
    fn select_remove_fd() {
        let roc = build_roc(&CD, &FD).unwrap();
        let op = select_threshold(&roc, &Budget::remove_fd(0.5).unwrap());
        assert_eq!((op.delta, op.fpr, op.tpr), (0.35, 0.0, 0.5));

        let op = select_threshold(&roc, &Budget::remove_fd(1.0 - 1e-9).unwrap());
        assert_eq!(op.delta, 0.225);
        assert_eq!(op.tpr, 1.0);
        assert!((op.fpr - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn budget_boundary_is_admissible_despite_rounding() {
        // 1 - 0.9 is slightly below 0.1 in binary; FPR exactly 2/20 must still be admissible.
        let cd: Vec<f64> = (0..20).map(f64::from).collect();
        let fd = vec![17.5, 18.5, 30.0];
        let roc = build_roc(&cd, &fd).unwrap();
        let op = select_threshold(&roc, &Budget::retain_cd(0.9).unwrap());
        assert_eq!(op.fpr, 0.1);
        assert_eq!(op.tpr, 1.0);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&build_roc(&[0.1, 0.2], &[0.8, 0.9]).unwrap()), 1.0);
        assert_eq!(auc(&build_roc(&[0.5, 0.5], &[0.5]).unwrap()), 0.5);
        assert!((auc(&build_roc(&CD, &FD).unwrap()) - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn jsd_examples() {
        let a = [0.1, 0.5, 0.9];
        assert_eq!(jsd(&a, &a, 100).unwrap(), 0.0);
        assert!((jsd(&[0.0, 0.1], &[0.9, 1.0], 10).unwrap() - 1.0).abs() < 1e-12);
        assert!((jsd_histograms(&[1.0, 0.0], &[0.5, 0.5]) - 0.311278).abs() < 1e-6);
        // same histograms via samples on a 2-bin grid
        let v = jsd(&[0.0, 0.0], &[0.0, 1.0], 2).unwrap();
        assert!((v - 0.311278).abs() < 1e-6);
        assert!(jsd(&a, &a, 1).is_err());
    }

    #[test]
    fn bacc_examples() {
        let b = Budget::retain_cd(0.9).unwrap();
        assert_eq!(bacc(&OperatingPoint::from_rates(0.0, 0.0, 0.5, b)), 0.75);
        assert_eq!(bacc(&OperatingPoint::from_rates(0.0, 0.0, 1.0, b)), 1.0);
        assert_eq!(bacc(&OperatingPoint::from_rates(0.0, 0.5, 0.5, b)), 0.5);
    }

    #[test]
    fn single_tau_metric() {
        let roc = build_roc(&CD, &FD).unwrap();
        let budget = Budget::retain_cd(0.95).unwrap();
        let op = select_threshold(&roc, &budget).at_tau(0.5);
        let m = thresholding_metrics(&[(roc, op)], &budget).unwrap();
        assert_eq!(m.metric, 0.5);
        assert_eq!(m.metric_name, "fd_at_cd");
        assert_eq!(m.bacc_mean, 0.75);
    }

    #[test]
    fn perfect_separation_metric_is_one() {
        for budget in [Budget::retain_cd(0.99).unwrap(), Budget::remove_fd(0.99).unwrap()] {
            let per_tau: Vec<_> = (0..3)
                .map(|_| {
                    let roc = build_roc(&[0.1, 0.2], &[0.7, 0.8]).unwrap();
                    let op = select_threshold(&roc, &budget);
                    (roc, op)
                })
                .collect();
            assert_eq!(thresholding_metrics(&per_tau, &budget).unwrap().metric, 1.0);
        }
    }

    #[test]
    fn csv_export() {
        let roc = build_roc(&[0.1], &[0.9]).unwrap();
        let mut buf = Vec::new();
        roc.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("delta,fpr,tpr\n"));
        assert_eq!(text.lines().count(), 1 + roc.points.len());
    }
}
