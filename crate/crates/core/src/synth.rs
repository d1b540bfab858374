//! Synthetic detector outputs with controllable CD/FD uncertainty
//! distributions, plus the brute-force and closed-form oracles the test
//! suites check against.
//!
//! Every generated detection lives in its own image, so matching never has
//! to arbitrate between candidates unless duplicates are requested. CDs are
//! shifted copies of their label with IoU drawn from `cd_iou`; FDs cycle
//! through a wrong-class box on a label, a same-class box displaced below
//! IoU 0.5, and a box on an unlabeled image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::matching::Category;
use crate::model::{BoundingBox, Budget, Dataset, DetectionRecord, GroundTruthRecord, UseCase};
use crate::roc::{OperatingPoint, RATE_EPS};
use crate::uncertainty::{ChannelConfig, ClsChannel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Normal(location, scale) truncated to `[0, ∞)`.
    TruncatedNormal,
    /// exp(Normal(location, scale)).
    LogNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub family: Family,
    pub location: f64,
    pub scale: f64,
}

impl ScoreDistribution {
    pub fn truncated_normal(location: f64, scale: f64) -> Self {
        Self {
            family: Family::TruncatedNormal,
            location,
            scale,
        }
    }

    pub fn log_normal(location: f64, scale: f64) -> Self {
        Self {
            family: Family::LogNormal,
            location,
            scale,
        }
    }

    fn standard(&self) -> Normal {
        Normal::new(self.location, self.scale).expect("validated scale")
    }

    /// Probability mass the untruncated normal puts below zero.
    fn mass_below_zero(&self) -> f64 {
        self.standard().cdf(0.0)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self.family {
            Family::TruncatedNormal => {
                if x <= 0.0 {
                    return 0.0;
                }
                let lo = self.mass_below_zero();
                ((self.standard().cdf(x) - lo) / (1.0 - lo)).clamp(0.0, 1.0)
            }
            Family::LogNormal => {
                if x <= 0.0 {
                    0.0
                } else {
                    self.standard().cdf(x.ln())
                }
            }
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        match self.family {
            Family::TruncatedNormal => {
                let lo = self.mass_below_zero();
                self.standard().inverse_cdf(lo + p * (1.0 - lo)).max(0.0)
            }
            Family::LogNormal => self.standard().inverse_cdf(p).exp(),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self.family {
            Family::TruncatedNormal => {
                let u: f64 = rng.random();
                self.quantile(u)
            }
            Family::LogNormal => LogNormal::new(self.location, self.scale)
                .expect("validated scale")
                .sample(rng),
        }
    }

    fn shifted_toward(&self, other: &ScoreDistribution, separation: f64) -> ScoreDistribution {
        ScoreDistribution {
            location: other.location + separation * (self.location - other.location),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub cd: ScoreDistribution,
    pub fd: ScoreDistribution,
}

impl ChannelSpec {
    pub fn new(cd: ScoreDistribution, fd: ScoreDistribution) -> Self {
        Self { cd, fd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub n_cd: usize,
    pub n_fd: usize,
    /// One to three channels, mapped to the classification, aleatoric and epistemic localization inputs.
    pub channels: Vec<ChannelSpec>,
    /// Scales every FD location's offset from the CD location; 0 makes the populations identical.
    pub separation: f64,
    pub class_count: usize,
    pub seed: u64,
    /// IoU range of correct detections with their label.
    pub cd_iou: [f64; 2],
    /// Number of FDs generated as lower-confidence duplicates of a correct detection.
    pub duplicates: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            n_cd: 500,
            n_fd: 100,
            channels: vec![
                ChannelSpec::new(
                    ScoreDistribution::truncated_normal(1.0, 0.5),
                    ScoreDistribution::truncated_normal(2.0, 0.5),
                ),
                ChannelSpec::new(
                    ScoreDistribution::truncated_normal(1.0, 0.5),
                    ScoreDistribution::truncated_normal(1.5, 0.5),
                ),
            ],
            separation: 1.0,
            class_count: 3,
            seed: 0,
            cd_iou: [0.8, 0.95],
            duplicates: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InfeasibleScenario(msg));
        if self.n_cd == 0 || self.n_fd == 0 {
            return bad("n_cd and n_fd must be at least 1".into());
        }
        if self.channels.is_empty() || self.channels.len() > 3 {
            return bad(format!("{} channels requested, 1 to 3 supported", self.channels.len()));
        }
        for ch in &self.channels {
            for d in [ch.cd, ch.fd] {
                if !(d.scale > 0.0 && d.scale.is_finite() && d.location.is_finite()) {
                    return bad(format!("invalid distribution {d:?}"));
                }
            }
        }
        if self.class_count == 0 {
            return bad("class_count must be at least 1".into());
        }
        let [lo, hi] = self.cd_iou;
        if !(0.5..1.0).contains(&lo) || !(lo..1.0).contains(&hi) {
            return bad(format!(
                "CD IoU range [{lo}, {hi}] cannot guarantee a correct match at τ = 0.5"
            ));
        }
        if self.duplicates > self.n_fd || self.duplicates > self.n_cd {
            return bad("duplicates cannot exceed n_fd or n_cd".into());
        }
        if !self.separation.is_finite() {
            return bad("separation must be finite".into());
        }
        Ok(())
    }

    /// FD distribution of channel `k` after applying `separation`.
    pub fn fd_distribution(&self, k: usize) -> ScoreDistribution {
        let ch = &self.channels[k];
        ch.fd.shifted_toward(&ch.cd, self.separation)
    }

    /// Channel configuration that reads the generated channels back verbatim.
    pub fn channel_config(&self) -> ChannelConfig {
        ChannelConfig {
            cls: ClsChannel::MaxClass,
            aleatoric_loc: self.channels.len() >= 2,
            epistemic_loc: self.channels.len() >= 3,
            normalize: false,
        }
    }

    pub fn channel_names(&self) -> Vec<&'static str> {
        ["sigma_cls", "sigma_al_loc", "sigma_ep_loc"][..self.channels.len()].to_vec()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Generated channel values per detection.
    pub channels: Vec<Vec<f64>>,
    /// Intended category of each detection at τ = 0.5.
    pub truth: Vec<Category>,
}

impl SyntheticData {
    pub fn split_channel(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let mut cd = Vec::new();
        let mut fd = Vec::new();
        for (row, cat) in self.channels.iter().zip(&self.truth) {
            match cat {
                Category::Cd => cd.push(row[k]),
                Category::Fd => fd.push(row[k]),
            }
        }
        (cd, fd)
    }
}

fn random_box(rng: &mut impl Rng) -> BoundingBox {
    let x = rng.random_range(0.0..1000.0);
    let y = rng.random_range(0.0..600.0);
    let w = rng.random_range(30.0..200.0);
    let h = rng.random_range(30.0..200.0);
    BoundingBox::new(x, y, x + w, y + h)
}

/// Horizontal shift of a box giving exactly the requested IoU with the original.
fn shifted_to_iou(b: &BoundingBox, iou: f64) -> BoundingBox {
    let d = b.width() * (1.0 - iou) / (1.0 + iou);
    BoundingBox::new(b.x1 + d, b.y1, b.x2 + d, b.y2)
}

fn class_scores(class: usize, class_count: usize, confidence: f64) -> (Vec<f64>, f64) {
    if class_count == 1 {
        return (vec![1.0], 1.0);
    }
    let floor = 1.0 / class_count as f64 + 0.01;
    let p = confidence.max(floor).min(1.0);
    let rest = (1.0 - p) / (class_count - 1) as f64;
    let scores = (0..class_count).map(|l| if l == class { p } else { rest }).collect();
    (scores, p)
}

fn make_detection(
    rng: &mut impl Rng,
    image: i64,
    bbox: BoundingBox,
    class: usize,
    confidence: f64,
    values: &[f64],
    class_count: usize,
) -> DetectionRecord {
    let (scores, confidence) = class_scores(class, class_count, confidence);
    let v_cls = values[0];
    let sigma_ep_cls = (0..class_count)
        .map(|l| if l == class { v_cls } else { v_cls * rng.random::<f64>() })
        .collect();
    DetectionRecord {
        image_id: image.into(),
        bbox,
        class_id: class,
        confidence,
        class_scores: Some(scores),
        sigma_al_loc: [values.get(1).copied().unwrap_or(0.0); 4],
        sigma_ep_loc: values.get(2).map(|v| [*v; 4]),
        sigma_ep_cls: Some(sigma_ep_cls),
    }
}

/// Generates a dataset whose channel values follow the requested CD/FD distributions. Deterministic in `seed`.
pub fn generate(spec: &ScenarioSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.class_count;
    let dims = spec.channels.len();
    let fd_dists: Vec<ScoreDistribution> = (0..dims).map(|k| spec.fd_distribution(k)).collect();

    let mut detections = Vec::with_capacity(spec.n_cd + spec.n_fd);
    let mut ground_truths = Vec::with_capacity(spec.n_cd + spec.n_fd);
    let mut channels = Vec::with_capacity(spec.n_cd + spec.n_fd);
    let mut truth = Vec::with_capacity(spec.n_cd + spec.n_fd);
    let mut cd_boxes = Vec::with_capacity(spec.n_cd);

    for image in 0..spec.n_cd {
        let gt = random_box(&mut rng);
        let class = rng.random_range(0..c);
        let iou = rng.random_range(spec.cd_iou[0]..=spec.cd_iou[1]);
        let bbox = shifted_to_iou(&gt, iou);
        let values: Vec<f64> = spec.channels.iter().map(|ch| ch.cd.sample(&mut rng)).collect();
        let conf = rng.random_range(0.7..1.0);
        ground_truths.push(GroundTruthRecord::new(image as i64, gt, class));
        detections.push(make_detection(&mut rng, image as i64, bbox, class, conf, &values, c));
        cd_boxes.push((gt, class));
        channels.push(values);
        truth.push(Category::Cd);
    }

    let wrong_class_possible = c >= 2;
    for j in 0..spec.n_fd {
        let values: Vec<f64> = fd_dists.iter().map(|d| d.sample(&mut rng)).collect();
        let conf = rng.random_range(0.3..0.65);
        let image = (spec.n_cd + j) as i64;
        let det = if let Some(&(gt, class)) = cd_boxes[..spec.duplicates].get(j) {
            // second detection on an already-matched label, less confident than the CD there
            let bbox = shifted_to_iou(&gt, rng.random_range(0.6..0.9));
            make_detection(&mut rng, j as i64, bbox, class, conf, &values, c)
        } else {
            let kind = if wrong_class_possible { j % 3 } else { 1 + j % 2 };
            let gt = random_box(&mut rng);
            let class = rng.random_range(0..c);
            match kind {
                0 => {
                    let other = (class + rng.random_range(1..c)) % c;
                    ground_truths.push(GroundTruthRecord::new(image, gt, other));
                    let bbox = shifted_to_iou(&gt, rng.random_range(0.6..0.95));
                    make_detection(&mut rng, image, bbox, class, conf, &values, c)
                }
                1 => {
                    ground_truths.push(GroundTruthRecord::new(image, gt, class));
                    let bbox = shifted_to_iou(&gt, rng.random_range(0.05..0.4));
                    make_detection(&mut rng, image, bbox, class, conf, &values, c)
                }
                _ => make_detection(&mut rng, image, gt, class, conf, &values, c),
            }
        };
        detections.push(det);
        channels.push(values);
        truth.push(Category::Fd);
    }

    Ok(SyntheticData {
        dataset: Dataset::new(detections, ground_truths, c),
        channels,
        truth,
    })
}

/// Exhaustive threshold search: tries every observed score as δ, plus one below all scores.
///
/// Uses the same admissibility slack and tie-breaking (best rate, then the
/// other rate, then largest δ) as the ROC-based selector, but shares no code with it.
pub fn brute_force_threshold(scores: &[f64], labels: &[Category], budget: &Budget) -> Result<OperatingPoint> {
    let n_cd = labels.iter().filter(|l| **l == Category::Cd).count();
    let n_fd = labels.len() - n_cd;
    if n_cd == 0 || n_fd == 0 || scores.len() != labels.len() {
        return Err(Error::DegenerateRoc("brute force needs ≥1 CD and ≥1 FD".into()));
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.push(min - 1.0);

    let mut best: Option<(f64, f64, f64)> = None;
    for &delta in &candidates {
        let mut fp = 0usize;
        let mut tp = 0usize;
        for (s, l) in scores.iter().zip(labels) {
            if *s > delta {
                match l {
                    Category::Cd => fp += 1,
                    Category::Fd => tp += 1,
                }
            }
        }
        let fpr = fp as f64 / n_cd as f64;
        let tpr = tp as f64 / n_fd as f64;
        let feasible = match budget.use_case {
            UseCase::RetainCd => fpr <= 1.0 - budget.value + RATE_EPS,
            UseCase::RemoveFd => tpr >= budget.value - RATE_EPS,
        };
        if !feasible {
            continue;
        }
        let better = match best {
            None => true,
            Some((bd, bf, bt)) => match budget.use_case {
                UseCase::RetainCd => tpr > bt || (tpr == bt && (fpr < bf || (fpr == bf && delta > bd))),
                UseCase::RemoveFd => fpr < bf || (fpr == bf && (tpr > bt || (tpr == bt && delta > bd))),
            },
        };
        if better {
            best = Some((delta, fpr, tpr));
        }
    }
    let (delta, fpr, tpr) = best.expect("δ = max score or below the minimum is always admissible");
    Ok(OperatingPoint::from_rates(delta, fpr, tpr, *budget))
}

/// Population (FPR, TPR) at the budget-optimal threshold for channel 0 of a truncated-normal scenario.
pub fn closed_form_rates(spec: &ScenarioSpec, budget: &Budget) -> Result<(f64, f64)> {
    spec.validate()?;
    let cd = spec.channels[0].cd;
    let fd = spec.fd_distribution(0);
    if cd.family != Family::TruncatedNormal || fd.family != Family::TruncatedNormal {
        return Err(Error::Config("closed-form rates need the truncated-normal family".into()));
    }
    let b = budget.value;
    Ok(match budget.use_case {
        UseCase::RetainCd => {
            let delta = cd.quantile(b);
            (1.0 - b, 1.0 - fd.cdf(delta))
        }
        UseCase::RemoveFd => {
            let delta = fd.quantile(1.0 - b);
            (1.0 - cd.cdf(delta), b)
        }
    })
}
