//! Shared data model: boxes, detector outputs, labels, budgets and IoU threshold sets.
//!
//! Everything here is a plain value type. Construction helpers check the
//! invariants that are cheap to check; [`validate_dataset`] reports every
//! violation in a loaded dataset without aborting.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on probability-vector sums and the confidence/max-score agreement.
pub const PROB_TOLERANCE: f64 = 1e-6;

/// Axis-aligned box in corner form, pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Converts a COCO-style `[x, y, width, height]` box.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new(x, y, x + w, y + h)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_finite(&self) -> bool {
        self.coords().iter().all(|c| c.is_finite())
    }

    pub fn is_valid(&self) -> bool {
        self.is_finite() && self.x2 > self.x1 && self.y2 > self.y1
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl From<[f64; 4]> for BoundingBox {
    fn from(c: [f64; 4]) -> Self {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.coords()
    }
}

/// Opaque image identifier; files may use integers or strings.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageId {
    Num(i64),
    Text(String),
}

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageId::Num(n) => write!(f, "{n}"),
            ImageId::Text(s) => f.write_str(s),
        }
    }
}

impl From<i64> for ImageId {
    fn from(n: i64) -> Self {
        ImageId::Num(n)
    }
}

impl From<&str> for ImageId {
    fn from(s: &str) -> Self {
        ImageId::Text(s.to_owned())
    }
}

/// One post-NMS detection together with the uncertainties the detector produced for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: ImageId,
    pub bbox: BoundingBox,
    pub class_id: usize,
    pub confidence: f64,
    /// Per-class probabilities; logits are converted at load time.
    pub class_scores: Option<Vec<f64>>,
    /// Aleatoric localization uncertainty per corner coordinate (x1, y1, x2, y2), pixels.
    pub sigma_al_loc: [f64; 4],
    pub sigma_ep_loc: Option<[f64; 4]>,
    pub sigma_ep_cls: Option<Vec<f64>>,
}

impl DetectionRecord {
    /// A detection with only a box, a class and a confidence; uncertainties zeroed.
    pub fn new(image_id: impl Into<ImageId>, bbox: BoundingBox, class_id: usize, confidence: f64) -> Self {
        Self {
            image_id: image_id.into(),
            bbox,
            class_id,
            confidence,
            class_scores: None,
            sigma_al_loc: [0.0; 4],
            sigma_ep_loc: None,
            sigma_ep_cls: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub image_id: ImageId,
    pub bbox: BoundingBox,
    pub class_id: usize,
}

impl GroundTruthRecord {
    pub fn new(image_id: impl Into<ImageId>, bbox: BoundingBox, class_id: usize) -> Self {
        Self {
            image_id: image_id.into(),
            bbox,
            class_id,
        }
    }
}

/// Detections and labels of one split. Images may appear in only one of the two lists.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub detections: Vec<DetectionRecord>,
    pub ground_truths: Vec<GroundTruthRecord>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(
        detections: Vec<DetectionRecord>,
        ground_truths: Vec<GroundTruthRecord>,
        class_count: usize,
    ) -> Self {
        Self {
            detections,
            ground_truths,
            class_count,
        }
    }

    /// Smallest class count consistent with every record in the lists.
    pub fn infer_class_count(detections: &[DetectionRecord], ground_truths: &[GroundTruthRecord]) -> usize {
        let from_ids = detections
            .iter()
            .map(|d| d.class_id + 1)
            .chain(ground_truths.iter().map(|g| g.class_id + 1))
            .max()
            .unwrap_or(0);
        let from_vectors = detections
            .iter()
            .flat_map(|d| {
                [
                    d.class_scores.as_ref().map(Vec::len),
                    d.sigma_ep_cls.as_ref().map(Vec::len),
                ]
            })
            .flatten()
            .max()
            .unwrap_or(0);
        from_ids.max(from_vectors)
    }
}

/// Which error source the budget bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UseCase {
    /// `b = i`: retain at least a fraction `b` of correct detections.
    RetainCd,
    /// `b = m`: remove at least a fraction `b` of false detections.
    RemoveFd,
}

impl UseCase {
    /// Name of the thresholding metric reported for this use case.
    pub fn metric_name(self) -> &'static str {
        match self {
            UseCase::RetainCd => "fd_at_cd",
            UseCase::RemoveFd => "cd_at_fd",
        }
    }
}

impl fmt::Display for UseCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UseCase::RetainCd => "retain_cd",
            UseCase::RemoveFd => "remove_fd",
        })
    }
}

impl std::str::FromStr for UseCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "retain_cd" | "retaincd" | "i" => Ok(UseCase::RetainCd),
            "remove_fd" | "removefd" | "m" => Ok(UseCase::RemoveFd),
            other => Err(Error::Config(format!("unknown use case {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBudget")]
pub struct Budget {
    pub value: f64,
    pub use_case: UseCase,
}

#[derive(Deserialize)]
struct RawBudget {
    value: f64,
    use_case: UseCase,
}

impl TryFrom<RawBudget> for Budget {
    type Error = Error;

    fn try_from(raw: RawBudget) -> Result<Self> {
        Budget::new(raw.value, raw.use_case)
    }
}

impl Budget {
    /// Budgets must lie in the open interval (0, 1).
    pub fn new(value: f64, use_case: UseCase) -> Result<Self> {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::InvalidBudget(value));
        }
        Ok(Self { value, use_case })
    }

    pub fn retain_cd(value: f64) -> Result<Self> {
        Self::new(value, UseCase::RetainCd)
    }

    pub fn remove_fd(value: f64) -> Result<Self> {
        Self::new(value, UseCase::RemoveFd)
    }
}

/// Ordered set of IoU thresholds at which detections are categorized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TauSet(Vec<f64>);

pub const DEFAULT_TAUS: [f64; 6] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75];

impl TauSet {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::InvalidTaus("empty set".into()));
        }
        if let Some(t) = taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::InvalidTaus(format!("{t} outside (0, 1)")));
        }
        if taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidTaus("not strictly increasing".into()));
        }
        Ok(Self(taus))
    }

    pub fn single(tau: f64) -> Result<Self> {
        Self::new(vec![tau])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().copied()
    }
}

impl Default for TauSet {
    fn default() -> Self {
        Self(DEFAULT_TAUS.to_vec())
    }
}

impl TryFrom<Vec<f64>> for TauSet {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TauSet> for Vec<f64> {
    fn from(t: TauSet) -> Self {
        t.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Detection,
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: RecordKind,
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: RecordKind, index: usize, message: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            index,
            message: message.into(),
        });
    }
}

fn box_problem(b: &BoundingBox) -> Option<&'static str> {
    if !b.is_finite() {
        Some("non-finite box coordinate")
    } else if b.x2 <= b.x1 || b.y2 <= b.y1 {
        Some("degenerate box")
    } else {
        None
    }
}

fn sigma_problem(values: &[f64]) -> bool {
    values.iter().any(|s| !s.is_finite() || *s < 0.0)
}

/// Collects every invariant violation in the dataset. Never fails.
pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    let c = dataset.class_count;

    for (idx, det) in dataset.detections.iter().enumerate() {
        let kind = RecordKind::Detection;
        if let Some(problem) = box_problem(&det.bbox) {
            report.push(kind, idx, problem);
        }
        if det.class_id >= c {
            report.push(kind, idx, format!("class_id {} ≥ class count {c}", det.class_id));
        }
        if !(0.0..=1.0).contains(&det.confidence) {
            report.push(kind, idx, format!("confidence {} outside [0, 1]", det.confidence));
        }
        if let Some(scores) = &det.class_scores {
            if scores.len() != c {
                report.push(kind, idx, format!("class_scores has {} entries, expected {c}", scores.len()));
            }
            if scores.iter().any(|p| !p.is_finite() || *p < 0.0) {
                report.push(kind, idx, "negative or non-finite class score");
            }
            let sum: f64 = scores.iter().sum();
            if (sum - 1.0).abs() > PROB_TOLERANCE {
                report.push(kind, idx, format!("scores sum {sum} ≠ 1"));
            }
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if (max - det.confidence).abs() > PROB_TOLERANCE {
                report.push(
                    kind,
                    idx,
                    format!("confidence {} differs from max class score {max}", det.confidence),
                );
            }
        }
        if sigma_problem(&det.sigma_al_loc) {
            report.push(kind, idx, "negative or non-finite sigma_al_loc");
        }
        if det.sigma_ep_loc.is_some_and(|s| sigma_problem(&s)) {
            report.push(kind, idx, "negative or non-finite sigma_ep_loc");
        }
        if let Some(s) = &det.sigma_ep_cls {
            if sigma_problem(s) {
                report.push(kind, idx, "negative or non-finite sigma_ep_cls");
            }
            if s.len() != c {
                report.push(kind, idx, format!("sigma_ep_cls has {} entries, expected {c}", s.len()));
            }
        }
    }

    for (idx, gt) in dataset.ground_truths.iter().enumerate() {
        let kind = RecordKind::GroundTruth;
        if let Some(problem) = box_problem(&gt.bbox) {
            report.push(kind, idx, problem);
        }
        if gt.class_id >= c {
            report.push(kind, idx, format!("class_id {} ≥ class count {c}", gt.class_id));
        }
    }

    report
}
