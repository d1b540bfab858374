//! Isotonic calibration of uncertainties.
//!
//! Localization sigmas are calibrated per (class, coordinate) against the
//! absolute coordinate residual of correct detections. The classification
//! channel is calibrated per class against the detection-error indicator
//! (1 for a false detection, 0 for a correct one). Keys without a model map
//! through the identity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{CategorizedSet, Category};
use crate::model::Dataset;
use crate::uncertainty::{raw_cls, ClsChannel};

/// Non-decreasing piecewise-linear map through `(breakpoints[k], values[k])`, clamped outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicModel {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl IsotonicModel {
    pub fn apply(&self, x: f64) -> f64 {
        let (xs, ys) = (&self.breakpoints, &self.values);
        let n = xs.len();
        if x <= xs[0] {
            return ys[0];
        }
        if x >= xs[n - 1] {
            return ys[n - 1];
        }
        // first breakpoint strictly greater than x; 1 <= hi <= n-1 here
        let hi = xs.partition_point(|&b| b <= x);
        let lo = hi - 1;
        if xs[lo] == x {
            return ys[lo];
        }
        let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
        ys[lo] + t * (ys[hi] - ys[lo])
    }

    pub fn is_monotone(&self) -> bool {
        self.breakpoints.len() == self.values.len()
            && !self.breakpoints.is_empty()
            && self.breakpoints.windows(2).all(|w| w[0] < w[1])
            && self.values.windows(2).all(|w| w[0] <= w[1])
            && self.breakpoints.iter().chain(&self.values).all(|v| v.is_finite())
    }
}

/// A calibration observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationPoint {
    pub input: f64,
    pub target: f64,
    pub weight: f64,
}

impl CalibrationPoint {
    pub fn new(input: f64, target: f64) -> Self {
        Self {
            input,
            target,
            weight: 1.0,
        }
    }

    pub fn weighted(input: f64, target: f64, weight: f64) -> Self {
        Self { input, target, weight }
    }
}

/// Weighted least-squares non-decreasing fit (pool adjacent violators).
///
/// Points with equal inputs are pooled first, so each breakpoint is a distinct input.
pub fn fit_isotonic(points: &[CalibrationPoint]) -> Result<IsotonicModel> {
    if points.is_empty() {
        return Err(Error::EmptyInput("isotonic fit needs at least one point"));
    }
    if let Some(p) = points
        .iter()
        .find(|p| !p.input.is_finite() || !p.target.is_finite() || !(p.weight > 0.0 && p.weight.is_finite()))
    {
        return Err(Error::DegenerateData(format!("invalid calibration point {p:?}")));
    }

    let mut sorted: Vec<CalibrationPoint> = points.to_vec();
    sorted.sort_by(|a, b| a.input.total_cmp(&b.input));

    // (input, weighted target sum, weight sum) per distinct input
    let mut xs: Vec<f64> = Vec::new();
    let mut level_sum: Vec<f64> = Vec::new();
    let mut level_w: Vec<f64> = Vec::new();
    for p in &sorted {
        if xs.last() == Some(&p.input) {
            *level_sum.last_mut().unwrap() += p.weight * p.target;
            *level_w.last_mut().unwrap() += p.weight;
        } else {
            xs.push(p.input);
            level_sum.push(p.weight * p.target);
            level_w.push(p.weight);
        }
    }

    // Blocks: (mean, weight, number of distinct inputs covered).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(xs.len());
    for (s, w) in level_sum.iter().zip(&level_w) {
        let mut block = (s / w, *w, 1usize);
        while let Some(&(prev_mean, prev_w, prev_n)) = blocks.last() {
            if prev_mean <= block.0 {
                break;
            }
            blocks.pop();
            let total = prev_w + block.1;
            block = ((prev_mean * prev_w + block.0 * block.1) / total, total, prev_n + block.2);
        }
        blocks.push(block);
    }

    let values = blocks
        .iter()
        .flat_map(|&(mean, _, n)| std::iter::repeat_n(mean, n))
        .collect();
    Ok(IsotonicModel { breakpoints: xs, values })
}

pub fn apply_isotonic(model: &IsotonicModel, x: f64) -> f64 {
    model.apply(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coordinate {
    X1,
    Y1,
    X2,
    Y2,
}

impl Coordinate {
    pub const ALL: [Coordinate; 4] = [Coordinate::X1, Coordinate::Y1, Coordinate::X2, Coordinate::Y2];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub class_id: usize,
    pub model: IsotonicModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateModel {
    pub class_id: usize,
    pub coordinate: Coordinate,
    pub model: IsotonicModel,
}

/// Fitted calibrators for every channel. Missing keys fall back to the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratorSet {
    /// IoU threshold whose categories the models were fitted on.
    pub tau: f64,
    pub cls_channel: ClsChannel,
    pub cls_models: Vec<ClassModel>,
    pub loc_models: Vec<CoordinateModel>,
    #[serde(default)]
    pub ep_loc_models: Vec<CoordinateModel>,
}

impl CalibratorSet {
    pub fn identity(tau: f64, cls_channel: ClsChannel) -> Self {
        Self {
            tau,
            cls_channel,
            cls_models: Vec::new(),
            loc_models: Vec::new(),
            ep_loc_models: Vec::new(),
        }
    }

    pub fn cls_model(&self, class_id: usize) -> Option<&IsotonicModel> {
        self.cls_models.iter().find(|m| m.class_id == class_id).map(|m| &m.model)
    }

    pub fn loc_model(&self, class_id: usize, coordinate: Coordinate) -> Option<&IsotonicModel> {
        find_coord(&self.loc_models, class_id, coordinate)
    }

    pub fn ep_loc_model(&self, class_id: usize, coordinate: Coordinate) -> Option<&IsotonicModel> {
        find_coord(&self.ep_loc_models, class_id, coordinate)
    }

    pub fn apply_cls(&self, class_id: usize, x: f64) -> f64 {
        self.cls_model(class_id).map_or(x, |m| m.apply(x))
    }

    pub fn apply_loc(&self, class_id: usize, coordinate: Coordinate, x: f64) -> f64 {
        self.loc_model(class_id, coordinate).map_or(x, |m| m.apply(x))
    }

    pub fn apply_ep_loc(&self, class_id: usize, coordinate: Coordinate, x: f64) -> f64 {
        self.ep_loc_model(class_id, coordinate).map_or(x, |m| m.apply(x))
    }

    pub fn models(&self) -> impl Iterator<Item = &IsotonicModel> {
        self.cls_models
            .iter()
            .map(|m| &m.model)
            .chain(self.loc_models.iter().map(|m| &m.model))
            .chain(self.ep_loc_models.iter().map(|m| &m.model))
    }
}

fn find_coord(models: &[CoordinateModel], class_id: usize, coordinate: Coordinate) -> Option<&IsotonicModel> {
    models
        .iter()
        .find(|m| m.class_id == class_id && m.coordinate == coordinate)
        .map(|m| &m.model)
}

fn fit_buckets_by_coord(buckets: Vec<[Vec<CalibrationPoint>; 4]>) -> Result<Vec<CoordinateModel>> {
    let mut out = Vec::new();
    for (class_id, per_coord) in buckets.into_iter().enumerate() {
        for (coordinate, points) in Coordinate::ALL.into_iter().zip(per_coord) {
            if points.is_empty() {
                continue;
            }
            out.push(CoordinateModel {
                class_id,
                coordinate,
                model: fit_isotonic(&points)?,
            });
        }
    }
    Ok(out)
}

/// Fits all calibrators from one split categorized at the calibration IoU threshold.
pub fn fit_calibrators(
    dataset: &Dataset,
    categorized: &CategorizedSet,
    cls_channel: ClsChannel,
) -> Result<CalibratorSet> {
    if categorized.per_detection.len() != dataset.detections.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.detections.len(),
            got: categorized.per_detection.len(),
        });
    }
    let classes = dataset
        .class_count
        .max(Dataset::infer_class_count(&dataset.detections, &dataset.ground_truths));

    let mut al: Vec<[Vec<CalibrationPoint>; 4]> = (0..classes).map(|_| Default::default()).collect();
    let mut ep: Vec<[Vec<CalibrationPoint>; 4]> = (0..classes).map(|_| Default::default()).collect();
    let mut cls: Vec<Vec<CalibrationPoint>> = vec![Vec::new(); classes];
    let mut has_cd = vec![false; classes];

    for (det, assignment) in dataset.detections.iter().zip(&categorized.per_detection) {
        let class = det.class_id;
        if let (Category::Cd, Some(g)) = (assignment.category, assignment.matched_gt) {
            has_cd[class] = true;
            let gt = dataset.ground_truths[g].bbox.coords();
            let pred = det.bbox.coords();
            for k in 0..4 {
                let residual = (pred[k] - gt[k]).abs();
                al[class][k].push(CalibrationPoint::new(det.sigma_al_loc[k], residual));
                if let Some(s) = det.sigma_ep_loc {
                    ep[class][k].push(CalibrationPoint::new(s[k], residual));
                }
            }
        }

        let input = match cls_channel {
            ClsChannel::None => None,
            ClsChannel::Entropy => raw_cls(det, cls_channel).ok().flatten(),
            ClsChannel::MaxClass => det.sigma_ep_cls.as_ref().and_then(|s| s.get(class).copied()),
        };
        if let Some(x) = input {
            let error = f64::from(u8::from(assignment.category == Category::Fd));
            cls[class].push(CalibrationPoint::new(x, error));
        }
    }

    let mut cls_models = Vec::new();
    for (class_id, points) in cls.into_iter().enumerate() {
        if has_cd[class_id] && !points.is_empty() {
            cls_models.push(ClassModel {
                class_id,
                model: fit_isotonic(&points)?,
            });
        }
    }

    Ok(CalibratorSet {
        tau: categorized.tau,
        cls_channel,
        cls_models,
        loc_models: fit_buckets_by_coord(al)?,
        ep_loc_models: fit_buckets_by_coord(ep)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::match_and_categorize;
    use crate::model::{BoundingBox, DetectionRecord, GroundTruthRecord};

    fn pts(xs: &[f64], ys: &[f64]) -> Vec<CalibrationPoint> {
        xs.iter().zip(ys).map(|(x, y)| CalibrationPoint::new(*x, *y)).collect()
    }

    #[test]
    fn pav_worked_example() {
        let m = fit_isotonic(&pts(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0])).unwrap();
        assert_eq!(m.breakpoints, vec![1.0, 2.0, 3.0]);
        assert_eq!(m.values, vec![1.0, 2.5, 2.5]);
    }

    #[test]
    fn monotone_targets_fit_exactly() {
        let m = fit_isotonic(&pts(&[0.0, 1.0, 2.0, 5.0], &[0.1, 0.1, 0.4, 0.9])).unwrap();
        assert_eq!(m.values, vec![0.1, 0.1, 0.4, 0.9]);
    }

    #[test]
    fn single_point_constant() {
        let m = fit_isotonic(&[CalibrationPoint::new(5.0, 0.7)]).unwrap();
        assert_eq!(m.apply(-100.0), 0.7);
        assert_eq!(m.apply(5.0), 0.7);
        assert_eq!(m.apply(100.0), 0.7);
    }

    #[test]
    fn empty_and_invalid_inputs() {
        assert!(matches!(fit_isotonic(&[]), Err(Error::EmptyInput(_))));
        assert!(fit_isotonic(&[CalibrationPoint::new(f64::NAN, 0.0)]).is_err());
        assert!(fit_isotonic(&[CalibrationPoint::weighted(0.0, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn ties_are_pooled_by_weight() {
        let m = fit_isotonic(&[
            CalibrationPoint::weighted(0.5, 0.2, 1.0),
            CalibrationPoint::weighted(0.5, 0.5, 2.0),
        ])
        .unwrap();
        assert_eq!(m.breakpoints, vec![0.5]);
        assert!((m.values[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn interpolation_and_clamping() {
        let m = IsotonicModel {
            breakpoints: vec![1.0, 3.0],
            values: vec![1.0, 2.0],
        };
        assert_eq!(m.apply(2.0), 1.5);
        assert_eq!(m.apply(0.0), 1.0);
        assert_eq!(m.apply(3.0), 2.0);
        assert_eq!(m.apply(1.0), 1.0);
        assert_eq!(m.apply(10.0), 2.0);
    }

    fn shifted(gt: BoundingBox, dx: f64) -> BoundingBox {
        BoundingBox::new(gt.x1 + dx, gt.y1, gt.x2 + dx, gt.y2)
    }

    #[test]
    fn perfectly_calibrated_sigma_maps_to_itself() {
        let mut dets = Vec::new();
        let mut gts = Vec::new();
        for (i, dx) in [0.5, 1.0, 2.0, 3.0].into_iter().enumerate() {
            let gt = BoundingBox::new(0.0, 0.0, 100.0, 100.0);
            gts.push(GroundTruthRecord::new(i as i64, gt, 0));
            let mut d = DetectionRecord::new(i as i64, shifted(gt, dx), 0, 0.9);
            d.sigma_al_loc = [dx, 0.0, dx, 0.0];
            dets.push(d);
        }
        let ds = Dataset::new(dets, gts, 1);
        let cat = match_and_categorize(&ds, 0.5);
        let cal = fit_calibrators(&ds, &cat, ClsChannel::None).unwrap();
        for x in [0.5, 1.0, 1.5, 2.0, 2.7, 3.0] {
            assert!((cal.apply_loc(0, Coordinate::X1, x) - x).abs() < 1e-12);
            assert!((cal.apply_loc(0, Coordinate::X2, x) - x).abs() < 1e-12);
        }
        assert!(cal.models().all(IsotonicModel::is_monotone));
    }

    #[test]
    fn constant_sigma_collapses_to_mean_residual() {
        let mut dets = Vec::new();
        let mut gts = Vec::new();
        for (i, dx) in [0.2, 0.4].into_iter().enumerate() {
            let gt = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
            gts.push(GroundTruthRecord::new(i as i64, gt, 0));
            let mut d = DetectionRecord::new(i as i64, shifted(gt, dx), 0, 0.9);
            d.sigma_al_loc = [0.5; 4];
            dets.push(d);
        }
        let ds = Dataset::new(dets, gts, 1);
        let cal = fit_calibrators(&ds, &match_and_categorize(&ds, 0.5), ClsChannel::None).unwrap();
        let m = cal.loc_model(0, Coordinate::X1).unwrap();
        assert_eq!(m.breakpoints, vec![0.5]);
        assert!((m.values[0] - 0.3).abs() < 1e-12);
        assert!((cal.apply_loc(0, Coordinate::X1, 0.1) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn class_without_correct_detections_uses_identity() {
        let gt = GroundTruthRecord::new(0, BoundingBox::new(0.0, 0.0, 10.0, 10.0), 0);
        let mut d0 = DetectionRecord::new(0, BoundingBox::new(0.0, 0.0, 10.0, 10.0), 0, 0.9);
        d0.class_scores = Some(vec![0.9, 0.1]);
        let mut d1 = DetectionRecord::new(1, BoundingBox::new(0.0, 0.0, 10.0, 10.0), 1, 0.6);
        d1.class_scores = Some(vec![0.4, 0.6]);
        d1.sigma_al_loc = [3.0; 4];
        let ds = Dataset::new(vec![d0, d1], vec![gt], 2);
        let cal = fit_calibrators(&ds, &match_and_categorize(&ds, 0.5), ClsChannel::Entropy).unwrap();
        assert!(cal.cls_model(1).is_none());
        assert!(cal.loc_model(1, Coordinate::Y2).is_none());
        assert_eq!(cal.apply_cls(1, 0.42), 0.42);
        assert_eq!(cal.apply_loc(1, Coordinate::Y2, 3.0), 3.0);
        assert!(cal.cls_model(0).is_some());
    }
}
