//! IoU computation and detection-to-label matching.
//!
//! Matching is COCO style: within each (image, class) group, detections are
//! visited in descending confidence and each one claims the still-unmatched
//! label with the highest IoU, provided that IoU reaches `tau`. Claimed
//! detections are correct (CD), the rest are false (FD), and labels nobody
//! claimed are missed (MD). Cross-class overlaps never match.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{BoundingBox, Dataset, ImageId, TauSet};

/// Intersection over union of two valid boxes; 0 when disjoint.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// True category of a detection at a given IoU threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "CD")]
    Cd,
    #[serde(rename = "FD")]
    Fd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionAssignment {
    pub detection: usize,
    pub category: Category,
    pub matched_gt: Option<usize>,
    /// IoU with the matched label for CDs; for FDs, the largest IoU with any label in the same image.
    pub iou: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub cd: usize,
    pub fd: usize,
    pub md: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorizedSet {
    pub tau: f64,
    /// One entry per detection, in dataset order.
    pub per_detection: Vec<DetectionAssignment>,
    pub counts: CategoryCounts,
}

impl CategorizedSet {
    pub fn category(&self, detection: usize) -> Category {
        self.per_detection[detection].category
    }

    pub fn labels(&self) -> Vec<Category> {
        self.per_detection.iter().map(|a| a.category).collect()
    }

    /// Splits per-detection scores into (CD scores, FD scores).
    pub fn split_scores(&self, scores: &[f64]) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(scores.len(), self.per_detection.len());
        let mut cd = Vec::with_capacity(self.counts.cd);
        let mut fd = Vec::with_capacity(self.counts.fd);
        for (a, s) in self.per_detection.iter().zip(scores) {
            match a.category {
                Category::Cd => cd.push(*s),
                Category::Fd => fd.push(*s),
            }
        }
        (cd, fd)
    }
}

fn group_by_key<T>(items: &[T], key: impl Fn(&T) -> (&ImageId, usize)) -> BTreeMap<(&ImageId, usize), Vec<usize>> {
    let mut groups: BTreeMap<(&ImageId, usize), Vec<usize>> = BTreeMap::new();
    for (idx, item) in items.iter().enumerate() {
        groups.entry(key(item)).or_default().push(idx);
    }
    groups
}

/// Assigns CD/FD to every detection and counts missed labels at one IoU threshold.
pub fn match_and_categorize(dataset: &Dataset, tau: f64) -> CategorizedSet {
    let dets = &dataset.detections;
    let gts = &dataset.ground_truths;

    let gt_groups = group_by_key(gts, |g| (&g.image_id, g.class_id));
    let det_groups = group_by_key(dets, |d| (&d.image_id, d.class_id));

    let mut per_image_gts: BTreeMap<&ImageId, Vec<usize>> = BTreeMap::new();
    for (idx, g) in gts.iter().enumerate() {
        per_image_gts.entry(&g.image_id).or_default().push(idx);
    }

    let mut matched_gt: Vec<Option<usize>> = vec![None; dets.len()];
    let mut gt_taken = vec![false; gts.len()];

    for (key, mut det_idx) in det_groups {
        let Some(candidates) = gt_groups.get(&key) else {
            continue;
        };
        // stable sort keeps file order among equal confidences
        det_idx.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
        for d in det_idx {
            let mut best: Option<(usize, f64)> = None;
            for &g in candidates {
                if gt_taken[g] {
                    continue;
                }
                let v = iou(&dets[d].bbox, &gts[g].bbox);
                if v >= tau && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                gt_taken[g] = true;
                matched_gt[d] = Some(g);
            }
        }
    }

    let per_detection: Vec<DetectionAssignment> = dets
        .iter()
        .enumerate()
        .map(|(idx, det)| match matched_gt[idx] {
            Some(g) => DetectionAssignment {
                detection: idx,
                category: Category::Cd,
                matched_gt: Some(g),
                iou: iou(&det.bbox, &gts[g].bbox),
            },
            None => {
                let best = per_image_gts
                    .get(&det.image_id)
                    .map(|ids| {
                        ids.iter()
                            .map(|&g| iou(&det.bbox, &gts[g].bbox))
                            .fold(0.0, f64::max)
                    })
                    .unwrap_or(0.0);
                DetectionAssignment {
                    detection: idx,
                    category: Category::Fd,
                    matched_gt: None,
                    iou: best,
                }
            }
        })
        .collect();

    let cd = matched_gt.iter().filter(|m| m.is_some()).count();
    CategorizedSet {
        tau,
        per_detection,
        counts: CategoryCounts {
            cd,
            fd: dets.len() - cd,
            md: gts.len() - cd,
        },
    }
}

/// One [`CategorizedSet`] per threshold, in the order of `taus`.
pub fn categorize_sweep(dataset: &Dataset, taus: &TauSet) -> Vec<CategorizedSet> {
    taus.as_slice()
        .par_iter()
        .map(|&tau| match_and_categorize(dataset, tau))
        .collect()
}
