//! Categorize detections as correct or false at several IoU thresholds.
//!
//! A detection that overlaps its label loosely flips from CD to FD as τ rises.

use costfilter::matching::{categorize_sweep, iou};
use costfilter::model::{BoundingBox, Dataset, DetectionRecord, GroundTruthRecord, TauSet};

fn main() -> costfilter::Result<()> {
    let label = BoundingBox::new(0.0, 0.0, 100.0, 100.0);
    let ground_truths = vec![
        GroundTruthRecord::new(1, label, 0),
        GroundTruthRecord::new(2, label, 1),
    ];
    let detections = vec![
        DetectionRecord::new(1, BoundingBox::new(0.0, 0.0, 100.0, 90.0), 0, 0.95),
        DetectionRecord::new(1, BoundingBox::new(0.0, 0.0, 100.0, 95.0), 0, 0.60),
        DetectionRecord::new(2, BoundingBox::new(0.0, 0.0, 100.0, 62.0), 1, 0.80),
        DetectionRecord::new(2, BoundingBox::new(0.0, 0.0, 100.0, 100.0), 0, 0.70),
    ];
    for d in &detections {
        println!("image {} class {} IoU with label {:.2}", d.image_id, d.class_id, iou(&d.bbox, &label));
    }

    let dataset = Dataset::new(detections, ground_truths, 2);
    for set in categorize_sweep(&dataset, &TauSet::default()) {
        let cats: Vec<String> = set.labels().iter().map(|c| format!("{c:?}")).collect();
        println!(
            "τ = {:.2}: [{}]  CD {} FD {} MD {}",
            set.tau,
            cats.join(", "),
            set.counts.cd,
            set.counts.fd,
            set.counts.md
        );
    }
    Ok(())
}
