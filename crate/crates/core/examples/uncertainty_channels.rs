//! Turn a raw detection into uncertainty channels and a combined score.

use costfilter::model::{BoundingBox, Dataset, DetectionRecord};
use costfilter::uncertainty::{
    combine_values, compute_uncertainties, entropy, softmax, ChannelConfig, CombineMode,
};

fn main() -> costfilter::Result<()> {
    let scores = softmax(&[2.0, 0.5, -1.0])?;
    println!("softmax {scores:.3?}, entropy {:.4} bits", entropy(&scores));

    let mut det = DetectionRecord::new("img-1", BoundingBox::new(10.0, 20.0, 110.0, 70.0), 0, scores[0]);
    det.class_scores = Some(scores);
    det.sigma_al_loc = [4.0, 2.0, 4.0, 2.0];
    det.sigma_ep_loc = Some([1.0, 1.0, 2.0, 2.0]);

    let config = ChannelConfig {
        epistemic_loc: true,
        ..ChannelConfig::default()
    };
    let dataset = Dataset::new(vec![det], Vec::new(), 3);
    let rows = compute_uncertainties(&dataset, &config, None)?;
    for (name, v) in config.channel_names().iter().zip(&rows[0]) {
        println!("{name:>13} = {v:.4}");
    }

    for (mode, w) in [
        (CombineMode::Sum, [1.0, 1.0, 1.0]),
        (CombineMode::Sum, [1.0, 0.5, 0.0]),
        (CombineMode::Product, [1.0, 1.0, 1.0]),
    ] {
        println!("{mode:?} with {w:?}: {:.4}", combine_values(&w, &rows[0], mode)?);
    }
    Ok(())
}
