//! Fit a monotone calibration map with pool-adjacent-violators and evaluate it.

use costfilter::calibration::{fit_isotonic, CalibrationPoint};

fn main() -> costfilter::Result<()> {
    // raw uncertainty vs observed error, with a violation in the middle
    let points: Vec<CalibrationPoint> = [(0.1, 0.0), (0.2, 0.3), (0.3, 0.1), (0.5, 0.6), (0.8, 0.9), (0.8, 0.7)]
        .into_iter()
        .map(|(x, y)| CalibrationPoint::new(x, y))
        .collect();
    let model = fit_isotonic(&points)?;

    println!("breakpoints {:?}", model.breakpoints);
    println!("values      {:?}", model.values);
    for x in [0.0, 0.15, 0.25, 0.4, 0.8, 2.0] {
        println!("calibrated({x:.2}) = {:.4}", model.apply(x));
    }
    assert!(model.is_monotone());
    Ok(())
}
