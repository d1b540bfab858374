//! Synthesize a scenario on disk, fit a profile, then filter the detections with it.
//!
//! ```bash
//! cargo run --example end_to_end -- /tmp/costfilter-demo
//! ```

use std::path::PathBuf;

use costfilter::pipeline::{render_report, run_apply, run_fit, run_synth, ApplyOptions, RunConfig};
use costfilter::synth::ScenarioSpec;

fn main() -> costfilter::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("costfilter-demo"));

    run_synth(&ScenarioSpec::default(), &dir)?;
    let config = RunConfig::load(dir.join("config.toml"))?;
    let outcome = run_fit(&config)?;
    print!("{}", render_report(&outcome.report));

    let summary = run_apply(&ApplyOptions {
        profile: config.output_dir.join("profile.json"),
        detections: config.detections.clone(),
        tau: 0.5,
        ground_truth: Some(config.ground_truth.clone()),
        category_map: None,
        output_dir: dir.join("filtered"),
    })?;
    println!(
        "\nkept {} of {} detections (δ = {:.4}); outputs in {}",
        summary.kept,
        summary.total,
        summary.delta,
        dir.display()
    );
    Ok(())
}
