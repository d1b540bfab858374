//! Search channel weights on a synthetic two-channel scenario.
//!
//! The first channel separates CDs from FDs well, the second only weakly, so
//! the fitted weights should lean on the first.

use costfilter::matching::match_and_categorize;
use costfilter::model::Budget;
use costfilter::optimizer::{optimize_traced, OptimizerConfig, ThresholdingProblem};
use costfilter::synth::{generate, ScenarioSpec};
use costfilter::uncertainty::compute_uncertainties;

fn main() -> costfilter::Result<()> {
    let spec = ScenarioSpec {
        seed: 11,
        ..ScenarioSpec::default()
    };
    let data = generate(&spec)?;
    let rows = compute_uncertainties(&data.dataset, &spec.channel_config(), None)?;
    let categorized = match_and_categorize(&data.dataset, 0.5);
    let problem = ThresholdingProblem::new(rows, &[categorized])?.with_channel_names(spec.channel_names());

    let budget = Budget::retain_cd(0.95)?;
    let config = OptimizerConfig {
        iterations: 40,
        seed: 1,
        ..OptimizerConfig::default()
    };
    let (profile, trace) = optimize_traced(&problem, &budget, &config)?;
    for (k, t) in trace.iter().enumerate().filter(|(k, _)| k % 5 == 0) {
        println!("trial {k:>2}: w = {:.3?} loss = {:.4} best = {:.4}", t.weights, t.loss, t.best_so_far);
    }
    println!(
        "fitted w = {:.3?}, {} = {:.4}, δ = {:.4}",
        profile.weights.as_slice(),
        profile.metric_name,
        profile.metric,
        profile.per_tau[0].delta
    );
    Ok(())
}
