//! How the FD removal rate falls as the CD retention budget tightens, against the
//! closed-form rate for truncated-normal scores.

use costfilter::model::Budget;
use costfilter::optimizer::{evaluate_loss, ThresholdingProblem};
use costfilter::synth::{closed_form_rates, generate, ChannelSpec, ScenarioSpec, ScoreDistribution};
use costfilter::uncertainty::CombineMode;

fn main() -> costfilter::Result<()> {
    let spec = ScenarioSpec {
        n_cd: 5000,
        n_fd: 5000,
        channels: vec![ChannelSpec::new(
            ScoreDistribution::truncated_normal(5.0, 1.0),
            ScoreDistribution::truncated_normal(7.0, 1.0),
        )],
        seed: 5,
        ..ScenarioSpec::default()
    };
    let data = generate(&spec)?;
    let (cd, fd) = data.split_channel(0);
    let problem = ThresholdingProblem::from_scores(0.5, &cd, &fd);

    println!("{:>6} {:>10} {:>12}", "b", "FD@CD", "closed form");
    for b in [0.5, 0.7, 0.8, 0.9, 0.95, 0.97, 0.99] {
        let budget = Budget::retain_cd(b)?;
        let metrics = evaluate_loss(&[1.0], &problem, &budget, CombineMode::Sum)?.metrics(&budget)?;
        let (_, tpr) = closed_form_rates(&spec, &budget)?;
        println!("{b:>6.2} {:>10.4} {tpr:>12.4}", metrics.metric);
    }
    Ok(())
}
