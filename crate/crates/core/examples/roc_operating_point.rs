//! Build an ROC curve from CD/FD scores and pick thresholds under both use cases.
//!
//! ```bash
//! cargo run --example roc_operating_point
//! ```

use costfilter::model::Budget;
use costfilter::roc::{auc, bacc, build_roc, jsd, select_threshold};

fn main() -> costfilter::Result<()> {
    let cd = [0.1, 0.2, 0.3];
    let fd = [0.25, 0.4];
    let roc = build_roc(&cd, &fd)?;

    println!("{:>8} {:>6} {:>6}", "delta", "FPR", "TPR");
    for p in &roc.points {
        println!("{:>8.3} {:>6.3} {:>6.3}", p.delta, p.fpr, p.tpr);
    }
    println!("AUC = {:.4}, JSD (100 bins) = {:.4}", auc(&roc), jsd(&cd, &fd, 100)?);

    for budget in [Budget::retain_cd(0.9)?, Budget::remove_fd(0.9)?] {
        let op = select_threshold(&roc, &budget);
        println!(
            "{}: delta = {:.3}  FPR = {:.3}  TPR = {:.3}  {} = {:.3}  BAcc = {:.3}",
            budget.use_case,
            op.delta,
            op.fpr,
            op.tpr,
            budget.use_case.metric_name(),
            op.metric(),
            bacc(&op)
        );
    }
    Ok(())
}
