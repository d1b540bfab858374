//! Check whether a threshold can hurt precision or F1 for given detector counts.

use costfilter::matching::CategoryCounts;
use costfilter::safeguards::check_requirements;

fn main() {
    let counts = CategoryCounts { cd: 100, fd: 50, md: 20 };
    println!("{:>5} {:>5} {:>4} {:>4} {:>9} {:>9} {:>7} {:>7}", "i", "m", "2a", "2b", "prec", "prec'", "F1", "F1'");
    for (i, m) in [(0.95, 0.9), (0.95, 0.1), (0.8, 0.3), (0.99, 0.02), (1.0, 0.0)] {
        let r = check_requirements(i, m, counts);
        println!(
            "{:>5.2} {:>5.2} {:>4} {:>4} {:>9.4} {:>9.4} {:>7.4} {:>7.4}",
            i, m, r.req_2a_pass, r.req_2b_pass, r.precision_pre, r.precision_post, r.f1_pre, r.f1_post
        );
    }
}
