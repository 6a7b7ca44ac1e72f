//! Paired signed-rank test on per-recording F1 scores of two systems.
//!
//!     cargo run --example wilcoxon

use oaf_core::evaluation::wilcoxon_signed_rank;

fn main() -> oaf_core::Result<()> {
    // Note F1 per test recording, same recordings in the same order.
    let baseline = [0.41, 0.52, 0.38, 0.60, 0.47, 0.55, 0.33, 0.49, 0.58, 0.44];
    let attention = [0.46, 0.55, 0.37, 0.66, 0.53, 0.61, 0.35, 0.52, 0.63, 0.47];

    let r = wilcoxon_signed_rank(&attention, &baseline)?;
    println!("n = {}  W+ = {}  statistic = {}", r.n, r.w_plus, r.statistic);
    println!("two-sided p = {:.4} ({})", r.p_value, if r.exact { "exact" } else { "normal approximation" });

    let same = wilcoxon_signed_rank(&baseline, &baseline)?;
    println!("identical inputs: p = {} (degenerate: {})", same.p_value, same.degenerate);
    Ok(())
}
