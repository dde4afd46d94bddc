//! The line-fitting analogue: RANSAC's hard count over sampled point pairs
//! and the soft count over a rasterized hypothesis grid, on the bundled
//! points (20 on y = x / 2 + 3, 30 scattered).
//!
//!     cargo run --example line_fit

use softalign::fit::{fit_line_demo, LineDemoConfig, LineMode};

fn main() -> softalign::Result<()> {
    let pts: Vec<(f64, f64)> = softalign::cli::BUNDLED_LINE_POINTS
        .lines()
        .skip(1)
        .filter_map(|l| {
            let (x, y) = l.split_once(',')?;
            Some((x.parse().ok()?, y.parse().ok()?))
        })
        .collect();
    for mode in [LineMode::Ransac, LineMode::SoftGrid] {
        let fit = fit_line_demo(&pts, &LineDemoConfig { mode, ..LineDemoConfig::default() })?;
        let (theta, rho) = (fit.line.theta, fit.line.rho);
        println!(
            "{:>9}: x cos({:.1} deg) + y sin(..) = {rho:.2}, count {}, inliers {:?}",
            mode.to_string(),
            theta.to_degrees(),
            fit.count,
            fit.inliers
        );
    }
    Ok(())
}
