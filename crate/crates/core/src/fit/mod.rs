//! Transform estimation: gradient ascent on the soft-inlier count, a
//! classical RANSAC baseline and the discrete line-fitting demonstration.

mod direct;
mod line;
mod ransac;

pub use direct::{fit_direct, fit_direct_scores, AlignmentResult, FitConfig, SimilaritySearch};
pub use line::{fit_line_demo, line_demo_count, LineDemoConfig, LineFit, LineMode, Line, Raster};
pub use ransac::{candidate_matches, fit_ransac, ransac_matches, RansacConfig};
