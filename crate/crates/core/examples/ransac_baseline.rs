//! Hard-inlier RANSAC on the correlation's best matches against direct
//! soft-inlier fitting, on the same synthetic pairs.
//!
//!     cargo run --release --example ransac_baseline -- [pairs]

use softalign::evalkit::{evaluate, summarize_pck, Protocol};
use softalign::features::{procedural_texture, synth_keypoints, synth_pair, DescriptorKind, FramedTransform, WarpRange};
use softalign::fit::{fit_direct_scores, fit_ransac, FitConfig, RansacConfig};
use softalign::{correlate, Family};

fn main() -> softalign::Result<()> {
    let pairs: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let (mut hard, mut soft) = (Vec::new(), Vec::new());
    for p in 0..pairs {
        let img = procedural_texture(128, 128, 300 + p)?;
        let pair = synth_pair(&img, Family::Affine, &WarpRange::default(), DescriptorKind::Gradhist, 16, 16, 300 + p)?;
        let kps = synth_keypoints(&pair, 20, p)?;
        let s = correlate(&pair.source, &pair.target)?;
        let r = fit_ransac(&s, &RansacConfig { seed: p, ..RansacConfig::default() })?;
        let d = fit_direct_scores(&s, &FitConfig { seed: p, ..FitConfig::default() })?;
        let frame = |t| FramedTransform::new(t, pair.layout, pair.layout);
        let (rh, rs) = (evaluate(&kps, &frame(r.transform), Protocol::Pfpascal, 0.1)?, evaluate(&kps, &frame(d.transform), Protocol::Pfpascal, 0.1)?);
        println!(
            "pair {p:2}  ransac inliers {:3} c {:7.3} pck {:.2}   direct c {:7.3} pck {:.2}",
            r.hard_inliers.unwrap_or(0),
            r.c,
            rh.pck,
            d.c,
            rs.pck
        );
        hard.push(rh);
        soft.push(rs);
    }
    println!("mean PCK@0.1 ransac {:.3}", summarize_pck(&hard).expect("pairs").pck_per_pair_mean);
    println!("mean PCK@0.1 direct {:.3}", summarize_pck(&soft).expect("pairs").pck_per_pair_mean);
    Ok(())
}
