//! Fits affine warps to synthetic pairs and reports PCK against the
//! generating transform, next to the identity baseline.
//!
//!     cargo run --release --example fit_synthetic -- [pairs] [seed]

use std::time::Instant;

use softalign::evalkit::{evaluate, summarize_pck, Protocol};
use softalign::features::{procedural_texture, synth_keypoints, synth_pair, DescriptorKind, FramedTransform, WarpRange};
use softalign::fit::{fit_direct, FitConfig};
use softalign::{Family, Transform};

fn main() -> softalign::Result<()> {
    let mut args = std::env::args().skip(1);
    let pairs: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);

    let (mut fitted, mut baseline) = (Vec::new(), Vec::new());
    let start = Instant::now();
    for p in 0..pairs {
        let img = procedural_texture(128, 128, seed * 1000 + p)?;
        let pair = synth_pair(&img, Family::Affine, &WarpRange::default(), DescriptorKind::Gradhist, 16, 16, seed * 1000 + p)?;
        let kps = synth_keypoints(&pair, 20, p)?;
        let fit = fit_direct(&pair.source, &pair.target, &FitConfig { seed: p, ..FitConfig::default() })?;
        let warp = FramedTransform::new(fit.transform.clone(), pair.layout, pair.layout);
        let id = FramedTransform::new(Transform::identity(Family::Affine), pair.layout, pair.layout);
        let r = evaluate(&kps, &warp, Protocol::Pfpascal, 0.1)?;
        println!("pair {p:3}  c {:8.3}  restart {}  pck {:.2}", fit.c, fit.restart, r.pck);
        fitted.push(r);
        baseline.push(evaluate(&kps, &id, Protocol::Pfpascal, 0.1)?);
    }
    let secs = start.elapsed().as_secs_f64() / pairs as f64;
    let f = summarize_pck(&fitted).expect("at least one pair");
    let b = summarize_pck(&baseline).expect("at least one pair");
    println!("fitted   PCK@0.1 {:.3} (pooled {:.3})", f.pck_per_pair_mean, f.pck_pooled);
    println!("identity PCK@0.1 {:.3} (pooled {:.3})", b.pck_per_pair_mean, b.pck_pooled);
    println!("{secs:.3} s per pair");
    Ok(())
}
