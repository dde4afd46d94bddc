//! Soft-inlier count of a self pair under a sweep of horizontal shifts: the
//! count peaks at the identity and falls off smoothly in between cells.
//!
//!     cargo run --example soft_inlier_score

use softalign::features::{extract_descriptors, procedural_texture, DescriptorKind};
use softalign::softinlier::MaskedSupport;
use softalign::{correlate, default_threshold, identity_mask, soft_inlier_count, warp_mask, Transform};

fn main() -> softalign::Result<()> {
    let n = 16;
    let img = procedural_texture(128, 128, 5)?;
    let f = extract_descriptors(&img, DescriptorKind::Gradhist, n, n)?;
    let s = correlate(&f, &f)?;
    let t = default_threshold(n, n);
    let m_id = identity_mask(n, n, t)?;
    let fast = MaskedSupport::new(s.scores(), &m_id)?;
    println!("grid {n}x{n}, t = {t:.3}");
    println!("{:>8} {:>10} {:>10}", "shift", "c", "dc/dtx");
    for step in -8..=8 {
        // a quarter cell per step; one cell is 2 / (n - 1) in the normalized frame
        let tx = step as f64 * 0.25 * 2.0 / (n - 1) as f64;
        let tr = Transform::affine([1.0, 0.0, tx, 0.0, 1.0, 0.0])?;
        let c = soft_inlier_count(s.scores(), &warp_mask(&m_id, &tr)?)?.c;
        let (_, grad) = fast.score_and_grad(&tr)?;
        println!("{:>8.2} {c:>10.3} {:>10.3}", step as f64 * 0.25, grad[2]);
    }
    let top = soft_inlier_count(s.scores(), &warp_mask(&m_id, &Transform::identity(softalign::Family::Affine))?)?.top(5);
    println!("strongest inliers at the identity:");
    for m in &top.inliers {
        println!("  src {:?} tgt {:?} w {:.3}", m.src, m.tgt, m.w);
    }
    Ok(())
}
