//! Keypoint transfer PCK under both protocols and mask IoU, for the ground
//! truth warp and for the identity.
//!
//!     cargo run --example evaluate_keypoints

use softalign::evalkit::{evaluate, mask_iou, Protocol};
use softalign::features::{procedural_texture, render_warp, synth_keypoints, synth_pair, DescriptorKind, FramedTransform, GrayImage, WarpRange};
use softalign::{Family, Transform};

fn main() -> softalign::Result<()> {
    let img = procedural_texture(128, 128, 9)?;
    let pair = synth_pair(&img, Family::Affine, &WarpRange::default(), DescriptorKind::Gradhist, 16, 16, 9)?;
    let kps = synth_keypoints(&pair, 30, 9)?;
    let src_mask = GrayImage::from_fn(128, 128, |r, c| ((32..96).contains(&r) && (40..100).contains(&c)) as u8 as f64)?;
    let gt = pair.gt_warp();
    let tgt_mask = render_warp(&src_mask, &gt)?;

    let id = FramedTransform::new(Transform::identity(Family::Affine), pair.layout, pair.layout);
    for (name, warp) in [("ground truth", &gt), ("identity", &id)] {
        let pf = evaluate(&kps, warp, Protocol::Pfpascal, Protocol::Pfpascal.default_alpha())?;
        let tss = evaluate(&kps, warp, Protocol::Tss, Protocol::Tss.default_alpha())?;
        let iou = mask_iou(&src_mask, &tgt_mask, warp, None)?;
        println!(
            "{name:>12}: PCK pfpascal@{} {:.2} ({}/{}), PCK tss@{} {:.2} (threshold {:.1} px), IoU {:.3}",
            pf.alpha,
            pf.pck,
            pf.correct(),
            kps.len(),
            tss.alpha,
            tss.pck,
            tss.threshold,
            iou.iou
        );
    }
    Ok(())
}
