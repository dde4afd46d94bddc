//! Builds a thin-plate spline on the 3x3 control lattice, checks that it
//! hits its control targets and renders a warped image.
//!
//!     cargo run --example tps_warp -- [out.pgm]

use softalign::features::{procedural_texture, render_warp, save_pgm, FramedTransform, GridLayout};
use softalign::geometry::tps::TpsBasis;
use softalign::Transform;

fn main() -> softalign::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "tps_warp.pgm".into());
    // pull the center control toward the top-left, push the corners out
    let mut disp = vec![(0.0, 0.0); 9];
    disp[4] = (-0.15, -0.15);
    for c in [0, 2, 6, 8] {
        disp[c] = (0.05, 0.05);
    }
    let tps = Transform::make_tps(&disp)?;
    for (&(x, y), &(dx, dy)) in TpsBasis::for_lattice(3)?.controls().iter().zip(&disp) {
        let (u, v) = tps.apply_point(x, y)?;
        println!("control ({x:+.1}, {y:+.1}) -> ({u:+.3}, {v:+.3})  offset ({:+.0e}, {:+.0e})", u - x - dx, v - y - dy);
    }
    let img = procedural_texture(96, 96, 11)?;
    let layout = GridLayout::for_image(&img, 12, 12)?;
    let warped = render_warp(&img, &FramedTransform::new(tps, layout, layout))?;
    save_pgm(&warped, &out)?;
    println!("wrote {out}");
    Ok(())
}
