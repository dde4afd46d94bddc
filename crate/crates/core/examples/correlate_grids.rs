//! Describes an image and a shifted copy on a feature grid, correlates them
//! and prints each target cell's best source match.
//!
//!     cargo run --example correlate_grids

use softalign::correlate;
use softalign::features::{extract_descriptors, procedural_texture, DescriptorKind, GrayImage};

fn main() -> softalign::Result<()> {
    let (size, grid, shift) = (64, 8, 8);
    let img = procedural_texture(size, size, 3)?;
    // shift right by one cell; the uncovered strip repeats the left edge
    let moved = GrayImage::from_fn(size, size, |r, c| img.get(r, c.saturating_sub(shift)))?;
    let f_s = extract_descriptors(&img, DescriptorKind::Gradhist, grid, grid)?;
    let f_t = extract_descriptors(&moved, DescriptorKind::Gradhist, grid, grid)?;
    let s = correlate(&f_s, &f_t)?;

    let mut one_left = 0;
    for k in 0..grid {
        let row: Vec<String> = (0..grid)
            .map(|l| {
                let ((i, j), score) = s.column_argmax(k, l);
                if (i, j + 1) == (k, l) {
                    one_left += 1;
                }
                format!("({i},{j}) {score:.2}")
            })
            .collect();
        println!("{}", row.join("  "));
    }
    println!("column energy at (3, 3): {:.6}", s.column_energy(3, 3));
    println!("{one_left} of {} targets match the cell one to their left", grid * grid);
    Ok(())
}
