//! Hand-crafted stand-ins for a learned feature extractor: PGM images,
//! per-cell descriptors and synthetic warped pairs with known ground truth.

pub mod descriptors;
pub mod pgm;
pub mod synth;

pub use descriptors::{extract_descriptors, DescriptorKind, GridLayout};
pub use pgm::{decode_pgm, encode_pgm, load_pgm, save_pgm, GrayImage};
pub use synth::{procedural_texture, render_warp, synth_keypoints, synth_pair, FramedTransform, SynthPair, WarpRange};
