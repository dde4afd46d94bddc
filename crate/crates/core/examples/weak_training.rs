//! Trains the transform regressor on synthetic pairs from matching alone and
//! compares held-out PCK against the untrained (identity) model.
//!
//!     cargo run --release --example weak_training -- [epochs]

use std::time::Instant;

use softalign::evalkit::{evaluate, summarize_pck, Protocol};
use softalign::features::{procedural_texture, synth_keypoints, synth_pair, DescriptorKind, FramedTransform, SynthPair};
use softalign::weaktrain::{demo_range, train, RegressorModel, TrainConfig};
use softalign::{correlate, Family};

fn pairs(seeds: std::ops::Range<u64>) -> softalign::Result<Vec<SynthPair>> {
    seeds
        .map(|s| {
            let img = procedural_texture(64, 64, 10_000 + s)?;
            synth_pair(&img, Family::Affine, &demo_range(), DescriptorKind::Gradhist, 8, 8, s)
        })
        .collect()
}

fn held_out_pck(model: &RegressorModel, test: &[SynthPair]) -> softalign::Result<f64> {
    let mut reports = Vec::new();
    for p in test {
        let kps = synth_keypoints(p, 20, p.seed)?;
        let t = model.predict(&correlate(&p.source, &p.target)?)?;
        reports.push(evaluate(&kps, &FramedTransform::new(t, p.layout, p.layout), Protocol::Pfpascal, 0.1)?);
    }
    Ok(summarize_pck(&reports).expect("held-out pairs").pck_per_pair_mean)
}

fn main() -> softalign::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(30);
    let train_set = pairs(0..200)?;
    let test_set = pairs(1000..1050)?;
    // the trainer only ever sees the two feature grids of each pair
    let grids: Vec<_> = train_set.iter().map(|p| (p.source.clone(), p.target.clone())).collect();

    let cfg = TrainConfig { epochs, ..TrainConfig::default() };
    let start = Instant::now();
    let out = train(&grids, &cfg)?;
    println!("trained {epochs} epochs in {:.1} s", start.elapsed().as_secs_f64());
    for (e, l) in out.epoch_loss.iter().enumerate() {
        println!("epoch {e:2}  mean loss {l:.4}");
    }
    println!("undone epochs: {:?}", out.rejected_epochs);
    let fresh = RegressorModel::new((8, 8), cfg.hidden, cfg.family, cfg.seed)?;
    println!("held-out PCK@0.1 identity {:.3}", held_out_pck(&fresh, &test_set)?);
    println!("held-out PCK@0.1 trained  {:.3}", held_out_pck(&out.model, &test_set)?);
    Ok(())
}
