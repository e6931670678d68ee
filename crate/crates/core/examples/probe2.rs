//! Scratch probe: what spatial matching feeds the teacher.

use fsda_core::histmatch::{sample_batch, spatial_transfer_calibrated, MomentumAverage};
use fsda_core::train::synth::{render_sample, Style};
use fsda_core::{Image2D, LabelMask, SynthSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn class_stats(img: &Image2D, mask: &LabelMask, n_c: usize) -> Vec<(f64, f64, u64)> {
    let mut sums = vec![(0.0f64, 0.0f64, 0u64); n_c];
    for (i, &v) in img.data().iter().enumerate() {
        let c = mask.labels()[i] as usize;
        sums[c].0 += v;
        sums[c].1 += v * v;
        sums[c].2 += 1;
    }
    sums.into_iter()
        .map(|(s, sq, n)| {
            let mean = s / n as f64;
            ((mean * 10.0).round() / 10.0, (((sq / n as f64 - mean * mean).max(0.0)).sqrt() * 10.0).round() / 10.0, n)
        })
        .collect()
}

fn main() {
    let spec = SynthSpec {
        size: 64,
        n_c: 3,
        train_per_domain: 60,
        test_per_domain: 10,
        levels: 256,
        seed: 7,
    };
    let targets: Vec<Image2D> = (0..60)
        .map(|i| render_sample(&spec, 2_000_000 + i, Style::B).0)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut state = MomentumAverage::new(0.7).unwrap();
    state
        .update(&sample_batch(&targets, 32, &mut rng))
        .unwrap();
    let mean = state.mean().unwrap();
    let (mn, mx) = mean.min_max();
    println!("reference mean image: min {mn:.1} max {mx:.1}");

    for id in [0u64, 1, 2, 3] {
        let (src, mask) = render_sample(&spec, id, Style::A);
        let (tgt_same_geom, _) = render_sample(&spec, id, Style::B);
        let matched = spatial_transfer_calibrated(&src, &state, 256).unwrap();
        println!(
            "sample {id}:\n  src   {:?}\n  match {:?}\n  realB {:?}",
            class_stats(&src, &mask, 3),
            class_stats(&matched, &mask, 3),
            class_stats(&tgt_same_geom, &mask, 3),
        );
    }
}
