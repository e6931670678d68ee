//! Scratch probe: what the models actually predict on the target domain.

use fsda_core::train::adam::AdamConfig;
use fsda_core::train::{evaluate_model, load_dataset, target_test_cases, train_teacher};
use fsda_core::{synth_dataset, LabelMask, SynthSpec, TrainConfig, TransferMode};

fn organ_vs_bg(mask: &LabelMask) -> LabelMask {
    let mut m = mask.clone();
    for y in 0..m.height() {
        for x in 0..m.width() {
            if m.get(y, x) > 0 {
                m.set(y, x, 1);
            }
        }
    }
    m
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        size: 64,
        n_c: 3,
        train_per_domain: 150,
        test_per_domain: 30,
        levels: 256,
        seed: 7,
    };
    let manifest = synth_dataset(&spec, dir.path()).unwrap();
    let data = load_dataset(&manifest).unwrap();
    let target_cases = target_test_cases(&data);

    for (name, transfer) in [
        ("none", TransferMode::None),
        ("frequency", TransferMode::Frequency),
        ("spatial", TransferMode::Spatial),
    ] {
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig {
                learning_rate: 0.3,
                ..AdamConfig::default()
            },
            seed: 7,
            transfer,
            ..TrainConfig::default()
        };
        let out = train_teacher(&data, &cfg).unwrap();
        let tgt = evaluate_model(&out.model, &target_cases, data.n_c).unwrap();

        let mut pred_counts = [0u64; 3];
        let mut gt_counts = [0u64; 3];
        let mut confusion = [[0u64; 3]; 3];
        for (img, gt) in &target_cases {
            let pred = out.model.predict_mask(img).unwrap();
            for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
                pred_counts[p as usize] += 1;
                gt_counts[g as usize] += 1;
                confusion[g as usize][p as usize] += 1;
            }
        }
        // organ-vs-background view (detection independent of identity)
        let det_cases: Vec<(LabelMask, LabelMask)> = target_cases
            .iter()
            .map(|(img, gt)| {
                (
                    organ_vs_bg(&out.model.predict_mask(img).unwrap()),
                    organ_vs_bg(gt),
                )
            })
            .collect();
        let det = fsda_core::metrics::evaluate_cases(&det_cases, 2).unwrap();

        println!("== {name}: tgt macro {:.2}", tgt.macro_dice_percent);
        println!(
            "   per-class {:?}  detection dice {:.2}",
            tgt.per_class
                .iter()
                .map(|c| (c.dice_percent * 10.0).round() / 10.0)
                .collect::<Vec<_>>(),
            det.macro_dice_percent
        );
        println!("   pred counts {pred_counts:?} gt {gt_counts:?}");
        println!("   confusion (rows gt, cols pred): {confusion:?}");
        println!("   weights {:?}", out.model.weights().iter().map(|w| (w * 100.0).round() / 100.0).collect::<Vec<_>>());
        println!("   bias {:?}", out.model.bias().iter().map(|w| (w * 100.0).round() / 100.0).collect::<Vec<_>>());
    }
}
