//! Scratch harness for tuning the synthetic benchmark margins.

use fsda_core::train::adam::AdamConfig;
use fsda_core::train::fcsearch::{default_combos, fc_search};
use fsda_core::train::{
    evaluate_model, load_dataset, target_test_cases, train_student, train_teacher,
};
use fsda_core::{synth_dataset, SynthSpec, TrainConfig, TransferMode};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2024);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(15);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.1);

    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        size: 64,
        n_c: 3,
        train_per_domain: 200,
        test_per_domain: 50,
        levels: 256,
        seed,
    };
    let t0 = std::time::Instant::now();
    let manifest = synth_dataset(&spec, dir.path()).unwrap();
    let data = load_dataset(&manifest).unwrap();
    println!("synth+load: {:?}", t0.elapsed());

    let cfg = |transfer: TransferMode| TrainConfig {
        epochs,
        batch_size: 32,
        adam: AdamConfig {
            learning_rate: lr,
            ..AdamConfig::default()
        },
        seed,
        transfer,
        ..TrainConfig::default()
    };

    let target_cases = target_test_cases(&data);
    let mut dices = std::collections::BTreeMap::new();
    for (name, transfer) in [
        ("none", TransferMode::None),
        ("frequency", TransferMode::Frequency),
        ("spatial", TransferMode::Spatial),
        ("mixed", TransferMode::Mixed),
    ] {
        let t = std::time::Instant::now();
        let out = train_teacher(&data, &cfg(transfer)).unwrap();
        let src = evaluate_model(&out.model, &data.source_test, data.n_c).unwrap();
        let tgt = evaluate_model(&out.model, &target_cases, data.n_c).unwrap();
        println!(
            "{name:10} src={:6.2} tgt={:6.2}  ({:?})",
            src.macro_dice_percent,
            tgt.macro_dice_percent,
            t.elapsed()
        );
        dices.insert(name, (out.model, tgt.macro_dice_percent));
    }

    let t = std::time::Instant::now();
    let student = train_student(
        &data,
        &dices["frequency"].0,
        &dices["spatial"].0,
        &cfg(TransferMode::None),
    )
    .unwrap();
    let tgt = evaluate_model(&student.model, &target_cases, data.n_c).unwrap();
    println!(
        "student    tgt={:6.2}  ({:?})",
        tgt.macro_dice_percent,
        t.elapsed()
    );
    let f = dices["frequency"].1;
    let s = dices["spatial"].1;
    let n = dices["none"].1;
    println!(
        "margins: freq-none={:.2} spatial-none={:.2} student-max(teachers)={:.2}",
        f - n,
        s - n,
        tgt.macro_dice_percent - f.max(s)
    );

    let t = std::time::Instant::now();
    let mut search_cfg = cfg(TransferMode::None);
    search_cfg.epochs = epochs.min(8);
    let report = fc_search(&data, &default_combos(), &search_cfg).unwrap();
    println!("fc-search ({:?}):\n{}", t.elapsed(), report.render_table());
}
