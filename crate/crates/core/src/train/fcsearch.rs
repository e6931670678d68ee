//! Component-combination search: which planes carry domain-invariant signal.
//!
//! Target labels are off limits, so validation happens on a synthetic target
//! set built by histogram-matching the labeled source validation images
//! against the mean of the target training pool. For the baseline and each
//! keep-set, a fresh model is trained on band-stop reconstructions of the
//! source training images and scored on both validation sets.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fcs::FcSet;
use crate::histmatch::{batch_mean, match_to_reference_calibrated};
use crate::image::{Image2D, LabelMask};
use crate::nsct::{reconstruct_subset, NsctPlan};
use crate::train::{evaluate_model, train_teacher, LoadedDataset, TrainConfig, TransferMode};

/// The keep-sets tried by default: each level group alone, then the lowpass
/// combined with each level group. The all-planes baseline always runs.
pub fn default_combos() -> Vec<FcSet> {
    [
        "0",
        "1-2",
        "3-6",
        "7-14",
        "0,1-2",
        "0,3-6",
        "0,7-14",
    ]
    .iter()
    .map(|s| FcSet::parse(s).expect("static combo parses"))
    .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FcSearchRow {
    pub label: String,
    pub keep: FcSet,
    pub source_val_dice: f64,
    pub synthetic_target_dice: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FcSearchReport {
    pub seed: u64,
    pub rows: Vec<FcSearchRow>,
}

impl FcSearchReport {
    pub fn row(&self, keep: FcSet) -> Option<&FcSearchRow> {
        self.rows.iter().find(|r| r.keep == keep)
    }

    pub fn baseline(&self) -> &FcSearchRow {
        &self.rows[0]
    }

    /// Aligned text table mirroring the report JSON.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12} {:>14} {:>18}\n",
            "FCs", "src val Dice", "synth trgt Dice"
        ));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>14.2} {:>18.2}\n",
                row.label, row.source_val_dice, row.synthetic_target_dice
            ));
        }
        out
    }
}

/// Runs the search. The baseline (all planes) is always the first row and
/// goes through exactly the same reconstruction path as the combos, so a
/// keep-everything combo reproduces it bit for bit.
pub fn fc_search(
    data: &LoadedDataset,
    combos: &[FcSet],
    cfg: &TrainConfig,
) -> Result<FcSearchReport> {
    if combos.is_empty() {
        return Err(Error::invalid("no component combinations to try"));
    }
    if data.source_train.is_empty() || data.source_test.is_empty() {
        return Err(Error::invalid("component search needs source train and test splits"));
    }
    if data.target_train.is_empty() {
        return Err(Error::invalid("component search needs target training images"));
    }

    // Synthetic target validation: source-val images restyled by histogram
    // matching against the mean of the whole target training pool.
    let target_mean = batch_mean(&data.target_train)?;
    let synthetic_val: Vec<(Image2D, LabelMask)> = data
        .source_test
        .iter()
        .map(|(img, mask)| {
            Ok((
                match_to_reference_calibrated(img, &target_mean, data.levels)?,
                mask.clone(),
            ))
        })
        .collect::<Result<_>>()?;

    let (h, w) = data.source_train[0].0.shape();
    let plan = NsctPlan::new(h, w, cfg.feather)?;
    let stacks: Vec<_> = data
        .source_train
        .iter()
        .map(|(img, _)| plan.forward(img))
        .collect::<Result<_>>()?;

    let mut train_cfg = cfg.clone();
    train_cfg.transfer = TransferMode::None;

    let mut rows = Vec::with_capacity(combos.len() + 1);
    for (i, &keep) in std::iter::once(&FcSet::ALL).chain(combos).enumerate() {
        let mut subset_data = data.clone();
        for (slot, stack) in subset_data.source_train.iter_mut().zip(&stacks) {
            slot.0 = reconstruct_subset(stack, keep);
        }
        let model = train_teacher(&subset_data, &train_cfg)?.model;
        let source_val = evaluate_model(&model, &data.source_test, data.n_c)?;
        let synth_val = evaluate_model(&model, &synthetic_val, data.n_c)?;
        rows.push(FcSearchRow {
            label: if i == 0 {
                "baseline".to_string()
            } else {
                keep.to_string()
            },
            keep,
            source_val_dice: source_val.macro_dice_percent,
            synthetic_target_dice: synth_val.macro_dice_percent,
        });
    }
    Ok(FcSearchReport {
        seed: cfg.seed,
        rows,
    })
}
