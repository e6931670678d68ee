//! Desk-scale training harness: teacher training under the four transfer
//! strategies, two-teacher distillation of a student, and evaluation.
//!
//! Everything here is deterministic for a fixed seed: batch order, transfer
//! partners and target batches come from independent seeded streams, and all
//! reductions run serially.

pub mod adam;
pub mod features;
pub mod fcsearch;
pub mod model;
pub mod synth;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fcs::{FcSet, FcStack};
use crate::histmatch::{sample_batch, spatial_transfer_calibrated, MomentumAverage};
use crate::image::{Image2D, LabelMask};
use crate::losses::{
    cross_entropy_with_grad, dice_with_grad, mkd_with_grad, LogitMap, LossConfig,
};
use crate::manifest::{DatasetManifest, ManifestEntry};
use crate::metrics::{evaluate_cases, EvalReport};
use crate::nsct::NsctPlan;
use crate::pgm::{load_image, load_mask};
use crate::transfer::swap_reconstruct;

use adam::{AdamConfig, AdamState};
use features::{extract_features, FeatureMap};
use model::ToyModel;

/// How source images are adapted before the teacher sees them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferMode {
    None,
    Frequency,
    Spatial,
    /// Alternate images between the frequency and spatial pools.
    Mixed,
}

impl TransferMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "frequency" => Ok(Self::Frequency),
            "spatial" => Ok(Self::Spatial),
            "mixed" => Ok(Self::Mixed),
            other => Err(Error::invalid(format!(
                "unknown transfer mode {other:?}; expected frequency|spatial|mixed|none"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub transfer: TransferMode,
    pub loss: LossConfig,
    /// Quantization levels for histogram matching.
    pub levels: u32,
    /// Momentum of the running target mean.
    pub eta: f64,
    /// Invariant component set kept during frequency transfer.
    pub invariant: FcSet,
    /// Wedge crossfade width; `None` = per-bank default.
    pub feather: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
            transfer: TransferMode::None,
            loss: LossConfig::default(),
            levels: 256,
            eta: 0.7,
            invariant: FcSet::DEFAULT_INVARIANT,
            feather: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.adam.learning_rate <= 0.0 {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::invalid("eta must be in (0, 1]"));
        }
        if self.levels < 2 {
            return Err(Error::invalid("levels must be >= 2"));
        }
        self.loss.validate()
    }
}

/// All images of a manifest loaded into memory.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub n_c: usize,
    pub levels: u32,
    pub source_train: Vec<(Image2D, LabelMask)>,
    pub source_test: Vec<(Image2D, LabelMask)>,
    pub target_train: Vec<Image2D>,
    pub target_test: Vec<(Image2D, Option<LabelMask>)>,
}

pub fn load_dataset(manifest: &DatasetManifest) -> Result<LoadedDataset> {
    let labeled = |entries: &[ManifestEntry]| -> Result<Vec<(Image2D, LabelMask)>> {
        entries
            .iter()
            .map(|e| {
                let img = load_image(&e.image)?;
                let mask_path = e.mask.as_ref().expect("manifest validated source masks");
                let mask = load_mask(mask_path)?;
                if mask.shape() != img.shape() {
                    return Err(Error::ShapeMismatch {
                        expected: img.shape(),
                        got: mask.shape(),
                    });
                }
                mask.validate_classes(manifest.n_c)?;
                Ok((img, mask))
            })
            .collect()
    };
    Ok(LoadedDataset {
        n_c: manifest.n_c,
        levels: manifest.level_count,
        source_train: labeled(&manifest.source_train)?,
        source_test: labeled(&manifest.source_test)?,
        target_train: manifest
            .target_train
            .iter()
            .map(|e| load_image(&e.image))
            .collect::<Result<_>>()?,
        target_test: manifest
            .target_test
            .iter()
            .map(|e| {
                let img = load_image(&e.image)?;
                let mask = e
                    .mask
                    .as_ref()
                    .map(|m| {
                        let mask = load_mask(m)?;
                        mask.validate_classes(manifest.n_c)?;
                        Ok::<_, Error>(mask)
                    })
                    .transpose()?;
                Ok((img, mask))
            })
            .collect::<Result<_>>()?,
    })
}

/// One optimizer step's worth of diagnostics, emitted as a JSON line.
#[derive(Debug, Clone, Serialize)]
pub struct TrainLogRecord {
    pub step: u64,
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub ce: f64,
    pub dice: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kd_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kd_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy_s: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: ToyModel,
    pub log: Vec<TrainLogRecord>,
}

impl TrainOutput {
    /// The log as JSON lines, deterministic for a fixed seed.
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.log {
            out.push_str(&serde_json::to_string(record).expect("log record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Seed streams; each consumer derives its own so strategies that skip a
/// stream do not shift the others.
fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

const TAG_ORDER: u64 = 1;
const TAG_PARTNER: u64 = 2;
const TAG_TARGET_BATCH: u64 = 3;

/// Shared transfer machinery for the teacher and student loops.
struct TransferEngine {
    mode: TransferMode,
    invariant: FcSet,
    levels: u32,
    src_stacks: Vec<FcStack>,
    tgt_stacks: Vec<FcStack>,
    momentum: MomentumAverage,
    rng_partner: ChaCha8Rng,
    rng_target_batch: ChaCha8Rng,
}

impl TransferEngine {
    fn new(data: &LoadedDataset, cfg: &TrainConfig, mode: TransferMode) -> Result<Self> {
        let needs_freq = matches!(mode, TransferMode::Frequency | TransferMode::Mixed);
        let needs_spatial = matches!(mode, TransferMode::Spatial | TransferMode::Mixed);
        if (needs_freq || needs_spatial) && data.target_train.is_empty() {
            return Err(Error::invalid("transfer strategies need target training images"));
        }

        let (mut src_stacks, mut tgt_stacks) = (Vec::new(), Vec::new());
        if needs_freq {
            let (h, w) = data.source_train[0].0.shape();
            let plan = NsctPlan::new(h, w, cfg.feather)?;
            for (img, _) in &data.source_train {
                src_stacks.push(plan.forward(img)?);
            }
            for img in &data.target_train {
                tgt_stacks.push(plan.forward(img)?);
            }
        }
        Ok(Self {
            mode,
            invariant: cfg.invariant,
            levels: cfg.levels,
            src_stacks,
            tgt_stacks,
            momentum: MomentumAverage::new(cfg.eta)?,
            rng_partner: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_PARTNER)),
            rng_target_batch: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_TARGET_BATCH)),
        })
    }

    /// Folds a fresh target batch into the running mean; call once per batch.
    fn begin_batch(&mut self, data: &LoadedDataset, batch_size: usize) -> Result<()> {
        if matches!(self.mode, TransferMode::Spatial | TransferMode::Mixed) {
            let batch = sample_batch(&data.target_train, batch_size, &mut self.rng_target_batch);
            self.momentum.update(&batch)?;
        }
        Ok(())
    }

    fn frequency_input(&mut self, src_index: usize) -> Result<Image2D> {
        let partner = self.rng_partner.gen_range(0..self.tgt_stacks.len());
        swap_reconstruct(
            &self.src_stacks[src_index],
            &self.tgt_stacks[partner],
            self.invariant,
        )
    }

    fn spatial_input(&self, src: &Image2D) -> Result<Image2D> {
        // Calibrated variant: the matched levels are mapped back into the
        // reference's physical range so teacher inputs stay commensurate
        // with the raw images seen at evaluation time.
        spatial_transfer_calibrated(src, &self.momentum, self.levels)
    }

    /// The adapted input for one source image. `position` is the image's
    /// ordinal within the epoch, used to alternate pools in mixed mode.
    fn input_for(
        &mut self,
        data: &LoadedDataset,
        src_index: usize,
        position: usize,
    ) -> Result<Image2D> {
        match self.mode {
            TransferMode::None => Ok(data.source_train[src_index].0.clone()),
            TransferMode::Frequency => self.frequency_input(src_index),
            TransferMode::Spatial => self.spatial_input(&data.source_train[src_index].0),
            TransferMode::Mixed => {
                if position % 2 == 0 {
                    self.frequency_input(src_index)
                } else {
                    self.spatial_input(&data.source_train[src_index].0)
                }
            }
        }
    }
}

/// Accumulates parameter gradients from a logit gradient:
/// `dL/dW[c][f] = sum_pix g[c][pix] * feat[f][pix]`, `dL/db[c] = sum_pix g`.
fn accumulate_param_grads(acc: &mut [f64], logit_grad: &LogitMap, feats: &FeatureMap) {
    let n_c = logit_grad.classes();
    let pixels = logit_grad.pixels();
    let n_f = features::FEATURE_COUNT;
    for c in 0..n_c {
        for f in 0..n_f {
            let plane = feats.plane(f);
            let mut s = 0.0;
            for pix in 0..pixels {
                s += logit_grad.get(c, pix) * plane[pix];
            }
            acc[c * n_f + f] += s;
        }
        let mut b = 0.0;
        for pix in 0..pixels {
            b += logit_grad.get(c, pix);
        }
        acc[n_c * n_f + c] += b;
    }
}

/// Trains one teacher under the configured transfer strategy.
pub fn train_teacher(data: &LoadedDataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if data.source_train.is_empty() {
        return Err(Error::invalid("no source training images"));
    }
    let mut engine = TransferEngine::new(data, cfg, cfg.transfer)?;
    let mut model = ToyModel::for_features(data.n_c);
    let mut params = model.params();
    let mut adam = AdamState::new(params.len());
    let mut rng_order = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_ORDER));
    let mut log = Vec::new();
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.source_train.len()).collect();
        order.shuffle(&mut rng_order);
        let mut position = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            engine.begin_batch(data, cfg.batch_size)?;
            let mut grads = vec![0.0f64; params.len()];
            let (mut ce_sum, mut dice_sum) = (0.0, 0.0);
            for &idx in batch {
                let input = engine.input_for(data, idx, position)?;
                position += 1;
                let feats = extract_features(&input);
                let logits = model.predict(&feats)?;
                let mask = &data.source_train[idx].1;
                let (ce, g_ce) = cross_entropy_with_grad(&logits, mask)?;
                let (dice, g_dice) = dice_with_grad(&logits, mask, cfg.loss.eps_dice)?;
                ce_sum += ce;
                dice_sum += dice;
                let mut g = g_ce;
                for (a, b) in g.data_mut().iter_mut().zip(g_dice.data()) {
                    *a += b;
                }
                accumulate_param_grads(&mut grads, &g, &feats);
            }
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= inv);
            adam.step(&mut params, &grads, &cfg.adam)?;
            model.set_params(&params);
            step += 1;
            log.push(TrainLogRecord {
                step,
                epoch,
                batch: batch_idx,
                loss: (ce_sum + dice_sum) * inv,
                ce: ce_sum * inv,
                dice: dice_sum * inv,
                kd_f: None,
                kd_s: None,
                omega_f: None,
                omega_s: None,
                entropy_f: None,
                entropy_s: None,
            });
        }
    }
    Ok(TrainOutput { model, log })
}

/// Distills a student from two frozen teachers. The frequency teacher scores
/// frequency-transferred inputs, the spatial teacher spatially transferred
/// ones, and the student sees the raw source image.
pub fn train_student(
    data: &LoadedDataset,
    teacher_f: &ToyModel,
    teacher_s: &ToyModel,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if data.source_train.is_empty() {
        return Err(Error::invalid("no source training images"));
    }
    let mut engine = TransferEngine::new(data, cfg, TransferMode::Mixed)?;
    let raw_features: Vec<FeatureMap> = data
        .source_train
        .iter()
        .map(|(img, _)| extract_features(img))
        .collect();

    let mut model = ToyModel::for_features(data.n_c);
    let mut params = model.params();
    let mut adam = AdamState::new(params.len());
    let mut rng_order = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_ORDER));
    let mut log = Vec::new();
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.source_train.len()).collect();
        order.shuffle(&mut rng_order);
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            engine.begin_batch(data, cfg.batch_size)?;
            let mut grads = vec![0.0f64; params.len()];
            let mut sums = TrainLogRecord {
                step: 0,
                epoch,
                batch: batch_idx,
                loss: 0.0,
                ce: 0.0,
                dice: 0.0,
                kd_f: Some(0.0),
                kd_s: Some(0.0),
                omega_f: Some(0.0),
                omega_s: Some(0.0),
                entropy_f: Some(0.0),
                entropy_s: Some(0.0),
            };
            for &idx in batch {
                let freq_input = engine.frequency_input(idx)?;
                let spatial_input = engine.spatial_input(&data.source_train[idx].0)?;
                let tf_logits = teacher_f.predict(&extract_features(&freq_input))?;
                let ts_logits = teacher_s.predict(&extract_features(&spatial_input))?;
                let student_logits = model.predict(&raw_features[idx])?;
                let mask = &data.source_train[idx].1;
                let (loss, grad, diag) =
                    mkd_with_grad(&student_logits, &tf_logits, &ts_logits, mask, &cfg.loss)?;
                accumulate_param_grads(&mut grads, &grad, &raw_features[idx]);
                sums.loss += loss;
                sums.ce += diag.supervised_ce;
                sums.dice += diag.supervised_dice;
                *sums.kd_f.as_mut().unwrap() += diag.kd_f;
                *sums.kd_s.as_mut().unwrap() += diag.kd_s;
                *sums.omega_f.as_mut().unwrap() += diag.omega_f;
                *sums.omega_s.as_mut().unwrap() += diag.omega_s;
                *sums.entropy_f.as_mut().unwrap() += diag.entropy_f;
                *sums.entropy_s.as_mut().unwrap() += diag.entropy_s;
            }
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= inv);
            adam.step(&mut params, &grads, &cfg.adam)?;
            model.set_params(&params);
            step += 1;
            sums.step = step;
            sums.loss *= inv;
            sums.ce *= inv;
            sums.dice *= inv;
            for field in [
                &mut sums.kd_f,
                &mut sums.kd_s,
                &mut sums.omega_f,
                &mut sums.omega_s,
                &mut sums.entropy_f,
                &mut sums.entropy_s,
            ] {
                *field.as_mut().unwrap() *= inv;
            }
            log.push(sums.clone());
        }
    }
    Ok(TrainOutput { model, log })
}

/// Hard-prediction evaluation of a model over labeled cases.
pub fn evaluate_model(
    model: &ToyModel,
    cases: &[(Image2D, LabelMask)],
    n_c: usize,
) -> Result<EvalReport> {
    let pairs: Vec<(LabelMask, LabelMask)> = cases
        .iter()
        .map(|(img, gt)| Ok((model.predict_mask(img)?, gt.clone())))
        .collect::<Result<_>>()?;
    evaluate_cases(&pairs, n_c)
}

/// The labeled target-test cases of a dataset (entries with masks).
pub fn target_test_cases(data: &LoadedDataset) -> Vec<(Image2D, LabelMask)> {
    data.target_test
        .iter()
        .filter_map(|(img, mask)| mask.as_ref().map(|m| (img.clone(), m.clone())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::synth::{synth_dataset, SynthSpec};
    use tempfile::tempdir;

    fn tiny_dataset(seed: u64) -> LoadedDataset {
        let dir = tempdir().unwrap();
        let spec = SynthSpec {
            size: 32,
            n_c: 3,
            train_per_domain: 12,
            test_per_domain: 4,
            levels: 256,
            seed,
        };
        let manifest = synth_dataset(&spec, dir.path()).unwrap();
        load_dataset(&manifest).unwrap()
    }

    fn quick_cfg(transfer: TransferMode) -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 6,
            adam: AdamConfig {
                learning_rate: 0.05,
                ..AdamConfig::default()
            },
            seed: 11,
            transfer,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let data = tiny_dataset(1);
        let mut cfg = quick_cfg(TransferMode::None);
        cfg.epochs = 0;
        let out = train_teacher(&data, &cfg).unwrap();
        assert_eq!(out.model, ToyModel::for_features(3));
        assert!(out.log.is_empty());
    }

    #[test]
    fn training_ce_decreases_over_early_epochs() {
        let data = tiny_dataset(2);
        let mut cfg = quick_cfg(TransferMode::None);
        cfg.epochs = 5;
        cfg.adam.learning_rate = 0.02;
        let out = train_teacher(&data, &cfg).unwrap();
        let epoch_ce: Vec<f64> = (0..5)
            .map(|e| {
                let records: Vec<&TrainLogRecord> =
                    out.log.iter().filter(|r| r.epoch == e).collect();
                records.iter().map(|r| r.ce).sum::<f64>() / records.len() as f64
            })
            .collect();
        for w in epoch_ce.windows(2) {
            assert!(w[1] < w[0], "CE not decreasing: {epoch_ce:?}");
        }
    }

    #[test]
    fn keep_all_frequency_transfer_matches_no_transfer() {
        let data = tiny_dataset(3);
        let mut cfg_freq = quick_cfg(TransferMode::Frequency);
        cfg_freq.invariant = FcSet::ALL;
        let cfg_none = quick_cfg(TransferMode::None);
        let a = train_teacher(&data, &cfg_freq).unwrap();
        let b = train_teacher(&data, &cfg_none).unwrap();
        let worst = a
            .model
            .params()
            .iter()
            .zip(b.model.params())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-6, "params diverged by {worst}");
    }

    #[test]
    fn all_transfer_modes_run_and_are_deterministic() {
        let data = tiny_dataset(4);
        for mode in [
            TransferMode::None,
            TransferMode::Frequency,
            TransferMode::Spatial,
            TransferMode::Mixed,
        ] {
            let cfg = quick_cfg(mode);
            let a = train_teacher(&data, &cfg).unwrap();
            let b = train_teacher(&data, &cfg).unwrap();
            assert_eq!(a.model.to_bytes(), b.model.to_bytes(), "{mode:?}");
            assert_eq!(a.log_jsonl(), b.log_jsonl(), "{mode:?}");
        }
    }

    #[test]
    fn student_improves_supervised_loss_and_freezes_teachers() {
        let data = tiny_dataset(5);
        let mut teacher_cfg = quick_cfg(TransferMode::None);
        teacher_cfg.epochs = 6;
        let teacher = train_teacher(&data, &teacher_cfg).unwrap().model;
        let teacher_bytes = teacher.to_bytes();

        let mut student_cfg = quick_cfg(TransferMode::None);
        student_cfg.epochs = 6;
        let out = train_student(&data, &teacher, &teacher, &student_cfg).unwrap();

        assert_eq!(teacher.to_bytes(), teacher_bytes);
        let first = &out.log[0];
        let last = out.log.last().unwrap();
        assert!(
            last.ce + last.dice < first.ce + first.dice,
            "supervised loss did not improve: {} -> {}",
            first.ce + first.dice,
            last.ce + last.dice
        );
        // Weights always sum to one.
        for r in &out.log {
            let sum = r.omega_f.unwrap() + r.omega_s.unwrap();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn student_log_has_kd_fields_and_teacher_log_does_not() {
        let data = tiny_dataset(6);
        let cfg = quick_cfg(TransferMode::None);
        let teacher = train_teacher(&data, &cfg).unwrap();
        assert!(!teacher.log_jsonl().contains("omega_f"));
        let student = train_student(&data, &teacher.model, &teacher.model, &cfg).unwrap();
        assert!(student.log_jsonl().contains("omega_f"));
    }

    #[test]
    fn evaluation_produces_percentages() {
        let data = tiny_dataset(7);
        let cfg = quick_cfg(TransferMode::None);
        let out = train_teacher(&data, &cfg).unwrap();
        let report = evaluate_model(&out.model, &data.source_test, data.n_c).unwrap();
        assert!(report.macro_dice_percent >= 0.0 && report.macro_dice_percent <= 100.0);
        assert_eq!(report.per_class.len(), 2);
    }
}
