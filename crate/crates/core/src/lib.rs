//! Frequency- and spatial-domain transfer primitives for cross-modality
//! segmentation experiments.
//!
//! The crate provides:
//!
//! * a three-level shift-invariant decomposition ([`nsct`]) with an exact
//!   additive inverse and band-stop reconstruction;
//! * frequency-component transfer between images ([`transfer`]);
//! * batch-momentum histogram matching ([`histmatch`]);
//! * segmentation losses with analytic gradients, including entropy-weighted
//!   two-teacher distillation ([`losses`]);
//! * Dice / average-symmetric-surface-distance evaluation ([`metrics`]);
//! * a deterministic desk-scale training harness on synthetic two-modality
//!   data ([`train`]);
//! * PGM raster, dataset-manifest and component-stack I/O ([`pgm`],
//!   [`manifest`], [`fcs`]).

pub mod error;
pub mod fcs;
pub mod histmatch;
pub mod image;
pub mod losses;
pub mod manifest;
pub mod metrics;
pub mod nsct;
pub mod pgm;
pub mod train;
pub mod transfer;

pub use error::{Error, Result};
pub use fcs::{read_fcs, write_fcs, FcSet, FcStack, FC_COUNT};
pub use image::{Image2D, LabelMask};
pub use losses::{LogitMap, LossConfig, ProbMap};
pub use manifest::{load_manifest, save_manifest, DatasetManifest, ManifestEntry};
pub use metrics::EvalReport;
pub use nsct::{
    binomial_lowpass_spectrum, make_wedge_masks, nsct_forward, nsct_inverse, nsdfb_decompose,
    nsp_decompose, reconstruct_subset, NsctPlan, WedgeMaskSet,
};
pub use pgm::{load_image, load_mask, save_image, save_mask, BitDepth};
pub use train::model::ToyModel;
pub use train::synth::{synth_dataset, SynthSpec};
pub use train::{
    evaluate_model, load_dataset, train_student, train_teacher, LoadedDataset, TrainConfig,
    TrainOutput, TransferMode,
};
pub use transfer::{freq_transfer_image, transfer_stack};
