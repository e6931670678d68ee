//! Synthetic two-modality segmentation data.
//!
//! Every sample is a background plus one random ellipse per foreground class,
//! rendered in two styles that share geometry. Style A is the labeled source
//! modality. Style B pushes the clean intensities through a fixed invertible
//! remap (gamma 0.5 followed by inversion) and uses its own, noticeably
//! heavier noise texture, so a model fit on style A degrades on style B.
//! Organ positions are drawn from per-class column bands, which gives the
//! segmenter a stable geometric cue that survives the modality gap.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image2D, LabelMask};
use crate::manifest::{save_manifest, DatasetManifest, ManifestEntry};
use crate::pgm::{save_image, save_mask, BitDepth};

/// Intensity scale of the generated rasters.
const INTENSITY_MAX: f64 = 255.0;

/// Background base level in style A. It sits well away from the remap's
/// fixed point, so the whole intensity layout shifts between modalities
/// (the gap the histogram path is meant to close).
const BG_BASE: f64 = 150.0;

/// Amplitude of the fixed radial shading of the background. Shared by every
/// sample, it survives batch averaging the way gross anatomy does, which
/// keeps the running-mean matching reference structured.
const VIGNETTE_AMPLITUDE: f64 = 22.0;

/// Organ level offsets from the background. The first two organs form a
/// dark/bright pair whose assignment is randomized per sample: intensity
/// separates organ from background but never encodes which organ is which,
/// the way tissue brightness orderings are not class identifiers across
/// modalities. Further organs draw a random sign at growing magnitude.
const ORGAN_DELTA_MAGNITUDES: [f64; 6] = [45.0, 45.0, 65.0, 65.0, 30.0, 30.0];

const NOISE_A_BG: f64 = 5.0;
const NOISE_A_ORGAN: f64 = 16.0;
const NOISE_B_BG: f64 = 8.0;
const NOISE_B_ORGAN: f64 = 30.0;

/// Style B additionally carries a mid-frequency blob texture (blurred noise)
/// over the whole frame; its spectral energy sits in the finer bands, on the
/// swapped side of the component split.
const BLOB_B_AMPLITUDE: f64 = 16.0;
const BLOB_B_SIGMA: f64 = 0.8;
const BLOB_B_RADIUS: i64 = 2;

/// Which modality to render.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Style {
    A,
    B,
}

/// Generator parameters. `train_per_domain`/`test_per_domain` count samples
/// per split; all four splits draw distinct geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub size: usize,
    pub n_c: usize,
    pub train_per_domain: usize,
    pub test_per_domain: usize,
    pub levels: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            size: 64,
            n_c: 3,
            train_per_domain: 200,
            test_per_domain: 50,
            levels: 256,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::invalid("size must be at least 16"));
        }
        if self.n_c < 2 || self.n_c > 1 + ORGAN_DELTA_MAGNITUDES.len() {
            return Err(Error::invalid(format!(
                "n_c must be in 2..={}, got {}",
                1 + ORGAN_DELTA_MAGNITUDES.len(),
                self.n_c
            )));
        }
        if self.train_per_domain == 0 || self.test_per_domain == 0 {
            return Err(Error::invalid("splits must be non-empty"));
        }
        if self.levels < 2 {
            return Err(Error::invalid("levels must be >= 2"));
        }
        Ok(())
    }
}

/// The style-B intensity remap: gamma 0.5 then inversion, on `[0, 255]`.
pub fn style_b_remap(v: f64) -> f64 {
    let n = (v / INTENSITY_MAX).clamp(0.0, 1.0);
    (1.0 - n.sqrt()) * INTENSITY_MAX
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let dy = y - self.cy;
        let dx = x - self.cx;
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        u * u + v * v <= 1.0
    }
}

/// splitmix64, used to derive independent seeds per purpose and sample.
fn mix_seed(seed: u64, tag: u64, sample: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E3779B97F4A7C15) ^ sample.wrapping_mul(0xD1B54A32D192ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Standard normal via Box-Muller; two uniforms per draw keeps the stream
/// layout independent of prior rejections.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Renders the geometry of one sample: background 0, organ `k` labeled `k+1`.
/// Organs sit in per-class column bands with mild positional jitter, the way
/// anatomy is grossly aligned across subjects.
fn sample_geometry(spec: &SynthSpec, sample_id: u64) -> LabelMask {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0x6E0, sample_id));
    let size = spec.size as f64;
    let organs = spec.n_c - 1;
    let mut mask = LabelMask::zeros(spec.size, spec.size);
    for k in 0..organs {
        // Column bands spread over [0.25, 0.75] so neighboring organs stay
        // separable by position alone.
        let band_center = if organs == 1 {
            0.5
        } else {
            0.25 + 0.5 * k as f64 / (organs - 1) as f64
        };
        let cx = (band_center + rng.gen_range(-0.03..0.03)) * size;
        let cy = rng.gen_range(0.42..0.58) * size;
        let a = rng.gen_range(0.09..0.15) * size;
        let b = rng.gen_range(0.09..0.15) * size;
        let phi = rng.gen_range(0.0..std::f64::consts::PI);
        let ellipse = Ellipse {
            cy,
            cx,
            a,
            b,
            cos: phi.cos(),
            sin: phi.sin(),
        };
        for y in 0..spec.size {
            for x in 0..spec.size {
                if ellipse.contains(y as f64, x as f64) {
                    mask.set(y, x, (k + 1) as u8);
                }
            }
        }
    }
    mask
}

/// Unit-variance blurred-noise field: iid normals convolved with a small
/// periodic Gaussian, rescaled by the kernel's l2 norm.
fn blob_field(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..size * size).map(|_| standard_normal(rng)).collect();
    let kernel: Vec<f64> = {
        let k: Vec<f64> = (-BLOB_B_RADIUS..=BLOB_B_RADIUS)
            .map(|i| (-0.5 * (i as f64 / BLOB_B_SIGMA).powi(2)).exp())
            .collect();
        let sum: f64 = k.iter().sum();
        k.into_iter().map(|v| v / sum).collect()
    };
    let l2: f64 = kernel.iter().map(|v| v * v).sum::<f64>();
    let scale = 1.0 / l2; // separable: ||g||_2^2 = (sum k^2)^2 for 2-D
    let idx = |y: i64, x: i64| -> usize {
        let yy = y.rem_euclid(size as i64) as usize;
        let xx = x.rem_euclid(size as i64) as usize;
        yy * size + xx
    };
    let mut horizontal = vec![0.0f64; size * size];
    for y in 0..size as i64 {
        for x in 0..size as i64 {
            let mut s = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                s += k * raw[idx(y, x + i as i64 - BLOB_B_RADIUS)];
            }
            horizontal[idx(y, x)] = s;
        }
    }
    let mut out = vec![0.0f64; size * size];
    for y in 0..size as i64 {
        for x in 0..size as i64 {
            let mut s = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                s += k * horizontal[idx(y + i as i64 - BLOB_B_RADIUS, x)];
            }
            out[idx(y, x)] = s * scale;
        }
    }
    out
}

/// Per-sample organ base levels: the first pair straddles the background
/// with a coin-flipped dark/bright assignment; later organs flip their own
/// coins.
fn sample_organ_levels(spec: &SynthSpec, sample_id: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0x1E7, sample_id));
    let organs = spec.n_c - 1;
    let mut levels = Vec::with_capacity(organs);
    let first_sign: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    for k in 0..organs {
        let sign = match k {
            0 => first_sign,
            1 => -first_sign,
            _ => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        levels.push(BG_BASE + sign * ORGAN_DELTA_MAGNITUDES[k]);
    }
    levels
}

/// Renders one sample in the requested style. Styles share geometry and
/// organ levels; style B remaps the clean intensities and draws its own
/// noise.
pub fn render_sample(spec: &SynthSpec, sample_id: u64, style: Style) -> (Image2D, LabelMask) {
    let mask = sample_geometry(spec, sample_id);
    let organ_levels = sample_organ_levels(spec, sample_id);
    let base_level = |label: u8| -> f64 {
        if label == 0 {
            BG_BASE
        } else {
            organ_levels[(label - 1) as usize]
        }
    };
    let noise_tag = match style {
        Style::A => 0xA11,
        Style::B => 0xB22,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, noise_tag, sample_id));
    let (bg_sigma, organ_sigma) = match style {
        Style::A => (NOISE_A_BG, NOISE_A_ORGAN),
        Style::B => (NOISE_B_BG, NOISE_B_ORGAN),
    };
    let blobs = match style {
        Style::A => None,
        Style::B => Some(blob_field(spec.size, &mut rng)),
    };
    let img = Image2D::from_fn(spec.size, spec.size, |y, x| {
        let label = mask.get(y, x);
        let clean = match style {
            Style::A => base_level(label),
            Style::B => style_b_remap(base_level(label)),
        };
        let sigma = if label == 0 { bg_sigma } else { organ_sigma };
        let blob = blobs
            .as_ref()
            .map_or(0.0, |f| BLOB_B_AMPLITUDE * f[y * spec.size + x]);
        (clean + blob + sigma * standard_normal(&mut rng)).clamp(0.0, INTENSITY_MAX)
    });
    (img, mask)
}

/// Sample-id bases keep the four splits geometrically disjoint.
fn split_base(split: usize) -> u64 {
    split as u64 * 1_000_000
}

/// Generates the full dataset under `out_dir` and writes `manifest.json`.
///
/// Target-train masks are written to disk (they are needed to evaluate
/// oracles) but deliberately left out of the manifest, so training code that
/// goes through the manifest cannot see them.
pub fn synth_dataset(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();

    let splits = [
        ("source_train", 0usize, Style::A, spec.train_per_domain, true),
        ("source_test", 1, Style::A, spec.test_per_domain, true),
        ("target_train", 2, Style::B, spec.train_per_domain, false),
        ("target_test", 3, Style::B, spec.test_per_domain, true),
    ];

    let mut lists: Vec<Vec<ManifestEntry>> = vec![Vec::new(); 4];
    for (i, &(name, split, style, count, masks_in_manifest)) in splits.iter().enumerate() {
        let dir = out_dir.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for idx in 0..count {
            let (img, mask) = render_sample(spec, split_base(split) + idx as u64, style);
            let img_path = dir.join(format!("img_{idx:04}.pgm"));
            let mask_path = dir.join(format!("mask_{idx:04}.pgm"));
            save_image(&img, &img_path, BitDepth::Eight)?;
            save_mask(&mask, &mask_path)?;
            lists[i].push(ManifestEntry {
                image: img_path,
                mask: masks_in_manifest.then_some(mask_path),
            });
        }
    }

    let manifest = DatasetManifest {
        n_c: spec.n_c,
        level_count: spec.levels,
        source_train: lists[0].clone(),
        source_test: lists[1].clone(),
        target_train: lists[2].clone(),
        target_test: lists[3].clone(),
    };
    save_manifest(&manifest, out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::load_manifest;
    use tempfile::tempdir;

    fn tiny_spec(seed: u64) -> SynthSpec {
        SynthSpec {
            size: 32,
            n_c: 3,
            train_per_domain: 3,
            test_per_domain: 2,
            levels: 256,
            seed,
        }
    }

    #[test]
    fn same_seed_gives_byte_identical_datasets() {
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();
        synth_dataset(&tiny_spec(7), dir_a.path()).unwrap();
        synth_dataset(&tiny_spec(7), dir_b.path()).unwrap();
        for split in ["source_train", "source_test", "target_train", "target_test"] {
            let mut names: Vec<_> = std::fs::read_dir(dir_a.path().join(split))
                .unwrap()
                .map(|e| e.unwrap().file_name())
                .collect();
            names.sort();
            assert!(!names.is_empty());
            for name in names {
                let a = std::fs::read(dir_a.path().join(split).join(&name)).unwrap();
                let b = std::fs::read(dir_b.path().join(split).join(&name)).unwrap();
                assert_eq!(a, b, "{split}/{name:?}");
            }
        }
    }

    #[test]
    fn styles_share_geometry() {
        let spec = tiny_spec(3);
        let (_, mask_a) = render_sample(&spec, 17, Style::A);
        let (_, mask_b) = render_sample(&spec, 17, Style::B);
        assert_eq!(mask_a, mask_b);
    }

    #[test]
    fn styles_differ_in_intensity() {
        let spec = tiny_spec(3);
        let (img_a, _) = render_sample(&spec, 17, Style::A);
        let (img_b, _) = render_sample(&spec, 17, Style::B);
        assert!(img_a.max_abs_diff(&img_b) > 10.0);
    }

    #[test]
    fn masks_use_expected_labels() {
        let spec = tiny_spec(11);
        for id in 0..5 {
            let (_, mask) = render_sample(&spec, id, Style::A);
            assert!(mask.labels().iter().all(|&l| l < 3));
            // Every sample contains both organs somewhere.
            assert!(mask.labels().iter().any(|&l| l == 1));
            assert!(mask.labels().iter().any(|&l| l == 2));
        }
    }

    #[test]
    fn remap_is_decreasing_and_in_range() {
        let mut prev = style_b_remap(0.0);
        assert!((prev - 255.0).abs() < 1e-12);
        for v in 1..=255 {
            let cur = style_b_remap(v as f64);
            assert!(cur < prev);
            assert!((0.0..=255.0).contains(&cur));
            prev = cur;
        }
    }

    #[test]
    fn manifest_respects_the_label_contract() {
        let dir = tempdir().unwrap();
        synth_dataset(&tiny_spec(5), dir.path()).unwrap();
        let manifest = load_manifest(dir.path().join("manifest.json")).unwrap();
        assert_eq!(manifest.source_train.len(), 3);
        assert!(manifest.source_train.iter().all(|e| e.mask.is_some()));
        assert!(manifest.target_train.iter().all(|e| e.mask.is_none()));
        assert!(manifest.target_test.iter().all(|e| e.mask.is_some()));
        // The withheld masks still exist on disk.
        assert!(dir.path().join("target_train/mask_0000.pgm").is_file());
    }
}
