//! Histogram specification with a momentum-averaged target reference.
//!
//! The pipeline quantizes images to `L` integer levels, builds equalization
//! tables for source and reference, composes them into a level map (nearest
//! reference entry, smallest level on ties), and applies the map per pixel.
//! The reference image is the running mean of target batches, folded with
//! momentum `eta` so it drifts slowly instead of jumping per batch.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{round_half_away, Image2D};

/// Magic tag of the momentum-state checkpoint (single-plane container).
pub const MOMENTUM_MAGIC: [u8; 8] = *b"MOMAVG\0\0";

/// An image quantized to integer levels `0..levels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantImage {
    height: usize,
    width: usize,
    levels: u32,
    values: Vec<u32>,
}

impl QuantImage {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    /// Reinterprets the levels as a real-valued image in `[0, levels-1]`.
    pub fn to_image(&self) -> Image2D {
        Image2D::new(
            self.height,
            self.width,
            self.values.iter().map(|&v| v as f64).collect(),
        )
        .expect("quantized values are finite")
    }
}

/// Affine quantization of `[min, max]` onto `0..=L-1`, rounded half away
/// from zero. A constant image maps to all zeros.
pub fn quantize(img: &Image2D, levels: u32) -> Result<QuantImage> {
    if levels < 2 {
        return Err(Error::invalid(format!("levels must be >= 2, got {levels}")));
    }
    let (mn, mx) = img.min_max();
    if !mn.is_finite() || !mx.is_finite() {
        return Err(Error::invalid("cannot quantize non-finite image"));
    }
    let span = mx - mn;
    let values = if span == 0.0 {
        vec![0u32; img.len()]
    } else {
        let scale = (levels - 1) as f64 / span;
        img.data()
            .iter()
            .map(|&v| {
                let q = round_half_away((v - mn) * scale);
                (q as u32).min(levels - 1)
            })
            .collect()
    };
    Ok(QuantImage {
        height: img.height(),
        width: img.width(),
        levels,
        values,
    })
}

/// Level occupancy counts with their normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    counts: Vec<u64>,
    total: u64,
}

impl Histogram {
    pub fn of(q: &QuantImage) -> Histogram {
        let mut counts = vec![0u64; q.levels as usize];
        for &v in &q.values {
            counts[v as usize] += 1;
        }
        Histogram {
            counts,
            total: q.values.len() as u64,
        }
    }

    /// Builds a histogram directly from probabilities; they must be
    /// non-negative and sum to 1.
    pub fn from_probabilities(p: &[f64]) -> Result<Histogram> {
        if p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::invalid("probabilities must be non-negative"));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "histogram not normalized: probabilities sum to {sum}"
            )));
        }
        // Scale to a large integer total so downstream cumulative sums stay
        // exact; 2^32 keeps u64 sums well within range.
        const SCALE: f64 = 4294967296.0;
        let counts: Vec<u64> = p.iter().map(|&v| (v * SCALE) as u64).collect();
        let total = counts.iter().sum::<u64>().max(1);
        Ok(Histogram { counts, total })
    }

    pub fn levels(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, level: usize) -> u64 {
        self.counts[level]
    }

    pub fn probability(&self, level: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.counts[level] as f64 / self.total as f64
        }
    }

    /// L1 distance between the normalized histograms.
    pub fn l1_distance(&self, other: &Histogram) -> f64 {
        (0..self.levels().max(other.levels()))
            .map(|k| {
                let a = if k < self.levels() { self.probability(k) } else { 0.0 };
                let b = if k < other.levels() { other.probability(k) } else { 0.0 };
                (a - b).abs()
            })
            .sum()
    }
}

/// A lookup table from level to level. Tables produced here are
/// non-decreasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelMap(Vec<u32>);

impl LevelMap {
    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn identity(levels: u32) -> LevelMap {
        LevelMap((0..levels).collect())
    }
}

/// Equalization table: level `k` maps to `round((L-1) * cum_p(k))`, clamped
/// to `L-1`.
pub fn equalization_transform(h: &Histogram) -> LevelMap {
    let levels = h.levels() as u32;
    let total = h.counts.iter().sum::<u64>().max(1);
    let mut cum = 0u64;
    let mut out = Vec::with_capacity(h.levels());
    for k in 0..h.levels() {
        cum += h.counts[k];
        let mu = round_half_away((levels - 1) as f64 * cum as f64 / total as f64);
        out.push((mu as u32).min(levels - 1));
    }
    LevelMap(out)
}

/// Composes the source equalization `T` with the nearest-entry inverse of the
/// reference equalization `G`: source level `k` maps to the level `t`
/// minimizing `|G[t] - T[k]|`, smallest `t` on ties.
pub fn build_matching(src_h: &Histogram, ref_h: &Histogram) -> Result<LevelMap> {
    if src_h.levels() != ref_h.levels() {
        return Err(Error::invalid(format!(
            "histograms use different level counts: {} vs {}",
            src_h.levels(),
            ref_h.levels()
        )));
    }
    let t = equalization_transform(src_h);
    let g = equalization_transform(ref_h);

    // First occurrence of each distinct value in the non-decreasing G.
    let mut firsts: Vec<(u32, u32)> = Vec::new(); // (value, first level)
    for (level, &value) in g.0.iter().enumerate() {
        if firsts.last().map(|&(v, _)| v) != Some(value) {
            firsts.push((value, level as u32));
        }
    }

    let map = t
        .0
        .iter()
        .map(|&mu| {
            let pos = firsts.partition_point(|&(v, _)| v < mu);
            // Candidates: last distinct value below mu and first at/above it.
            let mut best: Option<(u64, u32)> = None;
            for cand in [pos.checked_sub(1), (pos < firsts.len()).then_some(pos)]
                .into_iter()
                .flatten()
            {
                let (value, level) = firsts[cand];
                let dist = (value as i64 - mu as i64).unsigned_abs();
                match best {
                    Some((bd, bl)) if (dist, level) >= (bd, bl) => {}
                    _ => best = Some((dist, level)),
                }
            }
            best.expect("histogram has at least one level").1
        })
        .collect();
    Ok(LevelMap(map))
}

/// Per-pixel table lookup.
pub fn apply_matching(q: &QuantImage, map: &LevelMap) -> Result<QuantImage> {
    if map.0.len() != q.levels as usize {
        return Err(Error::invalid(format!(
            "level map has {} entries for {} levels",
            map.0.len(),
            q.levels
        )));
    }
    Ok(QuantImage {
        height: q.height,
        width: q.width,
        levels: q.levels,
        values: q.values.iter().map(|&v| map.0[v as usize]).collect(),
    })
}

/// Element-wise mean of a non-empty batch of equal-shape images.
pub fn batch_mean(images: &[Image2D]) -> Result<Image2D> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("batch_mean of empty batch"))?;
    let mut acc = vec![0.0f64; first.len()];
    for img in images {
        first.check_same_shape(img)?;
        for (a, v) in acc.iter_mut().zip(img.data()) {
            *a += v;
        }
    }
    let n = images.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Image2D::new(first.height(), first.width(), acc)
}

/// Running mean of target batch averages with momentum weighting.
///
/// The first batch initializes the mean directly; thereafter
/// `mean = eta * batch_mean + (1 - eta) * mean`. Updates are order-dependent
/// and must be applied serially.
#[derive(Debug, Clone)]
pub struct MomentumAverage {
    mean: Option<Image2D>,
    eta: f64,
    batches_seen: u64,
}

impl MomentumAverage {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::invalid(format!("eta must be in (0, 1], got {eta}")));
        }
        Ok(Self {
            mean: None,
            eta,
            batches_seen: 0,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn batches_seen(&self) -> u64 {
        self.batches_seen
    }

    pub fn mean(&self) -> Option<&Image2D> {
        self.mean.as_ref()
    }

    /// Folds one batch into the running mean.
    pub fn update(&mut self, batch: &[Image2D]) -> Result<()> {
        let m = batch_mean(batch)?;
        self.mean = Some(match self.mean.take() {
            None => m,
            Some(prev) => {
                prev.check_same_shape(&m)?;
                Image2D::from_fn(m.height(), m.width(), |y, x| {
                    self.eta * m.get(y, x) + (1.0 - self.eta) * prev.get(y, x)
                })
            }
        });
        self.batches_seen += 1;
        Ok(())
    }

    /// Checkpoints the state to a single-plane binary container.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mean = self
            .mean
            .as_ref()
            .ok_or_else(|| Error::invalid("cannot save an uninitialized momentum state"))?;
        let mut out = Vec::with_capacity(36 + mean.len() * 8);
        out.extend_from_slice(&MOMENTUM_MAGIC);
        out.extend_from_slice(&(mean.height() as u32).to_le_bytes());
        out.extend_from_slice(&(mean.width() as u32).to_le_bytes());
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&self.eta.to_le_bytes());
        out.extend_from_slice(&self.batches_seen.to_le_bytes());
        for &v in mean.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 36 || bytes[..8] != MOMENTUM_MAGIC {
            return Err(Error::file_format(path, "not a momentum-state file"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (h, w, planes) = (u32_at(8), u32_at(12), u32_at(16));
        if planes != 1 {
            return Err(Error::file_format(path, "expected a single plane"));
        }
        let eta = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
        let batches_seen = u64::from_le_bytes(bytes[28..36].try_into().unwrap());
        let expected = 36 + h * w * 8;
        if bytes.len() < expected {
            return Err(Error::file_format(path, "truncated state"));
        }
        let data: Vec<f64> = bytes[36..expected]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            mean: Some(Image2D::new(h, w, data).map_err(|e| {
                Error::file_format(path, format!("bad plane: {e}"))
            })?),
            eta,
            batches_seen,
        })
    }
}

/// Matches `src` against the current momentum mean: both are quantized to
/// `levels`, the level map is built from their histograms, and the mapped
/// source comes back as an image with values in `[0, levels-1]`.
pub fn spatial_transfer(src: &Image2D, state: &MomentumAverage, levels: u32) -> Result<Image2D> {
    let mean = state
        .mean()
        .ok_or_else(|| Error::invalid("momentum state not initialized; fold in a batch first"))?;
    Ok(match_to_reference(src, mean, levels)?.to_image())
}

/// Histogram-matches `src` to an explicit reference image.
pub fn match_to_reference(src: &Image2D, reference: &Image2D, levels: u32) -> Result<QuantImage> {
    let src_q = quantize(src, levels)?;
    let ref_q = quantize(reference, levels)?;
    let map = build_matching(&Histogram::of(&src_q), &Histogram::of(&ref_q))?;
    apply_matching(&src_q, &map)
}

/// Like [`match_to_reference`], then maps the matched levels back through the
/// reference's affine quantization range. The output is commensurate with
/// the reference's physical intensities, which is what a consumer needs when
/// it mixes matched images with raw ones.
pub fn match_to_reference_calibrated(
    src: &Image2D,
    reference: &Image2D,
    levels: u32,
) -> Result<Image2D> {
    let matched = match_to_reference(src, reference, levels)?;
    let (mn, mx) = reference.min_max();
    let step = if mx > mn {
        (mx - mn) / (levels - 1) as f64
    } else {
        0.0
    };
    Ok(matched.to_image().map(|level| mn + level * step))
}

/// Calibrated spatial transfer against the momentum state's current mean.
pub fn spatial_transfer_calibrated(
    src: &Image2D,
    state: &MomentumAverage,
    levels: u32,
) -> Result<Image2D> {
    let mean = state
        .mean()
        .ok_or_else(|| Error::invalid("momentum state not initialized; fold in a batch first"))?;
    match_to_reference_calibrated(src, mean, levels)
}

/// How the matching reference is chosen for a batch of source images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchStrategy {
    /// Mean image of the entire target set, computed once.
    Entire,
    /// A randomly selected single target image per source image.
    Single,
    /// Mean of a freshly sampled target batch per source batch.
    Batch,
    /// Like `Batch`, folded through the momentum average.
    Momentum,
}

impl MatchStrategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "entire" => Ok(Self::Entire),
            "single" => Ok(Self::Single),
            "batch" => Ok(Self::Batch),
            "momentum" => Ok(Self::Momentum),
            other => Err(Error::invalid(format!(
                "unknown strategy {other:?}; expected entire|single|batch|momentum"
            ))),
        }
    }
}

/// Matches every source image against target statistics under the chosen
/// strategy. Deterministic for a fixed seed.
pub fn match_images(
    sources: &[Image2D],
    targets: &[Image2D],
    strategy: MatchStrategy,
    levels: u32,
    eta: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Image2D>> {
    if targets.is_empty() {
        return Err(Error::invalid("no target images"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    match strategy {
        MatchStrategy::Entire => {
            let mean = batch_mean(targets)?;
            sources
                .iter()
                .map(|s| Ok(match_to_reference(s, &mean, levels)?.to_image()))
                .collect()
        }
        MatchStrategy::Single => sources
            .iter()
            .map(|s| {
                let t = &targets[rng.gen_range(0..targets.len())];
                Ok(match_to_reference(s, t, levels)?.to_image())
            })
            .collect(),
        MatchStrategy::Batch | MatchStrategy::Momentum => {
            let mut state = MomentumAverage::new(eta)?;
            let mut out = Vec::with_capacity(sources.len());
            for chunk in sources.chunks(batch_size) {
                let batch = sample_batch(targets, batch_size, rng);
                if strategy == MatchStrategy::Batch {
                    state = MomentumAverage::new(eta)?; // no carry-over
                }
                state.update(&batch)?;
                for s in chunk {
                    out.push(spatial_transfer(s, &state, levels)?);
                }
            }
            Ok(out)
        }
    }
}

/// Samples `batch_size` target images without replacement (with replacement
/// once the pool is exhausted).
pub fn sample_batch(targets: &[Image2D], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Image2D> {
    if targets.len() >= batch_size {
        let mut idx: Vec<usize> = (0..targets.len()).collect();
        idx.shuffle(rng);
        idx[..batch_size].iter().map(|&i| targets[i].clone()).collect()
    } else {
        (0..batch_size)
            .map(|_| targets[rng.gen_range(0..targets.len())].clone())
            .collect()
    }
}
