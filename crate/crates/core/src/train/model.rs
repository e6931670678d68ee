//! The per-pixel linear-softmax segmenter and its checkpoint format.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image2D, LabelMask};
use crate::losses::LogitMap;
use crate::train::features::{extract_features, FeatureMap, FEATURE_COUNT};

/// Magic tag of the checkpoint container.
pub const MODEL_MAGIC: [u8; 8] = *b"PXSEGMDL";

/// A linear per-pixel classifier: `logit[c] = w[c] . features + b[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    n_c: usize,
    n_features: usize,
    /// `n_c * n_features`, class-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ToyModel {
    pub fn zeros(n_c: usize, n_features: usize) -> Self {
        Self {
            n_c,
            n_features,
            weights: vec![0.0; n_c * n_features],
            bias: vec![0.0; n_c],
        }
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Flat parameter view: all weights, then all biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.weights.len() + self.bias.len());
        let split = self.weights.len();
        self.weights.copy_from_slice(&params[..split]);
        self.bias.copy_from_slice(&params[split..]);
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Per-pixel affine map over precomputed features.
    pub fn predict(&self, features: &FeatureMap) -> Result<LogitMap> {
        let pixels = features.pixels();
        let mut data = vec![0.0f64; self.n_c * pixels];
        for c in 0..self.n_c {
            let out = &mut data[c * pixels..(c + 1) * pixels];
            out.iter_mut().for_each(|v| *v = self.bias[c]);
            for f in 0..self.n_features {
                let w = self.weights[c * self.n_features + f];
                if w == 0.0 {
                    continue;
                }
                for (o, &x) in out.iter_mut().zip(features.plane(f)) {
                    *o += w * x;
                }
            }
        }
        LogitMap::new(self.n_c, features.height(), features.width(), data)
    }

    /// Hard segmentation of an image (features extracted internally).
    pub fn predict_mask(&self, img: &Image2D) -> Result<LabelMask> {
        let logits = self.predict(&extract_features(img))?;
        let pixels = logits.pixels();
        let mut labels = vec![0u8; pixels];
        for pix in 0..pixels {
            let mut best = 0usize;
            for c in 1..self.n_c {
                if logits.get(c, pix) > logits.get(best, pix) {
                    best = c;
                }
            }
            labels[pix] = best as u8;
        }
        LabelMask::new(logits.height(), logits.width(), labels)
    }

    /// Checkpoint: magic, u32 class count, u32 feature count, then weights
    /// and biases as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.param_count() * 8);
        out.extend_from_slice(&MODEL_MAGIC);
        out.extend_from_slice(&(self.n_c as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_features as u32).to_le_bytes());
        for v in self.weights.iter().chain(&self.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || bytes[..8] != MODEL_MAGIC {
            return Err(Error::file_format(path, "not a model checkpoint"));
        }
        let n_c = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n_features = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let expected = 16 + (n_c * n_features + n_c) * 8;
        if bytes.len() != expected {
            return Err(Error::file_format(
                path,
                format!("expected {expected} bytes, got {}", bytes.len()),
            ));
        }
        let mut values = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let weights: Vec<f64> = values.by_ref().take(n_c * n_features).collect();
        let bias: Vec<f64> = values.collect();
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::file_format(path, "non-finite parameters"));
        }
        Ok(Self {
            n_c,
            n_features,
            weights,
            bias,
        })
    }

    /// Builds a model sized for the standard feature extractor.
    pub fn for_features(n_c: usize) -> Self {
        Self::zeros(n_c, FEATURE_COUNT)
    }
}
