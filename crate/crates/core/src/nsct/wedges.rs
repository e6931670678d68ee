//! Directional wedge masks over the DFT grid.
//!
//! The directional bank splits a bandpass plane into `n_dirs` components by
//! multiplying its spectrum with angular wedge masks. Wedge `k` is centered
//! on orientation `k * pi / n_dirs`; angles are folded into `[-pi/2, pi/2)`
//! so each wedge pairs with its antipode, which keeps the masked spectra
//! Hermitian and the spatial components real.
//!
//! Construction guarantees two exact invariants:
//! * partition of unity -- the masks sum to 1 at every frequency bin;
//! * antipodal symmetry -- `mask[w] == mask[-w]` bin-for-bin, enforced by a
//!   final symmetrization pass (the angle of a Nyquist bin is ambiguous
//!   between its two aliased representatives, so pointwise assignment alone
//!   is not sufficient).
//!
//! A raised-cosine crossfade of angular width `feather` softens the wedge
//! boundaries; `feather = 0` gives hard wedges with exact boundary angles
//! assigned to the smaller wedge index.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A set of `n_dirs` angular masks over the `height x width` DFT grid.
#[derive(Debug, Clone)]
pub struct WedgeMaskSet {
    height: usize,
    width: usize,
    n_dirs: usize,
    feather: f64,
    masks: Vec<Vec<f64>>,
}

impl WedgeMaskSet {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn n_dirs(&self) -> usize {
        self.n_dirs
    }

    pub fn feather(&self) -> f64 {
        self.feather
    }

    /// Mask `k` as a row-major plane over the DFT grid.
    pub fn mask(&self, k: usize) -> &[f64] {
        &self.masks[k]
    }

    pub fn masks(&self) -> &[Vec<f64>] {
        &self.masks
    }
}

/// Default crossfade width for a bank with `n_dirs` wedges: a quarter of the
/// wedge width.
pub fn default_feather(n_dirs: usize) -> f64 {
    PI / n_dirs as f64 / 4.0
}

/// Builds the wedge masks for one bank.
///
/// `n_dirs` must be 2, 4 or 8 and `feather` must satisfy
/// `0 <= feather < pi / n_dirs`.
pub fn make_wedge_masks(
    height: usize,
    width: usize,
    n_dirs: usize,
    feather: f64,
) -> Result<WedgeMaskSet> {
    if !matches!(n_dirs, 2 | 4 | 8) {
        return Err(Error::invalid(format!(
            "n_dirs must be 2, 4 or 8, got {n_dirs}"
        )));
    }
    let delta = PI / n_dirs as f64;
    if !(0.0..delta).contains(&feather) {
        return Err(Error::invalid(format!(
            "feather {feather} out of range [0, {delta})"
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::invalid("mask dimensions must be positive"));
    }

    let mut masks = vec![vec![0.0f64; height * width]; n_dirs];

    for ky in 0..height {
        for kx in 0..width {
            let idx = ky * width + kx;
            if ky == 0 && kx == 0 {
                masks[0][idx] = 1.0; // DC goes to the smallest wedge index
                continue;
            }
            let wy = signed_freq(ky, height);
            let wx = signed_freq(kx, width);
            let theta = fold_half_turn(wy.atan2(wx));

            // Wedge k covers [k*delta - delta/2, k*delta + delta/2) after the
            // angle is shifted so that wedge 0 is centered on 0.
            let u = (theta + delta / 2.0) / delta;
            let j = u.floor();
            let frac = u - j;
            let bin = (j as isize).rem_euclid(n_dirs as isize) as usize;
            let left = (bin + n_dirs - 1) % n_dirs;
            let right = (bin + 1) % n_dirs;

            if feather == 0.0 {
                if frac == 0.0 {
                    // Exactly on a boundary: the two adjacent wedges tie and
                    // the smaller index wins.
                    masks[bin.min(left)][idx] = 1.0;
                } else {
                    masks[bin][idx] = 1.0;
                }
                continue;
            }

            let d_left = frac * delta;
            let d_right = (1.0 - frac) * delta;
            if d_left < feather / 2.0 {
                let w = ramp(0.5 + d_left / feather);
                masks[bin][idx] = w;
                masks[left][idx] = 1.0 - w;
            } else if d_right < feather / 2.0 {
                let w = ramp(0.5 + d_right / feather);
                masks[bin][idx] = w;
                masks[right][idx] = 1.0 - w;
            } else {
                masks[bin][idx] = 1.0;
            }
        }
    }

    // Symmetrize over antipodal bin pairs. For non-Nyquist bins this is a
    // no-op up to rounding; for Nyquist rows/columns it resolves the aliasing
    // ambiguity and makes mask[w] == mask[-w] hold bit-for-bit.
    for mask in &mut masks {
        let original = mask.clone();
        for ky in 0..height {
            for kx in 0..width {
                let anti = ((height - ky) % height) * width + ((width - kx) % width);
                mask[ky * width + kx] = 0.5 * (original[ky * width + kx] + original[anti]);
            }
        }
    }

    Ok(WedgeMaskSet {
        height,
        width,
        n_dirs,
        feather,
        masks,
    })
}

/// Raised-cosine transition, 0 at u=0 to 1 at u=1.
#[inline]
fn ramp(u: f64) -> f64 {
    0.5 * (1.0 - (PI * u).cos())
}

/// DFT index -> signed angular frequency in `(-pi, pi]`.
#[inline]
fn signed_freq(k: usize, n: usize) -> f64 {
    if 2 * k <= n {
        2.0 * PI * k as f64 / n as f64
    } else {
        2.0 * PI * (k as f64 - n as f64) / n as f64
    }
}

/// Folds an angle in `(-pi, pi]` into `[-pi/2, pi/2)`, identifying antipodal
/// directions.
#[inline]
fn fold_half_turn(theta: f64) -> f64 {
    if theta >= PI / 2.0 {
        theta - PI
    } else if theta < -PI / 2.0 {
        theta + PI
    } else {
        theta
    }
}
