//! Three-level shift-invariant pyramid + directional decomposition with an
//! exact additive inverse.
//!
//! The pyramid is additive: each level applies a dilated binomial lowpass
//! under periodic boundary handling, and the bandpass plane is the
//! difference `LS_{l-1} - LS_l`. Each bandpass plane is then split into
//! `2^l` directional components by wedge masking in the frequency plane.
//! Because the wedge masks of every bank form a partition of unity and the
//! pyramid telescopes, the 15 output planes sum back to the input exactly
//! (to floating-point rounding), which is what makes component swapping and
//! band-stop reconstruction well-posed.
//!
//! All filtering happens in the DFT domain, so boundary handling is
//! periodic everywhere and the additive identity holds at the borders too.

mod fft;
pub mod wedges;

use crate::error::{Error, Result};
use crate::fcs::{FcSet, FcStack, FC_COUNT};
use crate::image::Image2D;

pub use wedges::{default_feather, make_wedge_masks, WedgeMaskSet};

use fft::{FftPair, Spectrum};

/// Smallest image side the decomposition accepts; the level-3 dilated kernel
/// spans 17 taps.
pub const MIN_SIDE: usize = 16;

/// Number of pyramid levels.
pub const LEVELS: usize = 3;

/// DFT-domain response of the separable binomial lowpass at `level` (1..=3):
/// the 5-tap kernel `[1,4,6,4,1]/16` (outer product with itself), a-trous
/// dilated by `2^(level-1)`, under periodic convolution. The response at DC
/// is exactly 1.
pub fn binomial_lowpass_spectrum(height: usize, width: usize, level: usize) -> Result<Image2D> {
    if !(1..=LEVELS).contains(&level) {
        return Err(Error::invalid(format!("level must be 1..=3, got {level}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::invalid("dimensions must be positive"));
    }
    let dilation = 1usize << (level - 1);
    let row = axis_response(width, dilation);
    let col = axis_response(height, dilation);
    let mut data = Vec::with_capacity(height * width);
    for ky in 0..height {
        for kx in 0..width {
            data.push(col[ky] * row[kx]);
        }
    }
    Image2D::new(height, width, data)
}

/// 1-D response of the dilated binomial kernel at each DFT bin:
/// `(6 + 8 cos(d*w) + 2 cos(2*d*w)) / 16` with `w = 2*pi*k/n`.
fn axis_response(n: usize, dilation: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let w = 2.0 * std::f64::consts::PI * k as f64 / n as f64 * dilation as f64;
            (6.0 + 8.0 * w.cos() + 2.0 * (2.0 * w).cos()) / 16.0
        })
        .collect()
}

/// Pre-planned transforms and masks for one image shape.
///
/// Building a plan costs a few mask constructions; reuse it when
/// decomposing many images of the same shape.
pub struct NsctPlan {
    height: usize,
    width: usize,
    fft: FftPair,
    responses: [Vec<f64>; LEVELS],
    banks: [WedgeMaskSet; LEVELS],
}

impl NsctPlan {
    /// `feather = None` uses the per-bank default crossfade width.
    pub fn new(height: usize, width: usize, feather: Option<f64>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::invalid(format!(
                "image too small: {height}x{width}, need at least {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        let responses = [
            binomial_lowpass_spectrum(height, width, 1)?.data().to_vec(),
            binomial_lowpass_spectrum(height, width, 2)?.data().to_vec(),
            binomial_lowpass_spectrum(height, width, 3)?.data().to_vec(),
        ];
        let bank = |n_dirs: usize| {
            make_wedge_masks(
                height,
                width,
                n_dirs,
                feather.unwrap_or_else(|| default_feather(n_dirs)),
            )
        };
        Ok(Self {
            height,
            width,
            fft: FftPair::new(height, width),
            responses,
            banks: [bank(2)?, bank(4)?, bank(8)?],
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Full three-level decomposition into 15 planes.
    pub fn forward(&self, img: &Image2D) -> Result<FcStack> {
        self.check_shape(img)?;
        let spectrum = self.fft.forward(img);
        let (lowpass, bands) = self.pyramid_spectra(&spectrum);

        let mut planes = Vec::with_capacity(FC_COUNT);
        planes.push(self.fft.inverse_real(&lowpass).0);
        for (band, bank) in bands.iter().zip(&self.banks) {
            for k in 0..bank.n_dirs() {
                let masked = band.zip_mul_real(bank.mask(k));
                let (component, residue) = self.fft.inverse_real(&masked);
                debug_assert!(residue < 1e-9, "directional component residue {residue}");
                planes.push(component);
            }
        }
        FcStack::new(planes)
    }

    /// Pyramid stage only: `(LS_3, [BS_1, BS_2, BS_3])` as spatial planes.
    pub fn decompose_pyramid(&self, img: &Image2D) -> Result<(Image2D, [Image2D; LEVELS])> {
        self.check_shape(img)?;
        let spectrum = self.fft.forward(img);
        let (lowpass, bands) = self.pyramid_spectra(&spectrum);
        let ls = self.fft.inverse_real(&lowpass).0;
        let [b1, b2, b3] = bands;
        Ok((
            ls,
            [
                self.fft.inverse_real(&b1).0,
                self.fft.inverse_real(&b2).0,
                self.fft.inverse_real(&b3).0,
            ],
        ))
    }

    /// Splits one bandpass plane with the given mask set.
    pub fn directional_split(&self, band: &Image2D, masks: &WedgeMaskSet) -> Result<Vec<Image2D>> {
        self.check_shape(band)?;
        if masks.shape() != band.shape() {
            return Err(Error::ShapeMismatch {
                expected: band.shape(),
                got: masks.shape(),
            });
        }
        let spectrum = self.fft.forward(band);
        Ok((0..masks.n_dirs())
            .map(|k| {
                let (component, residue) = self.fft.inverse_real(&spectrum.zip_mul_real(masks.mask(k)));
                debug_assert!(residue < 1e-9);
                component
            })
            .collect())
    }

    fn pyramid_spectra(&self, spectrum: &Spectrum) -> (Spectrum, [Spectrum; LEVELS]) {
        let l1 = spectrum.zip_mul_real(&self.responses[0]);
        let l2 = l1.zip_mul_real(&self.responses[1]);
        let l3 = l2.zip_mul_real(&self.responses[2]);
        let b1 = spectrum.sub(&l1);
        let b2 = l1.sub(&l2);
        let b3 = l2.sub(&l3);
        (l3, [b1, b2, b3])
    }

    fn check_shape(&self, img: &Image2D) -> Result<()> {
        if img.shape() != (self.height, self.width) {
            return Err(Error::ShapeMismatch {
                expected: (self.height, self.width),
                got: img.shape(),
            });
        }
        Ok(())
    }
}

/// One-shot decomposition; plans internally.
pub fn nsct_forward(img: &Image2D, feather: Option<f64>) -> Result<FcStack> {
    NsctPlan::new(img.height(), img.width(), feather)?.forward(img)
}

/// Pyramid stage without the directional banks.
pub fn nsp_decompose(img: &Image2D) -> Result<(Image2D, [Image2D; LEVELS])> {
    NsctPlan::new(img.height(), img.width(), None)?.decompose_pyramid(img)
}

/// Directional split of one bandpass plane.
pub fn nsdfb_decompose(band: &Image2D, masks: &WedgeMaskSet) -> Result<Vec<Image2D>> {
    if masks.shape() != band.shape() {
        return Err(Error::ShapeMismatch {
            expected: band.shape(),
            got: masks.shape(),
        });
    }
    let fft = FftPair::new(band.height(), band.width());
    let spectrum = fft.forward(band);
    Ok((0..masks.n_dirs())
        .map(|k| fft.inverse_real(&spectrum.zip_mul_real(masks.mask(k))).0)
        .collect())
}

/// Exact inverse: the plain sum of all 15 planes.
pub fn nsct_inverse(stack: &FcStack) -> Image2D {
    stack.sum_planes(FcSet::ALL)
}

/// Band-stop reconstruction: sums only the planes in `keep`.
pub fn reconstruct_subset(stack: &FcStack, keep: FcSet) -> Image2D {
    stack.sum_planes(keep)
}
