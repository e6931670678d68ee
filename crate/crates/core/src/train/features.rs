//! Per-pixel features for the linear segmenter.
//!
//! Six channels: intensity pre-scaled to [0,1], 3x3 mean, 3x3 standard
//! deviation, Gaussian blur (sigma 2, 9x9 support), and the normalized row
//! and column coordinates. All window operations use periodic boundaries, so
//! everything except the coordinate channels commutes with cyclic shifts.
//!
//! Intensities are scaled by the fixed 8-bit range rather than per-image
//! extrema: adapted training images carry outliers outside the nominal
//! range, and a per-image rescale would make thresholds incomparable across
//! images.

use crate::image::Image2D;

pub const FEATURE_COUNT: usize = 6;

/// Nominal intensity range of the toy pipeline's rasters.
pub const INTENSITY_SCALE: f64 = 255.0;

/// `FEATURE_COUNT` planes over the image grid, feature-major.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, feature: usize, pix: usize) -> f64 {
        self.data[feature * self.pixels() + pix]
    }

    pub fn plane(&self, feature: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[feature * n..(feature + 1) * n]
    }
}

pub fn extract_features(img: &Image2D) -> FeatureMap {
    let (h, w) = img.shape();
    let scaled = rescale_unit(img);
    let mean3 = box_mean3(&scaled);
    let std3 = box_std3(&scaled, &mean3);
    let blur = gaussian_blur(&scaled, 2.0, 4);

    let n = h * w;
    let mut data = Vec::with_capacity(FEATURE_COUNT * n);
    data.extend_from_slice(scaled.data());
    data.extend_from_slice(mean3.data());
    data.extend_from_slice(std3.data());
    data.extend_from_slice(blur.data());
    for y in 0..h {
        let v = if h > 1 { y as f64 / (h - 1) as f64 } else { 0.0 };
        data.extend(std::iter::repeat(v).take(w));
    }
    for _ in 0..h {
        for x in 0..w {
            data.push(if w > 1 { x as f64 / (w - 1) as f64 } else { 0.0 });
        }
    }
    FeatureMap {
        height: h,
        width: w,
        data,
    }
}

fn rescale_unit(img: &Image2D) -> Image2D {
    img.map(|v| v / INTENSITY_SCALE)
}

fn box_mean3(img: &Image2D) -> Image2D {
    let (h, w) = img.shape();
    Image2D::from_fn(h, w, |y, x| {
        let mut sum = 0.0;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let yy = (y as i64 + dy).rem_euclid(h as i64) as usize;
                let xx = (x as i64 + dx).rem_euclid(w as i64) as usize;
                sum += img.get(yy, xx);
            }
        }
        sum / 9.0
    })
}

fn box_std3(img: &Image2D, mean: &Image2D) -> Image2D {
    let (h, w) = img.shape();
    Image2D::from_fn(h, w, |y, x| {
        let m = mean.get(y, x);
        let mut sq = 0.0;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let yy = (y as i64 + dy).rem_euclid(h as i64) as usize;
                let xx = (x as i64 + dx).rem_euclid(w as i64) as usize;
                let d = img.get(yy, xx) - m;
                sq += d * d;
            }
        }
        (sq / 9.0).max(0.0).sqrt()
    })
}

/// Separable Gaussian blur with periodic boundaries; `radius` taps on each
/// side, kernel normalized to unit sum.
fn gaussian_blur(img: &Image2D, sigma: f64, radius: i64) -> Image2D {
    let kernel: Vec<f64> = {
        let raw: Vec<f64> = (-radius..=radius)
            .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    };
    let (h, w) = img.shape();
    let horizontal = Image2D::from_fn(h, w, |y, x| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let xx = (x as i64 + i as i64 - radius).rem_euclid(w as i64) as usize;
                k * img.get(y, xx)
            })
            .sum()
    });
    Image2D::from_fn(h, w, |y, x| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let yy = (y as i64 + i as i64 - radius).rem_euclid(h as i64) as usize;
                k * horizontal.get(yy, x)
            })
            .sum()
    })
}
