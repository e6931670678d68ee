//! Thin 2-D FFT layer over `rustfft`, operating on row-major complex planes.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::image::Image2D;

pub(crate) type C64 = Complex<f64>;

/// A complex frequency plane over the DFT grid of an image.
#[derive(Debug, Clone)]
pub(crate) struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub data: Vec<C64>,
}

impl Spectrum {
    pub fn zip_mul_real(&self, plane: &[f64]) -> Spectrum {
        debug_assert_eq!(self.data.len(), plane.len());
        Spectrum {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(plane)
                .map(|(c, &r)| c * r)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Spectrum) -> Spectrum {
        debug_assert_eq!(self.data.len(), other.data.len());
        Spectrum {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

/// Planned forward/inverse transforms for one plane shape.
pub(crate) struct FftPair {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn forward(&self, img: &Image2D) -> Spectrum {
        debug_assert_eq!(img.shape(), (self.height, self.width));
        let mut data: Vec<C64> = img.data().iter().map(|&v| C64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.row_fwd, &self.col_fwd);
        Spectrum {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Inverse transform of a (nominally Hermitian) spectrum. Returns the real
    /// part and the largest imaginary residue observed before discarding it.
    pub fn inverse_real(&self, spec: &Spectrum) -> (Image2D, f64) {
        let mut data = spec.data.clone();
        self.transform(&mut data, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.height * self.width) as f64;
        let mut residue = 0.0f64;
        let real: Vec<f64> = data
            .iter()
            .map(|c| {
                residue = residue.max((c.im * scale).abs());
                c.re * scale
            })
            .collect();
        (
            Image2D::new(self.height, self.width, real).expect("inverse FFT produced non-finite"),
            residue,
        )
    }

    fn transform(&self, data: &mut [C64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        for chunk in data.chunks_exact_mut(self.width) {
            row.process(chunk);
        }
        let mut t = transpose(data, self.height, self.width);
        for chunk in t.chunks_exact_mut(self.height) {
            col.process(chunk);
        }
        let back = transpose(&t, self.width, self.height);
        data.copy_from_slice(&back);
    }
}

fn transpose(data: &[C64], rows: usize, cols: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}
