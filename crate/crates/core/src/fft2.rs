//! Small 2-D FFT helper on top of rustfft, used for circular convolution.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Forward/inverse 2-D transforms for one fixed geometry.
pub struct Fft2 {
    h: usize,
    w: usize,
    fwd_row: Arc<dyn Fft<f64>>,
    fwd_col: Arc<dyn Fft<f64>>,
    inv_row: Arc<dyn Fft<f64>>,
    inv_col: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            fwd_row: planner.plan_fft_forward(w),
            fwd_col: planner.plan_fft_forward(h),
            inv_row: planner.plan_fft_inverse(w),
            inv_col: planner.plan_fft_inverse(h),
        }
    }

    fn transform(&self, buf: &mut [Complex<f64>], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        for r in buf.chunks_exact_mut(self.w) {
            row.process(r);
        }
        let mut column = vec![Complex::default(); self.h];
        for j in 0..self.w {
            for i in 0..self.h {
                column[i] = buf[i * self.w + j];
            }
            col.process(&mut column);
            for i in 0..self.h {
                buf[i * self.w + j] = column[i];
            }
        }
    }

    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex<f64>> {
        debug_assert_eq!(data.len(), self.h * self.w);
        let mut buf: Vec<Complex<f64>> = data.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.fwd_row, &self.fwd_col);
        buf
    }

    /// Inverse transform, returning the real part scaled by 1/(h*w).
    pub fn inverse_real(&self, spec: &[Complex<f64>]) -> Vec<f64> {
        debug_assert_eq!(spec.len(), self.h * self.w);
        let mut buf = spec.to_vec();
        self.transform(&mut buf, &self.inv_row, &self.inv_col);
        let scale = 1.0 / (self.h * self.w) as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }
}

/// Embeds a centered (cl, ck) kernel into an h x w frame with its center at
/// the origin, wrapping negative offsets, so that spectral multiplication
/// realizes centered circular convolution.
pub fn embed_kernel(weights: &[f64], kl: usize, kk: usize, h: usize, w: usize) -> Vec<f64> {
    let (cl, ck) = (kl as isize / 2, kk as isize / 2);
    let mut out = vec![0.0; h * w];
    for a in 0..kl as isize {
        for b in 0..kk as isize {
            let p = (a - cl).rem_euclid(h as isize) as usize;
            let q = (b - ck).rem_euclid(w as isize) as usize;
            out[p * w + q] += weights[(a as usize) * kk + b as usize];
        }
    }
    out
}
