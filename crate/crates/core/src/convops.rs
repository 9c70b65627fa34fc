//! Convolution operators, their adjoints, and explicit 1-D Toeplitz
//! matrices for spectral analysis.
//!
//! The deblurring pipeline drives everything through [`KernelOperator`],
//! the matrix-free view of "convolve the fixed image with a kernel-shaped
//! coefficient block". The explicit [`Toeplitz1D`] matrix is the 1-D
//! counterpart used by the analysis experiments.

use crate::error::{Error, Result};
use crate::fft2::{embed_kernel, Fft2};
use crate::types::{Image, Kernel};
use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;

/// How samples outside the image frame are extended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMode {
    ZeroPad,
    Replicate,
    Circular,
}

#[inline]
fn ext_index(i: isize, n: usize, mode: BoundaryMode) -> Option<usize> {
    if i >= 0 && (i as usize) < n {
        return Some(i as usize);
    }
    match mode {
        BoundaryMode::ZeroPad => None,
        BoundaryMode::Replicate => Some(i.clamp(0, n as isize - 1) as usize),
        BoundaryMode::Circular => Some(i.rem_euclid(n as isize) as usize),
    }
}

/// Kernel area above which the circular path switches to the transform
/// domain. The two paths agree to 1e-8 (enforced by test).
const FFT_AREA_THRESHOLD: usize = 81;

// Zero-padding is well-defined for kernels overhanging the image, so only
// the wrapping/clamping modes insist the kernel fits.
fn check_kernel_fits(x: &Image, kl: usize, kk: usize, mode: BoundaryMode) -> Result<()> {
    if mode != BoundaryMode::ZeroPad && (kl > x.height() || kk > x.width()) {
        return Err(Error::DimensionMismatch(format!(
            "kernel {}x{} larger than image {}x{}",
            kl,
            kk,
            x.height(),
            x.width()
        )));
    }
    Ok(())
}

fn convolve2d_direct(
    x: &Image,
    weights: &[f64],
    kl: usize,
    kk: usize,
    mode: BoundaryMode,
) -> Vec<f64> {
    let (h, w) = (x.height(), x.width());
    let (cl, ck) = (kl as isize / 2, kk as isize / 2);
    let mut out = vec![0.0; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            let mut acc = 0.0;
            for a in 0..kl as isize {
                let wa = &weights[(a as usize) * kk..(a as usize + 1) * kk];
                let Some(p) = ext_index(i - a + cl, h, mode) else { continue };
                for b in 0..kk as isize {
                    let Some(q) = ext_index(j - b + ck, w, mode) else { continue };
                    acc += wa[b as usize] * x.get(p, q);
                }
            }
            out[(i as usize) * w + j as usize] = acc;
        }
    }
    out
}

fn convolve2d_circular_fft(x: &Image, weights: &[f64], kl: usize, kk: usize) -> Vec<f64> {
    let (h, w) = (x.height(), x.width());
    let fft = Fft2::new(h, w);
    let xs = fft.forward_real(x.data());
    let ks = fft.forward_real(&embed_kernel(weights, kl, kk, h, w));
    let prod: Vec<Complex<f64>> = xs.iter().zip(ks.iter()).map(|(a, b)| a * b).collect();
    fft.inverse_real(&prod)
}

/// Centered same-size 2-D convolution of `x` with `k` under the chosen
/// boundary extension.
pub fn convolve2d(x: &Image, k: &Kernel, mode: BoundaryMode) -> Result<Image> {
    check_kernel_fits(x, k.size_l(), k.size_k(), mode)?;
    let data = if mode == BoundaryMode::Circular && k.size_l() * k.size_k() > FFT_AREA_THRESHOLD {
        convolve2d_circular_fft(x, k.weights(), k.size_l(), k.size_k())
    } else {
        convolve2d_direct(x, k.weights(), k.size_l(), k.size_k(), mode)
    };
    Image::new(x.height(), x.width(), data)
}

/// Adjoint of `x -> convolve2d(x, k, mode)` applied to a residual image.
/// Built by scattering, so it is the exact transpose for every mode.
pub fn correlate2d_adjoint(r: &Image, k: &Kernel, mode: BoundaryMode) -> Result<Image> {
    check_kernel_fits(r, k.size_l(), k.size_k(), mode)?;
    let (h, w) = (r.height(), r.width());
    let (kl, kk) = (k.size_l(), k.size_k());
    let (cl, ck) = (kl as isize / 2, kk as isize / 2);
    let mut out = vec![0.0; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            let rv = r.get(i as usize, j as usize);
            for a in 0..kl as isize {
                let Some(p) = ext_index(i - a + cl, h, mode) else { continue };
                for b in 0..kk as isize {
                    let Some(q) = ext_index(j - b + ck, w, mode) else { continue };
                    out[p * w + q] += k.get(a as usize, b as usize) * rv;
                }
            }
        }
    }
    Image::new(h, w, out)
}

/// Matrix-free view of the fixed image `x` acting linearly on kernel-shaped
/// coefficient blocks: `matvec` maps kernel -> image, `adjoint_matvec` maps
/// image -> kernel.
pub struct KernelOperator {
    x: Image,
    kl: usize,
    kk: usize,
    mode: BoundaryMode,
    // Cached spectra for the circular fast path.
    fft: Option<Fft2>,
    x_spec: Vec<Complex<f64>>,
}

/// Builds the linear-map handle realizing convolution by `x` on kernels of
/// the given odd dimensions.
pub fn conv_image_as_operator_on_kernel(
    x: &Image,
    kdims: (usize, usize),
    mode: BoundaryMode,
) -> Result<KernelOperator> {
    let (kl, kk) = kdims;
    if kl % 2 == 0 || kk % 2 == 0 || kl == 0 || kk == 0 {
        return Err(Error::InvalidKernel(format!("kernel dims must be odd, got {kl}x{kk}")));
    }
    check_kernel_fits(x, kl, kk, mode)?;
    let (fft, x_spec) = if mode == BoundaryMode::Circular {
        let fft = Fft2::new(x.height(), x.width());
        let spec = fft.forward_real(x.data());
        (Some(fft), spec)
    } else {
        (None, Vec::new())
    };
    Ok(KernelOperator { x: x.clone(), kl, kk, mode, fft, x_spec })
}

impl KernelOperator {
    pub fn kdims(&self) -> (usize, usize) {
        (self.kl, self.kk)
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.x.height(), self.x.width())
    }

    /// Kernel coefficients (row-major, length L*K) -> image.
    pub fn matvec(&self, coeffs: &[f64]) -> Image {
        debug_assert_eq!(coeffs.len(), self.kl * self.kk);
        let (h, w) = (self.x.height(), self.x.width());
        let data = match &self.fft {
            Some(fft) => {
                let ks = fft.forward_real(&embed_kernel(coeffs, self.kl, self.kk, h, w));
                let prod: Vec<Complex<f64>> =
                    self.x_spec.iter().zip(ks.iter()).map(|(a, b)| a * b).collect();
                fft.inverse_real(&prod)
            }
            None => convolve2d_direct(&self.x, coeffs, self.kl, self.kk, self.mode),
        };
        Image::new(h, w, data).expect("finite inputs yield finite convolution")
    }

    /// Image residual -> kernel coefficients (exact transpose of `matvec`).
    pub fn adjoint_matvec(&self, r: &Image) -> Vec<f64> {
        debug_assert!(r.height() == self.x.height() && r.width() == self.x.width());
        let (h, w) = (self.x.height(), self.x.width());
        let (cl, ck) = (self.kl as isize / 2, self.kk as isize / 2);
        match &self.fft {
            Some(fft) => {
                let rs = fft.forward_real(r.data());
                let prod: Vec<Complex<f64>> = self
                    .x_spec
                    .iter()
                    .zip(rs.iter())
                    .map(|(a, b)| a.conj() * b)
                    .collect();
                let s = fft.inverse_real(&prod);
                let mut out = vec![0.0; self.kl * self.kk];
                for a in 0..self.kl as isize {
                    for b in 0..self.kk as isize {
                        let p = (a - cl).rem_euclid(h as isize) as usize;
                        let q = (b - ck).rem_euclid(w as isize) as usize;
                        out[(a as usize) * self.kk + b as usize] = s[p * w + q];
                    }
                }
                out
            }
            None => {
                let mut out = vec![0.0; self.kl * self.kk];
                for a in 0..self.kl as isize {
                    for b in 0..self.kk as isize {
                        let mut acc = 0.0;
                        for i in 0..h as isize {
                            let Some(p) = ext_index(i - a + cl, h, self.mode) else { continue };
                            for j in 0..w as isize {
                                let Some(q) = ext_index(j - b + ck, w, self.mode) else { continue };
                                acc += self.x.get(p, q) * r.get(i as usize, j as usize);
                            }
                        }
                        out[(a as usize) * self.kk + b as usize] = acc;
                    }
                }
                out
            }
        }
    }
}

/// Explicit M x L Toeplitz matrix realizing 1-D zero-padded same-size
/// convolution by the signal as a linear map on length-L kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Toeplitz1D {
    matrix: DMatrix<f64>,
}

impl Toeplitz1D {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// Builds T_x(L): entry (i, j) is x[i + l - j] (0-based, l = (L-1)/2),
/// with x zero outside its support. Constant along diagonals; the middle
/// L columns of T_x(L+2) reproduce T_x(L).
pub fn build_toeplitz_1d(x: &[f64], l_cols: usize) -> Result<Toeplitz1D> {
    let m = x.len();
    if m == 0 {
        return Err(Error::InvalidArgument("signal must be non-empty".into()));
    }
    if l_cols % 2 == 0 || l_cols == 0 {
        return Err(Error::InvalidArgument(format!("L must be odd, got {l_cols}")));
    }
    if l_cols > 2 * m - 1 {
        return Err(Error::InvalidArgument(format!(
            "L = {l_cols} exceeds 2M-1 = {}",
            2 * m - 1
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("toeplitz signal"));
    }
    let half = (l_cols - 1) / 2;
    let matrix = DMatrix::from_fn(m, l_cols, |i, j| {
        let idx = i as isize + half as isize - j as isize;
        if idx >= 0 && (idx as usize) < m {
            x[idx as usize]
        } else {
            0.0
        }
    });
    Ok(Toeplitz1D { matrix })
}

/// Centered same-size 1-D zero-padded convolution; the vector realization
/// of `build_toeplitz_1d(x, k.len()) * k`.
pub fn conv1d_zeropad(x: &[f64], k: &[f64]) -> Vec<f64> {
    let m = x.len();
    let half = (k.len() - 1) / 2;
    let mut out = vec![0.0; m];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &kv) in k.iter().enumerate() {
            let idx = i as isize + half as isize - j as isize;
            if idx >= 0 && (idx as usize) < m {
                acc += kv * x[idx as usize];
            }
        }
        *o = acc;
    }
    out
}

/// Relative cutoff under which singular values are treated as zero.
pub const PINV_CUTOFF_REL: f64 = 1e-12;

/// Moore-Penrose pseudo-inverse via SVD with relative cutoff.
pub fn pseudo_inverse_matrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let s_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let tol = PINV_CUTOFF_REL * s_max;
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let r = svd.singular_values.len();
    let mut sigma_inv = DMatrix::zeros(r, r);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            sigma_inv[(i, i)] = 1.0 / s;
        }
    }
    v_t.transpose() * sigma_inv * u.transpose()
}

/// Applies T's pseudo-inverse to a vector.
pub fn pseudo_inverse_apply(t: &Toeplitz1D, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != t.rows() {
        return Err(Error::DimensionMismatch(format!(
            "vector length {} != matrix rows {}",
            b.len(),
            t.rows()
        )));
    }
    let pinv = pseudo_inverse_matrix(t.matrix());
    let out = &pinv * DVector::from_column_slice(b);
    Ok(out.as_slice().to_vec())
}
