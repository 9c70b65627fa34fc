//! Domain types shared by every other module: images, kernels, gradient
//! pairs, the solver configuration and tabular experiment reports.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// 2-D grayscale intensity grid, row-major, nominal range [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage("height and width must be >= 1".into()));
        }
        if data.len() != height * width {
            return Err(Error::InvalidImage(format!(
                "data length {} != {}x{}",
                data.len(),
                height,
                width
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image data"));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width] }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.width + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Image) -> f64 {
        debug_assert!(self.same_dims(other));
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise a + s*b.
    pub fn axpy(&self, s: f64, b: &Image) -> Image {
        debug_assert!(self.same_dims(b));
        Image {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(b.data.iter())
                .map(|(a, b)| a + s * b)
                .collect(),
        }
    }
}

/// Non-negative, sum-to-one blur kernel with odd dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size_l: usize,
    size_k: usize,
    weights: Vec<f64>,
}

const KERNEL_SUM_TOL: f64 = 1e-9;

impl Kernel {
    /// Constructs a kernel, enforcing odd dimensions, non-negativity and
    /// unit sum (within 1e-9).
    pub fn new(size_l: usize, size_k: usize, weights: Vec<f64>) -> Result<Self> {
        if size_l % 2 == 0 || size_k % 2 == 0 || size_l == 0 || size_k == 0 {
            return Err(Error::InvalidKernel(format!(
                "kernel dims must be odd, got {}x{}",
                size_l, size_k
            )));
        }
        if weights.len() != size_l * size_k {
            return Err(Error::InvalidKernel(format!(
                "weight length {} != {}x{}",
                weights.len(),
                size_l,
                size_k
            )));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel weights"));
        }
        if weights.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidKernel("negative weight".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > KERNEL_SUM_TOL {
            return Err(Error::InvalidKernel(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self { size_l, size_k, weights })
    }

    /// Centered delta (identity) kernel.
    pub fn delta(size_l: usize, size_k: usize) -> Result<Self> {
        let mut w = vec![0.0; size_l * size_k];
        if size_l % 2 == 0 || size_k % 2 == 0 {
            return Err(Error::InvalidKernel("kernel dims must be odd".into()));
        }
        w[(size_l / 2) * size_k + size_k / 2] = 1.0;
        Self::new(size_l, size_k, w)
    }

    /// Isotropic Gaussian kernel, truncated to the frame and normalized.
    pub fn gaussian(size_l: usize, size_k: usize, std_dev: f64) -> Result<Self> {
        if std_dev <= 0.0 {
            return Err(Error::InvalidArgument("std_dev must be positive".into()));
        }
        let (cl, ck) = (size_l as isize / 2, size_k as isize / 2);
        let mut w = Vec::with_capacity(size_l * size_k);
        for i in 0..size_l as isize {
            for j in 0..size_k as isize {
                let d2 = ((i - cl) * (i - cl) + (j - ck) * (j - ck)) as f64;
                w.push((-d2 / (2.0 * std_dev * std_dev)).exp());
            }
        }
        let s: f64 = w.iter().sum();
        for v in &mut w {
            *v /= s;
        }
        Self::new(size_l, size_k, w)
    }

    #[inline]
    pub fn size_l(&self) -> usize {
        self.size_l
    }

    #[inline]
    pub fn size_k(&self) -> usize {
        self.size_k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.size_k + j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.size_l, self.size_k, self.weights.iter().copied())
    }

    /// Zero-pads the kernel to a larger odd frame, keeping it centered.
    pub fn zero_pad(&self, size_l: usize, size_k: usize) -> Result<Kernel> {
        if size_l < self.size_l || size_k < self.size_k {
            return Err(Error::InvalidArgument("target frame smaller than kernel".into()));
        }
        if size_l % 2 == 0 || size_k % 2 == 0 {
            return Err(Error::InvalidKernel("kernel dims must be odd".into()));
        }
        let (di, dj) = ((size_l - self.size_l) / 2, (size_k - self.size_k) / 2);
        let mut w = vec![0.0; size_l * size_k];
        for i in 0..self.size_l {
            for j in 0..self.size_k {
                w[(i + di) * size_k + (j + dj)] = self.get(i, j);
            }
        }
        Kernel::new(size_l, size_k, w)
    }
}

/// Horizontal/vertical gradient channels sharing one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    pub horiz: Image,
    pub vert: Image,
}

impl GradientPair {
    pub fn new(horiz: Image, vert: Image) -> Result<Self> {
        if !horiz.same_dims(&vert) {
            return Err(Error::DimensionMismatch(
                "gradient channels must share dimensions".into(),
            ));
        }
        Ok(Self { horiz, vert })
    }

    pub fn norm_l2(&self) -> f64 {
        (self.horiz.norm_l2().powi(2) + self.vert.norm_l2().powi(2)).sqrt()
    }
}

/// All tunables of the alternating solver and the multi-scale driver.
#[derive(Debug, Clone, PartialEq)]
pub struct DeblurConfig {
    /// Image-prior weight on the normalized-sparsity term.
    pub lambda: f64,
    /// Kernel-regularization flag/weight; 0 skips the low-rank prox sub-step.
    pub sigma: f64,
    /// Splitting weight base for the anchored kernel sub-problem.
    pub mu: f64,
    /// Prox step weight.
    pub tau: f64,
    /// Log-det smoothing offset.
    pub delta: f64,
    /// Present in the solver's input list but never used by the algorithm
    /// body; kept as an inert field so configs stay complete.
    pub eta: f64,
    pub outer_iter_max: usize,
    pub cg_iter_max: usize,
    pub inner_iter_max: usize,
    /// Alternations of image update and kernel update per scale.
    pub iter_max: usize,
    pub pyramid_levels: usize,
    /// Declared kernel frame (rows, cols), both odd.
    pub kernel_size: (usize, usize),
    /// Kernel entries below this fraction of the maximum are cut to zero.
    pub threshold_ratio: f64,
    pub seed: u64,
}

/// Fixed parameter set used throughout the experiments.
pub fn default_config() -> DeblurConfig {
    DeblurConfig {
        lambda: 5e-3,
        sigma: 1.0,
        mu: 1.0,
        tau: 5e-5,
        delta: 0.01,
        eta: 0.0,
        outer_iter_max: 20,
        cg_iter_max: 3,
        inner_iter_max: 10,
        iter_max: 15,
        pyramid_levels: 7,
        kernel_size: (23, 23),
        threshold_ratio: 1.0 / 20.0,
        seed: 0,
    }
}

impl Default for DeblurConfig {
    fn default() -> Self {
        default_config()
    }
}

/// Collects every invariant violation; empty means the config is valid.
pub fn validate_config(c: &DeblurConfig) -> Vec<String> {
    let mut errs = Vec::new();
    if !(c.lambda >= 0.0 && c.lambda.is_finite()) {
        errs.push("lambda must be finite and >= 0".to_string());
    }
    if !(c.sigma >= 0.0 && c.sigma.is_finite()) {
        errs.push("sigma must be finite and >= 0".to_string());
    }
    if !(c.mu > 0.0 && c.mu.is_finite()) {
        errs.push("mu must be positive".to_string());
    }
    if !(c.tau > 0.0 && c.tau.is_finite()) {
        errs.push("tau must be positive".to_string());
    }
    if !(c.delta > 0.0 && c.delta.is_finite()) {
        errs.push("delta must be positive".to_string());
    }
    if !c.eta.is_finite() {
        errs.push("eta must be finite".to_string());
    }
    for (name, v) in [
        ("outer_iter_max", c.outer_iter_max),
        ("cg_iter_max", c.cg_iter_max),
        ("inner_iter_max", c.inner_iter_max),
        ("iter_max", c.iter_max),
        ("pyramid_levels", c.pyramid_levels),
    ] {
        if v < 1 {
            errs.push(format!("{name} must be >= 1"));
        }
    }
    let (l, k) = c.kernel_size;
    if l % 2 == 0 || k % 2 == 0 || l == 0 || k == 0 {
        errs.push("kernel dims must be odd".to_string());
    }
    if !(c.threshold_ratio >= 0.0 && c.threshold_ratio < 1.0) {
        errs.push("threshold_ratio must lie in [0,1)".to_string());
    }
    errs
}

impl DeblurConfig {
    pub fn validated(self) -> Result<Self> {
        let errs = validate_config(&self);
        if errs.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidConfig(errs.join("; ")))
        }
    }
}

/// Tabular, CSV-serializable result of an analysis experiment. The seed and
/// every parameter are recorded so reruns reproduce the file byte-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub name: String,
    /// Sorted on emission; keep insertion simple here.
    pub params: Vec<(String, String)>,
    pub columns: Vec<(String, Vec<f64>)>,
    pub seed: u64,
}

impl ExperimentReport {
    pub fn new(name: impl Into<String>, seed: u64) -> Self {
        Self { name: name.into(), params: Vec::new(), columns: Vec::new(), seed }
    }

    pub fn param(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.params.push((key.into(), value.to_string()));
        self
    }

    pub fn column(&mut self, name: impl Into<String>, values: Vec<f64>) -> &mut Self {
        self.columns.push((name.into(), values));
        self
    }

    pub fn column_values(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    /// All series must share one length.
    pub fn check_rectangular(&self) -> Result<usize> {
        let mut len = None;
        for (name, col) in &self.columns {
            match len {
                None => len = Some(col.len()),
                Some(l) if l != col.len() => {
                    return Err(Error::InvalidArgument(format!(
                        "column {name} has length {}, expected {l}",
                        col.len()
                    )))
                }
                _ => {}
            }
        }
        Ok(len.unwrap_or(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_bad_shapes() {
        assert!(Image::new(0, 3, vec![]).is_err());
        assert!(Image::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(Image::new(2, 2, vec![0.1; 4]).is_ok());
    }

    #[test]
    fn kernel_invariants_enforced() {
        assert!(Kernel::new(2, 2, vec![0.25; 4]).is_err(), "even dims");
        assert!(Kernel::new(1, 3, vec![0.5, 0.6, 0.1]).is_err(), "sum != 1");
        assert!(Kernel::new(1, 3, vec![-0.1, 0.6, 0.5]).is_err(), "negative");
        let k = Kernel::new(1, 3, vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(k.get(0, 1), 0.5);
    }

    #[test]
    fn delta_kernel_is_centered() {
        let k = Kernel::delta(3, 3).unwrap();
        assert_eq!(k.get(1, 1), 1.0);
        assert_eq!(k.weights().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn default_config_matches_fixed_parameters() {
        let c = default_config();
        assert_eq!(c.tau, 5e-5);
        assert_eq!(c.sigma, 1.0);
        assert_eq!(c.mu, 1.0);
        assert_eq!(c.pyramid_levels, 7);
        assert_eq!(c.threshold_ratio, 0.05);
        assert_eq!(c.outer_iter_max, 20);
        assert_eq!(c.cg_iter_max, 3);
        assert_eq!(c.inner_iter_max, 10);
        assert!(validate_config(&c).is_empty());
    }

    #[test]
    fn validate_reports_all_violations() {
        let mut c = default_config();
        c.kernel_size = (4, 4);
        c.tau = 0.0;
        let errs = validate_config(&c);
        assert!(errs.iter().any(|e| e.contains("kernel dims must be odd")));
        assert!(errs.iter().any(|e| e.contains("tau must be positive")));
    }

    #[test]
    fn report_rectangular_check() {
        let mut r = ExperimentReport::new("t", 1);
        r.column("a", vec![1.0, 2.0]).column("b", vec![3.0]);
        assert!(r.check_rectangular().is_err());
    }
}
