//! End-to-end blind deconvolution: per-scale alternation between the
//! image and kernel sub-problems, driven coarse-to-fine over an image
//! pyramid, finished by a non-blind deconvolution at the full scale.

use crate::convops::{convolve2d, BoundaryMode};
use crate::error::{Error, Result};
use crate::kstep::{project_kernel, update_kernel, KStepParams};
use crate::nonblind::{deconv_hyper_laplacian, edge_taper, HQParams};
use crate::types::{DeblurConfig, GradientPair, Image, Kernel};
use crate::xstep::update_image;
use nalgebra::DMatrix;

/// Downscaling factor between adjacent pyramid levels.
pub const PYRAMID_FACTOR: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// One resolution level of the coarse-to-fine schedule.
#[derive(Debug, Clone)]
pub struct PyramidLevel {
    /// Blurry observation resampled to this level.
    pub image: Image,
    /// Declared kernel frame at this level, both odd.
    pub kernel_dims: (usize, usize),
    /// Linear scale relative to the full resolution.
    pub scale: f64,
}

/// Output of the blind solver.
#[derive(Debug, Clone)]
pub struct DeblurResult {
    /// Non-blind restoration at full resolution.
    pub image: Image,
    /// Final kernel estimate at the declared size.
    pub kernel: Kernel,
    /// Kernel estimate at the end of each level, coarsest first.
    pub per_level_kernels: Vec<Kernel>,
    /// Data-term residual after every alternation, concatenated across levels.
    pub objective_trace: Vec<f64>,
}

/// Nearest odd integer to `v`, at least 3.
fn round_to_odd(v: f64) -> usize {
    let n = (((v - 1.0) / 2.0).round() as i64).max(1);
    (2 * n + 1) as usize
}

/// Bilinear resampling with clamped (edge-replicating) source coordinates.
fn resize_bilinear(src: &Image, nh: usize, nw: usize) -> Result<Image> {
    if nh == 0 || nw == 0 {
        return Err(Error::InvalidArgument("resize target must be >= 1x1".into()));
    }
    let (h, w) = (src.height(), src.width());
    if (nh, nw) == (h, w) {
        return Ok(src.clone());
    }
    let mut out = Image::zeros(nh, nw);
    let map = |d: usize, nd: usize, sd: usize| -> (usize, usize, f64) {
        // Center-aligned coordinate mapping, clamped to the source frame.
        let s = ((d as f64 + 0.5) * sd as f64 / nd as f64 - 0.5).clamp(0.0, (sd - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(sd - 1);
        (lo, hi, s - lo as f64)
    };
    for i in 0..nh {
        let (i0, i1, fi) = map(i, nh, h);
        for j in 0..nw {
            let (j0, j1, fj) = map(j, nw, w);
            let top = (1.0 - fj) * src.get(i0, j0) + fj * src.get(i0, j1);
            let bot = (1.0 - fj) * src.get(i1, j0) + fj * src.get(i1, j1);
            out.set(i, j, (1.0 - fi) * top + fi * bot);
        }
    }
    Ok(out)
}

/// Resamples a kernel to a new odd frame and re-projects it onto the
/// simplex of valid kernels.
pub fn resize_kernel(k: &Kernel, size_l: usize, size_k: usize) -> Result<Kernel> {
    if (size_l, size_k) == (k.size_l(), k.size_k()) {
        return Ok(k.clone());
    }
    let grid = Image::new(k.size_l(), k.size_k(), k.weights().to_vec())?;
    let up = resize_bilinear(&grid, size_l, size_k)?;
    project_kernel(&DMatrix::from_row_slice(size_l, size_k, up.data()))
}

/// Forward-difference gradients with circular wrap, matching the
/// periodic convolution model used inside the per-scale solver.
pub fn gradient_pair(y: &Image) -> GradientPair {
    let (h, w) = (y.height(), y.width());
    let mut gh = Image::zeros(h, w);
    let mut gv = Image::zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            gh.set(i, j, y.get(i, (j + 1) % w) - y.get(i, j));
            gv.set(i, j, y.get((i + 1) % h, j) - y.get(i, j));
        }
    }
    GradientPair { horiz: gh, vert: gv }
}

/// Two 0.5 entries, horizontally adjacent at the center; a 1-column frame
/// degenerates to the delta.
pub fn initial_kernel(size_l: usize, size_k: usize) -> Result<Kernel> {
    if size_k == 1 {
        return Kernel::delta(size_l, size_k);
    }
    let (cl, ck) = (size_l / 2, size_k / 2);
    let mut w = vec![0.0; size_l * size_k];
    w[cl * size_k + ck] = 0.5;
    w[cl * size_k + ck + 1] = 0.5;
    Kernel::new(size_l, size_k, w)
}

/// Zeroes entries below `ratio * max` and renormalizes. `ratio = 0`
/// leaves the kernel unchanged.
pub fn threshold_kernel(k: &Kernel, ratio: f64) -> Result<Kernel> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument("threshold ratio must lie in [0,1)".into()));
    }
    if ratio == 0.0 {
        return Ok(k.clone());
    }
    let cut = ratio * k.weights().iter().cloned().fold(0.0, f64::max);
    let m = DMatrix::from_row_iterator(
        k.size_l(),
        k.size_k(),
        k.weights().iter().map(|&v| if v < cut { 0.0 } else { v }),
    );
    project_kernel(&m)
}

/// Coarse-to-fine schedule, coarsest level first. The finest level keeps
/// the declared kernel frame exactly; coarser levels shrink it by the
/// pyramid factor, rounded to the nearest odd size >= 3.
pub fn build_pyramid(y: &Image, cfg: &DeblurConfig) -> Result<Vec<PyramidLevel>> {
    let (kl, kk) = cfg.kernel_size;
    let mut levels = Vec::with_capacity(cfg.pyramid_levels);
    for t in (0..cfg.pyramid_levels).rev() {
        let scale = PYRAMID_FACTOR.powi(t as i32);
        let nh = ((y.height() as f64 * scale).round() as usize).max(1);
        let nw = ((y.width() as f64 * scale).round() as usize).max(1);
        let kdims = if t == 0 {
            (kl, kk)
        } else {
            (
                round_to_odd(kl as f64 * scale).min(kl),
                round_to_odd(kk as f64 * scale).min(kk),
            )
        };
        if kdims.0 > nh || kdims.1 > nw {
            return Err(Error::InvalidConfig(format!(
                "kernel {}x{} exceeds the {}x{} image at pyramid level {t}",
                kdims.0, kdims.1, nh, nw
            )));
        }
        levels.push(PyramidLevel {
            image: resize_bilinear(y, nh, nw)?,
            kernel_dims: kdims,
            scale,
        });
    }
    Ok(levels)
}

/// Data-term residual sum over both gradient channels.
fn residual(x: &GradientPair, y: &GradientPair, k: &Kernel, mode: BoundaryMode) -> Result<f64> {
    let rh = convolve2d(&x.horiz, k, mode)?.axpy(-1.0, &y.horiz);
    let rv = convolve2d(&x.vert, k, mode)?.axpy(-1.0, &y.vert);
    Ok(rh.norm_l2().powi(2) + rv.norm_l2().powi(2))
}

/// Alternating image/kernel estimation at one scale. Works in the
/// gradient domain with periodic boundaries; the observation is
/// edge-tapered first so the wraparound seam carries little energy.
fn estimate_kernel_single_scale(
    y: &Image,
    k_init: &Kernel,
    cfg: &DeblurConfig,
) -> Result<(Kernel, Vec<f64>)> {
    let mode = BoundaryMode::Circular;
    let (kl, kk) = (k_init.size_l(), k_init.size_k());
    let taper = Kernel::gaussian(kl, kk, (kl.max(kk) as f64 / 6.0).max(0.5))?;
    let y_g = gradient_pair(&edge_taper(y, &taper)?);
    let params = KStepParams {
        mu: cfg.mu,
        tau: cfg.tau,
        sigma: cfg.sigma,
        delta: cfg.delta,
        outer_iter_max: cfg.outer_iter_max,
        cg_iter_max: cfg.cg_iter_max,
        inner_iter_max: cfg.inner_iter_max,
    };
    let mut k = k_init.clone();
    let mut trace = Vec::with_capacity(cfg.iter_max);
    for _ in 0..cfg.iter_max {
        let x = update_image(&y_g, &k, cfg.lambda, cfg.inner_iter_max, mode)?;
        k = update_kernel(&x, &y_g, &k, &params, mode)?;
        trace.push(residual(&x, &y_g, &k, mode)?);
    }
    Ok((k, trace))
}

/// Full coarse-to-fine blind deconvolution.
pub fn deblur_blind(y: &Image, cfg: &DeblurConfig) -> Result<DeblurResult> {
    let cfg = cfg.clone().validated()?;
    let levels = build_pyramid(y, &cfg)?;
    let coarsest = levels[0].kernel_dims;
    let mut k = initial_kernel(coarsest.0, coarsest.1)?;
    let mut per_level_kernels = Vec::with_capacity(levels.len());
    let mut objective_trace = Vec::new();
    for (idx, level) in levels.iter().enumerate() {
        if k.size_l() != level.kernel_dims.0 || k.size_k() != level.kernel_dims.1 {
            k = resize_kernel(&k, level.kernel_dims.0, level.kernel_dims.1)?;
        }
        let (estimated, trace) = estimate_kernel_single_scale(&level.image, &k, &cfg)?;
        k = threshold_kernel(&estimated, cfg.threshold_ratio)?;
        objective_trace.extend(trace);
        per_level_kernels.push(k.clone());
        if idx + 1 < levels.len() {
            let next = levels[idx + 1].kernel_dims;
            k = resize_kernel(&k, next.0, next.1)?;
        }
    }
    let image = deconv_hyper_laplacian(y, &k, &HQParams::default())?;
    Ok(DeblurResult { image, kernel: k, per_level_kernels, objective_trace })
}

/// Single-scale variant: identical to `deblur_blind` with one pyramid level.
pub fn deblur_single_scale(y: &Image, cfg: &DeblurConfig) -> Result<DeblurResult> {
    let mut cfg = cfg.clone();
    cfg.pyramid_levels = 1;
    deblur_blind(y, &cfg)
}
