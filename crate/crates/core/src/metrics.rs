//! Quantitative evaluation: kernel SSD with shift alignment, the error
//! ratio against the known-kernel restoration, PSNR and success rate.

use crate::error::{Error, Result};
use crate::nonblind::{deconv_hyper_laplacian, HQParams};
use crate::types::{Image, Kernel};

/// Scores for one deblurring run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalScores {
    pub ssd_kernel: f64,
    pub ssd_kernel_raw: f64,
    pub err_ratio: f64,
    pub psnr_db: f64,
    pub success: bool,
}

fn common_frame(a: &Kernel, b: &Kernel) -> Result<(Kernel, Kernel)> {
    let l = a.size_l().max(b.size_l());
    let k = a.size_k().max(b.size_k());
    Ok((a.zero_pad(l, k)?, b.zero_pad(l, k)?))
}

// Sums over the full plane (both supports), so mass shifted outside the
// frame still counts and the minimum over shifts is symmetric in its
// arguments.
fn ssd_at_shift(est: &Kernel, gt: &Kernel, di: isize, dj: isize) -> f64 {
    let (l, k) = (gt.size_l() as isize, gt.size_k() as isize);
    let mut acc = 0.0;
    for i in di.min(0)..l + di.max(0) {
        for j in dj.min(0)..k + dj.max(0) {
            let (si, sj) = (i - di, j - dj);
            let e = if si >= 0 && si < l && sj >= 0 && sj < k {
                est.get(si as usize, sj as usize)
            } else {
                0.0
            };
            let g = if i >= 0 && i < l && j >= 0 && j < k {
                gt.get(i as usize, j as usize)
            } else {
                0.0
            };
            let d = e - g;
            acc += d * d;
        }
    }
    acc
}

/// Summed squared difference without alignment, on the common zero-padded
/// frame.
pub fn ssd_kernel_raw(k_est: &Kernel, k_gt: &Kernel) -> Result<f64> {
    let (e, g) = common_frame(k_est, k_gt)?;
    Ok(ssd_at_shift(&e, &g, 0, 0))
}

/// SSD minimized over integer translations within half the common frame.
/// Blind deconvolution is translation-ambiguous, so kernels are aligned
/// before comparison.
pub fn ssd_kernel_aligned(k_est: &Kernel, k_gt: &Kernel) -> Result<f64> {
    let (e, g) = common_frame(k_est, k_gt)?;
    let (hl, hk) = (g.size_l() as isize / 2, g.size_k() as isize / 2);
    let mut best = f64::INFINITY;
    for di in -hl..=hl {
        for dj in -hk..=hk {
            best = best.min(ssd_at_shift(&e, &g, di, dj));
        }
    }
    Ok(best)
}

fn ssd_interior(a: &Image, b: &Image, border: (usize, usize)) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch("image SSD".into()));
    }
    let (bh, bw) = border;
    if a.height() <= 2 * bh || a.width() <= 2 * bw {
        return Err(Error::InvalidArgument("border exclusion swallows the image".into()));
    }
    let mut acc = 0.0;
    for i in bh..a.height() - bh {
        for j in bw..a.width() - bw {
            let d = a.get(i, j) - b.get(i, j);
            acc += d * d;
        }
    }
    Ok(acc)
}

/// SSD(x_est, x_gt) / SSD(x_kgt, x_gt), where x_kgt is the non-blind
/// restoration with the ground-truth kernel; a border of half the kernel
/// width is excluded from both sums.
pub fn error_ratio(
    x_est: &Image,
    x_gt: &Image,
    y: &Image,
    k_gt: &Kernel,
    nb: &HQParams,
) -> Result<f64> {
    let x_kgt = deconv_hyper_laplacian(y, k_gt, nb)?;
    let border = (k_gt.size_l() / 2, k_gt.size_k() / 2);
    let num = ssd_interior(x_est, x_gt, border)?;
    let den = ssd_interior(&x_kgt, x_gt, border)?;
    if den == 0.0 {
        return Err(Error::InvalidArgument("error ratio denominator is zero".into()));
    }
    Ok(num / den)
}

/// Sentinel PSNR for an exact match.
pub const PSNR_CAP_DB: f64 = 99.0;

/// 10 log10(peak^2 / MSE), capped at 99 dB for identical images.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch("psnr".into()));
    }
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument("peak must be positive".into()));
    }
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Fraction of runs with error ratio at or below the threshold.
pub fn success_rate(errs: &[f64], threshold: f64) -> Result<f64> {
    if errs.is_empty() {
        return Err(Error::InvalidArgument("empty error list".into()));
    }
    let ok = errs.iter().filter(|&&e| e <= threshold).count();
    Ok(ok as f64 / errs.len() as f64)
}

/// Conventional success cutoff on the error ratio.
pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 3.0;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_kernel(seed: u64, l: usize, k: usize) -> Kernel {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut w: Vec<f64> = (0..l * k).map(|_| r.random::<f64>()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        Kernel::new(l, k, w).unwrap()
    }

    #[test]
    fn identical_kernels_have_zero_ssd() {
        let k = random_kernel(1, 5, 5);
        assert_eq!(ssd_kernel_aligned(&k, &k).unwrap(), 0.0);
        assert_eq!(ssd_kernel_raw(&k, &k).unwrap(), 0.0);
    }

    #[test]
    fn shifted_delta_aligns_to_zero() {
        let center = Kernel::delta(5, 5).unwrap();
        let mut w = vec![0.0; 25];
        w[1 * 5 + 2] = 1.0; // shifted by (-1, 0)
        let shifted = Kernel::new(5, 5, w).unwrap();
        assert!(ssd_kernel_raw(&center, &shifted).unwrap() > 0.0);
        assert_eq!(ssd_kernel_aligned(&center, &shifted).unwrap(), 0.0);
    }

    #[test]
    fn aligned_ssd_matches_independent_exhaustive_search() {
        // Second implementation: brute force over shifts on raw weight grids.
        let a = random_kernel(2, 5, 3);
        let b = random_kernel(3, 3, 5);
        let (l, k) = (5usize, 5usize);
        let pad = |kr: &Kernel| kr.zero_pad(l, k).unwrap();
        let (pa, pb) = (pad(&a), pad(&b));
        let mut best = f64::INFINITY;
        for di in -2i32..=2 {
            for dj in -2i32..=2 {
                let mut acc = 0.0;
                for i in -3..l as i32 + 3 {
                    for j in -3..k as i32 + 3 {
                        let (si, sj) = (i - di, j - dj);
                        let e = if (0..l as i32).contains(&si) && (0..k as i32).contains(&sj) {
                            pa.get(si as usize, sj as usize)
                        } else {
                            0.0
                        };
                        let g = if (0..l as i32).contains(&i) && (0..k as i32).contains(&j) {
                            pb.get(i as usize, j as usize)
                        } else {
                            0.0
                        };
                        let d = e - g;
                        acc += d * d;
                    }
                }
                best = best.min(acc);
            }
        }
        let got = ssd_kernel_aligned(&a, &b).unwrap();
        assert!((got - best).abs() < 1e-14);
    }

    #[test]
    fn aligned_ssd_symmetric() {
        let a = random_kernel(4, 5, 5);
        let b = random_kernel(5, 7, 3);
        let ab = ssd_kernel_aligned(&a, &b).unwrap();
        let ba = ssd_kernel_aligned(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn psnr_hand_checks() {
        // MSE 0.01 at peak 1 -> 20 dB.
        let a = Image::zeros(10, 10);
        let b = Image::constant(10, 10, 0.1).unwrap();
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        assert!(psnr(&a, &Image::zeros(9, 10), 1.0).is_err());
    }

    #[test]
    fn psnr_matches_direct_formula_on_random_pair() {
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let a = Image::new(8, 8, (0..64).map(|_| r.random::<f64>()).collect()).unwrap();
        let b = Image::new(8, 8, (0..64).map(|_| r.random::<f64>()).collect()).unwrap();
        let mse: f64 =
            a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 64.0;
        let want = 10.0 * (1.0 / mse).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn psnr_decreases_with_noise_level() {
        use rand_distr::{Distribution, Normal};
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let base = Image::constant(16, 16, 0.5).unwrap();
        let mut last = f64::INFINITY;
        for sigma in [0.01, 0.03, 0.09] {
            let normal = Normal::new(0.0, sigma).unwrap();
            let mut acc = 0.0;
            for _ in 0..20 {
                let noisy = base.map(|v| v + normal.sample(&mut r));
                acc += psnr(&base, &noisy, 1.0).unwrap();
            }
            let mean = acc / 20.0;
            assert!(mean < last, "psnr should fall as noise grows");
            last = mean;
        }
    }

    #[test]
    fn success_rate_examples() {
        assert_eq!(success_rate(&[1.0, 1.0, 1.0], 3.0).unwrap(), 1.0);
        assert_eq!(success_rate(&[2.0, 4.0], 3.0).unwrap(), 0.5);
        assert!(success_rate(&[], 3.0).is_err());
        // Threshold sweep monotone non-decreasing.
        let errs = [0.5, 1.5, 2.5, 3.5, 9.0];
        let mut prev = 0.0;
        for t in [0.0, 1.0, 2.0, 3.0, 4.0, 10.0] {
            let r = success_rate(&errs, t).unwrap();
            assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn error_ratio_unit_and_zero_cases() {
        use crate::convops::{convolve2d, BoundaryMode};
        let mut truth = Image::zeros(32, 32);
        for i in 0..32 {
            for j in 0..32 {
                truth.set(i, j, if (i / 6 + j / 5) % 2 == 0 { 0.75 } else { 0.25 });
            }
        }
        let k = Kernel::gaussian(5, 5, 1.0).unwrap();
        let y = convolve2d(&truth, &k, BoundaryMode::Circular).unwrap();
        let nb = HQParams::default();
        let x_kgt = deconv_hyper_laplacian(&y, &k, &nb).unwrap();
        let e1 = error_ratio(&x_kgt, &truth, &y, &k, &nb).unwrap();
        assert!((e1 - 1.0).abs() < 1e-12);
        let e0 = error_ratio(&truth, &truth, &y, &k, &nb).unwrap();
        assert_eq!(e0, 0.0);
    }

    #[test]
    fn interior_ssd_invariant_to_constant_offset() {
        // SSD acts on differences, so shifting both images by the same
        // constant leaves the ratio's building block unchanged.
        let mut a = Image::zeros(12, 12);
        let mut b = Image::zeros(12, 12);
        for i in 0..12 {
            for j in 0..12 {
                a.set(i, j, ((i * 31 + j * 17) % 11) as f64 / 22.0);
                b.set(i, j, ((i * 13 + j * 29) % 7) as f64 / 14.0);
            }
        }
        let n1 = ssd_interior(&a, &b, (2, 2)).unwrap();
        let n2 = ssd_interior(&a.map(|v| v + 0.1), &b.map(|v| v + 0.1), (2, 2)).unwrap();
        assert!((n1 - n2).abs() < 1e-12);
    }
}
