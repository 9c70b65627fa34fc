//! Kernel update with low-rank regularization: a splitting into an
//! anchored least-squares sub-problem (conjugate gradient on the normal
//! equations) and a linearized log-det proximal sub-problem (singular
//! value shrinkage), followed by non-negativity and sum-to-one projection.

use crate::convops::{conv_image_as_operator_on_kernel, BoundaryMode, KernelOperator};
use crate::error::{Error, Result};
use crate::types::{GradientPair, Kernel};
use nalgebra::{DMatrix, DVector};

/// Tunables of the kernel sub-solver.
#[derive(Debug, Clone, PartialEq)]
pub struct KStepParams {
    pub mu: f64,
    pub tau: f64,
    /// Regularization flag/weight; 0 skips the prox sub-step entirely.
    pub sigma: f64,
    pub delta: f64,
    pub outer_iter_max: usize,
    pub cg_iter_max: usize,
    pub inner_iter_max: usize,
}

impl KStepParams {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iter_max < 1 || self.cg_iter_max < 1 || self.inner_iter_max < 1 {
            return Err(Error::InvalidArgument("iteration counts must be >= 1".into()));
        }
        if !(self.mu > 0.0) || !(self.tau > 0.0) || !(self.delta > 0.0) || self.sigma < 0.0 {
            return Err(Error::InvalidArgument(
                "mu, tau, delta must be positive and sigma >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Thin SVD with singular values sorted descending.
#[derive(Debug, Clone)]
pub struct SvdTriple {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

pub fn svd_triple(m: &DMatrix<f64>) -> SvdTriple {
    let svd = m.clone().svd(true, true);
    SvdTriple {
        u: svd.u.expect("svd with u"),
        s: svd.singular_values,
        v_t: svd.v_t.expect("svd with v_t"),
    }
}

/// Smooth rank surrogate: sum_i log(s_i + delta) over all singular values.
pub fn logdet_cost(m: &DMatrix<f64>, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logdet input"));
    }
    let s = m.clone().singular_values();
    Ok(s.iter().map(|&si| (si + delta).ln()).sum())
}

/// Convenience overload for kernels.
pub fn logdet_cost_kernel(k: &Kernel, delta: f64) -> Result<f64> {
    logdet_cost(&k.to_matrix(), delta)
}

/// Proximal mapping of the linearized log-det at `z`: SVD shrinkage of
/// `psi` with weights 1/(s_i(z) + delta). The output keeps psi's singular
/// vectors; its singular values are max(s_i - tau/(s_i(z) + delta), 0).
pub fn prox_logdet(
    psi: &DMatrix<f64>,
    z: &DMatrix<f64>,
    tau: f64,
    delta: f64,
) -> Result<DMatrix<f64>> {
    if psi.shape() != z.shape() {
        return Err(Error::DimensionMismatch(format!(
            "psi {:?} vs z {:?}",
            psi.shape(),
            z.shape()
        )));
    }
    if !(tau > 0.0) || !(delta > 0.0) {
        return Err(Error::InvalidArgument("tau and delta must be positive".into()));
    }
    let psi_svd = svd_triple(psi);
    let z_s = z.clone().singular_values();
    let r = psi_svd.s.len();
    let mut shrunk = DMatrix::zeros(r, r);
    for i in 0..r {
        shrunk[(i, i)] = (psi_svd.s[i] - tau / (z_s[i] + delta)).max(0.0);
    }
    Ok(&psi_svd.u * shrunk * &psi_svd.v_t)
}

/// Non-negativity then sum-to-one projection on raw coefficients.
pub fn project_weights(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projection input"));
    }
    let clipped = m.map(|v| v.max(0.0));
    let sum = clipped.sum();
    if sum <= 0.0 {
        return Err(Error::KernelAnnihilated);
    }
    Ok(clipped / sum)
}

/// Projection onto valid kernels (odd dims required by the Kernel type).
pub fn project_kernel(m: &DMatrix<f64>) -> Result<Kernel> {
    let p = project_weights(m)?;
    let weights: Vec<f64> = p.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
    // Renormalize exactly once more so the unit-sum invariant holds to 1e-9
    // even after many additions.
    let s: f64 = weights.iter().sum();
    Kernel::new(p.nrows(), p.ncols(), weights.iter().map(|v| v / s).collect())
}

struct DataOperator {
    op_h: KernelOperator,
    op_v: KernelOperator,
}

impl DataOperator {
    fn new(x: &GradientPair, kdims: (usize, usize), mode: BoundaryMode) -> Result<Self> {
        Ok(Self {
            op_h: conv_image_as_operator_on_kernel(&x.horiz, kdims, mode)?,
            op_v: conv_image_as_operator_on_kernel(&x.vert, kdims, mode)?,
        })
    }

    /// (T^T T + mu I) v, both gradient channels summed into the data term.
    fn normal_apply(&self, v: &[f64], mu: f64) -> Vec<f64> {
        let ah = self.op_h.adjoint_matvec(&self.op_h.matvec(v));
        let av = self.op_v.adjoint_matvec(&self.op_v.matvec(v));
        ah.iter()
            .zip(av.iter())
            .zip(v.iter())
            .map(|((a, b), c)| a + b + mu * c)
            .collect()
    }

    /// T^T y + mu * anchor.
    fn rhs(&self, y: &GradientPair, anchor: &[f64], mu: f64) -> Vec<f64> {
        let bh = self.op_h.adjoint_matvec(&y.horiz);
        let bv = self.op_v.adjoint_matvec(&y.vert);
        bh.iter()
            .zip(bv.iter())
            .zip(anchor.iter())
            .map(|((a, b), c)| a + b + mu * c)
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Conjugate gradient on the normal equations (T^T T + mu I) psi =
/// T^T y + mu * k_anchor, warm-started at the anchor. Runs exactly `iters`
/// iterations (no early exit) for reproducibility, stopping only on an
/// exactly zero residual.
pub fn cg_solve_psi(
    x: &GradientPair,
    y: &GradientPair,
    k_anchor: &Kernel,
    mu: f64,
    iters: usize,
    kdims: (usize, usize),
    mode: BoundaryMode,
) -> Result<DMatrix<f64>> {
    if iters < 1 {
        return Err(Error::InvalidArgument("iters must be >= 1".into()));
    }
    if mu < 0.0 {
        return Err(Error::InvalidArgument("mu must be >= 0".into()));
    }
    let (kl, kk) = kdims;
    let op = DataOperator::new(x, kdims, mode)?;
    let anchor: Vec<f64> = if (k_anchor.size_l(), k_anchor.size_k()) == kdims {
        k_anchor.weights().to_vec()
    } else {
        k_anchor.zero_pad(kl, kk)?.weights().to_vec()
    };

    let b = op.rhs(y, &anchor, mu);
    let mut sol = anchor.clone();
    let mut r: Vec<f64> = b
        .iter()
        .zip(op.normal_apply(&sol, mu).iter())
        .map(|(bi, ai)| bi - ai)
        .collect();
    let mut p = r.clone();
    let mut rs_old = dot(&r, &r);
    for _ in 0..iters {
        if rs_old == 0.0 {
            break;
        }
        let ap = op.normal_apply(&p, mu);
        let denom = dot(&p, &ap);
        if denom <= 0.0 || !denom.is_finite() {
            if !denom.is_finite() {
                return Err(Error::Diverged("CG curvature is not finite".into()));
            }
            break; // p in the null space of a singular system: stationary.
        }
        let alpha = rs_old / denom;
        for i in 0..sol.len() {
            sol[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = dot(&r, &r);
        if !rs_new.is_finite() {
            return Err(Error::Diverged("CG residual is not finite".into()));
        }
        let beta = rs_new / rs_old;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rs_old = rs_new;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged("CG iterate is not finite".into()));
    }
    Ok(DMatrix::from_row_iterator(kl, kk, sol.into_iter()))
}

/// Full kernel update: alternates the CG sub-problem (unanchored on the
/// first pass, then anchored with exponentially growing weight
/// mu * e^j / e^outer) with `inner_iter_max` prox shrinkage iterations
/// started from a matrix whose singular values are all 1, then projects.
/// With sigma = 0 the prox iterations are skipped and only CG + projection
/// run.
pub fn update_kernel(
    x: &GradientPair,
    y: &GradientPair,
    k_init: &Kernel,
    p: &KStepParams,
    mode: BoundaryMode,
) -> Result<Kernel> {
    p.validate()?;
    let kdims = (k_init.size_l(), k_init.size_k());
    let mut k = k_init.clone();
    for j in 0..p.outer_iter_max {
        let mu_j = if j == 0 {
            0.0
        } else {
            p.mu * ((j as f64) - (p.outer_iter_max as f64)).exp()
        };
        let psi = cg_solve_psi(x, y, &k, mu_j, p.cg_iter_max, kdims, mode)?;
        k = if p.sigma > 0.0 {
            // Start from psi's orientation with every singular value set to 1.
            let svd = svd_triple(&psi);
            let mut km = &svd.u * &svd.v_t;
            for _ in 0..p.inner_iter_max {
                km = prox_logdet(&psi, &km, p.tau * p.sigma, p.delta)?;
            }
            project_kernel(&km)?
        } else {
            project_kernel(&psi)?
        };
    }
    Ok(k)
}
