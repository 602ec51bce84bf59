//! Per-class sparse GP machinery: inducing sets, the variational Gaussian
//! over inducing outputs, marginal predictive moments at arbitrary inputs,
//! KL(q(u) || p(u)), and the predictive-mean gradient used by the
//! first-order noise propagation.

use crate::error::{Error, Result};
use crate::kernel::{self, KernelParams};
use crate::linalg::{cholesky, dot, solve_lower, solve_upper, Mat};

/// Marginal variances are clamped from below at this floor.
pub const VAR_FLOOR: f64 = 1e-10;

/// Inducing point locations for one latent function.
#[derive(Debug, Clone)]
pub struct InducingSet {
    pub z: Mat,
}

impl InducingSet {
    pub fn new(z: Mat, n_train: usize) -> Result<Self> {
        if z.rows == 0 {
            return Err(Error::contract("need at least one inducing point"));
        }
        if z.rows > n_train {
            return Err(Error::contract("more inducing points than data"));
        }
        if !z.is_finite() {
            return Err(Error::contract("inducing locations must be finite"));
        }
        Ok(InducingSet { z })
    }

    pub fn len(&self) -> usize {
        self.z.rows
    }

    pub fn is_empty(&self) -> bool {
        self.z.rows == 0
    }
}

/// Gaussian q(u) = N(m, S) with S held in factored form S = F F^T,
/// F lower-triangular with strictly positive diagonal.
#[derive(Debug, Clone)]
pub struct VariationalGaussianU {
    pub m: Vec<f64>,
    pub s_factor: Mat,
}

impl VariationalGaussianU {
    pub fn new(m: Vec<f64>, s_factor: Mat) -> Result<Self> {
        if s_factor.rows != s_factor.cols || s_factor.rows != m.len() {
            return Err(Error::contract("q(u) parameter shapes disagree"));
        }
        for i in 0..s_factor.rows {
            if !(s_factor[(i, i)] > 0.0) {
                return Err(Error::contract("S factor diagonal must be positive"));
            }
            for j in i + 1..s_factor.cols {
                if s_factor[(i, j)] != 0.0 {
                    return Err(Error::contract("S factor must be lower-triangular"));
                }
            }
        }
        Ok(VariationalGaussianU { m, s_factor })
    }

    /// q(u) matching the prior: m = 0, S = K (factor = prior Cholesky).
    pub fn from_prior(prior_factor: &Mat) -> Self {
        VariationalGaussianU {
            m: vec![0.0; prior_factor.rows],
            s_factor: prior_factor.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// Marginal predictive moments of one latent function at query points.
#[derive(Debug, Clone)]
pub struct MarginalPredictive {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Cholesky factor of the inducing-point covariance with escalating jitter:
/// on failure the numerical jitter is multiplied by 10, three retries.
pub fn prior_chol(kernel: &KernelParams, z: &InducingSet) -> Result<Mat> {
    kernel.validate()?;
    let base = kernel::kernel_matrix(kernel, &z.z, &z.z, true)?;
    let mut extra = 0.0;
    let mut jitter = kernel.numerical_jitter();
    for attempt in 0..4 {
        let mut k = base.clone();
        if extra > 0.0 {
            for i in 0..k.rows {
                k[(i, i)] += extra;
            }
        }
        match cholesky(&k) {
            Ok(l) => return Ok(l),
            Err(e) => {
                if attempt == 3 {
                    return Err(match e {
                        Error::Numerical {
                            context,
                            size,
                            diag_min,
                            diag_max,
                            ..
                        } => Error::Numerical {
                            context: format!("prior factorization failed after jitter escalation: {}", context),
                            size,
                            diag_min,
                            diag_max,
                            jitter,
                        },
                        other => other,
                    });
                }
                jitter *= 10.0;
                extra = jitter;
            }
        }
    }
    unreachable!()
}

/// KL(q(u) || p(u)) computed through triangular solves only:
/// `0.5 [ trace(K^{-1} S) + m^T K^{-1} m - M + log|K| - log|S| ]`.
pub fn kl_u(q: &VariationalGaussianU, prior_factor: &Mat) -> Result<f64> {
    let m = q.len();
    if prior_factor.rows != m || prior_factor.cols != m {
        return Err(Error::contract("prior factor dimension mismatch"));
    }
    // trace(K^{-1} S) = ||L^{-1} F||_F^2, column by column
    let mut trace = 0.0;
    for j in 0..m {
        let mut col: Vec<f64> = (0..m).map(|i| q.s_factor[(i, j)]).collect();
        solve_lower(prior_factor, &mut col);
        trace += dot(&col, &col);
    }
    let mut beta = q.m.clone();
    solve_lower(prior_factor, &mut beta);
    let maha = dot(&beta, &beta);
    let logdet_k: f64 = (0..m).map(|i| prior_factor[(i, i)].ln()).sum::<f64>() * 2.0;
    let logdet_s: f64 = (0..m).map(|i| q.s_factor[(i, i)].ln()).sum::<f64>() * 2.0;
    Ok(0.5 * (trace + maha - m as f64 + logdet_k - logdet_s))
}

/// Marginal mean and variance of q(f) at each row of `x`:
/// `mean = k_xZ K^{-1} m`,
/// `var  = k_xx - k_xZ K^{-1} (K - S) K^{-1} k_Zx` on the diagonal.
pub fn marginal_q_f(
    kernel: &KernelParams,
    z: &InducingSet,
    q: &VariationalGaussianU,
    x: &Mat,
) -> Result<MarginalPredictive> {
    let l = prior_chol(kernel, z)?;
    marginal_q_f_with_factor(kernel, z, q, &l, x)
}

/// Same as [`marginal_q_f`] but with a caller-supplied prior factor; the
/// factor must correspond to the current kernel and inducing set.
pub fn marginal_q_f_with_factor(
    kernel: &KernelParams,
    z: &InducingSet,
    q: &VariationalGaussianU,
    prior_factor: &Mat,
    x: &Mat,
) -> Result<MarginalPredictive> {
    if x.cols != kernel.dim() {
        return Err(Error::contract("query dimension mismatch"));
    }
    let m = z.len();
    let kxz = kernel::kernel_matrix(kernel, x, &z.z, false)?;
    let kxx = kernel::kernel_diag(kernel, x)?;
    let mut beta = q.m.clone();
    solve_lower(prior_factor, &mut beta); // L^{-1} m
    let ft = q.s_factor.transpose();
    let mut mean = Vec::with_capacity(x.rows);
    let mut var = Vec::with_capacity(x.rows);
    let mut a = vec![0.0; m];
    let mut c = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..x.rows {
        a.copy_from_slice(kxz.row(i));
        solve_lower(prior_factor, &mut a); // L^{-1} k_Zx
        mean.push(dot(&a, &beta));
        c.copy_from_slice(&a);
        solve_upper(prior_factor, &mut c); // K^{-1} k_Zx
        // w = F^T c
        for j in 0..m {
            w[j] = dot(&ft.row(j)[j..], &c[j..]);
        }
        let v = kxx[i] - dot(&a, &a) + dot(&w, &w);
        var.push(v.max(VAR_FLOOR));
    }
    Ok(MarginalPredictive { mean, var })
}

/// Gradient of the predictive mean with respect to a single query point:
/// `d mean / d x = (d k_xZ / d x)^T K^{-1} m`.
pub fn predictive_mean_grad(
    kernel: &KernelParams,
    z: &InducingSet,
    q: &VariationalGaussianU,
    x: &[f64],
) -> Result<Vec<f64>> {
    let l = prior_chol(kernel, z)?;
    let mut alpha = q.m.clone();
    solve_lower(&l, &mut alpha);
    solve_upper(&l, &mut alpha); // K^{-1} m
    predictive_mean_grad_with_alpha(kernel, z, &alpha, x)
}

pub(crate) fn predictive_mean_grad_with_alpha(
    kernel: &KernelParams,
    z: &InducingSet,
    alpha: &[f64],
    x: &[f64],
) -> Result<Vec<f64>> {
    let jac = kernel::kernel_grad_input(kernel, x, &z.z)?; // M x d
    let d = kernel.dim();
    let mut g = vec![0.0; d];
    for mrow in 0..z.len() {
        let row = jac.row(mrow);
        for j in 0..d {
            g[j] += row[j] * alpha[mrow];
        }
    }
    Ok(g)
}

/// First-order extra output variance at one point:
/// `delta = g^T diag(V) g` with `g` the predictive-mean gradient.
pub fn fo_delta(
    kernel: &KernelParams,
    z: &InducingSet,
    q: &VariationalGaussianU,
    x: &[f64],
    v: &[f64],
) -> Result<f64> {
    if v.len() != kernel.dim() {
        return Err(Error::contract("input-variance dimension mismatch"));
    }
    if v.iter().any(|&vi| vi < 0.0) {
        return Err(Error::contract("input variances must be nonnegative"));
    }
    let g = predictive_mean_grad(kernel, z, q, x)?;
    Ok(g.iter().zip(v).map(|(gi, vi)| gi * gi * vi).sum())
}
