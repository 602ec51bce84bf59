//! Covariance functions, their matrices, and their derivatives with respect
//! to inputs and hyper-parameters.
//!
//! The squared exponential form divides by `l_j`, not `l_j^2`: each
//! length-scale plays the role of a squared distance scale. The polynomial
//! family is the inhomogeneous ARD polynomial
//! `amp^2 (sum_j x_j x'_j / l_j + offset)^degree`.

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Multiplier on `amplitude_sq` for the numerical jitter added to square
/// kernel matrices before factorization (independent of `jitter_sq`).
pub const NUMERICAL_JITTER_FACTOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    SquaredExponentialArd,
    PolynomialArd,
}

/// Hyper-parameters of one latent function's covariance.
///
/// Values here are the constrained (positive) quantities; the trainer stores
/// them in log coordinates so optimizer steps can never violate positivity.
#[derive(Debug, Clone)]
pub struct KernelParams {
    pub amplitude_sq: f64,
    pub lengthscales: Vec<f64>,
    pub jitter_sq: f64,
    pub family: KernelFamily,
    pub poly_degree: u32,
    pub poly_offset: f64,
}

impl KernelParams {
    pub fn se_ard(amplitude_sq: f64, lengthscales: Vec<f64>, jitter_sq: f64) -> Result<Self> {
        let p = KernelParams {
            amplitude_sq,
            lengthscales,
            jitter_sq,
            family: KernelFamily::SquaredExponentialArd,
            poly_degree: 3,
            poly_offset: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn poly_ard(
        amplitude_sq: f64,
        lengthscales: Vec<f64>,
        jitter_sq: f64,
        degree: u32,
        offset: f64,
    ) -> Result<Self> {
        let p = KernelParams {
            amplitude_sq,
            lengthscales,
            jitter_sq,
            family: KernelFamily::PolynomialArd,
            poly_degree: degree,
            poly_offset: offset,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude_sq > 0.0) {
            return Err(Error::contract("amplitude_sq must be > 0"));
        }
        if self.lengthscales.is_empty() || self.lengthscales.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::contract("every lengthscale must be > 0"));
        }
        if !(self.jitter_sq >= 0.0) {
            return Err(Error::contract("jitter_sq must be >= 0"));
        }
        if self.family == KernelFamily::PolynomialArd {
            if self.poly_degree == 0 {
                return Err(Error::contract("poly_degree must be >= 1"));
            }
            if !(self.poly_offset >= 0.0) {
                return Err(Error::contract("poly_offset must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Numerical jitter added to square matrices before factorization.
    pub fn numerical_jitter(&self) -> f64 {
        NUMERICAL_JITTER_FACTOR * self.amplitude_sq
    }
}

/// Kernel value without the same-point indicator term, plus a family-specific
/// cache reused by the backward contractions (SE: the value itself; poly: the
/// inner product `u`).
#[inline]
pub(crate) fn pair_eval(p: &KernelParams, x: &[f64], z: &[f64]) -> (f64, f64) {
    match p.family {
        KernelFamily::SquaredExponentialArd => {
            let mut s = 0.0;
            for j in 0..x.len() {
                let r = x[j] - z[j];
                s += r * r / p.lengthscales[j];
            }
            let k = p.amplitude_sq * (-0.5 * s).exp();
            (k, k)
        }
        KernelFamily::PolynomialArd => {
            let mut u = p.poly_offset;
            for j in 0..x.len() {
                u += x[j] * z[j] / p.lengthscales[j];
            }
            (p.amplitude_sq * u.powi(p.poly_degree as i32), u)
        }
    }
}

/// Accumulator for kernel hyper-parameter gradients in log coordinates.
#[derive(Debug, Clone)]
pub(crate) struct KernelGradAcc {
    pub d_log_amp: f64,
    pub d_log_ls: Vec<f64>,
    pub d_log_jitter: f64,
}

impl KernelGradAcc {
    pub fn zeros(d: usize) -> Self {
        KernelGradAcc {
            d_log_amp: 0.0,
            d_log_ls: vec![0.0; d],
            d_log_jitter: 0.0,
        }
    }
}

/// Adjoint of one off-indicator kernel evaluation. `cache` is the second
/// value returned by [`pair_eval`]. Optionally accumulates into the adjoints
/// of `x` and `z`.
#[inline]
pub(crate) fn pair_backward(
    p: &KernelParams,
    x: &[f64],
    z: &[f64],
    cache: f64,
    k_bar: f64,
    acc: &mut KernelGradAcc,
    mut x_bar: Option<&mut [f64]>,
    mut z_bar: Option<&mut [f64]>,
) {
    match p.family {
        KernelFamily::SquaredExponentialArd => {
            let k = cache;
            acc.d_log_amp += k_bar * k;
            for j in 0..x.len() {
                let r = x[j] - z[j];
                let lj = p.lengthscales[j];
                acc.d_log_ls[j] += k_bar * k * r * r / (2.0 * lj);
                let dkdx = -k * r / lj;
                if let Some(xb) = x_bar.as_deref_mut() {
                    xb[j] += k_bar * dkdx;
                }
                if let Some(zb) = z_bar.as_deref_mut() {
                    zb[j] -= k_bar * dkdx;
                }
            }
        }
        KernelFamily::PolynomialArd => {
            let u = cache;
            let deg = p.poly_degree as i32;
            let upm1 = u.powi(deg - 1);
            let k = p.amplitude_sq * upm1 * u;
            let pref = p.amplitude_sq * deg as f64 * upm1;
            acc.d_log_amp += k_bar * k;
            for j in 0..x.len() {
                let lj = p.lengthscales[j];
                acc.d_log_ls[j] -= k_bar * pref * x[j] * z[j] / lj;
                if let Some(xb) = x_bar.as_deref_mut() {
                    xb[j] += k_bar * pref * z[j] / lj;
                }
                if let Some(zb) = z_bar.as_deref_mut() {
                    zb[j] += k_bar * pref * x[j] / lj;
                }
            }
        }
    }
}

/// One row of the input gradient, i.e. d k(x, z) / d x, with the forward
/// cache for the second-order contraction used by the first-order noise path.
#[inline]
pub(crate) fn grad_input_row(p: &KernelParams, x: &[f64], z: &[f64], out: &mut [f64]) -> f64 {
    let (_, cache) = pair_eval(p, x, z);
    grad_input_row_cached(p, x, z, cache, out);
    cache
}

#[inline]
pub(crate) fn grad_input_row_cached(
    p: &KernelParams,
    x: &[f64],
    z: &[f64],
    cache: f64,
    out: &mut [f64],
) {
    match p.family {
        KernelFamily::SquaredExponentialArd => {
            let k = cache;
            for j in 0..x.len() {
                out[j] = -k * (x[j] - z[j]) / p.lengthscales[j];
            }
        }
        KernelFamily::PolynomialArd => {
            let u = cache;
            let deg = p.poly_degree as i32;
            let pref = p.amplitude_sq * deg as f64 * u.powi(deg - 1);
            for j in 0..x.len() {
                out[j] = pref * z[j] / p.lengthscales[j];
            }
        }
    }
}

/// Adjoint of [`grad_input_row_cached`] into kernel hyper-parameters and `z`.
/// `x` is treated as fixed (the first-order path evaluates at the observed
/// inputs).
#[inline]
pub(crate) fn grad_input_row_backward(
    p: &KernelParams,
    x: &[f64],
    z: &[f64],
    cache: f64,
    j_row: &[f64],
    j_bar: &[f64],
    acc: &mut KernelGradAcc,
    z_bar: Option<&mut [f64]>,
) {
    let d = x.len();
    match p.family {
        KernelFamily::SquaredExponentialArd => {
            let k = cache;
            // q = <j_bar, j_row>
            let mut q = 0.0;
            for j in 0..d {
                q += j_bar[j] * j_row[j];
            }
            acc.d_log_amp += q;
            let mut zb = z_bar;
            for l in 0..d {
                let r = x[l] - z[l];
                let ll = p.lengthscales[l];
                acc.d_log_ls[l] += q * r * r / (2.0 * ll) - j_bar[l] * j_row[l];
                if let Some(zbv) = zb.as_deref_mut() {
                    zbv[l] += q * r / ll + j_bar[l] * k / ll;
                }
            }
        }
        KernelFamily::PolynomialArd => {
            let u = cache;
            let deg = p.poly_degree as i32;
            let upm1 = u.powi(deg - 1);
            let upm2 = if deg >= 2 { u.powi(deg - 2) } else { 0.0 };
            let pref = p.amplitude_sq * deg as f64 * upm1;
            let pref2 = p.amplitude_sq * deg as f64 * (deg - 1) as f64 * upm2;
            let mut q = 0.0;
            // q2 = sum_j j_bar_j z_j / l_j  (contracts the u-derivative path)
            let mut q2 = 0.0;
            for j in 0..d {
                q += j_bar[j] * j_row[j];
                q2 += j_bar[j] * z[j] / p.lengthscales[j];
            }
            acc.d_log_amp += q;
            let mut zb = z_bar;
            for l in 0..d {
                let ll = p.lengthscales[l];
                acc.d_log_ls[l] += -pref2 * (x[l] * z[l] / ll) * q2 - j_bar[l] * j_row[l];
                if let Some(zbv) = zb.as_deref_mut() {
                    zbv[l] += pref2 * (x[l] / ll) * q2 + j_bar[l] * pref / ll;
                }
            }
        }
    }
}

/// Evaluate the kernel between two points. The same-point indicator term is
/// controlled by the caller-supplied flag, never by floating-point equality.
pub fn kernel_eval(p: &KernelParams, x: &[f64], x2: &[f64], same_point: bool) -> Result<f64> {
    if x.len() != p.dim() || x2.len() != p.dim() {
        return Err(Error::contract(format!(
            "kernel_eval dimension mismatch: points of dim {}/{} vs {} lengthscales",
            x.len(),
            x2.len(),
            p.dim()
        )));
    }
    let (k, _) = pair_eval(p, x, x2);
    Ok(if same_point { k + p.jitter_sq } else { k })
}

/// Entrywise kernel matrix between the rows of `a` and `b`. When
/// `diagonal_jitter` is set (legal only for `a` and `b` with the same row
/// count, intended for `a == b`), `jitter_sq` plus the numerical jitter is
/// added to the diagonal.
pub fn kernel_matrix(p: &KernelParams, a: &Mat, b: &Mat, diagonal_jitter: bool) -> Result<Mat> {
    if a.cols != p.dim() || b.cols != p.dim() {
        return Err(Error::contract(format!(
            "kernel_matrix dimension mismatch: {}x{} and {}x{} vs {} lengthscales",
            a.rows,
            a.cols,
            b.rows,
            b.cols,
            p.dim()
        )));
    }
    if diagonal_jitter && a.rows != b.rows {
        return Err(Error::contract(
            "diagonal_jitter requires a square kernel matrix",
        ));
    }
    let mut k = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let xi = a.row(i);
        let row = k.row_mut(i);
        for j in 0..b.rows {
            row[j] = pair_eval(p, xi, b.row(j)).0;
        }
    }
    if diagonal_jitter {
        let add = p.jitter_sq + p.numerical_jitter();
        for i in 0..a.rows {
            k[(i, i)] += add;
        }
    }
    Ok(k)
}

/// Diagonal of the kernel matrix of `a` against itself, with the same-point
/// indicator included (no numerical jitter).
pub fn kernel_diag(p: &KernelParams, a: &Mat) -> Result<Vec<f64>> {
    if a.cols != p.dim() {
        return Err(Error::contract("kernel_diag dimension mismatch"));
    }
    Ok((0..a.rows)
        .map(|i| pair_eval(p, a.row(i), a.row(i)).0 + p.jitter_sq)
        .collect())
}

/// Gradient of the cross-covariance vector with respect to the query point:
/// row `j` of the result holds d k(x, z_j) / d x.
pub fn kernel_grad_input(p: &KernelParams, x: &[f64], z: &Mat) -> Result<Mat> {
    if x.len() != p.dim() || z.cols != p.dim() {
        return Err(Error::contract("kernel_grad_input dimension mismatch"));
    }
    let mut out = Mat::zeros(z.rows, p.dim());
    for j in 0..z.rows {
        grad_input_row(p, x, z.row(j), out.row_mut(j));
    }
    Ok(out)
}
