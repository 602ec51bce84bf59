//! Robust-max multi-class likelihood, its expected log under Gaussian
//! marginals via Gauss-Hermite quadrature, and class-probability prediction.
//!
//! The robust-max likelihood takes exactly two values for any latent vector:
//! `1 - eps` when the target function wins, `eps / (C - 1)` otherwise. Two
//! consequences are used throughout:
//!
//! * the expectation of the log under Gaussian marginals is exactly
//!   `pi log(1 - eps) + (1 - pi) log(eps / (C - 1))` with `pi` the winner
//!   probability, which is what the ELBO data term uses;
//! * the posterior predictive of a class is the mixture
//!   `(1 - eps) pi + eps / (C - 1) (1 - pi)`, which is what prediction uses.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LikelihoodConfig {
    /// Number of classes C. The model targets C >= 3; C = 2 is accepted.
    pub num_classes: usize,
    /// Label-flip probability, fixed during training.
    pub label_noise: f64,
    /// Gauss-Hermite node count.
    pub quad_points: usize,
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        LikelihoodConfig {
            num_classes: 3,
            label_noise: 1e-3,
            quad_points: 16,
        }
    }
}

impl LikelihoodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::contract("num_classes must be >= 2"));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::contract("label_noise must lie in [0, 1)"));
        }
        if self.quad_points < 4 {
            return Err(Error::contract("quad_points must be >= 4"));
        }
        Ok(())
    }
}

/// Quadrature rule transformed so that `sum_k w_k g(t_k) ~ E[g(Y)]` for
/// standard normal Y.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss-Hermite rule of order `n`, already changed to the standard-normal
/// measure. Node polish by Newton iteration on the orthonormal Hermite
/// recurrence.
pub fn gauss_hermite_rule(n: usize) -> Result<QuadratureRule> {
    if n < 1 || n > 128 {
        return Err(Error::contract("quadrature order must be in 1..=128"));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            // orthonormal Hermite recurrence under weight exp(-x^2)
            let mut p1 = std::f64::consts::PI.powf(-0.25);
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        let w = 2.0 / (pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    // change of variables x -> sqrt(2) x, weights normalized by sqrt(pi)
    let spi = std::f64::consts::PI.sqrt();
    for i in 0..n {
        nodes[i] *= std::f64::consts::SQRT_2;
        weights[i] /= spi;
    }
    // ascending node order for reproducible summation
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| nodes[a].partial_cmp(&nodes[b]).unwrap());
    Ok(QuadratureRule {
        nodes: idx.iter().map(|&i| nodes[i]).collect(),
        weights: idx.iter().map(|&i| weights[i]).collect(),
    })
}

/// Standard normal cumulative distribution function.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Variance widening of the recentered quadrature reference.
const WIDEN: f64 = 1.0;

/// log Phi(z), stable far into the lower tail (Mills-ratio asymptotics
/// below z = -30, where direct evaluation starts losing range).
#[inline]
pub fn log_normal_cdf(z: f64) -> f64 {
    if z > -30.0 {
        normal_cdf(z).ln()
    } else {
        let x = -z;
        let x2 = x * x;
        let mills = (1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2)) / x;
        -0.5 * z * z - 0.5 * LN_2PI + mills.ln()
    }
}

/// phi(z) / Phi(z), the inverse Mills ratio, stable in the lower tail.
#[inline]
pub fn normal_pdf_cdf_ratio(z: f64) -> f64 {
    if z > -30.0 {
        normal_pdf(z) / normal_cdf(z)
    } else {
        let x = -z;
        let x2 = x * x;
        x / (1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2))
    }
}

/// Log of the robust-max likelihood at a concrete latent vector. Ties count
/// as non-satisfaction of the strict Heaviside product.
pub fn robustmax_loglik(f: &[f64], y: usize, cfg: &LikelihoodConfig) -> Result<f64> {
    if y >= f.len() {
        return Err(Error::contract("class index out of range"));
    }
    if f.len() != cfg.num_classes {
        return Err(Error::contract("latent vector length != num_classes"));
    }
    let wins = f
        .iter()
        .enumerate()
        .all(|(c, &fc)| c == y || f[y] - fc > 0.0);
    let eps = cfg.label_noise;
    let c1 = cfg.num_classes as f64 - 1.0;
    Ok(if wins {
        (1.0 - eps).ln()
    } else {
        (eps / c1).ln()
    })
}

/// The winner integrand in log space:
/// `g(f) = log N(f | m_y, v_y) + sum_{c != y} log Phi((f - m_c)/sqrt(v_c))`.
/// g is strictly concave in f.
struct WinnerIntegrand<'a> {
    means: &'a [f64],
    vars: &'a [f64],
    y: usize,
}

impl WinnerIntegrand<'_> {
    fn value(&self, f: f64) -> f64 {
        let vy = self.vars[self.y];
        let my = self.means[self.y];
        let mut g = -0.5 * LN_2PI - 0.5 * vy.ln() - (f - my) * (f - my) / (2.0 * vy);
        for c in 0..self.means.len() {
            if c == self.y {
                continue;
            }
            g += log_normal_cdf((f - self.means[c]) / self.vars[c].sqrt());
        }
        g
    }

    /// (g', g'')
    fn derivs(&self, f: f64) -> (f64, f64) {
        let vy = self.vars[self.y];
        let my = self.means[self.y];
        let mut d1 = -(f - my) / vy;
        let mut d2 = -1.0 / vy;
        for c in 0..self.means.len() {
            if c == self.y {
                continue;
            }
            let sc = self.vars[c].sqrt();
            let s = (f - self.means[c]) / sc;
            let r = normal_pdf_cdf_ratio(s);
            d1 += r / sc;
            d2 -= r * (s + r) / (sc * sc);
        }
        (d1, d2)
    }

    /// Mode of g by safeguarded Newton (bisection fallback inside a bracket).
    fn mode(&self) -> f64 {
        let scale = self
            .vars
            .iter()
            .fold(0.0f64, |a, &v| a.max(v.sqrt()))
            .max(1e-6);
        let mut f = self.means[self.y];
        let (d1, _) = self.derivs(f);
        // expand a bracket [lo, hi] with g'(lo) > 0 > g'(hi)
        let mut step = scale;
        let (mut lo, mut hi);
        if d1 > 0.0 {
            lo = f;
            hi = f + step;
            while self.derivs(hi).0 > 0.0 {
                lo = hi;
                step *= 2.0;
                hi += step;
                if step > 1e12 {
                    return hi;
                }
            }
        } else {
            hi = f;
            lo = f - step;
            while self.derivs(lo).0 < 0.0 {
                hi = lo;
                step *= 2.0;
                lo -= step;
                if step > 1e12 {
                    return lo;
                }
            }
        }
        f = 0.5 * (lo + hi);
        for _ in 0..100 {
            let (g1, g2) = self.derivs(f);
            if g1 > 0.0 {
                lo = f;
            } else {
                hi = f;
            }
            let mut next = f - g1 / g2;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let delta = (next - f).abs();
            f = next;
            if delta < 1e-12 * scale.max(f.abs()) {
                break;
            }
        }
        f
    }
}

/// Probability that latent function `y` is the largest under independent
/// Gaussian marginals:
/// `pi = E_{f_y} prod_{c != y} Phi((f_y - m_c) / sqrt(v_c))`.
///
/// The Gauss-Hermite rule is recentered at the mode of the (log-concave)
/// integrand with Laplace curvature matching, then applied to the importance
/// ratio. This keeps the node budget accurate even when the product of CDF
/// factors is much sharper than the base Gaussian, and keeps tail
/// probabilities accurate in relative terms.
pub fn winner_prob(means: &[f64], vars: &[f64], y: usize, quad: &QuadratureRule) -> Result<f64> {
    check_marginals(means, vars, y)?;
    Ok(winner_prob_core(means, vars, y, quad, None))
}

/// Winner probability together with its partial derivatives with respect to
/// every mean and variance.
pub(crate) fn winner_prob_grad(
    means: &[f64],
    vars: &[f64],
    y: usize,
    quad: &QuadratureRule,
) -> (f64, Vec<f64>, Vec<f64>) {
    let mut d_mean = vec![0.0; means.len()];
    let mut d_var = vec![0.0; means.len()];
    let pi = winner_prob_core(means, vars, y, quad, Some((&mut d_mean, &mut d_var)));
    (pi, d_mean, d_var)
}

fn winner_prob_core(
    means: &[f64],
    vars: &[f64],
    y: usize,
    quad: &QuadratureRule,
    mut grad: Option<(&mut [f64], &mut [f64])>,
) -> f64 {
    let integrand = WinnerIntegrand { means, vars, y };
    let mode = integrand.mode();
    let (_, g2) = integrand.derivs(mode);
    // Laplace-matched reference Gaussian; g2 < 0 by concavity. The widening
    // factor covers skewed flanks of the integrand.
    let m_ref = mode;
    let v_ref = -WIDEN / g2;
    let s_ref = v_ref.sqrt();
    let my = means[y];
    let vy = vars[y];
    let mut pi = 0.0;
    for (&t, &w) in quad.nodes.iter().zip(&quad.weights) {
        let f = m_ref + s_ref * t;
        let log_ref = -0.5 * LN_2PI - 0.5 * v_ref.ln() - 0.5 * t * t;
        let e = (integrand.value(f) - log_ref).exp();
        let we = w * e;
        pi += we;
        if let Some((d_mean, d_var)) = grad.as_mut() {
            // derivatives of g at fixed f; the recentering is treated as
            // constant, its parameter sensitivity is at the quadrature-error
            // scale by construction.
            let r0 = (f - my) / vy;
            d_mean[y] += we * r0;
            d_var[y] += we * (r0 * r0 - 1.0 / vy) * 0.5;
            for c in 0..means.len() {
                if c == y {
                    continue;
                }
                let sc = vars[c].sqrt();
                let s = (f - means[c]) / sc;
                let r = normal_pdf_cdf_ratio(s);
                d_mean[c] -= we * r / sc;
                d_var[c] -= we * r * s / (2.0 * vars[c]);
            }
        }
    }
    pi.clamp(0.0, 1.0)
}

/// Log of the expected robust-max likelihood under Gaussian marginals
/// (the predictive mixture, logged after the expectation).
pub fn expected_loglik(
    means: &[f64],
    vars: &[f64],
    y: usize,
    cfg: &LikelihoodConfig,
    quad: &QuadratureRule,
) -> Result<f64> {
    let pi = winner_prob(means, vars, y, quad)?;
    Ok(mixture_prob(pi, cfg).ln())
}

/// Exact expectation of the log robust-max likelihood under Gaussian
/// marginals. Because the likelihood takes only two values, this is
/// `pi log(1 - eps) + (1 - pi) log(eps / (C - 1))` with no further
/// approximation beyond the quadrature for `pi`. This is the ELBO data term.
pub fn expected_loglik_exact(
    means: &[f64],
    vars: &[f64],
    y: usize,
    cfg: &LikelihoodConfig,
    quad: &QuadratureRule,
) -> Result<f64> {
    let pi = winner_prob(means, vars, y, quad)?;
    let eps = cfg.label_noise;
    let c1 = cfg.num_classes as f64 - 1.0;
    Ok(pi * (1.0 - eps).ln() + (1.0 - pi) * (eps / c1).ln())
}

/// Value and marginal-moment gradients of [`expected_loglik_exact`].
pub(crate) fn expected_loglik_exact_grad(
    means: &[f64],
    vars: &[f64],
    y: usize,
    cfg: &LikelihoodConfig,
    quad: &QuadratureRule,
) -> (f64, Vec<f64>, Vec<f64>) {
    let (pi, mut d_mean, mut d_var) = winner_prob_grad(means, vars, y, quad);
    let eps = cfg.label_noise;
    let c1 = cfg.num_classes as f64 - 1.0;
    let log_win = (1.0 - eps).ln();
    let log_lose = (eps / c1).ln();
    let scale = log_win - log_lose;
    for v in d_mean.iter_mut() {
        *v *= scale;
    }
    for v in d_var.iter_mut() {
        *v *= scale;
    }
    (pi * log_win + (1.0 - pi) * log_lose, d_mean, d_var)
}

#[inline]
fn mixture_prob(pi: f64, cfg: &LikelihoodConfig) -> f64 {
    let eps = cfg.label_noise;
    let c1 = cfg.num_classes as f64 - 1.0;
    (1.0 - eps) * pi + eps / c1 * (1.0 - pi)
}

/// 16-point Gauss-Legendre rule on [-1, 1] by Newton iteration on the
/// Legendre recurrence.
fn gauss_legendre_16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: std::sync::OnceLock<(Vec<f64>, Vec<f64>)> = std::sync::OnceLock::new();
    RULE.get_or_init(|| {
        let n = 16usize;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = (n + 1) / 2;
        for i in 0..m {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = 1.0;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = ((2.0 * j as f64 + 1.0) * z * p2 - j as f64 * p3) / (j as f64 + 1.0);
                }
                pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() < 1e-15 {
                    break;
                }
            }
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            weights[i] = 2.0 / ((1.0 - z * z) * pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        (nodes, weights)
    })
}

/// Robust forward-only winner probability: composite Gauss-Legendre over
/// panels split at every CDF-factor transition, evaluated in log space.
/// Handles arbitrary sharpness ratios; used when the configured
/// Gauss-Hermite budget leaves visible drift.
fn winner_prob_robust(means: &[f64], vars: &[f64], y: usize) -> f64 {
    let integrand = WinnerIntegrand { means, vars, y };
    let sy = vars[y].sqrt();
    // effective support: the product of CDFs vanishes below the highest
    // wall's lower edge; the Gaussian factor bounds both sides
    let mut lo = means[y] - 9.0 * sy;
    let hi = means[y] + 9.0 * sy;
    let mut cut = f64::NEG_INFINITY;
    for c in 0..means.len() {
        if c != y {
            cut = cut.max(means[c] - 9.0 * vars[c].sqrt());
        }
    }
    lo = lo.max(cut.min(hi - 1e-12));
    if !(hi > lo) {
        return 0.0;
    }
    // breakpoints hugging each wall and the Gaussian center
    let mut brk = vec![lo, hi];
    let mut push = |v: f64| {
        if v > lo && v < hi {
            brk.push(v);
        }
    };
    for c in 0..means.len() {
        if c == y {
            continue;
        }
        let sc = vars[c].sqrt();
        for k in [-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0] {
            push(means[c] + k * sc);
        }
    }
    for k in [-6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0] {
        push(means[y] + k * sy);
    }
    brk.sort_by(|a, b| a.partial_cmp(b).unwrap());
    brk.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let g_max = integrand.value(integrand.mode());
    let (gl_nodes, gl_weights) = gauss_legendre_16();
    let mut acc = 0.0;
    for w in brk.windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (t, wgt) in gl_nodes.iter().zip(gl_weights) {
            let f = mid + half * t;
            acc += wgt * half * (integrand.value(f) - g_max).exp();
        }
    }
    (acc.ln() + g_max).exp().clamp(0.0, 1.0)
}

/// Predictive class probabilities at one input, from per-class Gaussian
/// marginals. The per-class mixture values sum to one analytically, and the
/// vector is renormalized to sum to exactly one after a drift assertion.
/// When the configured rule leaves more than 1e-3 of drift (trained models
/// can put per-class variances on very different scales, sharpening the CDF
/// product past any Hermite node budget), the probabilities are recomputed
/// once with the wall-splitting composite rule before the assertion fires.
pub fn class_probabilities(
    means: &[f64],
    vars: &[f64],
    cfg: &LikelihoodConfig,
    quad: &QuadratureRule,
) -> Result<Vec<f64>> {
    if means.len() != cfg.num_classes || vars.len() != cfg.num_classes {
        return Err(Error::contract("marginals length != num_classes"));
    }
    check_marginals(means, vars, 0)?;
    let mut p = Vec::with_capacity(cfg.num_classes);
    for y in 0..cfg.num_classes {
        let pi = winner_prob(means, vars, y, quad)?;
        p.push(mixture_prob(pi, cfg));
    }
    let mut sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() >= 1e-3 {
        p.clear();
        for y in 0..cfg.num_classes {
            let pi = winner_prob_robust(means, vars, y);
            p.push(mixture_prob(pi, cfg));
        }
        sum = p.iter().sum();
    }
    if (sum - 1.0).abs() >= 1e-3 {
        return Err(Error::contract(format!(
            "class probabilities drifted off the simplex before renormalization: sum = {}",
            sum
        )));
    }
    for v in p.iter_mut() {
        *v /= sum;
    }
    Ok(p)
}

fn check_marginals(means: &[f64], vars: &[f64], y: usize) -> Result<()> {
    if means.len() != vars.len() {
        return Err(Error::contract("means and vars length mismatch"));
    }
    if y >= means.len() {
        return Err(Error::contract("class index out of range"));
    }
    if vars.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::contract("marginal variances must be positive"));
    }
    Ok(())
}
