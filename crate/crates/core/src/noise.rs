//! Input-noise treatments: the latent-variable posterior over noiseless
//! inputs, the amortization network that predicts it, the Gaussian
//! observation and KL terms of the objective, and the test-time posterior
//! over a noisy query point.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use rand::Rng;

/// How input noise enters the model.
#[derive(Debug, Clone)]
pub enum InputNoiseSpec {
    /// Ignore input noise entirely (the plain multi-class GP path).
    None,
    /// Per-instance diagonal noise variances, known beforehand (N x d).
    PerInstanceKnown(Mat),
    /// One shared d-vector of variances, learned with the other
    /// hyper-parameters. The value here is the initialization; the trained
    /// value lives in the model's parameter vector.
    SharedLearned(Vec<f64>),
}

impl InputNoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            InputNoiseSpec::None => Ok(()),
            InputNoiseSpec::PerInstanceKnown(v) => {
                if v.data.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                    return Err(Error::contract("per-instance noise variances must be >= 0"));
                }
                Ok(())
            }
            InputNoiseSpec::SharedLearned(v) => {
                if v.iter().any(|&x| !(x > 0.0)) {
                    return Err(Error::contract(
                        "shared learned noise must initialize > 0",
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn is_learned(&self) -> bool {
        matches!(self, InputNoiseSpec::SharedLearned(_))
    }
}

/// Default initialization for the shared learned noise variance.
pub const SHARED_NOISE_INIT: f64 = 0.05;

/// Per-instance Gaussian posterior over the noiseless inputs,
/// q(x_i) = N(mu_i, diag var_i).
#[derive(Debug, Clone)]
pub struct LatentInputPosterior {
    pub mu: Mat,
    pub var: Mat,
}

impl LatentInputPosterior {
    pub fn new(mu: Mat, var: Mat) -> Result<Self> {
        if mu.rows != var.rows || mu.cols != var.cols {
            return Err(Error::contract("latent posterior shapes disagree"));
        }
        if var.data.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::contract("latent posterior variances must be > 0"));
        }
        Ok(LatentInputPosterior { mu, var })
    }
}

/// Broad Gaussian prior over noiseless inputs, p(x) = N(0, I s).
#[derive(Debug, Clone, Copy)]
pub struct PriorConfig {
    pub s: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { s: 1000.0 }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0) {
            return Err(Error::contract("input prior variance must be > 0"));
        }
        Ok(())
    }
}

/// Reparameterized draw from one row of the latent posterior:
/// `mu + sqrt(var) .* eps` with caller-supplied standard normals.
pub fn sample_latent_input(mu: &[f64], var: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(var)
        .zip(eps)
        .map(|((&m, &v), &e)| m + v.sqrt() * e)
        .collect()
}

/// KL(q(x_i) || N(0, I s)) in closed form over the diagonal:
/// `0.5 sum_j [ v_j/s + mu_j^2/s - 1 + log s - log v_j ]`.
pub fn kl_x(mu: &[f64], var: &[f64], prior: &PriorConfig) -> f64 {
    let s = prior.s;
    let log_s = s.ln();
    mu.iter()
        .zip(var)
        .map(|(&m, &v)| 0.5 * (v / s + m * m / s - 1.0 + log_s - v.ln()))
        .sum()
}

/// Gradient of [`kl_x`] with respect to (mu, var), accumulated into the
/// provided buffers with the given upstream weight.
pub(crate) fn kl_x_backward(
    mu: &[f64],
    var: &[f64],
    prior: &PriorConfig,
    weight: f64,
    mu_bar: &mut [f64],
    var_bar: &mut [f64],
) {
    let s = prior.s;
    for j in 0..mu.len() {
        mu_bar[j] += weight * mu[j] / s;
        var_bar[j] += weight * 0.5 * (1.0 / s - 1.0 / var[j]);
    }
}

/// Expected log-density of the noisy observation under the latent posterior:
/// `E_q[log N(x_tilde | x, V)] =
///  sum_j [ -0.5 log(2 pi V_j) - ((x_tilde_j - mu_j)^2 + v_j) / (2 V_j) ]`.
pub fn expected_obs_loglik(
    mu: &[f64],
    var: &[f64],
    x_tilde: &[f64],
    v_noise: &[f64],
) -> Result<f64> {
    if v_noise.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::contract(
            "observation noise variance must be positive in this path",
        ));
    }
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    Ok(mu
        .iter()
        .zip(var)
        .zip(x_tilde.iter().zip(v_noise))
        .map(|((&m, &v), (&xt, &vn))| {
            let r = xt - m;
            -0.5 * (ln2pi + vn.ln()) - (r * r + v) / (2.0 * vn)
        })
        .sum())
}

/// Gradient of [`expected_obs_loglik`] with respect to (mu, var) and, when
/// the noise is learned, the noise variances themselves.
pub(crate) fn expected_obs_loglik_backward(
    mu: &[f64],
    var: &[f64],
    x_tilde: &[f64],
    v_noise: &[f64],
    weight: f64,
    mu_bar: &mut [f64],
    var_bar: &mut [f64],
    mut v_noise_bar: Option<&mut [f64]>,
) {
    for j in 0..mu.len() {
        let r = x_tilde[j] - mu[j];
        let vn = v_noise[j];
        mu_bar[j] += weight * r / vn;
        var_bar[j] += weight * (-0.5 / vn);
        if let Some(nb) = v_noise_bar.as_deref_mut() {
            nb[j] += weight * (-0.5 / vn + (r * r + var[j]) / (2.0 * vn * vn));
        }
    }
}

/// Closed-form posterior over a test input given its noisy observation:
/// `var_j = 1 / (1/V_j + 1/s)`, `mu_j = var_j * x_tilde_j / V_j`;
/// an exactly-zero noise coordinate pins the posterior to the observation.
pub fn posterior_test_input(
    x_tilde: &[f64],
    v_star: &[f64],
    prior: &PriorConfig,
) -> (Vec<f64>, Vec<f64>) {
    let mut mu = Vec::with_capacity(x_tilde.len());
    let mut var = Vec::with_capacity(x_tilde.len());
    for j in 0..x_tilde.len() {
        if v_star[j] == 0.0 {
            mu.push(x_tilde[j]);
            var.push(0.0);
        } else {
            let v = 1.0 / (1.0 / v_star[j] + 1.0 / prior.s);
            mu.push(v * x_tilde[j] / v_star[j]);
            var.push(v);
        }
    }
    (mu, var)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softplus_inv(y: f64) -> f64 {
    // x with softplus(x) = y; for y beyond ~30 the identity is exact in f64
    if y > 30.0 {
        y
    } else {
        (y.exp() - 1.0).ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fully-connected rectified-linear network that amortizes the latent input
/// posterior: input is the noisy attributes concatenated with the one-hot
/// label, output is d means and d pre-transform variances. The mean channel
/// carries a pass-through skip so a zero-initialized output layer reproduces
/// the observed attributes, and the variance channel goes through a softplus.
#[derive(Debug, Clone)]
pub struct AmortizationNet {
    pub input_dim: usize,
    pub data_dim: usize,
    pub num_classes: usize,
    pub hidden: Vec<usize>,
    pub passthrough: bool,
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
}

impl AmortizationNet {
    /// Hidden layers get scaled random init, the output layer starts at zero
    /// with the variance bias set so the initial variance equals `init_var`.
    pub fn new(
        data_dim: usize,
        num_classes: usize,
        hidden: &[usize],
        passthrough: bool,
        init_var: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let input_dim = data_dim + num_classes;
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(2 * data_dim);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let mut w = Mat::zeros(fan_out, fan_in);
            let last = l == dims.len() - 2;
            if !last {
                let scale = (2.0 / fan_in as f64).sqrt();
                for v in w.data.iter_mut() {
                    *v = scale * rng.gen_range(-1.0..1.0);
                }
            }
            weights.push(w);
            let mut b = vec![0.0; fan_out];
            if last {
                let raw = softplus_inv(init_var.max(1e-8));
                for j in 0..data_dim {
                    b[data_dim + j] = raw;
                }
            }
            biases.push(b);
        }
        AmortizationNet {
            input_dim,
            data_dim,
            num_classes,
            hidden: hidden.to_vec(),
            passthrough,
            weights,
            biases,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.data.len() + b.len())
            .sum()
    }

    pub fn write_flat(&self, out: &mut [f64]) {
        let mut k = 0;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out[k..k + w.data.len()].copy_from_slice(&w.data);
            k += w.data.len();
            out[k..k + b.len()].copy_from_slice(b);
            k += b.len();
        }
        debug_assert_eq!(k, out.len());
    }

    pub fn read_flat(&mut self, src: &[f64]) {
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let wn = w.data.len();
            w.data.copy_from_slice(&src[k..k + wn]);
            k += wn;
            let bn = b.len();
            b.copy_from_slice(&src[k..k + bn]);
            k += bn;
        }
        debug_assert_eq!(k, src.len());
    }

    fn build_input(&self, x_tilde: &[f64], y: usize) -> Vec<f64> {
        let mut input = vec![0.0; self.input_dim];
        input[..self.data_dim].copy_from_slice(x_tilde);
        input[self.data_dim + y] = 1.0;
        input
    }

    /// Forward pass: posterior mean and variance for one instance.
    pub fn amortize(&self, x_tilde: &[f64], y: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if x_tilde.len() != self.data_dim {
            return Err(Error::contract("amortization input dimension mismatch"));
        }
        if y >= self.num_classes {
            return Err(Error::contract("amortization label out of range"));
        }
        let (mu, var, _) = self.forward_cached(x_tilde, y);
        Ok((mu, var))
    }

    /// Forward pass keeping the layer activations for the backward pass.
    pub(crate) fn forward_cached(
        &self,
        x_tilde: &[f64],
        y: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
        let mut acts = vec![self.build_input(x_tilde, y)];
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let prev = &acts[l];
            let mut next: Vec<f64> = (0..w.rows)
                .map(|i| crate::linalg::dot(w.row(i), prev) + b[i])
                .collect();
            if l < self.weights.len() - 1 {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            acts.push(next);
        }
        let out = acts.last().unwrap();
        let d = self.data_dim;
        let mut mu = out[..d].to_vec();
        if self.passthrough {
            for j in 0..d {
                mu[j] += x_tilde[j];
            }
        }
        let var: Vec<f64> = out[d..].iter().map(|&r| softplus(r).max(1e-12)).collect();
        (mu, var, acts)
    }

    /// Backward pass from (mu_bar, var_bar) into a flat parameter gradient
    /// laid out like [`write_flat`]. `acts` comes from [`forward_cached`].
    pub(crate) fn backward(
        &self,
        acts: &[Vec<f64>],
        mu_bar: &[f64],
        var_bar: &[f64],
        grad_out: &mut [f64],
    ) {
        let d = self.data_dim;
        let out = acts.last().unwrap();
        let mut delta: Vec<f64> = vec![0.0; out.len()];
        delta[..d].copy_from_slice(mu_bar);
        for j in 0..d {
            delta[d + j] = var_bar[j] * sigmoid(out[d + j]);
        }
        // walk layers backwards, accumulating into the flat layout
        let mut offsets = Vec::with_capacity(self.weights.len());
        let mut k = 0;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            offsets.push(k);
            k += w.data.len() + b.len();
        }
        for l in (0..self.weights.len()).rev() {
            let w = &self.weights[l];
            let prev = &acts[l];
            let base = offsets[l];
            for i in 0..w.rows {
                let di = delta[i];
                if di != 0.0 {
                    let row_base = base + i * w.cols;
                    for j in 0..w.cols {
                        grad_out[row_base + j] += di * prev[j];
                    }
                }
                grad_out[base + w.data.len() + i] += di;
            }
            if l > 0 {
                let mut prev_delta = vec![0.0; w.cols];
                for i in 0..w.rows {
                    let di = delta[i];
                    if di != 0.0 {
                        let row = w.row(i);
                        for j in 0..w.cols {
                            prev_delta[j] += di * row[j];
                        }
                    }
                }
                // relu gate
                for j in 0..w.cols {
                    if acts[l][j] <= 0.0 {
                        prev_delta[j] = 0.0;
                    }
                }
                delta = prev_delta;
            }
        }
    }
}
