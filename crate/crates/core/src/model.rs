//! The multi-class GP classifier: one sparse GP per class, a robust-max
//! likelihood, and one of four input-noise treatments. Holds every trainable
//! scalar in a flat, segment-addressed vector.

use crate::error::{Error, Result};
use crate::kernel::{KernelFamily, KernelParams};
use crate::likelihood::{class_probabilities, gauss_hermite_rule, LikelihoodConfig, QuadratureRule};
use crate::linalg::{dot, solve_lower, solve_upper, Mat};
use crate::noise::{posterior_test_input, AmortizationNet, InputNoiseSpec, PriorConfig};
use crate::params::{ParamLayout, ParameterVector};
use crate::svgp::{self, InducingSet, VariationalGaussianU, VAR_FLOOR};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mgp,
    Nimgp,
    NimgpNn,
    NimgpFo,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Mgp => "mgp",
            Method::Nimgp => "nimgp",
            Method::NimgpNn => "nimgp-nn",
            Method::NimgpFo => "nimgp-fo",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "mgp" => Ok(Method::Mgp),
            "nimgp" => Ok(Method::Nimgp),
            "nimgp-nn" | "nimgp_nn" => Ok(Method::NimgpNn),
            "nimgp-fo" | "nimgp_fo" => Ok(Method::NimgpFo),
            other => Err(Error::contract(format!("unknown method '{}'", other))),
        }
    }

    pub fn uses_latent_inputs(&self) -> bool {
        matches!(self, Method::Nimgp | Method::NimgpNn)
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub method: Method,
    pub num_classes: usize,
    pub num_inducing: usize,
    pub kernel_family: KernelFamily,
    pub poly_degree: u32,
    pub poly_offset: f64,
    pub label_noise: f64,
    pub quad_points: usize,
    pub prior: PriorConfig,
    pub nn_hidden: Vec<usize>,
    pub nn_passthrough: bool,
    /// Kernel initialization (before log transform).
    pub init_amplitude_sq: f64,
    pub init_lengthscale: f64,
    pub init_jitter_sq: f64,
    /// Initial q(x) variance when nothing better is known.
    pub init_qx_var: f64,
    /// Monte Carlo sample count for the NIMGP-family predictive.
    pub mc_predict_samples: usize,
}

impl ModelConfig {
    pub fn new(method: Method, num_classes: usize, num_inducing: usize) -> Self {
        ModelConfig {
            method,
            num_classes,
            num_inducing,
            kernel_family: KernelFamily::SquaredExponentialArd,
            poly_degree: 3,
            poly_offset: 1.0,
            label_noise: 1e-3,
            quad_points: 16,
            prior: PriorConfig::default(),
            nn_hidden: vec![50],
            nn_passthrough: true,
            init_amplitude_sq: 1.0,
            init_lengthscale: 1.0,
            init_jitter_sq: 1e-2,
            init_qx_var: crate::noise::SHARED_NOISE_INIT,
            mc_predict_samples: 300,
        }
    }

    pub fn likelihood(&self) -> LikelihoodConfig {
        LikelihoodConfig {
            num_classes: self.num_classes,
            label_noise: self.label_noise,
            quad_points: self.quad_points,
        }
    }
}

/// A (possibly in-training) classifier. All trainable state lives in `theta`
/// in unconstrained coordinates; everything else is fixed by construction.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub data_dim: usize,
    pub x_tilde: Mat,
    pub labels: Vec<usize>,
    pub noise: InputNoiseSpec,
    pub quad: QuadratureRule,
    pub layout: Arc<ParamLayout>,
    pub theta: Vec<f64>,
}

pub(crate) fn seg_kernel_amp(c: usize) -> String {
    format!("class{}.kernel.log_amplitude", c)
}
pub(crate) fn seg_kernel_ls(c: usize) -> String {
    format!("class{}.kernel.log_lengthscales", c)
}
pub(crate) fn seg_kernel_noise(c: usize) -> String {
    format!("class{}.kernel.log_noise", c)
}
pub(crate) fn seg_inducing(c: usize) -> String {
    format!("class{}.inducing", c)
}
pub(crate) fn seg_u_mean(c: usize) -> String {
    format!("class{}.q_u.mean", c)
}
pub(crate) fn seg_u_factor(c: usize) -> String {
    format!("class{}.q_u.factor", c)
}
pub(crate) const SEG_QX_MU: &str = "q_x.mu";
pub(crate) const SEG_QX_LOGVAR: &str = "q_x.log_var";
pub(crate) const SEG_NET: &str = "amortization_net";
pub(crate) const SEG_NOISE: &str = "input_noise.log_var";

/// Seeded k-means (Lloyd) for inducing-point initialization; falls back to a
/// random subset when iteration degenerates.
pub fn kmeans_centers(x: &Mat, k: usize, seed: u64) -> Mat {
    let n = x.rows;
    let d = x.cols;
    let k = k.min(n);
    let mut rng = StdRng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut centers = Mat::zeros(k, d);
    for c in 0..k {
        centers.row_mut(c).copy_from_slice(x.row(order[c]));
    }
    let mut assign = vec![0usize; n];
    for _iter in 0..25 {
        let mut changed = false;
        for i in 0..n {
            let xi = x.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let mut dist = 0.0;
                let cr = centers.row(c);
                for j in 0..d {
                    let r = xi[j] - cr[j];
                    dist += r * r;
                }
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = Mat::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            let row = x.row(i);
            let s = sums.row_mut(assign[i]);
            for j in 0..d {
                s[j] += row[j];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // degenerate cluster: reseed from a random point
                let pick = rng.gen_range(0..n);
                centers.row_mut(c).copy_from_slice(x.row(pick));
            } else {
                let s = sums.row(c).to_vec();
                let cr = centers.row_mut(c);
                for j in 0..d {
                    cr[j] = s[j] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    if !centers.is_finite() {
        // random-subset fallback
        for c in 0..k {
            centers.row_mut(c).copy_from_slice(x.row(order[c]));
        }
    }
    centers
}

impl Model {
    /// Build a fresh model with initialized parameters:
    /// inducing locations from k-means on the observed inputs (shared across
    /// classes at initialization), q(u) at the prior, q(x) at the noisy
    /// observations.
    pub fn init(
        cfg: ModelConfig,
        x_tilde: Mat,
        labels: Vec<usize>,
        noise: InputNoiseSpec,
        seed: u64,
    ) -> Result<Model> {
        let n = x_tilde.rows;
        let d = x_tilde.cols;
        if labels.len() != n {
            return Err(Error::contract("labels and inputs disagree in length"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= cfg.num_classes) {
            return Err(Error::contract(format!("label {} out of range", bad)));
        }
        cfg.likelihood().validate()?;
        cfg.prior.validate()?;
        noise.validate()?;
        if let InputNoiseSpec::PerInstanceKnown(v) = &noise {
            if v.rows != n || v.cols != d {
                return Err(Error::contract("noise variance matrix shape mismatch"));
            }
        }
        let m = cfg.num_inducing.min(n).max(1);
        let c_n = cfg.num_classes;
        let quad = gauss_hermite_rule(cfg.quad_points)?;

        let mut b = ParamLayout::builder();
        for c in 0..c_n {
            b.push(seg_kernel_amp(c), 1);
            b.push(seg_kernel_ls(c), d);
            b.push(seg_kernel_noise(c), 1);
            b.push(seg_inducing(c), m * d);
            b.push(seg_u_mean(c), m);
            b.push(seg_u_factor(c), m * (m + 1) / 2);
        }
        if cfg.method == Method::Nimgp {
            b.push(SEG_QX_MU, n * d);
            b.push(SEG_QX_LOGVAR, n * d);
        }
        let mut net_template = None;
        if cfg.method == Method::NimgpNn {
            let mut rng = StdRng::seed_from_u64(seed ^ 0x6e65_74);
            let net = AmortizationNet::new(
                d,
                c_n,
                &cfg.nn_hidden,
                cfg.nn_passthrough,
                cfg.init_qx_var,
                &mut rng,
            );
            b.push(SEG_NET, net.param_count());
            net_template = Some(net);
        }
        if noise.is_learned() {
            b.push(SEG_NOISE, d);
        }
        let layout = b.build();
        let mut theta = vec![0.0; layout.total];

        let centers = kmeans_centers(&x_tilde, m, seed ^ 0x6b6d);
        let init_kernel = KernelParams {
            amplitude_sq: cfg.init_amplitude_sq,
            lengthscales: vec![cfg.init_lengthscale; d],
            jitter_sq: cfg.init_jitter_sq,
            family: cfg.kernel_family,
            poly_degree: cfg.poly_degree,
            poly_offset: cfg.poly_offset,
        };
        init_kernel.validate()?;
        let z0 = InducingSet::new(centers.clone(), n)?;
        let l0 = svgp::prior_chol(&init_kernel, &z0)?;
        for c in 0..c_n {
            theta[layout.range(&seg_kernel_amp(c))][0] = cfg.init_amplitude_sq.ln();
            for v in theta[layout.range(&seg_kernel_ls(c))].iter_mut() {
                *v = cfg.init_lengthscale.ln();
            }
            theta[layout.range(&seg_kernel_noise(c))][0] = cfg.init_jitter_sq.ln();
            theta[layout.range(&seg_inducing(c))].copy_from_slice(&centers.data);
            // q(u) starts at the prior: mean zero, factor = chol(K_ZZ)
            let fac = theta[layout.range(&seg_u_factor(c))].as_mut_ptr();
            let mut k = 0usize;
            for i in 0..m {
                for j in 0..=i {
                    let v = if i == j { l0[(i, j)].ln() } else { l0[(i, j)] };
                    unsafe { *fac.add(k) = v };
                    k += 1;
                }
            }
        }
        let mut model = Model {
            cfg,
            data_dim: d,
            x_tilde,
            labels,
            noise,
            quad,
            layout,
            theta,
        };
        model.init_latent_posterior();
        if let Some(net) = net_template {
            let r = model.layout.range(SEG_NET);
            net.write_flat(&mut model.theta[r]);
        }
        if model.noise.is_learned() {
            let init = match &model.noise {
                InputNoiseSpec::SharedLearned(v) => v.clone(),
                _ => unreachable!(),
            };
            let r = model.layout.range(SEG_NOISE);
            for (slot, v) in model.theta[r].iter_mut().zip(init) {
                *slot = v.ln();
            }
        }
        Ok(model)
    }

    fn init_latent_posterior(&mut self) {
        if self.cfg.method != Method::Nimgp {
            return;
        }
        let n = self.x_tilde.rows;
        let d = self.data_dim;
        let mu_range = self.layout.range(SEG_QX_MU);
        self.theta[mu_range].copy_from_slice(&self.x_tilde.data);
        let default_var = self.cfg.init_qx_var;
        let var_range = self.layout.range(SEG_QX_LOGVAR);
        let logvars = &mut self.theta[var_range];
        for i in 0..n {
            for j in 0..d {
                let v = match &self.noise {
                    InputNoiseSpec::PerInstanceKnown(vm) => {
                        let vij = vm[(i, j)];
                        if vij > 0.0 {
                            vij
                        } else {
                            1e-8 // pinned coordinate; value unused
                        }
                    }
                    _ => default_var,
                };
                logvars[i * d + j] = v.ln();
            }
        }
    }

    pub fn num_inducing(&self) -> usize {
        self.layout.range(&seg_u_mean(0)).len()
    }

    pub fn n_train(&self) -> usize {
        self.x_tilde.rows
    }

    pub fn kernel_params(&self, c: usize) -> KernelParams {
        KernelParams {
            amplitude_sq: self.theta[self.layout.range(&seg_kernel_amp(c))][0].exp(),
            lengthscales: self.theta[self.layout.range(&seg_kernel_ls(c))]
                .iter()
                .map(|v| v.exp())
                .collect(),
            jitter_sq: self.theta[self.layout.range(&seg_kernel_noise(c))][0].exp(),
            family: self.cfg.kernel_family,
            poly_degree: self.cfg.poly_degree,
            poly_offset: self.cfg.poly_offset,
        }
    }

    pub fn inducing(&self, c: usize) -> InducingSet {
        let m = self.num_inducing();
        let z = Mat::from_vec(
            m,
            self.data_dim,
            self.theta[self.layout.range(&seg_inducing(c))].to_vec(),
        );
        InducingSet { z }
    }

    pub fn q_u(&self, c: usize) -> VariationalGaussianU {
        let m = self.num_inducing();
        let mean = self.theta[self.layout.range(&seg_u_mean(c))].to_vec();
        let packed = &self.theta[self.layout.range(&seg_u_factor(c))];
        let mut fac = Mat::zeros(m, m);
        let mut k = 0;
        for i in 0..m {
            for j in 0..=i {
                fac[(i, j)] = if i == j { packed[k].exp() } else { packed[k] };
                k += 1;
            }
        }
        VariationalGaussianU { m: mean, s_factor: fac }
    }

    /// Explicit latent posterior row (NIMGP only).
    pub fn q_x_row(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        let d = self.data_dim;
        let mu = &self.theta[self.layout.range(SEG_QX_MU)][i * d..(i + 1) * d];
        let lv = &self.theta[self.layout.range(SEG_QX_LOGVAR)][i * d..(i + 1) * d];
        (mu.to_vec(), lv.iter().map(|v| v.exp()).collect())
    }

    pub fn net(&self) -> AmortizationNet {
        let mut rng = StdRng::seed_from_u64(0);
        let mut net = AmortizationNet::new(
            self.data_dim,
            self.cfg.num_classes,
            &self.cfg.nn_hidden,
            self.cfg.nn_passthrough,
            self.cfg.init_qx_var,
            &mut rng,
        );
        net.read_flat(&self.theta[self.layout.range(SEG_NET)]);
        net
    }

    /// Learned shared noise variance (log-parametrized), when present.
    pub fn shared_noise(&self) -> Option<Vec<f64>> {
        if self.noise.is_learned() {
            Some(
                self.theta[self.layout.range(SEG_NOISE)]
                    .iter()
                    .map(|v| v.exp())
                    .collect(),
            )
        } else {
            None
        }
    }

    /// Training-time noise variance row for instance `i` (None for MGP).
    pub fn noise_row(&self, i: usize) -> Option<Vec<f64>> {
        match &self.noise {
            InputNoiseSpec::None => None,
            InputNoiseSpec::PerInstanceKnown(v) => Some(v.row(i).to_vec()),
            InputNoiseSpec::SharedLearned(_) => self.shared_noise(),
        }
    }

    /// Whether coordinate (i, j) of the latent posterior is pinned to the
    /// observation (known zero noise variance).
    pub fn coord_pinned(&self, i: usize, j: usize) -> bool {
        match &self.noise {
            InputNoiseSpec::PerInstanceKnown(v) => v[(i, j)] == 0.0,
            _ => false,
        }
    }

    pub fn parameter_vector(&self) -> ParameterVector {
        ParameterVector {
            layout: self.layout.clone(),
            values: self.theta.clone(),
        }
    }

    /// Append training instances, keeping every shared parameter (active
    /// learning warm starts). Per-instance latent-posterior rows are
    /// initialized at the new observations; known-noise models receive the
    /// new rows' variances.
    pub fn extend_training_set(
        &mut self,
        x_new: &Mat,
        y_new: &[usize],
        v_new: Option<&Mat>,
    ) -> Result<()> {
        if x_new.cols != self.data_dim || x_new.rows != y_new.len() {
            return Err(Error::contract("extension shape mismatch"));
        }
        let d = self.data_dim;
        let n_old = self.n_train();
        let n_new = n_old + x_new.rows;
        let mut x = Mat::zeros(n_new, d);
        x.data[..n_old * d].copy_from_slice(&self.x_tilde.data);
        x.data[n_old * d..].copy_from_slice(&x_new.data);
        self.x_tilde = x;
        self.labels.extend_from_slice(y_new);
        match &mut self.noise {
            InputNoiseSpec::PerInstanceKnown(v) => {
                let vn = v_new.ok_or_else(|| {
                    Error::contract("known-noise model extension needs noise rows")
                })?;
                if vn.rows != x_new.rows || vn.cols != d {
                    return Err(Error::contract("extension noise shape mismatch"));
                }
                let mut merged = Mat::zeros(n_new, d);
                merged.data[..n_old * d].copy_from_slice(&v.data);
                merged.data[n_old * d..].copy_from_slice(&vn.data);
                *v = merged;
            }
            _ => {}
        }
        if self.cfg.method == Method::Nimgp {
            // rebuild the layout with longer per-instance segments
            let mut b = ParamLayout::builder();
            for s in self.layout.segments.iter() {
                match s.name.as_str() {
                    SEG_QX_MU | SEG_QX_LOGVAR => {
                        b.push(s.name.clone(), n_new * d);
                    }
                    _ => {
                        b.push(s.name.clone(), s.len);
                    }
                }
            }
            let new_layout = b.build();
            let mut theta = vec![0.0; new_layout.total];
            for s in self.layout.segments.iter() {
                let old = &self.theta[s.offset..s.offset + s.len];
                let dst = new_layout.range(&s.name);
                theta[dst][..s.len].copy_from_slice(old);
            }
            // initialize the appended rows
            let mu_r = new_layout.range(SEG_QX_MU);
            let var_r = new_layout.range(SEG_QX_LOGVAR);
            for i in 0..x_new.rows {
                for j in 0..d {
                    theta[mu_r.start + (n_old + i) * d + j] = x_new[(i, j)];
                    let v = match &self.noise {
                        InputNoiseSpec::PerInstanceKnown(vm) => {
                            let t = vm[(n_old + i, j)];
                            if t > 0.0 {
                                t
                            } else {
                                1e-8
                            }
                        }
                        _ => self.cfg.init_qx_var,
                    };
                    theta[var_r.start + (n_old + i) * d + j] = v.ln();
                }
            }
            self.layout = new_layout;
            self.theta = theta;
        }
        Ok(())
    }

    /// Per-class prediction caches for repeated marginal evaluation.
    pub fn predictor(&self) -> Result<Predictor> {
        let c_n = self.cfg.num_classes;
        let m = self.num_inducing();
        let mut classes = Vec::with_capacity(c_n);
        for c in 0..c_n {
            let kernel = self.kernel_params(c);
            let z = self.inducing(c);
            let q = self.q_u(c);
            let l = svgp::prior_chol(&kernel, &z)?;
            // alpha = K^{-1} m
            let mut alpha = q.m.clone();
            solve_lower(&l, &mut alpha);
            solve_upper(&l, &mut alpha);
            // B = K^{-1}(K - S)K^{-1} = K^{-1} - K^{-1} S K^{-1}, column by column
            let mut b = Mat::zeros(m, m);
            let ident = Mat::eye(m);
            let st = q.s_factor.transpose();
            for j in 0..m {
                // K^{-1} e_j
                let mut kinv_col: Vec<f64> = ident.row(j).to_vec();
                solve_lower(&l, &mut kinv_col);
                solve_upper(&l, &mut kinv_col);
                // S K^{-1} e_j = F (F^T kinv_col)
                let mut ftk = vec![0.0; m];
                for r in 0..m {
                    ftk[r] = dot(&st.row(r)[r..], &kinv_col[r..]);
                }
                let mut skinv = vec![0.0; m];
                for r in 0..m {
                    skinv[r] = dot(&q.s_factor.row(r)[..=r], &ftk[..=r]);
                }
                let mut col = skinv;
                solve_lower(&l, &mut col);
                solve_upper(&l, &mut col);
                for r in 0..m {
                    b[(r, j)] = kinv_col[r] - col[r];
                }
            }
            classes.push(ClassPredictor {
                kernel,
                z,
                alpha,
                b_reduced: b,
            });
        }
        Ok(Predictor {
            classes,
            quad: self.quad.clone(),
            likelihood: self.cfg.likelihood(),
            method: self.cfg.method,
            prior: self.cfg.prior,
        })
    }

    /// Resolve the test-time noise variance for a batch of query points.
    /// `v_star` comes from the data when the noise is known per instance;
    /// the learned shared variance is broadcast otherwise; MGP gets zero.
    pub fn resolve_test_noise(&self, n_points: usize, v_star: Option<&Mat>) -> Mat {
        match (&self.noise, v_star) {
            (InputNoiseSpec::PerInstanceKnown(_), Some(v)) => v.clone(),
            (InputNoiseSpec::PerInstanceKnown(_), None) => Mat::zeros(n_points, self.data_dim),
            (InputNoiseSpec::SharedLearned(_), _) => {
                let shared = self.shared_noise().unwrap();
                let mut v = Mat::zeros(n_points, self.data_dim);
                for i in 0..n_points {
                    v.row_mut(i).copy_from_slice(&shared);
                }
                v
            }
            (InputNoiseSpec::None, _) => Mat::zeros(n_points, self.data_dim),
        }
    }

    /// Predictive class probabilities for a batch of noisy query points.
    /// Dispatches on the method: plain marginals for MGP, Monte Carlo over
    /// the test-input posterior for NIMGP and its amortized variant,
    /// first-order variance inflation for the FO method.
    pub fn predict(
        &self,
        x_query: &Mat,
        v_star: Option<&Mat>,
        rng: &mut StdRng,
    ) -> Result<Vec<Vec<f64>>> {
        let predictor = self.predictor()?;
        match self.cfg.method {
            Method::Mgp => predictor.predict_plain(x_query),
            Method::NimgpFo => {
                let v = self.resolve_test_noise(x_query.rows, v_star);
                predictor.predict_fo(x_query, &v)
            }
            Method::Nimgp | Method::NimgpNn => {
                let v = self.resolve_test_noise(x_query.rows, v_star);
                predictor.predict_mc(x_query, &v, self.cfg.mc_predict_samples, rng)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassPredictor {
    pub kernel: KernelParams,
    pub z: InducingSet,
    pub alpha: Vec<f64>,
    /// K^{-1}(K - S)K^{-1}; the predictive variance is
    /// k_xx - k_xZ B k_Zx.
    pub b_reduced: Mat,
}

impl ClassPredictor {
    /// Marginal mean and variance at one point.
    pub fn marginal(&self, x: &[f64]) -> (f64, f64) {
        let m = self.z.len();
        let mut k = vec![0.0; m];
        for j in 0..m {
            k[j] = crate::kernel::pair_eval(&self.kernel, x, self.z.z.row(j)).0;
        }
        let mean = dot(&k, &self.alpha);
        let kxx = crate::kernel::pair_eval(&self.kernel, x, x).0 + self.kernel.jitter_sq;
        let mut quad_form = 0.0;
        for r in 0..m {
            quad_form += k[r] * dot(self.b_reduced.row(r), &k);
        }
        (mean, (kxx - quad_form).max(VAR_FLOOR))
    }

    pub fn mean_grad(&self, x: &[f64]) -> Vec<f64> {
        svgp::predictive_mean_grad_with_alpha(&self.kernel, &self.z, &self.alpha, x).unwrap()
    }
}

/// Immutable prediction state; safe to share across threads.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub classes: Vec<ClassPredictor>,
    pub quad: QuadratureRule,
    pub likelihood: LikelihoodConfig,
    pub method: Method,
    pub prior: PriorConfig,
}

impl Predictor {
    pub fn marginals_at(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c_n = self.classes.len();
        let mut means = Vec::with_capacity(c_n);
        let mut vars = Vec::with_capacity(c_n);
        for cp in &self.classes {
            let (m, v) = cp.marginal(x);
            means.push(m);
            vars.push(v);
        }
        (means, vars)
    }

    pub fn predict_plain(&self, x: &Mat) -> Result<Vec<Vec<f64>>> {
        (0..x.rows)
            .map(|i| {
                let (means, vars) = self.marginals_at(x.row(i));
                class_probabilities(&means, &vars, &self.likelihood, &self.quad)
            })
            .collect()
    }

    /// First-order path: marginal variances inflated by g^T V g.
    pub fn predict_fo(&self, x: &Mat, v_star: &Mat) -> Result<Vec<Vec<f64>>> {
        (0..x.rows)
            .map(|i| {
                let xi = x.row(i);
                let vi = v_star.row(i);
                let c_n = self.classes.len();
                let mut means = Vec::with_capacity(c_n);
                let mut vars = Vec::with_capacity(c_n);
                for cp in &self.classes {
                    let (m, v) = cp.marginal(xi);
                    means.push(m);
                    let delta = if vi.iter().all(|&t| t == 0.0) {
                        0.0
                    } else {
                        let g = cp.mean_grad(xi);
                        g.iter().zip(vi).map(|(gj, vj)| gj * gj * vj).sum()
                    };
                    vars.push(v + delta);
                }
                class_probabilities(&means, &vars, &self.likelihood, &self.quad)
            })
            .collect()
    }

    /// Monte Carlo average of the plain predictive over draws from the
    /// test-input posterior, renormalized at the end.
    pub fn predict_mc(
        &self,
        x: &Mat,
        v_star: &Mat,
        samples: usize,
        rng: &mut StdRng,
    ) -> Result<Vec<Vec<f64>>> {
        let c_n = self.classes.len();
        let mut acc = vec![vec![0.0; c_n]; x.rows];
        let mut draw = vec![0.0; x.cols];
        for _ in 0..samples.max(1) {
            for i in 0..x.rows {
                let (mu, var) = posterior_test_input(x.row(i), v_star.row(i), &self.prior);
                for j in 0..x.cols {
                    let e: f64 = rng.sample(StandardNormal);
                    draw[j] = mu[j] + var[j].sqrt() * e;
                }
                let (means, vars) = self.marginals_at(&draw);
                let p = class_probabilities(&means, &vars, &self.likelihood, &self.quad)?;
                for c in 0..c_n {
                    acc[i][c] += p[c];
                }
            }
        }
        for probs in acc.iter_mut() {
            let sum: f64 = probs.iter().sum();
            for v in probs.iter_mut() {
                *v /= sum;
            }
        }
        Ok(acc)
    }
}
