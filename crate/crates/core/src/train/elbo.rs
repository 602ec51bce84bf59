//! Stochastic ELBO estimate and its hand-derived reverse-mode gradient.
//!
//! One call evaluates a minibatch: per class, the sparse-GP marginal moments
//! at the (possibly reparameterized) batch inputs plus KL(q(u)||p(u)); across
//! classes, the quadrature expectation of the log robust-max likelihood; for
//! the latent-input methods, the Gaussian observation term and KL(q(x)||p(x)).
//! The backward pass walks the same graph in reverse: quadrature adjoints
//! into marginal moments, triangular-solve and Cholesky adjoints into kernel
//! hyper-parameters, inducing locations and q(u), and reparameterization
//! adjoints into the latent posterior (or the amortization network).
//!
//! Common random numbers: value and gradient of one call derive from the same
//! caller-supplied draws.

use crate::error::Result;
use crate::kernel::{self, KernelGradAcc, KernelParams};
use crate::likelihood::expected_loglik_exact_grad;
use crate::linalg::{
    cholesky_backward, dot, solve_lower, solve_lower_backward, solve_upper_backward,
    solve_upper_t, Mat,
};
use crate::model::{
    seg_inducing, seg_kernel_amp, seg_kernel_ls, seg_kernel_noise, seg_u_factor, seg_u_mean,
    Method, Model, SEG_NET, SEG_NOISE, SEG_QX_LOGVAR, SEG_QX_MU,
};
use crate::noise::{self, InputNoiseSpec};
use crate::svgp::VAR_FLOOR;
use rayon::prelude::*;

/// The four ELBO terms reported separately plus their sum.
#[derive(Debug, Clone, Default)]
pub struct ElboBreakdown {
    pub expected_loglik_sum: f64,
    pub obs_loglik_sum: f64,
    pub kl_u_total: f64,
    pub kl_x_total: f64,
    pub elbo: f64,
}

impl ElboBreakdown {
    fn finalize(mut self) -> Self {
        self.elbo =
            self.expected_loglik_sum + self.obs_loglik_sum - self.kl_u_total - self.kl_x_total;
        self
    }
}

/// Fixed randomness for one step, shared between value and gradient.
#[derive(Debug, Clone)]
pub struct StepInputs {
    /// Standard-normal draws, one row per batch instance (latent-input
    /// methods only; ignored otherwise).
    pub eps: Option<Mat>,
    /// Replacement batch inputs (the resampling baseline).
    pub x_override: Option<Mat>,
}

impl StepInputs {
    pub fn deterministic() -> Self {
        StepInputs {
            eps: None,
            x_override: None,
        }
    }
}

/// Unbiased minibatch ELBO estimate.
pub fn elbo_estimate(model: &Model, batch: &[usize], inputs: &StepInputs) -> Result<ElboBreakdown> {
    elbo_core(model, batch, inputs, None).map(|(b, _)| b)
}

/// ELBO estimate together with its gradient with respect to every
/// unconstrained trainable scalar, under the same draws.
pub fn elbo_with_grad(
    model: &Model,
    batch: &[usize],
    inputs: &StepInputs,
) -> Result<(ElboBreakdown, Vec<f64>)> {
    let mut grad = vec![0.0; model.layout.total];
    let (b, _) = elbo_core(model, batch, inputs, Some(&mut grad))?;
    Ok((b, grad))
}

struct ClassForward {
    kernel: KernelParams,
    z: Mat,
    l: Mat,
    lt: Mat,
    f: Mat,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    p_mat: Mat,
    kxz: Mat,
    kcache: Mat,
    kxxcache: Vec<f64>,
    a: Mat,
    c: Mat,
    w: Mat,
    mean: Vec<f64>,
    var_raw: Vec<f64>,
    var: Vec<f64>,
    g: Mat,
    kl: f64,
    zc_cache: Mat,
}

struct ClassGrads {
    acc: KernelGradAcc,
    z_bar: Mat,
    m_bar: Vec<f64>,
    f_bar: Mat,
    xhat_bar: Option<Mat>,
    noise_bar: Option<Vec<f64>>,
}

fn class_forward(model: &Model, cidx: usize, xb: &Mat, v_batch: Option<&Mat>) -> Result<ClassForward> {
    let kernel = model.kernel_params(cidx);
    let z = model.inducing(cidx).z;
    let q = model.q_u(cidx);
    let m = z.rows;
    let b = xb.rows;
    let d = xb.cols;
    let fo = model.cfg.method == Method::NimgpFo;

    // K_ZZ with caches, then its factor
    let mut kzz = Mat::zeros(m, m);
    let mut zc_cache = Mat::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let (kv, cache) = kernel::pair_eval(&kernel, z.row(i), z.row(j));
            kzz[(i, j)] = kv;
            kzz[(j, i)] = kv;
            zc_cache[(i, j)] = cache;
        }
    }
    let diag_add = kernel.jitter_sq + kernel.numerical_jitter();
    for i in 0..m {
        kzz[(i, i)] += diag_add;
    }
    let l = crate::linalg::cholesky(&kzz).or_else(|_| {
        // escalating jitter, three retries
        let mut extra = kernel.numerical_jitter();
        for _ in 0..3 {
            extra *= 10.0;
            let mut k2 = kzz.clone();
            for i in 0..m {
                k2[(i, i)] += extra;
            }
            if let Ok(l) = crate::linalg::cholesky(&k2) {
                return Ok(l);
            }
        }
        crate::linalg::cholesky(&kzz)
    })?;
    let lt = l.transpose();

    let mut beta = q.m.clone();
    solve_lower(&l, &mut beta);
    let mut alpha = beta.clone();
    solve_upper_t(&lt, &mut alpha);

    // KL(q(u) || p(u))
    let mut p_mat = Mat::zeros(m, m);
    for j in 0..m {
        let mut col: Vec<f64> = (0..m).map(|i| q.s_factor[(i, j)]).collect();
        solve_lower(&l, &mut col);
        for i in 0..m {
            p_mat[(i, j)] = col[i];
        }
    }
    let trace: f64 = p_mat.data.iter().map(|v| v * v).sum();
    let maha = dot(&beta, &beta);
    let logdet_k: f64 = (0..m).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    let logdet_s: f64 = (0..m).map(|i| q.s_factor[(i, i)].ln()).sum::<f64>() * 2.0;
    let kl = 0.5 * (trace + maha - m as f64 + logdet_k - logdet_s);

    // cross covariances and diagonal
    let mut kxz = Mat::zeros(b, m);
    let mut kcache = Mat::zeros(b, m);
    let mut kxx = vec![0.0; b];
    let mut kxxcache = vec![0.0; b];
    for i in 0..b {
        let xi = xb.row(i);
        let krow = kxz.row_mut(i);
        let crow = kcache.row_mut(i);
        for j in 0..m {
            let (kv, cache) = kernel::pair_eval(&kernel, xi, z.row(j));
            krow[j] = kv;
            crow[j] = cache;
        }
        let (kv, cache) = kernel::pair_eval(&kernel, xi, xi);
        kxx[i] = kv + kernel.jitter_sq;
        kxxcache[i] = cache;
    }

    // marginal moments
    let ft = q.s_factor.transpose();
    let mut a = Mat::zeros(b, m);
    let mut c = Mat::zeros(b, m);
    let mut w = Mat::zeros(b, m);
    let mut mean = vec![0.0; b];
    let mut var_raw = vec![0.0; b];
    let mut var = vec![0.0; b];
    for i in 0..b {
        let arow = a.row_mut(i);
        arow.copy_from_slice(kxz.row(i));
        solve_lower(&l, arow);
        let crow = c.row_mut(i);
        crow.copy_from_slice(a.row(i));
        solve_upper_t(&lt, crow);
        {
            let crow = c.row(i);
            let wrow = w.row_mut(i);
            for j in 0..m {
                wrow[j] = dot(&ft.row(j)[j..], &crow[j..]);
            }
        }
        mean[i] = dot(kxz.row(i), &alpha);
        let arow = a.row(i);
        let wrow = w.row(i);
        var_raw[i] = kxx[i] - dot(arow, arow) + dot(wrow, wrow);
        var[i] = var_raw[i].max(VAR_FLOOR);
    }

    // first-order variance inflation
    let mut g = Mat::zeros(if fo { b } else { 0 }, if fo { d } else { 0 });
    if fo {
        let v_batch = v_batch.expect("first-order path requires noise variances");
        let mut jrow = vec![0.0; d];
        for i in 0..b {
            let xi = xb.row(i);
            {
                let grow = g.row_mut(i);
                for mm in 0..m {
                    kernel::grad_input_row_cached(&kernel, xi, z.row(mm), kcache[(i, mm)], &mut jrow);
                    for j in 0..d {
                        grow[j] += jrow[j] * alpha[mm];
                    }
                }
            }
            let grow = g.row(i);
            let vrow = v_batch.row(i);
            let delta: f64 = (0..d).map(|j| grow[j] * grow[j] * vrow[j]).sum();
            var[i] += delta;
        }
    }

    Ok(ClassForward {
        kernel,
        z,
        l,
        lt,
        f: q.s_factor,
        beta,
        alpha,
        p_mat,
        kxz,
        kcache,
        kxxcache,
        a,
        c,
        w,
        mean,
        var_raw,
        var,
        g,
        kl,
        zc_cache,
    })
}

/// Adjoint of the diagonal kernel value k(x, x) (no numerical jitter):
/// hyper-parameters plus, for input-dependent diagonals, the query point.
fn diag_backward(
    kernel: &KernelParams,
    x: &[f64],
    cache: f64,
    k_bar: f64,
    acc: &mut KernelGradAcc,
    x_bar: Option<&mut [f64]>,
) {
    acc.d_log_jitter += k_bar * kernel.jitter_sq;
    match kernel.family {
        kernel_family @ crate::kernel::KernelFamily::SquaredExponentialArd => {
            let _ = kernel_family;
            // k(x,x) = amplitude_sq: only the amplitude path is live
            acc.d_log_amp += k_bar * cache;
        }
        crate::kernel::KernelFamily::PolynomialArd => {
            let d = x.len();
            let mut xb1 = vec![0.0; d];
            let mut xb2 = vec![0.0; d];
            kernel::pair_backward(
                kernel,
                x,
                x,
                cache,
                k_bar,
                acc,
                Some(&mut xb1),
                Some(&mut xb2),
            );
            if let Some(xb) = x_bar {
                for j in 0..d {
                    xb[j] += xb1[j] + xb2[j];
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn class_backward(
    model: &Model,
    fwd: &ClassForward,
    xb: &Mat,
    v_batch: Option<&Mat>,
    mean_bar: &[f64],
    var_bar: &[f64],
    want_xhat: bool,
    noise_learned_fo: bool,
) -> ClassGrads {
    let m = fwd.z.rows;
    let b = xb.rows;
    let d = xb.cols;
    let kernel = &fwd.kernel;
    let fo = model.cfg.method == Method::NimgpFo;

    let mut acc = KernelGradAcc::zeros(d);
    let mut z_bar = Mat::zeros(m, d);
    let mut m_bar = vec![0.0; m];
    let mut f_bar = Mat::zeros(m, m);
    let mut l_bar = Mat::zeros(m, m);
    let mut alpha_bar = vec![0.0; m];
    let mut beta_bar = vec![0.0; m];
    let mut xhat_bar = if want_xhat { Some(Mat::zeros(b, d)) } else { None };
    let mut noise_bar = if noise_learned_fo { Some(vec![0.0; d]) } else { None };

    let mut kxz_bar_row = vec![0.0; m];
    let mut jrow = vec![0.0; d];
    let mut jbar = vec![0.0; d];
    let mut tbuf = vec![0.0; m];

    for i in 0..b {
        let xi = xb.row(i);
        let mbar_i = mean_bar[i];
        let vbar_i = var_bar[i];
        // variance clamp gate for the marginal part; the first-order
        // inflation stays live regardless
        let vbar_marginal = if fwd.var_raw[i] > VAR_FLOOR { vbar_i } else { 0.0 };

        kxz_bar_row.iter_mut().for_each(|v| *v = 0.0);

        // mean = <kxz_i, alpha>
        if mbar_i != 0.0 {
            for j in 0..m {
                kxz_bar_row[j] += mbar_i * fwd.alpha[j];
                alpha_bar[j] += mbar_i * fwd.kxz[(i, j)];
            }
        }

        // first-order inflation: delta = sum_j V_j g_j^2
        if fo && vbar_i != 0.0 {
            let vrow = v_batch.unwrap().row(i);
            let grow = fwd.g.row(i);
            if let Some(nb) = noise_bar.as_deref_mut() {
                for j in 0..d {
                    // chain into log V happens at merge time
                    nb[j] += vbar_i * grow[j] * grow[j];
                }
            }
            for j in 0..d {
                jbar[j] = 2.0 * vbar_i * vrow[j] * grow[j];
            }
            // g = sum_m J[m,:] alpha_m
            for mm in 0..m {
                kernel::grad_input_row_cached(kernel, xi, fwd.z.row(mm), fwd.kcache[(i, mm)], &mut jrow);
                alpha_bar[mm] += dot(&jrow, &jbar);
                // J_bar[m,:] = alpha_m * jbar
                let mut jbar_m = vec![0.0; d];
                for j in 0..d {
                    jbar_m[j] = fwd.alpha[mm] * jbar[j];
                }
                kernel::grad_input_row_backward(
                    kernel,
                    xi,
                    fwd.z.row(mm),
                    fwd.kcache[(i, mm)],
                    &jrow,
                    &jbar_m,
                    &mut acc,
                    Some(z_bar.row_mut(mm)),
                );
            }
        }

        if vbar_marginal != 0.0 {
            // kxx path
            diag_backward(
                kernel,
                xi,
                fwd.kxxcache[i],
                vbar_marginal,
                &mut acc,
                xhat_bar.as_mut().map(|xb| xb.row_mut(i)),
            );

            // var = kxx - |a|^2 + |w|^2
            let arow = fwd.a.row(i);
            let wrow = fwd.w.row(i);
            let mut a_bar: Vec<f64> = arow.iter().map(|v| -2.0 * vbar_marginal * v).collect();
            let w_bar: Vec<f64> = wrow.iter().map(|v| 2.0 * vbar_marginal * v).collect();

            // w_j = sum_{l >= j} F[l,j] c_l
            let crow = fwd.c.row(i);
            let mut c_bar = vec![0.0; m];
            for l in 0..m {
                let frow = fwd.f.row(l);
                c_bar[l] = dot(&frow[..=l], &w_bar[..=l]);
                let fb = f_bar.row_mut(l);
                for j in 0..=l {
                    fb[j] += w_bar[j] * crow[l];
                }
            }

            // c = L^{-T} a
            tbuf.copy_from_slice(&c_bar);
            solve_lower(&fwd.l, &mut tbuf);
            for j in 0..m {
                a_bar[j] += tbuf[j];
            }
            for r in 0..m {
                let lb = l_bar.row_mut(r);
                let cr = crow[r];
                for j in 0..=r {
                    lb[j] -= cr * tbuf[j];
                }
            }

            // a = L^{-1} kxz_i
            tbuf.copy_from_slice(&a_bar);
            solve_upper_t(&fwd.lt, &mut tbuf);
            for j in 0..m {
                kxz_bar_row[j] += tbuf[j];
            }
            for r in 0..m {
                let lb = l_bar.row_mut(r);
                let tr = tbuf[r];
                for j in 0..=r {
                    lb[j] -= tr * arow[j];
                }
            }
        }

        // kxz adjoints into kernel, z and (optionally) the batch input
        let need_any = kxz_bar_row.iter().any(|&v| v != 0.0);
        if need_any {
            for j in 0..m {
                let kb = kxz_bar_row[j];
                if kb == 0.0 {
                    continue;
                }
                kernel::pair_backward(
                    kernel,
                    xi,
                    fwd.z.row(j),
                    fwd.kcache[(i, j)],
                    kb,
                    &mut acc,
                    xhat_bar.as_mut().map(|xb| xb.row_mut(i)),
                    Some(z_bar.row_mut(j)),
                );
            }
        }
    }

    // KL(q(u)||p(u)) adjoints: elbo subtracts kl
    // kl = 0.5(|P|^2 + |beta|^2) - M/2 + sum ln L_ii - sum ln F_ii
    {
        // alpha = L^{-T} beta
        solve_upper_backward(&fwd.l, &fwd.alpha, &alpha_bar, &mut beta_bar, &mut l_bar);
        for j in 0..m {
            beta_bar[j] -= fwd.beta[j];
        }
        // P = L^{-1} F, P_bar = -P
        for j in 0..m {
            let pcol: Vec<f64> = (0..m).map(|i| fwd.p_mat[(i, j)]).collect();
            let pbar: Vec<f64> = pcol.iter().map(|v| -v).collect();
            let mut fcol_bar = vec![0.0; m];
            solve_lower_backward(&fwd.l, &pcol, &pbar, &mut fcol_bar, &mut l_bar);
            for i in 0..m {
                f_bar[(i, j)] += fcol_bar[i];
            }
        }
        // beta = L^{-1} m
        solve_lower_backward(&fwd.l, &fwd.beta, &beta_bar, &mut m_bar, &mut l_bar);
        for i in 0..m {
            l_bar[(i, i)] -= 1.0 / fwd.l[(i, i)];
            f_bar[(i, i)] += 1.0 / fwd.f[(i, i)];
        }
    }

    // Cholesky and K_ZZ adjoints
    let k_bar = cholesky_backward(&fwd.l, &l_bar);
    for i in 0..m {
        for j in 0..=i {
            let kb = if i == j { k_bar[(i, j)] } else { 2.0 * k_bar[(i, j)] };
            if kb == 0.0 {
                continue;
            }
            if i == j {
                acc.d_log_jitter += kb * kernel.jitter_sq;
                acc.d_log_amp += kb * kernel.numerical_jitter();
                // pair part of the diagonal entry
                match kernel.family {
                    crate::kernel::KernelFamily::SquaredExponentialArd => {
                        acc.d_log_amp += kb * fwd.zc_cache[(i, i)];
                    }
                    crate::kernel::KernelFamily::PolynomialArd => {
                        let (zb1, zb2) = {
                            let mut zb1 = vec![0.0; d];
                            let mut zb2 = vec![0.0; d];
                            kernel::pair_backward(
                                kernel,
                                fwd.z.row(i),
                                fwd.z.row(i),
                                fwd.zc_cache[(i, i)],
                                kb,
                                &mut acc,
                                Some(&mut zb1),
                                Some(&mut zb2),
                            );
                            (zb1, zb2)
                        };
                        let zr = z_bar.row_mut(i);
                        for t in 0..d {
                            zr[t] += zb1[t] + zb2[t];
                        }
                    }
                }
            } else {
                let (zi, zj) = (fwd.z.row(i).to_vec(), fwd.z.row(j).to_vec());
                let mut zbi = vec![0.0; d];
                let mut zbj = vec![0.0; d];
                kernel::pair_backward(
                    kernel,
                    &zi,
                    &zj,
                    fwd.zc_cache[(i, j)],
                    kb,
                    &mut acc,
                    Some(&mut zbi),
                    Some(&mut zbj),
                );
                {
                    let zr = z_bar.row_mut(i);
                    for t in 0..d {
                        zr[t] += zbi[t];
                    }
                }
                let zr = z_bar.row_mut(j);
                for t in 0..d {
                    zr[t] += zbj[t];
                }
            }
        }
    }

    ClassGrads {
        acc,
        z_bar,
        m_bar,
        f_bar,
        xhat_bar,
        noise_bar,
    }
}

fn elbo_core(
    model: &Model,
    batch: &[usize],
    inputs: &StepInputs,
    mut grad: Option<&mut [f64]>,
) -> Result<(ElboBreakdown, ())> {
    let b = batch.len();
    if b == 0 {
        return Err(crate::error::Error::contract("empty batch"));
    }
    let d = model.data_dim;
    let c_n = model.cfg.num_classes;
    let n = model.n_train() as f64;
    let scale = n / b as f64;
    let method = model.cfg.method;
    let latent = method.uses_latent_inputs();
    let lik_cfg = model.cfg.likelihood();

    // assemble batch inputs
    let net = if method == Method::NimgpNn { Some(model.net()) } else { None };
    let mut xb = Mat::zeros(b, d);
    // per-instance latent posterior for the batch
    let mut q_mu = Mat::zeros(if latent { b } else { 0 }, if latent { d } else { 0 });
    let mut q_var = q_mu.clone();
    let mut net_acts: Vec<Vec<Vec<f64>>> = Vec::new();
    for (row, &idx) in batch.iter().enumerate() {
        if let Some(ov) = &inputs.x_override {
            xb.row_mut(row).copy_from_slice(ov.row(row));
            continue;
        }
        if !latent {
            xb.row_mut(row).copy_from_slice(model.x_tilde.row(idx));
            continue;
        }
        let (mu, var) = match &net {
            Some(net) => {
                let (mu, var, acts) = net.forward_cached(model.x_tilde.row(idx), model.labels[idx]);
                net_acts.push(acts);
                (mu, var)
            }
            None => model.q_x_row(idx),
        };
        let eps = inputs
            .eps
            .as_ref()
            .expect("latent-input methods need draws");
        let xrow = xb.row_mut(row);
        for j in 0..d {
            if model.coord_pinned(idx, j) {
                xrow[j] = model.x_tilde[(idx, j)];
            } else {
                xrow[j] = mu[j] + var[j].sqrt() * eps[(row, j)];
            }
        }
        q_mu.row_mut(row).copy_from_slice(&mu);
        q_var.row_mut(row).copy_from_slice(&var);
    }

    // noise variances for the batch (first-order path and observation term)
    let v_batch: Option<Mat> = match (&model.noise, method) {
        (InputNoiseSpec::None, _) => None,
        (_, Method::Mgp) => None,
        (InputNoiseSpec::PerInstanceKnown(vm), _) => {
            let mut v = Mat::zeros(b, d);
            for (row, &idx) in batch.iter().enumerate() {
                v.row_mut(row).copy_from_slice(vm.row(idx));
            }
            Some(v)
        }
        (InputNoiseSpec::SharedLearned(_), _) => {
            let shared = model.shared_noise().unwrap();
            let mut v = Mat::zeros(b, d);
            for row in 0..b {
                v.row_mut(row).copy_from_slice(&shared);
            }
            Some(v)
        }
    };

    // per-class forward passes (independent; merged in class order)
    let forwards: Vec<ClassForward> = (0..c_n)
        .into_par_iter()
        .map(|c| class_forward(model, c, &xb, v_batch.as_ref()))
        .collect::<Result<Vec<_>>>()?;

    let mut breakdown = ElboBreakdown::default();
    for f in &forwards {
        breakdown.kl_u_total += f.kl;
    }

    // likelihood quadrature across classes
    let mut means = vec![0.0; c_n];
    let mut vars = vec![0.0; c_n];
    let mut mean_bars = vec![vec![0.0; b]; c_n];
    let mut var_bars = vec![vec![0.0; b]; c_n];
    let mut ell_sum = 0.0;
    for i in 0..b {
        for c in 0..c_n {
            means[c] = forwards[c].mean[i];
            vars[c] = forwards[c].var[i];
        }
        let y = model.labels[batch[i]];
        if grad.is_some() {
            let (e, dm, dv) = expected_loglik_exact_grad(&means, &vars, y, &lik_cfg, &model.quad);
            ell_sum += e;
            for c in 0..c_n {
                mean_bars[c][i] = scale * dm[c];
                var_bars[c][i] = scale * dv[c];
            }
        } else {
            let (e, _, _) = expected_loglik_exact_grad(&means, &vars, y, &lik_cfg, &model.quad);
            ell_sum += e;
        }
    }
    breakdown.expected_loglik_sum = scale * ell_sum;

    // observation and KL(x) terms
    let noise_learned = model.noise.is_learned();
    let mut noise_logvar_grad = vec![0.0; if noise_learned { d } else { 0 }];
    let mut qmu_bar = Mat::zeros(if latent { b } else { 0 }, if latent { d } else { 0 });
    let mut qvar_bar = qmu_bar.clone();
    if latent {
        let vb = v_batch.as_ref().expect("latent methods carry noise variances");
        let mut obs_sum = 0.0;
        let mut klx_sum = 0.0;
        for (row, &idx) in batch.iter().enumerate() {
            // active (unpinned) coordinates only
            let mut mu_a = Vec::with_capacity(d);
            let mut var_a = Vec::with_capacity(d);
            let mut xt_a = Vec::with_capacity(d);
            let mut vn_a = Vec::with_capacity(d);
            let mut active = Vec::with_capacity(d);
            for j in 0..d {
                if model.coord_pinned(idx, j) {
                    continue;
                }
                active.push(j);
                mu_a.push(q_mu[(row, j)]);
                var_a.push(q_var[(row, j)]);
                xt_a.push(model.x_tilde[(idx, j)]);
                vn_a.push(vb.row(row)[j].max(1e-12));
            }
            if active.is_empty() {
                continue;
            }
            obs_sum += noise::expected_obs_loglik(&mu_a, &var_a, &xt_a, &vn_a)?;
            klx_sum += noise::kl_x(&mu_a, &var_a, &model.cfg.prior);
            if grad.is_some() {
                let mut mu_b = vec![0.0; active.len()];
                let mut var_b = vec![0.0; active.len()];
                let mut vn_b = vec![0.0; active.len()];
                noise::expected_obs_loglik_backward(
                    &mu_a,
                    &var_a,
                    &xt_a,
                    &vn_a,
                    scale,
                    &mut mu_b,
                    &mut var_b,
                    if noise_learned { Some(&mut vn_b) } else { None },
                );
                noise::kl_x_backward(&mu_a, &var_a, &model.cfg.prior, -scale, &mut mu_b, &mut var_b);
                for (k, &j) in active.iter().enumerate() {
                    qmu_bar[(row, j)] += mu_b[k];
                    qvar_bar[(row, j)] += var_b[k];
                    if noise_learned {
                        noise_logvar_grad[j] += vn_b[k] * vn_a[k];
                    }
                }
            }
        }
        breakdown.obs_loglik_sum = scale * obs_sum;
        breakdown.kl_x_total = scale * klx_sum;
    }

    let breakdown = breakdown.finalize();
    let grad_out = match grad.as_deref_mut() {
        Some(g) => g,
        None => return Ok((breakdown, ())),
    };

    // per-class backward passes
    let want_xhat = latent;
    let fo_learned = method == Method::NimgpFo && noise_learned;
    let backs: Vec<ClassGrads> = (0..c_n)
        .into_par_iter()
        .map(|c| {
            class_backward(
                model,
                &forwards[c],
                &xb,
                v_batch.as_ref(),
                &mean_bars[c],
                &var_bars[c],
                want_xhat,
                fo_learned,
            )
        })
        .collect();

    // merge per-class gradients in class order
    for (c, back) in backs.iter().enumerate() {
        grad_out[model.layout.range(&seg_kernel_amp(c))][0] += back.acc.d_log_amp;
        let r = model.layout.range(&seg_kernel_ls(c));
        for (slot, v) in grad_out[r].iter_mut().zip(&back.acc.d_log_ls) {
            *slot += v;
        }
        grad_out[model.layout.range(&seg_kernel_noise(c))][0] += back.acc.d_log_jitter;
        let r = model.layout.range(&seg_inducing(c));
        for (slot, v) in grad_out[r].iter_mut().zip(&back.z_bar.data) {
            *slot += v;
        }
        let r = model.layout.range(&seg_u_mean(c));
        for (slot, v) in grad_out[r].iter_mut().zip(&back.m_bar) {
            *slot += v;
        }
        // packed factor with log-diagonal chain
        let f = &forwards[c].f;
        let r = model.layout.range(&seg_u_factor(c));
        let packed = &mut grad_out[r];
        let mut k = 0;
        let m = f.rows;
        for i in 0..m {
            for j in 0..=i {
                let gv = back.f_bar[(i, j)];
                packed[k] += if i == j { gv * f[(i, i)] } else { gv };
                k += 1;
            }
        }
        if let Some(nb) = &back.noise_bar {
            // first-order path into the learned noise (log chain at merge)
            let shared = model.shared_noise().unwrap();
            let r = model.layout.range(SEG_NOISE);
            for ((slot, v), s) in grad_out[r].iter_mut().zip(nb).zip(&shared) {
                *slot += v * s;
            }
        }
    }

    // latent-input adjoints: reparameterization plus the closed-form terms
    if latent {
        // total xhat adjoint summed over classes, in class order
        let mut xhat_total = Mat::zeros(b, d);
        for back in &backs {
            let xc = back.xhat_bar.as_ref().unwrap();
            for k in 0..xhat_total.data.len() {
                xhat_total.data[k] += xc.data[k];
            }
        }
        let eps = inputs.eps.as_ref().unwrap();
        for (row, &idx) in batch.iter().enumerate() {
            for j in 0..d {
                if model.coord_pinned(idx, j) {
                    continue;
                }
                let v = q_var[(row, j)];
                qmu_bar[(row, j)] += xhat_total[(row, j)];
                // d xhat / d var = eps / (2 sqrt(var))
                qvar_bar[(row, j)] += xhat_total[(row, j)] * eps[(row, j)] / (2.0 * v.sqrt());
            }
        }
        match method {
            Method::Nimgp => {
                let mu_range = model.layout.range(SEG_QX_MU);
                let var_range = model.layout.range(SEG_QX_LOGVAR);
                for (row, &idx) in batch.iter().enumerate() {
                    for j in 0..d {
                        if model.coord_pinned(idx, j) {
                            continue;
                        }
                        grad_out[mu_range.start + idx * d + j] += qmu_bar[(row, j)];
                        // log-variance chain
                        grad_out[var_range.start + idx * d + j] +=
                            qvar_bar[(row, j)] * q_var[(row, j)];
                    }
                }
            }
            Method::NimgpNn => {
                let net = net.as_ref().unwrap();
                let r = model.layout.range(SEG_NET);
                let net_grad = &mut grad_out[r];
                for row in 0..b {
                    net.backward(
                        &net_acts[row],
                        qmu_bar.row(row),
                        qvar_bar.row(row),
                        net_grad,
                    );
                }
            }
            _ => unreachable!(),
        }
    }
    if noise_learned && latent {
        let r = model.layout.range(SEG_NOISE);
        for (slot, v) in grad_out[r].iter_mut().zip(&noise_logvar_grad) {
            *slot += v;
        }
    }

    Ok((breakdown, ()))
}
