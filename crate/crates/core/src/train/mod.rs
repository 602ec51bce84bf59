//! Stochastic ELBO training: minibatching, Adam ascent, the four-method fit
//! entry point, and the finite-difference gradient report.

pub mod adam;
pub mod elbo;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use elbo::{elbo_estimate, elbo_with_grad, ElboBreakdown, StepInputs};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{Method, Model, ModelConfig};
use crate::noise::InputNoiseSpec;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use std::time::Instant;

/// Cheap baseline modes on the plain-GP path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// Train on a dataset augmented with extra draws around each instance.
    Augment { draws_per_instance: usize },
    /// Redraw every batch's inputs around the observations each step.
    Resample,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// None applies the min(100, ceil(0.05 N)) rule.
    pub num_inducing: Option<usize>,
    /// Reparameterized draws per instance per step.
    pub mc_train_samples: usize,
    pub baseline: Option<Baseline>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 750,
            batch_size: 50,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            num_inducing: None,
            mc_train_samples: 1,
            baseline: None,
        }
    }
}

impl TrainConfig {
    pub fn resolve_inducing(&self, n: usize) -> usize {
        self.num_inducing
            .unwrap_or_else(|| ((0.05 * n as f64).ceil() as usize).min(100))
            .clamp(1, n)
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub breakdown: ElboBreakdown,
    pub wall_seconds: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<EpochStats>,
    /// Set when optimization hit a non-finite ELBO; the model is then the
    /// last parameter snapshot that evaluated cleanly.
    pub aborted_at: Option<(usize, usize)>,
    pub wall_seconds: f64,
    /// Least-squares slope of the ELBO over the last tenth of the epochs
    /// (convergence diagnostic, recorded but not enforced).
    pub final_slope: f64,
}

fn standard_normal_mat(rows: usize, cols: usize, rng: &mut StdRng) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for v in m.data.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    m
}

/// Fit one model by stochastic maximization of the ELBO.
///
/// The observed inputs and labels go in as-is (standardize upstream when the
/// protocol calls for it); labels are 0-based. Baseline modes require the
/// plain-GP method together with known per-instance noise variances.
pub fn fit(
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
    x_tilde: Mat,
    labels: Vec<usize>,
    noise: InputNoiseSpec,
) -> Result<TrainOutcome> {
    let start = Instant::now();
    if train_cfg.batch_size == 0 {
        return Err(Error::contract("batch size must be >= 1"));
    }
    let mut x_tilde = x_tilde;
    let mut labels = labels;
    let mut model_noise = noise.clone();
    let mut resample_v: Option<Mat> = None;

    if let Some(baseline) = train_cfg.baseline {
        if model_cfg.method != Method::Mgp {
            return Err(Error::contract("baseline modes run on the plain-GP path"));
        }
        let v = match &noise {
            InputNoiseSpec::PerInstanceKnown(v) => v.clone(),
            _ => {
                return Err(Error::contract(
                    "baseline modes need known per-instance noise variances",
                ))
            }
        };
        match baseline {
            Baseline::Augment { draws_per_instance } => {
                let mut rng = StdRng::seed_from_u64(train_cfg.seed ^ 0x6175_67);
                let n0 = x_tilde.rows;
                let d = x_tilde.cols;
                let mut rows = x_tilde.data.clone();
                let mut new_labels = labels.clone();
                for _ in 0..draws_per_instance {
                    for i in 0..n0 {
                        for j in 0..d {
                            let e: f64 = rng.sample(StandardNormal);
                            rows.push(x_tilde[(i, j)] + v[(i, j)].sqrt() * e);
                        }
                        new_labels.push(labels[i]);
                    }
                }
                x_tilde = Mat::from_vec(n0 * (1 + draws_per_instance), d, rows);
                labels = new_labels;
            }
            Baseline::Resample => {
                resample_v = Some(v);
            }
        }
        model_noise = InputNoiseSpec::None;
    } else if model_cfg.method == Method::Mgp {
        // The plain GP ignores input noise entirely.
        model_noise = InputNoiseSpec::None;
    }

    let model = Model::init(model_cfg, x_tilde, labels, model_noise, train_cfg.seed)?;
    run_loop(model, train_cfg, resample_v, start)
}

/// Continue training an existing model (warm start): fresh optimizer
/// moments, parameters as they stand.
pub fn fit_from(model: Model, train_cfg: &TrainConfig) -> Result<TrainOutcome> {
    if train_cfg.baseline.is_some() {
        return Err(Error::contract("baseline modes only apply to a fresh fit"));
    }
    run_loop(model, train_cfg, None, Instant::now())
}

fn run_loop(
    mut model: Model,
    train_cfg: &TrainConfig,
    resample_v: Option<Mat>,
    start: Instant,
) -> Result<TrainOutcome> {
    let n = model.n_train();
    let batch_size = train_cfg.batch_size.min(n);
    let mut adam = AdamState::new(model.layout.total);
    let adam_cfg = AdamConfig {
        learning_rate: train_cfg.learning_rate,
        beta1: train_cfg.adam_beta1,
        beta2: train_cfg.adam_beta2,
        epsilon: train_cfg.adam_epsilon,
    };
    let mut rng = StdRng::seed_from_u64(train_cfg.seed);
    let latent = model.cfg.method.uses_latent_inputs();
    let d = model.data_dim;

    let mut trace = Vec::with_capacity(train_cfg.epochs);
    let mut last_good = model.theta.clone();
    let mut indices: Vec<usize> = (0..n).collect();
    let mc = train_cfg.mc_train_samples.max(1);

    for epoch in 0..train_cfg.epochs {
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            indices.swap(i, j);
        }
        let mut epoch_acc = ElboBreakdown::default();
        let mut steps = 0usize;
        let mut abort: Option<(usize, usize)> = None;
        for (step, chunk) in indices.chunks(batch_size).enumerate() {
            let x_override = resample_v.as_ref().map(|v| {
                let mut ov = Mat::zeros(chunk.len(), d);
                for (row, &idx) in chunk.iter().enumerate() {
                    for j in 0..d {
                        let e: f64 = rng.sample(StandardNormal);
                        ov[(row, j)] = model.x_tilde[(idx, j)] + v[(idx, j)].sqrt() * e;
                    }
                }
                ov
            });
            let mut grad_sum = vec![0.0; model.layout.total];
            let mut bd_sum = ElboBreakdown::default();
            let mut ok = true;
            for _ in 0..mc {
                let inputs = StepInputs {
                    eps: if latent {
                        Some(standard_normal_mat(chunk.len(), d, &mut rng))
                    } else {
                        None
                    },
                    x_override: x_override.clone(),
                };
                let (bd, grad) = elbo_with_grad(&model, chunk, &inputs)?;
                if !bd.elbo.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    ok = false;
                    break;
                }
                for (s, g) in grad_sum.iter_mut().zip(&grad) {
                    *s += g / mc as f64;
                }
                bd_sum.expected_loglik_sum += bd.expected_loglik_sum / mc as f64;
                bd_sum.obs_loglik_sum += bd.obs_loglik_sum / mc as f64;
                bd_sum.kl_u_total += bd.kl_u_total / mc as f64;
                bd_sum.kl_x_total += bd.kl_x_total / mc as f64;
            }
            if !ok {
                abort = Some((epoch, step));
                break;
            }
            bd_sum.elbo = bd_sum.expected_loglik_sum + bd_sum.obs_loglik_sum
                - bd_sum.kl_u_total
                - bd_sum.kl_x_total;
            adam_step(&mut adam, &mut model.theta, &grad_sum, &adam_cfg)?;
            epoch_acc.expected_loglik_sum += bd_sum.expected_loglik_sum;
            epoch_acc.obs_loglik_sum += bd_sum.obs_loglik_sum;
            epoch_acc.kl_u_total += bd_sum.kl_u_total;
            epoch_acc.kl_x_total += bd_sum.kl_x_total;
            steps += 1;
        }
        if let Some((e, s)) = abort {
            model.theta.copy_from_slice(&last_good);
            let final_slope = trace_slope(&trace);
            return Ok(TrainOutcome {
                model,
                trace,
                aborted_at: Some((e, s)),
                wall_seconds: start.elapsed().as_secs_f64(),
                final_slope,
            });
        }
        last_good.copy_from_slice(&model.theta);
        let k = steps.max(1) as f64;
        let breakdown = ElboBreakdown {
            expected_loglik_sum: epoch_acc.expected_loglik_sum / k,
            obs_loglik_sum: epoch_acc.obs_loglik_sum / k,
            kl_u_total: epoch_acc.kl_u_total / k,
            kl_x_total: epoch_acc.kl_x_total / k,
            elbo: (epoch_acc.expected_loglik_sum + epoch_acc.obs_loglik_sum
                - epoch_acc.kl_u_total
                - epoch_acc.kl_x_total)
                / k,
        };
        trace.push(EpochStats {
            epoch,
            breakdown,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    let final_slope = trace_slope(&trace);
    Ok(TrainOutcome {
        model,
        trace,
        aborted_at: None,
        wall_seconds: start.elapsed().as_secs_f64(),
        final_slope,
    })
}

/// Least-squares slope of the ELBO over the last tenth of the trace.
pub fn trace_slope(trace: &[EpochStats]) -> f64 {
    let n = trace.len();
    if n < 2 {
        return 0.0;
    }
    let k = (n / 10).max(2);
    let tail = &trace[n - k..];
    let xm = (k as f64 - 1.0) / 2.0;
    let ym: f64 = tail.iter().map(|t| t.breakdown.elbo).sum::<f64>() / k as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, t) in tail.iter().enumerate() {
        let dx = i as f64 - xm;
        num += dx * (t.breakdown.elbo - ym);
        den += dx * dx;
    }
    num / den
}

#[derive(Debug, Clone)]
pub struct SegmentCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub finite_diff: f64,
}

#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    pub segments: Vec<SegmentCheck>,
    pub tolerance: f64,
}

impl FiniteDiffReport {
    pub fn pass(&self) -> bool {
        self.segments.iter().all(|s| s.max_rel_err < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.max_rel_err)
            .fold(0.0, f64::max)
    }
}

/// Central-difference check of the analytic gradient under frozen draws.
/// The relative error uses a small floor so exactly-flat directions compare
/// against finite-difference roundoff sanely.
pub fn finite_diff_report(
    model: &Model,
    batch: &[usize],
    inputs: &StepInputs,
    step: f64,
    tolerance: f64,
) -> Result<FiniteDiffReport> {
    let (_, grad) = elbo_with_grad(model, batch, inputs)?;
    let mut segments = Vec::new();
    for seg in &model.layout.segments {
        let mut worst = SegmentCheck {
            name: seg.name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            finite_diff: 0.0,
        };
        for k in seg.offset..seg.offset + seg.len {
            let mut mp = model.clone();
            mp.theta[k] += step;
            let mut mm = model.clone();
            mm.theta[k] -= step;
            let fp = elbo_estimate(&mp, batch, inputs)?.elbo;
            let fm = elbo_estimate(&mm, batch, inputs)?.elbo;
            let fd = (fp - fm) / (2.0 * step);
            let denom = fd.abs().max(grad[k].abs()).max(1e-4);
            let rel = (fd - grad[k]).abs() / denom;
            if rel > worst.max_rel_err {
                worst.max_rel_err = rel;
                worst.worst_index = k - seg.offset;
                worst.analytic = grad[k];
                worst.finite_diff = fd;
            }
        }
        segments.push(worst);
    }
    Ok(FiniteDiffReport {
        segments,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Method, ModelConfig};

    fn gradcheck_model(method: Method, learned: bool) -> (Model, StepInputs) {
        let mut rng = StdRng::seed_from_u64(123);
        let n = 20;
        let d = 2;
        let mut x = Mat::zeros(n, d);
        for v in x.data.iter_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let noise = if method == Method::Mgp {
            InputNoiseSpec::None
        } else if learned {
            InputNoiseSpec::SharedLearned(vec![0.05; d])
        } else {
            let mut v = Mat::zeros(n, d);
            for t in v.data.iter_mut() {
                *t = 0.1;
            }
            InputNoiseSpec::PerInstanceKnown(v)
        };
        let mut cfg = ModelConfig::new(method, 3, 5);
        cfg.nn_hidden = vec![8];
        let mut model = Model::init(cfg, x, labels, noise, 7).unwrap();
        // move off the symmetric initialization so every path is live
        for (k, v) in model.theta.iter_mut().enumerate() {
            *v += 0.05 * ((k as f64 * 0.7).sin());
        }
        let latent = method.uses_latent_inputs();
        let inputs = StepInputs {
            eps: if latent {
                Some(standard_normal_mat(n, d, &mut rng))
            } else {
                None
            },
            x_override: None,
        };
        (model, inputs)
    }

    #[test]
    fn gradcheck_all_methods_known_noise() {
        let batch: Vec<usize> = (0..20).collect();
        for method in [Method::Mgp, Method::Nimgp, Method::NimgpNn, Method::NimgpFo] {
            let (model, inputs) = gradcheck_model(method, false);
            let tol = if method == Method::NimgpFo { 1e-3 } else { 1e-4 };
            let report = finite_diff_report(&model, &batch, &inputs, 1e-5, tol).unwrap();
            assert!(
                report.pass(),
                "{:?}: worst {:?}",
                method,
                report
                    .segments
                    .iter()
                    .max_by(|a, b| a.max_rel_err.partial_cmp(&b.max_rel_err).unwrap())
            );
        }
    }

    #[test]
    fn gradcheck_learned_noise_methods() {
        let batch: Vec<usize> = (0..20).collect();
        for method in [Method::Nimgp, Method::NimgpNn, Method::NimgpFo] {
            let (model, inputs) = gradcheck_model(method, true);
            let tol = if method == Method::NimgpFo { 1e-3 } else { 1e-4 };
            let report = finite_diff_report(&model, &batch, &inputs, 1e-5, tol).unwrap();
            assert!(
                report.pass(),
                "{:?} learned: worst {:?}",
                method,
                report
                    .segments
                    .iter()
                    .max_by(|a, b| a.max_rel_err.partial_cmp(&b.max_rel_err).unwrap())
            );
        }
    }

    #[test]
    fn minibatch_estimator_is_unbiased_for_plain_gp() {
        let (model, inputs) = gradcheck_model(Method::Mgp, false);
        let full: Vec<usize> = (0..20).collect();
        let full_elbo = elbo_estimate(&model, &full, &inputs).unwrap().elbo;
        let mut sum = 0.0;
        for chunk in full.chunks(5) {
            sum += elbo_estimate(&model, chunk, &inputs).unwrap().elbo;
        }
        assert!(
            (sum / 4.0 - full_elbo).abs() < 1e-8,
            "{} vs {}",
            sum / 4.0,
            full_elbo
        );
    }

    #[test]
    fn breakdown_sums_to_elbo() {
        for method in [Method::Nimgp, Method::NimgpNn, Method::NimgpFo] {
            let (model, inputs) = gradcheck_model(method, false);
            let batch: Vec<usize> = (0..20).collect();
            let bd = elbo_estimate(&model, &batch, &inputs).unwrap();
            let recomposed =
                bd.expected_loglik_sum + bd.obs_loglik_sum - bd.kl_u_total - bd.kl_x_total;
            assert!((bd.elbo - recomposed).abs() < 1e-12);
        }
    }

    #[test]
    fn value_and_gradient_share_draws() {
        let (model, inputs) = gradcheck_model(Method::Nimgp, false);
        let batch: Vec<usize> = (0..20).collect();
        let a = elbo_estimate(&model, &batch, &inputs).unwrap().elbo;
        let (b, _) = elbo_with_grad(&model, &batch, &inputs).unwrap();
        assert_eq!(a, b.elbo);
        let c = elbo_estimate(&model, &batch, &inputs).unwrap().elbo;
        assert_eq!(a, c);
    }

    #[test]
    fn tiny_fit_runs_and_is_seed_deterministic() {
        let mut rng = StdRng::seed_from_u64(5);
        let n = 24;
        let mut x = Mat::zeros(n, 1);
        for v in x.data.iter_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        let labels: Vec<usize> = x.data.iter().map(|&v| if v > 0.0 { 1 } else { 0 }).collect();
        let cfg = ModelConfig::new(Method::Mgp, 2, 4);
        let tc = TrainConfig {
            epochs: 30,
            batch_size: 8,
            seed: 11,
            num_inducing: Some(4),
            ..TrainConfig::default()
        };
        let a = fit(cfg.clone(), &tc, x.clone(), labels.clone(), InputNoiseSpec::None).unwrap();
        let b = fit(cfg, &tc, x, labels, InputNoiseSpec::None).unwrap();
        assert!(a.aborted_at.is_none());
        assert_eq!(a.model.theta, b.model.theta);
        assert_eq!(a.trace.len(), 30);
        // optimization made progress on this separable task
        assert!(a.trace.last().unwrap().breakdown.elbo > a.trace[0].breakdown.elbo);
    }
}
