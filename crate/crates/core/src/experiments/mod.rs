//! Experiment harness: the desk-scale reproductions driven by the CLI, each
//! writing deterministic plain-text result files into an output directory.
//!
//! File formats (tab-separated, one header line):
//!   metrics.tsv          method rep noise error nll n_test confusion
//!   aggregate.tsv        method noise reps mean_error se_error mean_nll se_nll
//!   mean_rank.tsv        noise method rank_nll rank_error
//!   noise_estimates.tsv  method rep noise v_0 .. v_{d-1}
//!   curve_rep<k>_*.tsv   x p_0 .. p_{C-1}
//!   active_curves.tsv    method strategy rep step error
//!   failures.tsv         method rep noise reason
//!
//! Wall-clock timings are never written into result files so reruns with the
//! same master seed are hash-identical; timing goes to stderr.

pub mod active;
pub mod bayes;
pub mod metrics;

use crate::data::synthetic::{sample_gp_task, GpTask, SyntheticConfig};
use crate::data::{inject_noise, split, standardize, Dataset};
use crate::error::{Error, Result};
use crate::kernel::KernelFamily;
use crate::linalg::Mat;
use crate::model::{Method, Model, ModelConfig};
use crate::noise::InputNoiseSpec;
use crate::train::{fit, finite_diff_report, StepInputs, TrainConfig};
use active::{active_learning_run, ActiveConfig, Strategy};
use bayes::bayes_optimal_predictive;
use metrics::{bootstrap_se, evaluate, mean, mean_rank, standard_error, MetricsRecord};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Known,
    Learned,
}

impl NoiseMode {
    pub fn parse(s: &str) -> Result<NoiseMode> {
        match s {
            "known" => Ok(NoiseMode::Known),
            "learned" => Ok(NoiseMode::Learned),
            other => Err(Error::contract(format!("unknown noise mode '{}'", other))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NoiseMode::Known => "known",
            NoiseMode::Learned => "learned",
        }
    }
}

/// Options shared by every experiment kind.
#[derive(Debug, Clone)]
pub struct CommonConfig {
    pub methods: Vec<Method>,
    pub noise_levels: Vec<f64>,
    pub noise_mode: NoiseMode,
    pub repetitions: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
    pub kernel_family: KernelFamily,
    pub mc_predict_samples: usize,
    pub quad_points: usize,
}

impl CommonConfig {
    pub fn new(out_dir: PathBuf) -> Self {
        CommonConfig {
            methods: vec![Method::Mgp, Method::Nimgp, Method::NimgpNn, Method::NimgpFo],
            noise_levels: vec![0.1],
            noise_mode: NoiseMode::Known,
            repetitions: 10,
            seed: 0,
            out_dir,
            train: TrainConfig::default(),
            kernel_family: KernelFamily::SquaredExponentialArd,
            mc_predict_samples: 300,
            quad_points: 16,
        }
    }

    fn model_cfg(&self, method: Method, num_classes: usize, num_inducing: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(method, num_classes, num_inducing);
        cfg.kernel_family = self.kernel_family;
        cfg.mc_predict_samples = self.mc_predict_samples;
        cfg.quad_points = self.quad_points;
        cfg
    }

    fn noise_spec(&self, method: Method, data: &Dataset) -> InputNoiseSpec {
        if method == Method::Mgp {
            return InputNoiseSpec::None;
        }
        match self.noise_mode {
            NoiseMode::Known => InputNoiseSpec::PerInstanceKnown(
                data.v
                    .clone()
                    .unwrap_or_else(|| Mat::zeros(data.n(), data.dim())),
            ),
            NoiseMode::Learned => {
                InputNoiseSpec::SharedLearned(vec![crate::noise::SHARED_NOISE_INIT; data.dim()])
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecordRow {
    pub noise: f64,
    pub record: MetricsRecord,
}

#[derive(Debug, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<RecordRow>,
    pub failures: Vec<(String, usize, f64, String)>,
    pub files: Vec<PathBuf>,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn write_file(dir: &Path, name: &str, content: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, content).map_err(|e| Error::io(path.display().to_string(), e))?;
    files.push(path);
    Ok(())
}

fn confusion_flat(c: &[Vec<usize>]) -> String {
    c.iter()
        .flat_map(|row| row.iter().map(|v| v.to_string()))
        .collect::<Vec<_>>()
        .join(";")
}

fn write_metrics_and_aggregate(
    out: &mut ExperimentOutput,
    dir: &Path,
    methods: &[Method],
    noise_levels: &[f64],
    bootstrap: bool,
    seed: u64,
) -> Result<()> {
    let mut metrics = String::from("method\trep\tnoise\terror\tnll\tconfusion\n");
    for row in &out.rows {
        writeln!(
            metrics,
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{}",
            row.record.method,
            row.record.repetition,
            row.noise,
            row.record.test_error,
            row.record.test_nll,
            confusion_flat(&row.record.confusion)
        )
        .unwrap();
    }
    write_file(dir, "metrics.tsv", &metrics, &mut out.files)?;

    let mut agg = String::from("method\tnoise\treps\tmean_error\tse_error\tmean_nll\tse_nll\n");
    for &noise in noise_levels {
        for method in methods {
            let errs: Vec<f64> = out
                .rows
                .iter()
                .filter(|r| r.record.method == method.name() && r.noise == noise)
                .map(|r| r.record.test_error)
                .collect();
            let nlls: Vec<f64> = out
                .rows
                .iter()
                .filter(|r| r.record.method == method.name() && r.noise == noise)
                .map(|r| r.record.test_nll)
                .collect();
            if errs.is_empty() {
                continue;
            }
            let (se_e, se_n) = if bootstrap {
                (
                    bootstrap_se(&errs, 1000, seed ^ 0xb007),
                    bootstrap_se(&nlls, 1000, seed ^ 0xb008),
                )
            } else {
                (standard_error(&errs), standard_error(&nlls))
            };
            writeln!(
                agg,
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                method.name(),
                noise,
                errs.len(),
                mean(&errs),
                se_e,
                mean(&nlls),
                se_n
            )
            .unwrap();
        }
    }
    write_file(dir, "aggregate.tsv", &agg, &mut out.files)?;

    if !out.failures.is_empty() {
        let mut f = String::from("method\trep\tnoise\treason\n");
        for (m, r, n, why) in &out.failures {
            writeln!(f, "{}\t{}\t{}\t{}", m, r, n, why).unwrap();
        }
        write_file(dir, "failures.tsv", &f, &mut out.files)?;
    }
    Ok(())
}

/// Outcome of one synthetic repetition.
struct SyntheticRep {
    rows: Vec<RecordRow>,
    failures: Vec<(String, usize, f64, String)>,
    noise_estimates: Vec<(String, f64, Vec<f64>)>,
    /// (method name or "bayes", noise, file body)
    curves: Vec<(String, f64, String)>,
}

pub struct SyntheticSpec {
    pub task: SyntheticConfig,
    pub n_train: usize,
    pub n_test: usize,
    /// Emit 1-d predictive curves and the Bayes-optimal reference.
    pub curves: bool,
    pub curve_grid: usize,
}

impl SyntheticSpec {
    pub fn toy_1d() -> Self {
        SyntheticSpec {
            task: SyntheticConfig::toy_1d(2000),
            n_train: 1000,
            n_test: 1000,
            curves: true,
            curve_grid: 401,
        }
    }

    pub fn general(d: usize, classes: usize, n_train: usize, n_test: usize) -> Self {
        SyntheticSpec {
            task: SyntheticConfig::new(n_train + n_test, d, classes),
            n_train,
            n_test,
            curves: false,
            curve_grid: 0,
        }
    }
}

fn run_one_synthetic_rep(
    common: &CommonConfig,
    spec: &SyntheticSpec,
    rep: usize,
) -> Result<SyntheticRep> {
    let task_seed = common.seed.wrapping_add(1000 * rep as u64);
    let task: GpTask = sample_gp_task(&spec.task, task_seed)?;
    let mut out = SyntheticRep {
        rows: Vec::new(),
        failures: Vec::new(),
        noise_estimates: Vec::new(),
        curves: Vec::new(),
    };
    for (li, &noise_level) in common.noise_levels.iter().enumerate() {
        let noisy = inject_noise(&task.dataset, &[noise_level], task_seed ^ (0x100 + li as u64))?;
        let train_idx: Vec<usize> = (0..spec.n_train).collect();
        let test_idx: Vec<usize> = (spec.n_train..spec.n_train + spec.n_test).collect();
        let train = noisy.select(&train_idx);
        let test = noisy.select(&test_idx);

        // Bayes-optimal reference curve, once per repetition and level
        if spec.curves {
            let mut body = String::from("x");
            for c in 0..spec.task.num_classes {
                write!(body, "\tp{}", c).unwrap();
            }
            body.push('\n');
            for k in 0..spec.curve_grid {
                let x = spec.task.box_lo
                    + (spec.task.box_hi - spec.task.box_lo) * k as f64
                        / (spec.curve_grid - 1) as f64;
                let p = bayes_optimal_predictive(
                    &task.latent,
                    spec.task.num_classes,
                    &[x],
                    &[noise_level],
                    &crate::noise::PriorConfig::default(),
                )?;
                write!(body, "{:.6}", x).unwrap();
                for v in &p {
                    write!(body, "\t{:.6}", v).unwrap();
                }
                body.push('\n');
            }
            out.curves.push(("bayes".into(), noise_level, body));
        }

        for (mi, &method) in common.methods.iter().enumerate() {
            let mcfg = common.model_cfg(
                method,
                spec.task.num_classes,
                common.train.resolve_inducing(spec.n_train),
            );
            let mut tc = common.train.clone();
            tc.seed = task_seed ^ ((mi as u64) << 32) ^ (li as u64);
            let noise_spec = common.noise_spec(method, &train);
            let fitted = fit(
                mcfg,
                &tc,
                train.x_tilde.clone(),
                train.y.clone(),
                noise_spec,
            );
            let outcome = match fitted {
                Ok(o) => o,
                Err(e) => {
                    out.failures
                        .push((method.name().into(), rep, noise_level, e.to_string()));
                    continue;
                }
            };
            if let Some((e, s)) = outcome.aborted_at {
                out.failures.push((
                    method.name().into(),
                    rep,
                    noise_level,
                    format!("non-finite ELBO at epoch {} step {}", e, s),
                ));
                continue;
            }
            let model = outcome.model;
            let mut eval_rng = StdRng::seed_from_u64(tc.seed ^ 0x6576);
            match evaluate(&model, &test, rep, &mut eval_rng) {
                Ok(record) => out.rows.push(RecordRow {
                    noise: noise_level,
                    record,
                }),
                Err(e) => {
                    out.failures
                        .push((method.name().into(), rep, noise_level, e.to_string()));
                    continue;
                }
            }
            if let Some(v) = model.shared_noise() {
                out.noise_estimates.push((method.name().into(), noise_level, v));
            }
            if spec.curves {
                let mut grid = Mat::zeros(spec.curve_grid, 1);
                for k in 0..spec.curve_grid {
                    grid[(k, 0)] = spec.task.box_lo
                        + (spec.task.box_hi - spec.task.box_lo) * k as f64
                            / (spec.curve_grid - 1) as f64;
                }
                let v_star = match &model.noise {
                    InputNoiseSpec::PerInstanceKnown(_) => {
                        let mut v = Mat::zeros(spec.curve_grid, 1);
                        for k in 0..spec.curve_grid {
                            v[(k, 0)] = noise_level;
                        }
                        Some(v)
                    }
                    _ => None,
                };
                let mut curve_rng = StdRng::seed_from_u64(tc.seed ^ 0x6375);
                let probs = model.predict(&grid, v_star.as_ref(), &mut curve_rng)?;
                let mut body = String::from("x");
                for c in 0..spec.task.num_classes {
                    write!(body, "\tp{}", c).unwrap();
                }
                body.push('\n');
                for k in 0..spec.curve_grid {
                    write!(body, "{:.6}", grid[(k, 0)]).unwrap();
                    for v in &probs[k] {
                        write!(body, "\t{:.6}", v).unwrap();
                    }
                    body.push('\n');
                }
                out.curves.push((method.name().into(), noise_level, body));
            }
        }
    }
    Ok(out)
}

/// Synthetic experiments (the 1-d toy task and the d-dimensional variants):
/// one GP task per repetition, every method fitted on the same noisy copy.
pub fn run_synthetic(common: &CommonConfig, spec: &SyntheticSpec) -> Result<ExperimentOutput> {
    ensure_dir(&common.out_dir)?;
    let reps: Vec<Result<SyntheticRep>> = (0..common.repetitions)
        .into_par_iter()
        .map(|rep| run_one_synthetic_rep(common, spec, rep))
        .collect();
    let mut out = ExperimentOutput::default();
    let mut noise_estimates = Vec::new();
    for (rep, r) in reps.into_iter().enumerate() {
        let r = r?;
        out.rows.extend(r.rows);
        out.failures.extend(r.failures);
        for (m, lvl, v) in r.noise_estimates {
            noise_estimates.push((m, rep, lvl, v));
        }
        for (m, lvl, body) in r.curves {
            write_file(
                &common.out_dir,
                &format!("curve_rep{}_noise{}_{}.tsv", rep, lvl, m),
                &body,
                &mut out.files,
            )?;
        }
    }
    if !noise_estimates.is_empty() {
        let d = noise_estimates[0].3.len();
        let mut body = String::from("method\trep\tnoise");
        for j in 0..d {
            write!(body, "\tv{}", j).unwrap();
        }
        body.push('\n');
        for (m, rep, lvl, v) in &noise_estimates {
            write!(body, "{}\t{}\t{}", m, rep, lvl).unwrap();
            for t in v {
                write!(body, "\t{:.8}", t).unwrap();
            }
            body.push('\n');
        }
        write_file(&common.out_dir, "noise_estimates.tsv", &body, &mut out.files)?;
    }
    write_metrics_and_aggregate(
        &mut out,
        &common.out_dir.clone(),
        &common.methods,
        &common.noise_levels,
        true,
        common.seed,
    )?;
    Ok(out)
}

/// Dimension/size/class sweeps over the synthetic generator.
pub fn run_sweep(
    common: &CommonConfig,
    dims: &[usize],
    train_sizes: &[usize],
    class_counts: &[usize],
    n_test: usize,
) -> Result<ExperimentOutput> {
    ensure_dir(&common.out_dir)?;
    let mut all = ExperimentOutput::default();
    let mut agg = String::from(
        "d\tn_train\tclasses\tmethod\tnoise\treps\tmean_error\tse_error\tmean_nll\tse_nll\n",
    );
    for &d in dims {
        for &n in train_sizes {
            for &c in class_counts {
                let spec = SyntheticSpec::general(d, c, n, n_test);
                let sub = CommonConfig {
                    out_dir: common.out_dir.join(format!("d{}_n{}_c{}", d, n, c)),
                    ..common.clone()
                };
                let out = run_synthetic(&sub, &spec)?;
                for &noise in &common.noise_levels {
                    for method in &common.methods {
                        let errs: Vec<f64> = out
                            .rows
                            .iter()
                            .filter(|r| r.record.method == method.name() && r.noise == noise)
                            .map(|r| r.record.test_error)
                            .collect();
                        let nlls: Vec<f64> = out
                            .rows
                            .iter()
                            .filter(|r| r.record.method == method.name() && r.noise == noise)
                            .map(|r| r.record.test_nll)
                            .collect();
                        if errs.is_empty() {
                            continue;
                        }
                        writeln!(
                            agg,
                            "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                            d,
                            n,
                            c,
                            method.name(),
                            noise,
                            errs.len(),
                            mean(&errs),
                            standard_error(&errs),
                            mean(&nlls),
                            standard_error(&nlls)
                        )
                        .unwrap();
                    }
                }
                all.rows.extend(out.rows);
                all.failures.extend(out.failures);
                all.files.extend(out.files);
            }
        }
    }
    write_file(&common.out_dir, "sweep_aggregate.tsv", &agg, &mut all.files)?;
    Ok(all)
}

/// Noise injection on a tabular dataset: repeated 90/10 splits,
/// standardization fitted on the train part, noise injected afterwards,
/// mean ranks across methods.
pub fn run_tabular(common: &CommonConfig, data: &Dataset) -> Result<ExperimentOutput> {
    ensure_dir(&common.out_dir)?;
    struct TabularRep {
        rows: Vec<RecordRow>,
        failures: Vec<(String, usize, f64, String)>,
        noise_estimates: Vec<(String, f64, Vec<f64>)>,
    }
    let reps: Vec<Result<TabularRep>> = (0..common.repetitions)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = common.seed.wrapping_add(1000 * rep as u64);
            let parts = split(data, &[0.9, 0.1], rep_seed)?;
            let (standardized, _t) = standardize(&parts[0], &[&parts[1]])?;
            let mut out = TabularRep {
                rows: Vec::new(),
                failures: Vec::new(),
                noise_estimates: Vec::new(),
            };
            for (li, &noise_level) in common.noise_levels.iter().enumerate() {
                let (train, test) = if noise_level > 0.0 {
                    (
                        inject_noise(&standardized[0], &[noise_level], rep_seed ^ (0x200 + li as u64))?,
                        inject_noise(&standardized[1], &[noise_level], rep_seed ^ (0x300 + li as u64))?,
                    )
                } else {
                    (standardized[0].clone(), standardized[1].clone())
                };
                for (mi, &method) in common.methods.iter().enumerate() {
                    let mcfg = common.model_cfg(
                        method,
                        data.meta.num_classes,
                        common.train.resolve_inducing(train.n()),
                    );
                    let mut tc = common.train.clone();
                    tc.seed = rep_seed ^ ((mi as u64) << 32) ^ (li as u64);
                    let noise_spec = common.noise_spec(method, &train);
                    match fit(mcfg, &tc, train.x_tilde.clone(), train.y.clone(), noise_spec) {
                        Ok(o) if o.aborted_at.is_none() => {
                            let mut eval_rng = StdRng::seed_from_u64(tc.seed ^ 0x6576);
                            match evaluate(&o.model, &test, rep, &mut eval_rng) {
                                Ok(record) => {
                                    if let Some(v) = o.model.shared_noise() {
                                        out.noise_estimates.push((
                                            method.name().into(),
                                            noise_level,
                                            v,
                                        ));
                                    }
                                    out.rows.push(RecordRow {
                                        noise: noise_level,
                                        record,
                                    });
                                }
                                Err(e) => out.failures.push((
                                    method.name().into(),
                                    rep,
                                    noise_level,
                                    e.to_string(),
                                )),
                            }
                        }
                        Ok(o) => {
                            let (e, s) = o.aborted_at.unwrap();
                            out.failures.push((
                                method.name().into(),
                                rep,
                                noise_level,
                                format!("non-finite ELBO at epoch {} step {}", e, s),
                            ));
                        }
                        Err(e) => out.failures.push((
                            method.name().into(),
                            rep,
                            noise_level,
                            e.to_string(),
                        )),
                    }
                }
            }
            Ok(out)
        })
        .collect();

    let mut out = ExperimentOutput::default();
    let mut noise_estimates = Vec::new();
    for (rep, r) in reps.into_iter().enumerate() {
        let r = r?;
        out.rows.extend(r.rows);
        out.failures.extend(r.failures);
        for (m, lvl, v) in r.noise_estimates {
            noise_estimates.push((m, rep, lvl, v));
        }
    }
    if !noise_estimates.is_empty() {
        let d = noise_estimates[0].3.len();
        let mut body = String::from("method\trep\tnoise");
        for j in 0..d {
            write!(body, "\tv{}", j).unwrap();
        }
        body.push('\n');
        for (m, rep, lvl, v) in &noise_estimates {
            write!(body, "{}\t{}\t{}", m, rep, lvl).unwrap();
            for t in v {
                write!(body, "\t{:.8}", t).unwrap();
            }
            body.push('\n');
        }
        write_file(&common.out_dir, "noise_estimates.tsv", &body, &mut out.files)?;
    }

    // mean ranks per noise level over repetitions present for all methods
    let mut rank_body = String::from("noise\tmethod\trank_nll\trank_error\n");
    for &noise in &common.noise_levels {
        let reps_ok: Vec<usize> = (0..common.repetitions)
            .filter(|&rep| {
                common.methods.iter().all(|m| {
                    out.rows.iter().any(|r| {
                        r.record.method == m.name()
                            && r.record.repetition == rep
                            && r.noise == noise
                    })
                })
            })
            .collect();
        if reps_ok.is_empty() {
            continue;
        }
        let grab = |f: &dyn Fn(&MetricsRecord) -> f64| {
            let mut vals = Mat::zeros(common.methods.len(), reps_ok.len());
            for (mi, m) in common.methods.iter().enumerate() {
                for (ri, &rep) in reps_ok.iter().enumerate() {
                    let r = out
                        .rows
                        .iter()
                        .find(|r| {
                            r.record.method == m.name()
                                && r.record.repetition == rep
                                && r.noise == noise
                        })
                        .unwrap();
                    vals[(mi, ri)] = f(&r.record);
                }
            }
            vals
        };
        let rank_nll = mean_rank(&grab(&|r| r.test_nll));
        let rank_err = mean_rank(&grab(&|r| r.test_error));
        for (mi, m) in common.methods.iter().enumerate() {
            writeln!(
                rank_body,
                "{}\t{}\t{:.4}\t{:.4}",
                noise,
                m.name(),
                rank_nll[mi],
                rank_err[mi]
            )
            .unwrap();
        }
    }
    write_file(&common.out_dir, "mean_rank.tsv", &rank_body, &mut out.files)?;
    write_metrics_and_aggregate(
        &mut out,
        &common.out_dir.clone(),
        &common.methods,
        &common.noise_levels,
        false,
        common.seed,
    )?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ActiveExperimentConfig {
    pub strategies: Vec<Strategy>,
    pub initial_train: usize,
    pub n_test: usize,
    pub pool: usize,
    pub points_added: usize,
    pub initial_epochs: usize,
    pub refit_epochs: usize,
    pub task_dim: usize,
    pub task_classes: usize,
}

impl Default for ActiveExperimentConfig {
    fn default() -> Self {
        ActiveExperimentConfig {
            strategies: vec![Strategy::Entropy, Strategy::Random],
            initial_train: 100,
            n_test: 500,
            pool: 400,
            points_added: 50,
            initial_epochs: 300,
            refit_epochs: 30,
            task_dim: 2,
            task_classes: 3,
        }
    }
}

/// Active-learning comparison on a synthetic stand-in task (configurable so
/// tabular data can be dropped in through the CLI).
pub fn run_active(
    common: &CommonConfig,
    acfg: &ActiveExperimentConfig,
    tabular: Option<&Dataset>,
) -> Result<ExperimentOutput> {
    ensure_dir(&common.out_dir)?;
    let noise_level = common.noise_levels.first().copied().unwrap_or(0.1);
    type RepOut = Vec<(String, String, usize, Vec<f64>)>;
    let reps: Vec<Result<RepOut>> = (0..common.repetitions)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = common.seed.wrapping_add(1000 * rep as u64);
            let total = acfg.initial_train + acfg.n_test + acfg.pool;
            let noisy = match tabular {
                Some(d) => {
                    let parts = split(d, &[0.5, 0.5], rep_seed)?; // placeholder fractions
                    let _ = parts;
                    return Err(Error::contract(
                        "tabular active learning goes through explicit splits; use the synthetic task",
                    ));
                }
                None => {
                    let cfg = SyntheticConfig::new(total, acfg.task_dim, acfg.task_classes);
                    let task = sample_gp_task(&cfg, rep_seed)?;
                    inject_noise(&task.dataset, &[noise_level], rep_seed ^ 0x400)?
                }
            };
            let train_idx: Vec<usize> = (0..acfg.initial_train).collect();
            let test_idx: Vec<usize> =
                (acfg.initial_train..acfg.initial_train + acfg.n_test).collect();
            let pool_idx: Vec<usize> =
                (acfg.initial_train + acfg.n_test..total).collect();
            let train = noisy.select(&train_idx);
            let test = noisy.select(&test_idx);
            let pool = noisy.select(&pool_idx);
            let mut curves = Vec::new();
            for (mi, &method) in common.methods.iter().enumerate() {
                for &strategy in &acfg.strategies {
                    let cfg = ActiveConfig {
                        strategy,
                        noise_mode: common.noise_mode,
                        points_added: acfg.points_added,
                        initial_epochs: acfg.initial_epochs,
                        refit_epochs: acfg.refit_epochs,
                        train_cfg: common.train.clone(),
                        model_cfg: common.model_cfg(
                            method,
                            acfg.task_classes,
                            common.train.resolve_inducing(acfg.initial_train),
                        ),
                        seed: rep_seed ^ ((mi as u64) << 24) ^ (strategy as u64) << 16,
                    };
                    let curve = active_learning_run(&cfg, &train, &test, &pool)?;
                    curves.push((
                        method.name().to_string(),
                        strategy.name().to_string(),
                        rep,
                        curve,
                    ));
                }
            }
            Ok(curves)
        })
        .collect();

    let mut out = ExperimentOutput::default();
    let mut body = String::from("method\tstrategy\trep\tstep\terror\n");
    for r in reps {
        for (method, strategy, rep, curve) in r? {
            for (step, err) in curve.iter().enumerate() {
                writeln!(body, "{}\t{}\t{}\t{}\t{:.6}", method, strategy, rep, step, err).unwrap();
            }
        }
    }
    write_file(&common.out_dir, "active_curves.tsv", &body, &mut out.files)?;
    Ok(out)
}

/// Two-digit IDX subset run: filter, take the leading instances, standardize
/// on the train part, fit and score.
pub fn run_mnist_subset(
    common: &CommonConfig,
    images: &Path,
    labels: &Path,
    digits: (usize, usize),
    n_train: usize,
    n_test: usize,
) -> Result<ExperimentOutput> {
    ensure_dir(&common.out_dir)?;
    let full = crate::data::load_idx(images, labels)?;
    let keep: Vec<usize> = (0..full.n())
        .filter(|&i| full.y[i] == digits.0 || full.y[i] == digits.1)
        .take(n_train + n_test)
        .collect();
    if keep.len() < n_train + n_test {
        return Err(Error::contract(format!(
            "only {} instances of digits {:?} available, need {}",
            keep.len(),
            digits,
            n_train + n_test
        )));
    }
    let mut sub = full.select(&keep);
    sub.y = sub
        .y
        .iter()
        .map(|&y| if y == digits.0 { 0 } else { 1 })
        .collect();
    sub.meta.num_classes = 2;
    sub.meta.label_map = vec![digits.0.to_string(), digits.1.to_string()];
    let train_idx: Vec<usize> = (0..n_train).collect();
    let test_idx: Vec<usize> = (n_train..n_train + n_test).collect();
    let train_raw = sub.select(&train_idx);
    let test_raw = sub.select(&test_idx);
    let (standardized, _t) = standardize(&train_raw, &[&test_raw])?;
    let (train, test) = (standardized[0].clone(), standardized[1].clone());

    let mut out = ExperimentOutput::default();
    for (mi, &method) in common.methods.iter().enumerate() {
        let mcfg = common.model_cfg(method, 2, common.train.resolve_inducing(train.n()));
        let mut tc = common.train.clone();
        tc.seed = common.seed ^ ((mi as u64) << 32);
        let noise_spec = common.noise_spec(method, &train);
        let outcome = fit(mcfg, &tc, train.x_tilde.clone(), train.y.clone(), noise_spec)?;
        let mut eval_rng = StdRng::seed_from_u64(tc.seed ^ 0x6576);
        let record = evaluate(&outcome.model, &test, 0, &mut eval_rng)?;
        out.rows.push(RecordRow {
            noise: 0.0,
            record,
        });
    }
    write_metrics_and_aggregate(
        &mut out,
        &common.out_dir.clone(),
        &common.methods,
        &[0.0],
        false,
        common.seed,
    )?;
    Ok(out)
}

/// The gradient check the acceptance gate runs: a small model per method,
/// every parameter segment against central finite differences.
pub fn run_gradcheck(step: f64) -> Result<Vec<(Method, crate::train::FiniteDiffReport)>> {
    let mut rng = StdRng::seed_from_u64(123);
    let n = 20;
    let d = 2;
    let mut x = Mat::zeros(n, d);
    for v in x.data.iter_mut() {
        *v = rng.gen_range(-2.0..2.0);
    }
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
    let mut reports = Vec::new();
    for method in [Method::Mgp, Method::Nimgp, Method::NimgpNn, Method::NimgpFo] {
        let noise = if method == Method::Mgp {
            InputNoiseSpec::None
        } else {
            let mut v = Mat::zeros(n, d);
            for t in v.data.iter_mut() {
                *t = 0.1;
            }
            InputNoiseSpec::PerInstanceKnown(v)
        };
        let mut cfg = ModelConfig::new(method, 3, 5);
        cfg.nn_hidden = vec![8];
        let mut model = Model::init(cfg, x.clone(), labels.clone(), noise, 7)?;
        for (k, v) in model.theta.iter_mut().enumerate() {
            *v += 0.05 * ((k as f64 * 0.7).sin());
        }
        let latent = method.uses_latent_inputs();
        let mut eps_rng = StdRng::seed_from_u64(55);
        let inputs = StepInputs {
            eps: if latent {
                let mut m = Mat::zeros(n, d);
                for v in m.data.iter_mut() {
                    *v = eps_rng.sample(rand_distr::StandardNormal);
                }
                Some(m)
            } else {
                None
            },
            x_override: None,
        };
        let batch: Vec<usize> = (0..n).collect();
        let tol = if method == Method::NimgpFo { 1e-3 } else { 1e-4 };
        let report = finite_diff_report(&model, &batch, &inputs, step, tol)?;
        reports.push((method, report));
    }
    Ok(reports)
}
