//! Experiment harness for sparse multi-class GP classification with noisy
//! inputs. Every subcommand writes deterministic plain-text result files
//! into the output directory; wall-clock timing goes to stderr only.

use clap::{Args, Parser, Subcommand};
use nimgp::data::{load_delimited, DelimitedSchema};
use nimgp::error::Result;
use nimgp::experiments::active::Strategy;
use nimgp::experiments::{
    run_active, run_gradcheck, run_mnist_subset, run_sweep, run_synthetic, run_tabular,
    ActiveExperimentConfig, CommonConfig, NoiseMode, SyntheticSpec,
};
use nimgp::kernel::KernelFamily;
use nimgp::model::Method;
use nimgp::train::Baseline;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "nimgp",
    about = "Multi-class GP classification with noisy inputs: experiment harness"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// Methods to run (repeat the flag): mgp, nimgp, nimgp-nn, nimgp-fo
    #[arg(long = "method")]
    methods: Vec<String>,
    /// Input-noise variance levels (repeat the flag)
    #[arg(long = "noise")]
    noise: Vec<f64>,
    /// How the model treats the noise variance: known | learned
    #[arg(long = "noise-mode", default_value = "known")]
    noise_mode: String,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Inducing points per class (default: min(100, ceil(0.05 N)))
    #[arg(long)]
    inducing: Option<usize>,
    /// Monte Carlo samples for the NIMGP-family predictive
    #[arg(long = "mc-samples")]
    mc_samples: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Plain-GP baseline mode: augment | resample
    #[arg(long)]
    baseline: Option<String>,
    /// Kernel family: se-ard | poly-ard
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long = "quad-points")]
    quad_points: Option<usize>,
}

impl Common {
    fn build(
        &self,
        default_epochs: usize,
        default_batch: usize,
        default_mc: usize,
        default_noise: &[f64],
    ) -> Result<CommonConfig> {
        let methods = if self.methods.is_empty() {
            vec![Method::Mgp, Method::Nimgp, Method::NimgpNn, Method::NimgpFo]
        } else {
            self.methods
                .iter()
                .map(|m| Method::parse(m))
                .collect::<Result<Vec<_>>>()?
        };
        let mut cfg = CommonConfig::new(self.out.clone());
        cfg.methods = methods;
        cfg.noise_levels = if self.noise.is_empty() {
            default_noise.to_vec()
        } else {
            self.noise.clone()
        };
        cfg.noise_mode = NoiseMode::parse(&self.noise_mode)?;
        cfg.repetitions = self.reps;
        cfg.seed = self.seed;
        cfg.train.epochs = self.epochs.unwrap_or(default_epochs);
        cfg.train.batch_size = self.batch.unwrap_or(default_batch);
        if let Some(lr) = self.lr {
            cfg.train.learning_rate = lr;
        }
        cfg.train.num_inducing = self.inducing;
        cfg.train.seed = self.seed;
        cfg.mc_predict_samples = self.mc_samples.unwrap_or(default_mc);
        if let Some(q) = self.quad_points {
            cfg.quad_points = q;
        }
        if let Some(k) = &self.kernel {
            cfg.kernel_family = match k.as_str() {
                "se-ard" => KernelFamily::SquaredExponentialArd,
                "poly-ard" => KernelFamily::PolynomialArd,
                other => {
                    return Err(nimgp::Error::contract(format!(
                        "unknown kernel '{}'",
                        other
                    )))
                }
            };
        }
        if let Some(b) = &self.baseline {
            cfg.train.baseline = Some(match b.as_str() {
                "augment" => Baseline::Augment {
                    draws_per_instance: 1,
                },
                "resample" => Baseline::Resample,
                other => {
                    return Err(nimgp::Error::contract(format!(
                        "unknown baseline '{}'",
                        other
                    )))
                }
            });
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// One-dimensional three-class task with Bayes-optimal reference curves
    Toy1d {
        #[command(flatten)]
        common: Common,
    },
    /// Synthetic GP tasks of configurable dimension and class count
    Synthetic {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long = "n-train", default_value_t = 1000)]
        n_train: usize,
        #[arg(long = "n-test", default_value_t = 1000)]
        n_test: usize,
    },
    /// Grid of synthetic configurations (dimensions x sizes x classes)
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long = "dim", default_values_t = [2usize, 5, 10])]
        dims: Vec<usize>,
        #[arg(long = "n", default_values_t = [100usize, 500, 1000])]
        ns: Vec<usize>,
        #[arg(long = "classes", default_values_t = [3usize])]
        classes: Vec<usize>,
        #[arg(long = "n-test", default_value_t = 1000)]
        n_test: usize,
    },
    /// Noise injection on a delimited tabular file (90/10 splits)
    Tabular {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        file: PathBuf,
        /// Label column name
        #[arg(long = "label-col")]
        label_col: String,
        /// Comma-separated feature column names (default: all but the label)
        #[arg(long)]
        features: Option<String>,
        /// feature:errorbar column pairs (repeat the flag)
        #[arg(long)]
        errbar: Vec<String>,
        #[arg(long, default_value_t = ',')]
        delimiter: char,
    },
    /// Active learning with entropy vs random acquisition
    Active {
        #[command(flatten)]
        common: Common,
        #[arg(long = "strategy")]
        strategies: Vec<String>,
        #[arg(long = "init-train", default_value_t = 100)]
        init_train: usize,
        #[arg(long = "n-test", default_value_t = 500)]
        n_test: usize,
        #[arg(long, default_value_t = 400)]
        pool: usize,
        #[arg(long, default_value_t = 50)]
        add: usize,
        #[arg(long = "init-epochs", default_value_t = 300)]
        init_epochs: usize,
        #[arg(long = "refit-epochs", default_value_t = 30)]
        refit_epochs: usize,
    },
    /// Two-digit IDX subset smoke run
    MnistSubset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "0,1")]
        digits: String,
        #[arg(long = "n-train", default_value_t = 2000)]
        n_train: usize,
        #[arg(long = "n-test", default_value_t = 500)]
        n_test: usize,
    },
    /// Finite-difference check of the gradient engine on every method
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
}

fn main() {
    let cli = Cli::parse();
    let start = Instant::now();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e);
            1
        }
    };
    eprintln!("wall time: {:.1}s", start.elapsed().as_secs_f64());
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Cmd::Toy1d { common } => {
            let cfg = common.build(750, 200, 700, &[0.1])?;
            let out = run_synthetic(&cfg, &SyntheticSpec::toy_1d())?;
            eprintln!(
                "toy1d: {} records, {} failures, {} files in {}",
                out.rows.len(),
                out.failures.len(),
                out.files.len(),
                cfg.out_dir.display()
            );
            Ok(0)
        }
        Cmd::Synthetic {
            common,
            dim,
            classes,
            n_train,
            n_test,
        } => {
            let cfg = common.build(750, 200, 300, &[0.1])?;
            let spec = SyntheticSpec::general(dim, classes, n_train, n_test);
            let out = run_synthetic(&cfg, &spec)?;
            eprintln!(
                "synthetic d={} c={}: {} records, {} failures in {}",
                dim,
                classes,
                out.rows.len(),
                out.failures.len(),
                cfg.out_dir.display()
            );
            Ok(0)
        }
        Cmd::Sweep {
            common,
            dims,
            ns,
            classes,
            n_test,
        } => {
            let cfg = common.build(750, 200, 300, &[0.1])?;
            let out = run_sweep(&cfg, &dims, &ns, &classes, n_test)?;
            eprintln!(
                "sweep: {} records, {} failures in {}",
                out.rows.len(),
                out.failures.len(),
                cfg.out_dir.display()
            );
            Ok(0)
        }
        Cmd::Tabular {
            common,
            file,
            label_col,
            features,
            errbar,
            delimiter,
        } => {
            let cfg = common.build(1000, 50, 300, &[0.0, 0.1, 0.25, 0.5])?;
            let feature_cols: Vec<String> = match features {
                Some(f) => f.split(',').map(str::to_string).collect(),
                None => {
                    let head = std::fs::read_to_string(&file)
                        .map_err(|e| nimgp::Error::io(file.display().to_string(), e))?;
                    head.lines()
                        .next()
                        .unwrap_or_default()
                        .split(delimiter)
                        .map(str::trim)
                        .filter(|c| *c != label_col && !c.is_empty())
                        .map(str::to_string)
                        .collect()
                }
            };
            let mut schema = DelimitedSchema::new(label_col, feature_cols);
            schema.delimiter = delimiter;
            for pair in errbar {
                let mut it = pair.splitn(2, ':');
                match (it.next(), it.next()) {
                    (Some(f), Some(e)) => schema
                        .errorbar_columns
                        .push((f.to_string(), e.to_string())),
                    _ => {
                        return Err(nimgp::Error::contract(
                            "errbar takes feature:errorbar_column pairs",
                        ))
                    }
                }
            }
            // when features were auto-listed, error-bar columns are not
            // themselves features
            schema
                .feature_columns
                .retain(|c| !schema.errorbar_columns.iter().any(|(_, e)| e == c));
            let data = load_delimited(&file, &schema)?;
            let out = run_tabular(&cfg, &data)?;
            eprintln!(
                "tabular {}: {} records, {} failures in {}",
                data.meta.name,
                out.rows.len(),
                out.failures.len(),
                cfg.out_dir.display()
            );
            Ok(0)
        }
        Cmd::Active {
            common,
            strategies,
            init_train,
            n_test,
            pool,
            add,
            init_epochs,
            refit_epochs,
        } => {
            let lr = common.lr;
            let inducing = common.inducing;
            let mut cfg = common.build(300, 50, 300, &[0.1])?;
            cfg.train.learning_rate = lr.unwrap_or(1e-3);
            cfg.train.num_inducing = Some(inducing.unwrap_or(50));
            let strategies = if strategies.is_empty() {
                vec![Strategy::Entropy, Strategy::Random]
            } else {
                strategies
                    .iter()
                    .map(|s| Strategy::parse(s))
                    .collect::<Result<Vec<_>>>()?
            };
            let acfg = ActiveExperimentConfig {
                strategies,
                initial_train: init_train,
                n_test,
                pool,
                points_added: add,
                initial_epochs: init_epochs,
                refit_epochs,
                ..ActiveExperimentConfig::default()
            };
            let out = run_active(&cfg, &acfg, None)?;
            eprintln!(
                "active: {} files in {}",
                out.files.len(),
                cfg.out_dir.display()
            );
            Ok(0)
        }
        Cmd::MnistSubset {
            common,
            images,
            labels,
            digits,
            n_train,
            n_test,
        } => {
            let mut it = digits.splitn(2, ',');
            let d0: usize = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| nimgp::Error::contract("digits takes a,b"))?;
            let d1: usize = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| nimgp::Error::contract("digits takes a,b"))?;
            let no_methods = common.methods.is_empty();
            let mut cfg = common.build(30, 200, 500, &[0.0])?;
            if no_methods {
                cfg.methods = vec![Method::Mgp];
            }
            let out = run_mnist_subset(&cfg, &images, &labels, (d0, d1), n_train, n_test)?;
            for row in &out.rows {
                eprintln!(
                    "mnist-subset {}: error {:.4} nll {:.4}",
                    row.record.method, row.record.test_error, row.record.test_nll
                );
            }
            Ok(0)
        }
        Cmd::Gradcheck { step } => {
            let reports = run_gradcheck(step)?;
            let mut all_pass = true;
            for (method, report) in &reports {
                for seg in &report.segments {
                    println!(
                        "{}\t{}\tmax_rel_err {:.3e}\tanalytic {:.6e}\tfd {:.6e}",
                        method.name(),
                        seg.name,
                        seg.max_rel_err,
                        seg.analytic,
                        seg.finite_diff
                    );
                }
                let pass = report.pass();
                println!(
                    "{}\t{}\t(worst {:.3e}, tolerance {:.1e})",
                    method.name(),
                    if pass { "PASS" } else { "FAIL" },
                    report.worst(),
                    report.tolerance
                );
                all_pass &= pass;
            }
            Ok(if all_pass { 0 } else { 2 })
        }
    }
}
