//! Acceptance suite: the desk-scale reproduction gates. Each test prints one
//! PASS line with the measured quantities; tolerances are pinned in the
//! assertions. The heavy experiments are shared between related criteria
//! through lazy statics.

use nimgp::data::synthetic::{sample_gp_task, SyntheticConfig};
use nimgp::data::{inject_noise, load_idx, write_idx_images, write_idx_labels};
use nimgp::experiments::active::Strategy;
use nimgp::experiments::metrics::mean;
use nimgp::experiments::{
    run_active, run_gradcheck, run_mnist_subset, run_synthetic, ActiveExperimentConfig,
    CommonConfig, ExperimentOutput, NoiseMode, SyntheticSpec,
};
use nimgp::kernel::KernelFamily;
use nimgp::likelihood::{
    class_probabilities, expected_loglik, gauss_hermite_rule, winner_prob, LikelihoodConfig,
};
use nimgp::linalg::Mat;
use nimgp::model::{Method, Model, ModelConfig};
use nimgp::noise::{kl_x, InputNoiseSpec, PriorConfig};
use nimgp::svgp::{kl_u, VariationalGaussianU};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

const REPS: usize = 10;

fn work_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("nimgp-acceptance").join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn rows_for<'a>(
    out: &'a ExperimentOutput,
    method: Method,
) -> Vec<&'a nimgp::experiments::RecordRow> {
    let mut rows: Vec<_> = out
        .rows
        .iter()
        .filter(|r| r.record.method == method.name())
        .collect();
    rows.sort_by_key(|r| r.record.repetition);
    rows
}

fn mean_nll(out: &ExperimentOutput, method: Method) -> f64 {
    mean(
        &rows_for(out, method)
            .iter()
            .map(|r| r.record.test_nll)
            .collect::<Vec<_>>(),
    )
}

fn mean_err(out: &ExperimentOutput, method: Method) -> f64 {
    mean(
        &rows_for(out, method)
            .iter()
            .map(|r| r.record.test_error)
            .collect::<Vec<_>>(),
    )
}

// ---------------------------------------------------------------- toy 1-d

struct ToyShared {
    out: ExperimentOutput,
    dir: PathBuf,
}

static TOY: OnceLock<ToyShared> = OnceLock::new();

fn toy() -> &'static ToyShared {
    TOY.get_or_init(|| {
        let dir = work_dir("toy1d");
        let mut cfg = CommonConfig::new(dir.clone());
        cfg.repetitions = REPS;
        cfg.seed = 20260808;
        cfg.noise_levels = vec![0.1];
        cfg.noise_mode = NoiseMode::Known;
        cfg.train.epochs = 750;
        cfg.train.batch_size = 200;
        cfg.train.num_inducing = Some(100);
        cfg.mc_predict_samples = 700;
        let out = run_synthetic(&cfg, &SyntheticSpec::toy_1d()).expect("toy experiment");
        assert!(
            out.failures.is_empty(),
            "toy repetitions failed: {:?}",
            out.failures
        );
        ToyShared { out, dir }
    })
}

fn read_curve(path: &Path) -> Vec<Vec<f64>> {
    let content = std::fs::read_to_string(path).unwrap();
    content
        .lines()
        .skip(1)
        .map(|l| l.split('\t').map(|v| v.parse().unwrap()).collect())
        .collect()
}

/// Criterion 1: toy-1d reproduction bands.
#[test]
fn criterion_1_toy_reproduction() {
    let t = toy();
    let methods = [Method::Mgp, Method::Nimgp, Method::NimgpNn, Method::NimgpFo];
    for m in methods {
        let e = mean_err(&t.out, m);
        assert!(
            (0.09..=0.165).contains(&e),
            "{} mean error {} outside [0.09, 0.165]",
            m.name(),
            e
        );
    }
    let nll_mgp = mean_nll(&t.out, Method::Mgp);
    let nll_nimgp = mean_nll(&t.out, Method::Nimgp);
    let nll_nn = mean_nll(&t.out, Method::NimgpNn);
    let nll_fo = mean_nll(&t.out, Method::NimgpFo);
    assert!(nll_mgp > 0.60, "mean NLL(mgp) {} <= 0.60", nll_mgp);
    assert!(nll_nimgp < 0.45, "mean NLL(nimgp) {} >= 0.45", nll_nimgp);
    // per-repetition wins
    let mgp_rows = rows_for(&t.out, Method::Mgp);
    let ni_rows = rows_for(&t.out, Method::Nimgp);
    let wins = mgp_rows
        .iter()
        .zip(&ni_rows)
        .filter(|(m, n)| n.record.test_nll < m.record.test_nll)
        .count();
    assert!(wins >= 9, "nimgp beat mgp in only {}/10 repetitions", wins);
    // ordering up to one adjacent transposition
    let seq = [nll_nimgp, nll_nn, nll_fo, nll_mgp];
    let violations: Vec<usize> = (0..3).filter(|&i| seq[i] > seq[i + 1]).collect();
    let ok = match violations.len() {
        0 => true,
        1 => {
            let i = violations[0];
            let mut sw = seq;
            sw.swap(i, i + 1);
            (0..3).all(|j| sw[j] <= sw[j + 1])
        }
        _ => false,
    };
    assert!(ok, "NLL ordering too scrambled: {:?}", seq);
    println!(
        "criterion 1 PASS: errors in band, NLL mgp {:.3} nimgp {:.3} nn {:.3} fo {:.3}, wins {}/10",
        nll_mgp, nll_nimgp, nll_nn, nll_fo, wins
    );
}

/// Criterion 6: NIMGP tracks the Bayes-optimal probability curve better
/// than MGP on at least 8 of 10 seeds. Also checks the decision-boundary
/// agreement diagnostic (argmax match on >= 90% of the grid for >= 8 seeds).
#[test]
fn criterion_6_bayes_curve_agreement() {
    let t = toy();
    let mut nimgp_better = 0;
    let mut argmax_ok_mgp = 0;
    let mut argmax_ok_nimgp = 0;
    for rep in 0..REPS {
        let bayes = read_curve(&t.dir.join(format!("curve_rep{}_noise0.1_bayes.tsv", rep)));
        let mgp = read_curve(&t.dir.join(format!("curve_rep{}_noise0.1_mgp.tsv", rep)));
        let nimgp = read_curve(&t.dir.join(format!("curve_rep{}_noise0.1_nimgp.tsv", rep)));
        let mad = |curve: &Vec<Vec<f64>>| {
            let mut acc = 0.0;
            let mut n = 0;
            for (row, brow) in curve.iter().zip(&bayes) {
                for c in 1..4 {
                    acc += (row[c] - brow[c]).abs();
                    n += 1;
                }
            }
            acc / n as f64
        };
        if mad(&nimgp) < mad(&mgp) {
            nimgp_better += 1;
        }
        let agree = |curve: &Vec<Vec<f64>>| {
            let hits = curve
                .iter()
                .zip(&bayes)
                .filter(|(row, brow)| {
                    let am = |r: &Vec<f64>| {
                        (1..4)
                            .max_by(|&a, &b| r[a].partial_cmp(&r[b]).unwrap())
                            .unwrap()
                    };
                    am(row) == am(brow)
                })
                .count();
            hits as f64 / curve.len() as f64
        };
        if agree(&mgp) >= 0.90 {
            argmax_ok_mgp += 1;
        }
        if agree(&nimgp) >= 0.90 {
            argmax_ok_nimgp += 1;
        }
    }
    assert!(
        nimgp_better >= 8,
        "nimgp closer to the Bayes curve in only {}/10 seeds",
        nimgp_better
    );
    assert!(
        argmax_ok_mgp >= 8 && argmax_ok_nimgp >= 8,
        "decision boundaries disagree with the oracle too often (mgp {}, nimgp {})",
        argmax_ok_mgp,
        argmax_ok_nimgp
    );
    println!(
        "criterion 6 PASS: nimgp closer to Bayes in {}/10 seeds (argmax agreement mgp {} nimgp {})",
        nimgp_better, argmax_ok_mgp, argmax_ok_nimgp
    );
}

// ------------------------------------------------------- synthetic 2-d

static SYN_GIVEN: OnceLock<ExperimentOutput> = OnceLock::new();
static SYN_LEARNED: OnceLock<(ExperimentOutput, PathBuf)> = OnceLock::new();

fn synthetic_given() -> &'static ExperimentOutput {
    SYN_GIVEN.get_or_init(|| {
        let dir = work_dir("synthetic-given");
        let mut cfg = CommonConfig::new(dir);
        cfg.repetitions = REPS;
        cfg.seed = 20260809;
        cfg.noise_levels = vec![0.1];
        cfg.noise_mode = NoiseMode::Known;
        cfg.train.epochs = 750;
        cfg.train.batch_size = 200;
        cfg.train.num_inducing = Some(100);
        cfg.mc_predict_samples = 300;
        let out =
            run_synthetic(&cfg, &SyntheticSpec::general(2, 3, 1000, 1000)).expect("synthetic");
        assert!(out.failures.is_empty(), "failures: {:?}", out.failures);
        out
    })
}

fn synthetic_learned() -> &'static (ExperimentOutput, PathBuf) {
    SYN_LEARNED.get_or_init(|| {
        let dir = work_dir("synthetic-learned");
        let mut cfg = CommonConfig::new(dir.clone());
        cfg.methods = vec![Method::Nimgp, Method::NimgpNn, Method::NimgpFo];
        cfg.repetitions = REPS;
        cfg.seed = 20260809;
        cfg.noise_levels = vec![0.1];
        cfg.noise_mode = NoiseMode::Learned;
        cfg.train.epochs = 750;
        cfg.train.batch_size = 200;
        cfg.train.num_inducing = Some(100);
        cfg.mc_predict_samples = 300;
        let out =
            run_synthetic(&cfg, &SyntheticSpec::general(2, 3, 1000, 1000)).expect("synthetic");
        assert!(out.failures.is_empty(), "failures: {:?}", out.failures);
        (out, dir)
    })
}

/// Criterion 2: synthetic 2-d with known noise 0.1, as stated.
///
/// Two of the stated bands (mean NLL of the latent-input methods below
/// 0.15) sit below the Bayes-optimal floor of this task family: the oracle
/// that knows the generating process scores mean NLL ~0.26-0.42 here, and
/// any mean NLL is bounded below by error * ln 2 (~0.09 at the reported
/// error levels), so the source table's 0.0256/0.0265 cannot be a mean
/// negative log-likelihood alongside a 0.108 error (see the decisions
/// ledger). The attainable clauses are asserted first; the two impossible
/// clauses are asserted last, so this test reports their failure after the
/// rest of the criterion has been verified.
#[test]
fn criterion_2_synthetic_given_noise() {
    let out = synthetic_given();
    let nll_mgp = mean_nll(out, Method::Mgp);
    let nll_nimgp = mean_nll(out, Method::Nimgp);
    let nll_nn = mean_nll(out, Method::NimgpNn);
    let nll_fo = mean_nll(out, Method::NimgpFo);
    let errs = [
        mean_err(out, Method::Mgp),
        mean_err(out, Method::Nimgp),
        mean_err(out, Method::NimgpNn),
        mean_err(out, Method::NimgpFo),
    ];
    let spread = errs.iter().cloned().fold(f64::MIN, f64::max)
        - errs.iter().cloned().fold(f64::MAX, f64::min);
    println!(
        "criterion 2 measured: NLL mgp {:.3} nimgp {:.4} nn {:.4} fo {:.3}, errors {:?} (spread {:.4})",
        nll_mgp, nll_nimgp, nll_nn, nll_fo, errs, spread
    );
    assert!(nll_mgp > 0.55, "mean NLL(mgp) {} <= 0.55", nll_mgp);
    assert!(
        nll_fo > nll_nimgp.max(nll_nn) && nll_fo < nll_mgp,
        "NLL(fo) {} not between the latent methods ({}, {}) and mgp {}",
        nll_fo,
        nll_nimgp,
        nll_nn,
        nll_mgp
    );
    assert!(spread <= 0.03, "error spread {} > 0.03 ({:?})", spread, errs);
    println!(
        "criterion 2: ordering, MGP band and error spread PASS; asserting the sub-Bayes NLL bands next"
    );
    assert!(
        nll_nimgp < 0.15,
        "mean NLL(nimgp) {} >= 0.15 (Bayes-optimal floor on this task family is ~0.26-0.42; see decisions ledger)",
        nll_nimgp
    );
    assert!(
        nll_nn < 0.15,
        "mean NLL(nimgp-nn) {} >= 0.15 (Bayes-optimal floor on this task family is ~0.26-0.42; see decisions ledger)",
        nll_nn
    );
    println!("criterion 2 PASS");
}

/// Criterion 3: learned-noise behavior with true variance 0.1, as stated.
///
/// The amortized method must recover a variance in [0.03, 0.3] and the
/// first-order method must collapse toward zero; both clauses hold here.
/// The stated expectation that the explicit latent-input method also
/// collapses below 0.03 reproduces a behavior of the source implementation
/// that follows from its printed observation term (V in place of 1/V, which
/// makes the objective monotonically favor V -> 0). With the correct
/// Gaussian expected log-density mandated elsewhere in the build, that
/// method is a consistent estimator and recovers the true variance instead
/// (see the decisions ledger). That clause is asserted last.
#[test]
fn criterion_3_learned_noise_recovery() {
    let (_, dir) = synthetic_learned();
    let content = std::fs::read_to_string(dir.join("noise_estimates.tsv")).unwrap();
    let mut per_method: HashMap<String, Vec<f64>> = HashMap::new();
    for line in content.lines().skip(1) {
        let fields: Vec<&str> = line.split('\t').collect();
        let vs: Vec<f64> = fields[3..].iter().map(|v| v.parse().unwrap()).collect();
        per_method
            .entry(fields[0].to_string())
            .or_default()
            .push(mean(&vs));
    }
    let in_range = |m: &str, lo: f64, hi: f64| {
        per_method
            .get(m)
            .map(|vals| vals.iter().filter(|&&v| v >= lo && v <= hi).count())
            .unwrap_or(0)
    };
    let nn_ok = in_range("nimgp-nn", 0.03, 0.3);
    let nimgp_small = in_range("nimgp", 0.0, 0.03);
    let fo_small = in_range("nimgp-fo", 0.0, 0.03);
    println!(
        "criterion 3 measured: nn in [0.03,0.3] {}/10, nimgp < 0.03 {}/10 (estimates {:?}), fo < 0.03 {}/10",
        nn_ok,
        nimgp_small,
        per_method.get("nimgp"),
        fo_small
    );
    assert!(nn_ok >= 7, "nimgp-nn recovered the noise in only {}/10 runs", nn_ok);
    assert!(fo_small >= 7, "nimgp-fo collapsed the noise in only {}/10 runs", fo_small);
    println!("criterion 3: amortized recovery and first-order collapse PASS; asserting the explicit-latent collapse clause next");
    assert!(
        nimgp_small >= 7,
        "nimgp collapsed the noise in only {}/10 runs; with the correct observation term it estimates the true variance (see decisions ledger)",
        nimgp_small
    );
    println!("criterion 3 PASS");
}

/// Criterion 4: the finite-difference gradient check on every method.
#[test]
fn criterion_4_gradient_correctness() {
    let start = std::time::Instant::now();
    let reports = run_gradcheck(1e-5).unwrap();
    for (method, report) in &reports {
        assert!(
            report.pass(),
            "{} gradcheck failed: worst {:?}",
            method.name(),
            report
                .segments
                .iter()
                .max_by(|a, b| a.max_rel_err.partial_cmp(&b.max_rel_err).unwrap())
        );
    }
    let wall = start.elapsed().as_secs_f64();
    assert!(wall < 60.0, "gradcheck took {:.1}s", wall);
    println!(
        "criterion 4 PASS: gradcheck methods {:?} in {:.1}s",
        reports
            .iter()
            .map(|(m, r)| format!("{} worst {:.2e}", m.name(), r.worst()))
            .collect::<Vec<_>>(),
        wall
    );
}

// ------------------------------------------------------ oracle equivalences

/// Criterion 5a: quadrature class probabilities and expected log-likelihood
/// against 1e7-sample Monte Carlo on 50 random cases.
#[test]
fn criterion_5a_quadrature_vs_monte_carlo() {
    let mut rng = StdRng::seed_from_u64(5050);
    let quad = gauss_hermite_rule(16).unwrap();
    let n = 10_000_000usize;
    for case in 0..50 {
        let c_n = rng.gen_range(2..4usize);
        let means: Vec<f64> = (0..c_n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let base: f64 = rng.gen_range(0.3..1.5);
        let vars: Vec<f64> = (0..c_n).map(|_| base * rng.gen_range(0.85..1.18)).collect();
        let mut counts = vec![0usize; c_n];
        for _ in 0..n {
            let mut best = 0;
            let mut bestv = f64::NEG_INFINITY;
            for c in 0..c_n {
                let e: f64 = rng.sample(StandardNormal);
                let f = means[c] + vars[c].sqrt() * e;
                if f > bestv {
                    bestv = f;
                    best = c;
                }
            }
            counts[best] += 1;
        }
        let cfg = LikelihoodConfig {
            num_classes: c_n,
            label_noise: 1e-3,
            quad_points: 16,
        };
        let eps = cfg.label_noise;
        let probs = class_probabilities(&means, &vars, &cfg, &quad).unwrap();
        let norm: f64 = 1.0; // proper mixture sums to one analytically
        for y in 0..c_n {
            let freq = counts[y] as f64 / n as f64;
            let se = (freq * (1.0 - freq) / n as f64).sqrt().max(1e-9);
            // the Monte Carlo estimate of the mixture probability
            let mc_prob =
                ((1.0 - eps) * freq + eps / (c_n as f64 - 1.0) * (1.0 - freq)) / norm;
            let tol = 3.0 * se * (1.0 - eps - eps / (c_n as f64 - 1.0)).abs() + 3e-6;
            assert!(
                (probs[y] - mc_prob).abs() < tol,
                "case {} class {}: {} vs {} (3se {:.2e})",
                case,
                y,
                probs[y],
                mc_prob,
                tol
            );
            let ell = expected_loglik(&means, &vars, y, &cfg, &quad).unwrap();
            let tol_log = tol / mc_prob;
            assert!(
                (ell - mc_prob.ln()).abs() < tol_log,
                "case {} class {}: loglik {} vs {}",
                case,
                y,
                ell,
                mc_prob.ln()
            );
            let pi = winner_prob(&means, &vars, y, &quad).unwrap();
            assert!((pi - freq).abs() < 3.0 * se + 3e-6);
        }
    }
    println!("criterion 5a PASS: 50 cases within 3 Monte-Carlo standard errors");
}

/// Criterion 5b: closed-form KL divergences against sampling.
#[test]
fn criterion_5b_kl_vs_monte_carlo() {
    let mut rng = StdRng::seed_from_u64(5151);
    let n = 1_000_000usize;
    for case in 0..20 {
        // q(u) = N(m, F F^T), p(u) = N(0, K): estimate E_q[log q - log p]
        let m_dim = rng.gen_range(1..4usize);
        let mut b = Mat::zeros(m_dim, m_dim);
        for v in b.data.iter_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
        let mut k = b.matmul(&b.transpose());
        for i in 0..m_dim {
            k[(i, i)] += 1.0;
        }
        let lk = nimgp::linalg::cholesky(&k).unwrap();
        let mut f = Mat::zeros(m_dim, m_dim);
        for i in 0..m_dim {
            for j in 0..i {
                f[(i, j)] = rng.gen_range(-0.4..0.4);
            }
            f[(i, i)] = rng.gen_range(0.4..1.3);
        }
        let mvec: Vec<f64> = (0..m_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = VariationalGaussianU::new(mvec.clone(), f.clone()).unwrap();
        let closed = kl_u(&q, &lk).unwrap();

        // independent densities through explicit inverses
        let s = f.matmul(&f.transpose());
        let s_inv = dense_inverse(&s);
        let k_inv = dense_inverse(&k);
        let logdet_s = dense_logdet(&s);
        let logdet_k = dense_logdet(&k);
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..n {
            let eps: Vec<f64> = (0..m_dim).map(|_| rng.sample(StandardNormal)).collect();
            // u = m + F eps
            let mut u = mvec.clone();
            for i in 0..m_dim {
                for j in 0..=i {
                    u[i] += f[(i, j)] * eps[j];
                }
            }
            let dq: Vec<f64> = (0..m_dim).map(|i| u[i] - mvec[i]).collect();
            let log_q = -0.5 * quadform(&s_inv, &dq) - 0.5 * logdet_s;
            let log_p = -0.5 * quadform(&k_inv, &u) - 0.5 * logdet_k;
            let t = log_q - log_p;
            acc += t;
            acc2 += t * t;
        }
        let est = acc / n as f64;
        let sd = (acc2 / n as f64 - est * est).sqrt();
        let se = sd / (n as f64).sqrt();
        assert!(
            (closed - est).abs() < 3.0 * se + 1e-4,
            "kl_u case {}: {} vs {} (se {})",
            case,
            closed,
            est,
            se
        );
    }
    // kl_x: diagonal Gaussians against the broad prior
    for case in 0..20 {
        let d = rng.gen_range(1..4usize);
        let prior = PriorConfig { s: 1000.0 };
        let mu: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let var: Vec<f64> = (0..d).map(|_| rng.gen_range(0.05..3.0)).collect();
        let closed = kl_x(&mu, &var, &prior);
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..n {
            let mut t = 0.0;
            for j in 0..d {
                let e: f64 = rng.sample(StandardNormal);
                let x = mu[j] + var[j].sqrt() * e;
                let log_q = -0.5 * (x - mu[j]) * (x - mu[j]) / var[j] - 0.5 * var[j].ln();
                let log_p = -0.5 * x * x / prior.s - 0.5 * prior.s.ln();
                t += log_q - log_p;
            }
            acc += t;
            acc2 += t * t;
        }
        let est = acc / n as f64;
        let sd = (acc2 / n as f64 - est * est).sqrt();
        let se = sd / (n as f64).sqrt();
        assert!(
            (closed - est).abs() < 3.0 * se + 1e-4,
            "kl_x case {}: {} vs {}",
            case,
            closed,
            est
        );
    }
    println!("criterion 5b PASS: kl_u and kl_x match sampling on 20 cases each");
}

fn dense_inverse(a: &Mat) -> Mat {
    let n = a.rows;
    let mut aug = Mat::zeros(n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            aug[(i, j)] = a[(i, j)];
        }
        aug[(i, n + i)] = 1.0;
    }
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if aug[(r, col)].abs() > aug[(piv, col)].abs() {
                piv = r;
            }
        }
        if piv != col {
            for j in 0..2 * n {
                let t = aug[(col, j)];
                aug[(col, j)] = aug[(piv, j)];
                aug[(piv, j)] = t;
            }
        }
        let d = aug[(col, col)];
        for j in 0..2 * n {
            aug[(col, j)] /= d;
        }
        for r in 0..n {
            if r != col {
                let t = aug[(r, col)];
                for j in 0..2 * n {
                    aug[(r, j)] -= t * aug[(col, j)];
                }
            }
        }
    }
    let mut inv = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            inv[(i, j)] = aug[(i, n + j)];
        }
    }
    inv
}

fn dense_logdet(a: &Mat) -> f64 {
    // LU-free: eigenvalues through the library's test-grade Jacobi solver
    nimgp::linalg::symmetric_eigenvalues(a)
        .iter()
        .map(|v| v.ln())
        .sum()
}

fn quadform(a: &Mat, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.rows {
        acc += x[i] * nimgp::linalg::dot(a.row(i), x);
    }
    acc
}

/// Criteria 5c and 5d: degenerate-noise equivalences between the prediction
/// paths.
#[test]
fn criterion_5cd_prediction_path_equivalences() {
    let mut rng = StdRng::seed_from_u64(5252);
    let n = 40;
    let d = 2;
    let mut x = Mat::zeros(n, d);
    for v in x.data.iter_mut() {
        *v = rng.gen_range(-2.0..2.0);
    }
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let mut v = Mat::zeros(n, d);
    for t in v.data.iter_mut() {
        *t = 0.1;
    }
    let mut cfg = ModelConfig::new(Method::Nimgp, 3, 8);
    cfg.mc_predict_samples = 300;
    let mut model = Model::init(
        cfg,
        x.clone(),
        labels.clone(),
        InputNoiseSpec::PerInstanceKnown(v),
        11,
    )
    .unwrap();
    for (k, t) in model.theta.iter_mut().enumerate() {
        *t += 0.15 * ((k as f64 * 1.3).sin());
    }
    let predictor = model.predictor().unwrap();
    let mut query = Mat::zeros(25, d);
    for t in query.data.iter_mut() {
        *t = rng.gen_range(-2.0..2.0);
    }
    // 5c: Monte Carlo path with vanishing test noise vs the plain path
    let plain = predictor.predict_plain(&query).unwrap();
    let tiny = Mat::from_vec(25, d, vec![1e-12; 50]);
    let mut mc_rng = StdRng::seed_from_u64(77);
    let mc = predictor.predict_mc(&query, &tiny, 300, &mut mc_rng).unwrap();
    let mut max_dev = 0.0f64;
    for i in 0..25 {
        for c in 0..3 {
            max_dev = max_dev.max((plain[i][c] - mc[i][c]).abs());
        }
    }
    assert!(max_dev < 1e-6, "5c deviation {}", max_dev);

    // 5d: the first-order path with zero noise is bit-equal to plain
    let zeros = Mat::zeros(25, d);
    let fo = predictor.predict_fo(&query, &zeros).unwrap();
    assert_eq!(plain, fo, "5d bit equality");
    println!(
        "criterion 5c/5d PASS: MC path max deviation {:.2e} at V*=1e-12; FO V=0 bit-equal",
        max_dev
    );
}

/// Criterion 7: entropy acquisition never loses to random acquisition on the
/// final error, for the plain GP and the amortized method.
#[test]
fn criterion_7_active_learning() {
    let dir = work_dir("active");
    let mut cfg = CommonConfig::new(dir.clone());
    cfg.methods = vec![Method::Mgp, Method::NimgpNn];
    cfg.repetitions = REPS;
    cfg.seed = 20260810;
    cfg.noise_levels = vec![0.1];
    cfg.noise_mode = NoiseMode::Learned;
    cfg.train.learning_rate = 1e-3;
    cfg.train.batch_size = 50;
    cfg.train.num_inducing = Some(50);
    cfg.mc_predict_samples = 100;
    let acfg = ActiveExperimentConfig {
        strategies: vec![Strategy::Entropy, Strategy::Random],
        initial_train: 100,
        n_test: 500,
        pool: 400,
        points_added: 50,
        initial_epochs: 300,
        refit_epochs: 30,
        ..ActiveExperimentConfig::default()
    };
    run_active(&cfg, &acfg, None).unwrap();
    let content = std::fs::read_to_string(dir.join("active_curves.tsv")).unwrap();
    let mut finals: HashMap<(String, String), Vec<f64>> = HashMap::new();
    for line in content.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let step: usize = f[3].parse().unwrap();
        if step == acfg.points_added {
            finals
                .entry((f[0].to_string(), f[1].to_string()))
                .or_default()
                .push(f[4].parse().unwrap());
        }
    }
    for method in ["mgp", "nimgp-nn"] {
        let e = mean(&finals[&(method.to_string(), "entropy".to_string())]);
        let r = mean(&finals[&(method.to_string(), "random".to_string())]);
        assert!(
            e <= r,
            "{}: entropy final error {} > random {}",
            method,
            e,
            r
        );
        println!(
            "criterion 7 {}: entropy {:.4} <= random {:.4}",
            method, e, r
        );
    }
    println!("criterion 7 PASS");
}

/// Criterion 8: IDX fixtures load bit-exactly and a near-separable 784-d
/// two-class subset trains to under 5% error within the time budget. Real
/// MNIST files are used when NIMGP_MNIST_DIR points at them; otherwise a
/// synthetic two-digit surrogate is written through the same IDX container.
#[test]
fn criterion_8_idx_subset_run() {
    let start = std::time::Instant::now();
    let dir = work_dir("mnist");
    let (images, labels) = match std::env::var("NIMGP_MNIST_DIR") {
        Ok(d) => {
            let base = PathBuf::from(d);
            (
                base.join("train-images-idx3-ubyte"),
                base.join("train-labels-idx1-ubyte"),
            )
        }
        Err(_) => synth_digit_files(&dir),
    };
    // bit-exact fixture check through the loader
    let fixture_img = dir.join("fixture-images.idx");
    let fixture_lab = dir.join("fixture-labels.idx");
    let pix: Vec<u8> = (0..16).map(|i| (i * 16) as u8).collect();
    write_idx_images(&fixture_img, &[pix.clone()], 4, 4).unwrap();
    write_idx_labels(&fixture_lab, &[3]).unwrap();
    let fixture = load_idx(&fixture_img, &fixture_lab).unwrap();
    for (j, &b) in pix.iter().enumerate() {
        assert_eq!(fixture.x_tilde[(0, j)], b as f64 / 255.0);
    }
    assert_eq!(fixture.y, vec![3]);

    let mut cfg = CommonConfig::new(dir.clone());
    cfg.methods = vec![Method::Mgp];
    cfg.seed = 4;
    cfg.train.epochs = 20;
    cfg.train.batch_size = 200;
    cfg.train.num_inducing = Some(100);
    cfg.kernel_family = KernelFamily::SquaredExponentialArd;
    let out = run_mnist_subset(&cfg, &images, &labels, (0, 1), 2000, 500).unwrap();
    let err = out.rows[0].record.test_error;
    let wall = start.elapsed().as_secs_f64();
    assert!(err < 0.05, "subset error {} >= 0.05", err);
    assert!(wall < 600.0, "subset run took {:.0}s", wall);
    println!(
        "criterion 8 PASS: fixtures bit-exact, subset error {:.4} in {:.0}s",
        err, wall
    );
}

/// Digit-like surrogate when real MNIST is absent: rings vs bars, 28x28.
fn synth_digit_files(dir: &Path) -> (PathBuf, PathBuf) {
    let mut rng = StdRng::seed_from_u64(88);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..2600 {
        let class = i % 2;
        let mut img = vec![0u8; 784];
        if class == 0 {
            // ring
            let cx = 13.5 + rng.gen_range(-2.0..2.0);
            let cy = 13.5 + rng.gen_range(-2.0..2.0);
            let r = rng.gen_range(6.0..9.0);
            for y in 0..28 {
                for x in 0..28 {
                    let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    if (d - r).abs() < 1.6 {
                        img[y * 28 + x] = 170 + rng.gen_range(0..80) as u8;
                    }
                }
            }
        } else {
            // bar
            let col = 13 + rng.gen_range(-3i32..=3);
            let w = rng.gen_range(2..4i32);
            for y in 3..25 {
                for dx in 0..w {
                    let x = col + dx - w / 2;
                    if (0..28).contains(&x) {
                        img[y * 28 + x as usize] = 170 + rng.gen_range(0..80) as u8;
                    }
                }
            }
        }
        for p in img.iter_mut() {
            if rng.gen_range(0..100) < 5 {
                *p = p.saturating_add(rng.gen_range(0..40) as u8);
            }
        }
        images.push(img);
        labels.push(class as u8);
    }
    let ipath = dir.join("surrogate-images.idx");
    let lpath = dir.join("surrogate-labels.idx");
    write_idx_images(&ipath, &images, 28, 28).unwrap();
    write_idx_labels(&lpath, &labels).unwrap();
    (ipath, lpath)
}

/// Criterion 9: rerunning an experiment with the same master seed produces
/// byte-identical result files.
#[test]
fn criterion_9_determinism() {
    let run = |tag: &str| {
        let dir = work_dir(tag);
        let mut cfg = CommonConfig::new(dir.clone());
        cfg.methods = vec![Method::Mgp, Method::Nimgp, Method::NimgpFo];
        cfg.repetitions = 2;
        cfg.seed = 99;
        cfg.noise_levels = vec![0.1];
        cfg.train.epochs = 25;
        cfg.train.batch_size = 40;
        cfg.train.num_inducing = Some(10);
        cfg.mc_predict_samples = 50;
        let spec = SyntheticSpec::general(2, 3, 120, 80);
        run_synthetic(&cfg, &spec).unwrap();
        dir
    };
    let a = run("det-a");
    let b = run("det-b");
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(!names.is_empty());
    let mut names_b: Vec<String> = std::fs::read_dir(&b)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names_b.sort();
    assert_eq!(names, names_b, "file sets differ");
    for name in &names {
        let ca = std::fs::read(a.join(name)).unwrap();
        let cb = std::fs::read(b.join(name)).unwrap();
        assert_eq!(ca, cb, "file {} differs between reruns", name);
    }
    println!(
        "criterion 9 PASS: {} files byte-identical across reruns",
        names.len()
    );
}

/// Cross-method oracle: a latent-input model with vanishing noise matches
/// the plain GP's data term (spec'd training-path equivalence).
#[test]
fn latent_path_degenerates_to_plain_gp() {
    let mut rng = StdRng::seed_from_u64(31415);
    let n = 30;
    let d = 2;
    let mut x = Mat::zeros(n, d);
    for v in x.data.iter_mut() {
        *v = rng.gen_range(-2.0..2.0);
    }
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let tiny = Mat::from_vec(n, d, vec![1e-10; n * d]);
    let cfg_mgp = ModelConfig::new(Method::Mgp, 3, 6);
    let mgp = Model::init(cfg_mgp, x.clone(), labels.clone(), InputNoiseSpec::None, 5).unwrap();
    let cfg_ni = ModelConfig::new(Method::Nimgp, 3, 6);
    let nimgp = Model::init(
        cfg_ni,
        x.clone(),
        labels.clone(),
        InputNoiseSpec::PerInstanceKnown(tiny),
        5,
    )
    .unwrap();
    let batch: Vec<usize> = (0..n).collect();
    let a = nimgp::train::elbo_estimate(&mgp, &batch, &nimgp::train::StepInputs::deterministic())
        .unwrap();
    let mut eps = Mat::zeros(n, d);
    let mut rng2 = StdRng::seed_from_u64(1);
    for v in eps.data.iter_mut() {
        *v = rng2.sample(StandardNormal);
    }
    let b = nimgp::train::elbo_estimate(
        &nimgp,
        &batch,
        &nimgp::train::StepInputs {
            eps: Some(eps),
            x_override: None,
        },
    )
    .unwrap();
    assert!(
        (a.expected_loglik_sum - b.expected_loglik_sum).abs() < 1e-4,
        "{} vs {}",
        a.expected_loglik_sum,
        b.expected_loglik_sum
    );
    println!(
        "cross-method oracle PASS: data terms {:.6} vs {:.6}",
        a.expected_loglik_sum, b.expected_loglik_sum
    );
}

/// Convergence diagnostic on scaled-down toy runs: the ELBO trend over the
/// last tenth of the epochs is non-decreasing up to trace noise on at least
/// nine of ten seeds.
#[test]
fn toy_convergence_diagnostic() {
    let mut ok = 0;
    for seed in 0..10u64 {
        let mut cfg = SyntheticConfig::toy_1d(300);
        cfg.grid = Some(801);
        let task = sample_gp_task(&cfg, 400 + seed).unwrap();
        let noisy = inject_noise(&task.dataset, &[0.1], seed).unwrap();
        let mcfg = ModelConfig::new(Method::Mgp, 3, 15);
        let tc = nimgp::train::TrainConfig {
            epochs: 150,
            batch_size: 60,
            seed,
            num_inducing: Some(15),
            ..Default::default()
        };
        let out = nimgp::train::fit(
            mcfg,
            &tc,
            noisy.x_tilde.clone(),
            noisy.y.clone(),
            InputNoiseSpec::None,
        )
        .unwrap();
        // tolerate plateau wiggle: total drift over the window compared to
        // the residual noise of the window
        let k = out.trace.len() / 10;
        let tail = &out.trace[out.trace.len() - k..];
        let mean_elbo = tail.iter().map(|t| t.breakdown.elbo).sum::<f64>() / k as f64;
        let sd = (tail
            .iter()
            .map(|t| (t.breakdown.elbo - mean_elbo).powi(2))
            .sum::<f64>()
            / k as f64)
            .sqrt();
        if out.final_slope * k as f64 >= -2.0 * sd {
            ok += 1;
        }
    }
    assert!(ok >= 9, "convergent trend on only {}/10 seeds", ok);
    println!("convergence diagnostic PASS: {}/10 seeds", ok);
}
