//! Synthetic multi-class tasks drawn from a GP prior, with the latent draw
//! retained so the generating process stays available to the Bayes oracle.

use super::{Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::kernel::{self, KernelParams};
use crate::linalg::{cholesky, dot, solve_lower, solve_upper, Mat};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n: usize,
    pub d: usize,
    pub num_classes: usize,
    pub box_lo: f64,
    pub box_hi: f64,
    pub kernel: KernelParams,
    /// Dense-grid generation for 1-d tasks: the latent functions are drawn
    /// on this many grid points and evaluated elsewhere by the conditional
    /// mean of the draw.
    pub grid: Option<usize>,
    /// Tasks where any class covers less than this fraction are redrawn.
    pub min_class_share: f64,
}

impl SyntheticConfig {
    /// Generator defaults matching the synthetic experimental protocol:
    /// amplitude 0.5, no indicator noise, length-scales 2.
    pub fn new(n: usize, d: usize, num_classes: usize) -> Self {
        SyntheticConfig {
            n,
            d,
            num_classes,
            box_lo: -2.5,
            box_hi: 2.5,
            kernel: KernelParams::se_ard(0.5, vec![2.0; d], 0.0).unwrap(),
            grid: None,
            min_class_share: 0.10,
        }
    }

    /// The one-dimensional three-class task on [-3, 3] with a 4001-point
    /// generation grid.
    pub fn toy_1d(n: usize) -> Self {
        let mut cfg = SyntheticConfig::new(n, 1, 3);
        cfg.box_lo = -3.0;
        cfg.box_hi = 3.0;
        cfg.grid = Some(4001);
        cfg
    }
}

/// The retained latent draw: evaluation anywhere via the conditional mean of
/// the generating GP given the draw on its support.
#[derive(Debug, Clone)]
pub struct LatentTask {
    pub support: Mat,
    /// One column per class: K_SS^{-1} f_S.
    pub weights: Mat,
    pub kernel: KernelParams,
}

impl LatentTask {
    /// All C latent values at a point.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let s_n = self.support.rows;
        let c_n = self.weights.cols;
        let mut k = vec![0.0; s_n];
        for i in 0..s_n {
            k[i] = kernel::pair_eval(&self.kernel, x, self.support.row(i)).0;
        }
        let mut out = vec![0.0; c_n];
        for c in 0..c_n {
            let mut acc = 0.0;
            for i in 0..s_n {
                acc += k[i] * self.weights[(i, c)];
            }
            out[c] = acc;
        }
        out
    }

    pub fn argmax_label(&self, x: &[f64]) -> usize {
        let f = self.eval(x);
        argmax(&f)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct GpTask {
    pub dataset: Dataset,
    pub latent: LatentTask,
}

/// Draw one synthetic task: uniform inputs in the box, independent exact GP
/// draws per class, labels by argmax (ties to the lowest index). Degenerate
/// tasks (any class under the configured share) are rejected and redrawn
/// with the next seed; the redraw count lands in the metadata.
pub fn sample_gp_task(cfg: &SyntheticConfig, seed: u64) -> Result<GpTask> {
    if cfg.num_classes < 2 {
        return Err(Error::contract("need at least two classes"));
    }
    if !(cfg.box_hi > cfg.box_lo) {
        return Err(Error::contract("empty input box"));
    }
    if let Some(g) = cfg.grid {
        if cfg.d != 1 {
            return Err(Error::contract("grid generation is one-dimensional"));
        }
        if g < 2 {
            return Err(Error::contract("grid needs at least two points"));
        }
    }
    let mut attempt_seed = seed;
    for redraws in 0..64 {
        let task = sample_once(cfg, attempt_seed, redraws)?;
        let mut counts = vec![0usize; cfg.num_classes];
        for &y in &task.dataset.y {
            counts[y] += 1;
        }
        let min_share = counts.iter().map(|&c| c as f64 / cfg.n as f64).fold(1.0, f64::min);
        if min_share >= cfg.min_class_share {
            return Ok(task);
        }
        attempt_seed = attempt_seed.wrapping_add(1);
    }
    Err(Error::contract(
        "could not draw a non-degenerate task in 64 attempts",
    ))
}

fn sample_once(cfg: &SyntheticConfig, seed: u64, redraws: usize) -> Result<GpTask> {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = cfg.n;
    let d = cfg.d;
    let c_n = cfg.num_classes;

    let mut x = Mat::zeros(n, d);
    for v in x.data.iter_mut() {
        *v = rng.gen_range(cfg.box_lo..cfg.box_hi);
    }

    // support: dense grid for 1-d oracle tasks, the inputs themselves
    // otherwise
    let support = match cfg.grid {
        Some(g) => {
            let mut s = Mat::zeros(g, 1);
            for i in 0..g {
                s[(i, 0)] = cfg.box_lo + (cfg.box_hi - cfg.box_lo) * i as f64 / (g - 1) as f64;
            }
            s
        }
        None => x.clone(),
    };

    let s_n = support.rows;
    let kss = kernel::kernel_matrix(&cfg.kernel, &support, &support, true)?;
    let l = cholesky(&kss)?;

    // exact draws on the support, one per class, plus interpolation weights
    let mut f_support = Mat::zeros(s_n, c_n);
    let mut weights = Mat::zeros(s_n, c_n);
    for c in 0..c_n {
        let eps: Vec<f64> = (0..s_n).map(|_| rng.sample(StandardNormal)).collect();
        // f = L eps
        let mut f = vec![0.0; s_n];
        for i in 0..s_n {
            f[i] = dot(&l.row(i)[..=i], &eps[..=i]);
        }
        let mut w = f.clone();
        solve_lower(&l, &mut w);
        solve_upper(&l, &mut w);
        for i in 0..s_n {
            f_support[(i, c)] = f[i];
            weights[(i, c)] = w[i];
        }
    }
    let latent = LatentTask {
        support,
        weights,
        kernel: cfg.kernel.clone(),
    };

    // latent values at the inputs: exact at the support, conditional mean
    // through the grid otherwise
    let mut y = Vec::with_capacity(n);
    match cfg.grid {
        Some(_) => {
            for i in 0..n {
                y.push(latent.argmax_label(x.row(i)));
            }
        }
        None => {
            for i in 0..n {
                let row: Vec<f64> = (0..c_n).map(|c| f_support[(i, c)]).collect();
                y.push(argmax(&row));
            }
        }
    }

    let dataset = Dataset {
        x: Some(x.clone()),
        x_tilde: x,
        y,
        v: None,
        meta: DatasetMeta {
            name: "synthetic".into(),
            seed: Some(seed),
            num_classes: c_n,
            label_map: (1..=c_n).map(|c| c.to_string()).collect(),
            redraws,
        },
    };
    Ok(GpTask { dataset, latent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::normal_cdf;

    #[test]
    fn fixed_seed_reproduces_bitwise() {
        let cfg = SyntheticConfig::new(80, 2, 3);
        let a = sample_gp_task(&cfg, 9).unwrap();
        let b = sample_gp_task(&cfg, 9).unwrap();
        assert_eq!(a.dataset.x_tilde, b.dataset.x_tilde);
        assert_eq!(a.dataset.y, b.dataset.y);
        assert_eq!(a.latent.weights, b.latent.weights);
    }

    #[test]
    fn latent_interpolation_is_exact_on_support() {
        let cfg = SyntheticConfig::new(40, 2, 3);
        let task = sample_gp_task(&cfg, 4).unwrap();
        let x = task.dataset.x.as_ref().unwrap();
        for i in [0usize, 13, 39] {
            let f = task.latent.eval(x.row(i));
            let label = argmax(&f);
            assert_eq!(label, task.dataset.y[i]);
        }
    }

    #[test]
    fn class_shares_respect_floor() {
        // reduced grid keeps this unit test quick; the full 4001-point grid
        // runs in the acceptance suite
        let mut cfg = SyntheticConfig::toy_1d(400);
        cfg.grid = Some(801);
        for seed in 0..8 {
            let task = sample_gp_task(&cfg, seed).unwrap();
            let mut counts = vec![0usize; 3];
            for &y in &task.dataset.y {
                counts[y] += 1;
            }
            for &c in &counts {
                let share = c as f64 / 400.0;
                assert!(share >= 0.10 && share <= 0.70, "share {}", share);
            }
        }
    }

    #[test]
    fn tie_breaking_goes_to_lowest_index() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.9, 0.9]), 1);
    }

    /// Kolmogorov-Smirnov check of the marginal draw distribution against
    /// N(0, amplitude_sq) over many regenerations.
    #[test]
    fn marginal_draw_distribution_is_prior_normal() {
        let mut cfg = SyntheticConfig::new(2, 1, 2);
        cfg.min_class_share = 0.0;
        let mut samples = Vec::with_capacity(10_000);
        for seed in 0..10_000u64 {
            let task = sample_once(&cfg, seed, 0).unwrap();
            // latent value of class 0 at the first input
            let x = task.dataset.x.as_ref().unwrap().row(0).to_vec();
            samples.push(task.latent.eval(&x)[0]);
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = samples.len() as f64;
        let sd = (0.5f64).sqrt();
        let mut ks = 0.0f64;
        for (i, &s) in samples.iter().enumerate() {
            let cdf = normal_cdf(s / sd);
            let emp_hi = (i + 1) as f64 / n;
            let emp_lo = i as f64 / n;
            ks = ks.max((cdf - emp_hi).abs()).max((cdf - emp_lo).abs());
        }
        // critical value at alpha = 0.01
        let crit = 1.63 / n.sqrt();
        assert!(ks < crit, "ks {} crit {}", ks, crit);
    }
}
