//! The Bayes-optimal predictive for synthetic tasks, computable because the
//! generating latent functions are retained.

use crate::data::synthetic::LatentTask;
use crate::error::{Error, Result};
use crate::noise::{posterior_test_input, PriorConfig};

/// Grid points per dimension for the posterior integral.
pub const ORACLE_GRID: usize = 2001;

/// `p(y | x_tilde) = integral 1[argmax_c f^c(x) = y] N(x | mu*, V*) dx`
/// by dense-grid quadrature over the posterior of the noiseless input,
/// with the latent functions evaluated through the retained draw.
pub fn bayes_optimal_predictive(
    latent: &LatentTask,
    num_classes: usize,
    x_tilde: &[f64],
    v_star: &[f64],
    prior: &PriorConfig,
) -> Result<Vec<f64>> {
    let d = x_tilde.len();
    if d > 2 {
        return Err(Error::contract(
            "the oracle integrates on a dense grid; d <= 2 only",
        ));
    }
    let (mu, var) = posterior_test_input(x_tilde, v_star, prior);
    // per-dimension grids and normal weights; a zero-variance coordinate
    // collapses to a single point
    let mut grids: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut weights: Vec<Vec<f64>> = Vec::with_capacity(d);
    for j in 0..d {
        if var[j] == 0.0 {
            grids.push(vec![mu[j]]);
            weights.push(vec![1.0]);
        } else {
            let sd = var[j].sqrt();
            let lo = mu[j] - 6.0 * sd;
            let hi = mu[j] + 6.0 * sd;
            let mut g = Vec::with_capacity(ORACLE_GRID);
            let mut w = Vec::with_capacity(ORACLE_GRID);
            for k in 0..ORACLE_GRID {
                let x = lo + (hi - lo) * k as f64 / (ORACLE_GRID - 1) as f64;
                let z = (x - mu[j]) / sd;
                g.push(x);
                w.push((-0.5 * z * z).exp());
            }
            let sum: f64 = w.iter().sum();
            for v in w.iter_mut() {
                *v /= sum;
            }
            grids.push(g);
            weights.push(w);
        }
    }
    let mut p = vec![0.0; num_classes];
    match d {
        1 => {
            for (x, w) in grids[0].iter().zip(&weights[0]) {
                p[latent.argmax_label(&[*x])] += w;
            }
        }
        2 => {
            for (x0, w0) in grids[0].iter().zip(&weights[0]) {
                for (x1, w1) in grids[1].iter().zip(&weights[1]) {
                    p[latent.argmax_label(&[*x0, *x1])] += w0 * w1;
                }
            }
        }
        _ => unreachable!(),
    }
    let sum: f64 = p.iter().sum();
    for v in p.iter_mut() {
        *v /= sum;
    }
    Ok(p)
}
