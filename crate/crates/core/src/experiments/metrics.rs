//! Test-set scoring, predictive entropy, mean ranks and bootstrap errors.

use crate::data::Dataset;
use crate::error::Result;
use crate::linalg::Mat;
use crate::model::Model;
use crate::noise::InputNoiseSpec;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub method: String,
    pub repetition: usize,
    pub test_error: f64,
    pub test_nll: f64,
    /// confusion[true][predicted]
    pub confusion: Vec<Vec<usize>>,
    pub wall_seconds: f64,
}

/// Score a trained model on a test set: mean error by argmax (ties to the
/// lowest class index) and negative mean log-likelihood of the true labels.
/// The test-time noise source follows the model's noise mode: known noise
/// comes from the test set, learned noise from the model, none for the
/// plain GP.
pub fn evaluate(
    model: &Model,
    test: &Dataset,
    repetition: usize,
    rng: &mut StdRng,
) -> Result<MetricsRecord> {
    let start = Instant::now();
    let v_star = match &model.noise {
        InputNoiseSpec::PerInstanceKnown(_) => test.v.as_ref(),
        _ => None,
    };
    let probs = model.predict(&test.x_tilde, v_star, rng)?;
    let c_n = model.cfg.num_classes;
    let mut confusion = vec![vec![0usize; c_n]; c_n];
    let mut nll = 0.0;
    for i in 0..test.n() {
        let y = test.y[i];
        let pred = argmax_lowest(&probs[i]);
        confusion[y][pred] += 1;
        nll -= probs[i][y].max(1e-300).ln();
    }
    let correct: usize = (0..c_n).map(|c| confusion[c][c]).sum();
    Ok(MetricsRecord {
        method: model.cfg.method.name().to_string(),
        repetition,
        test_error: 1.0 - correct as f64 / test.n() as f64,
        test_nll: nll / test.n() as f64,
        confusion,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn argmax_lowest(p: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..p.len() {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

/// Shannon entropy of a class-probability vector, with 0 log 0 = 0.
pub fn predictive_entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Per-method mean rank over repetitions; ranks ascend with the values
/// (1 = best, i.e. smallest), ties share the average rank.
pub fn mean_rank(values: &Mat) -> Vec<f64> {
    let methods = values.rows;
    let reps = values.cols;
    let mut acc = vec![0.0; methods];
    for r in 0..reps {
        let col: Vec<f64> = (0..methods).map(|m| values[(m, r)]).collect();
        let mut order: Vec<usize> = (0..methods).collect();
        order.sort_by(|&a, &b| col[a].partial_cmp(&col[b]).unwrap());
        let mut k = 0;
        while k < methods {
            let mut j = k;
            while j + 1 < methods && col[order[j + 1]] == col[order[k]] {
                j += 1;
            }
            // ranks k+1 ..= j+1 tie: average
            let avg = (k + 1 + j + 1) as f64 / 2.0;
            for t in k..=j {
                acc[order[t]] += avg;
            }
            k = j + 1;
        }
    }
    acc.iter().map(|a| a / reps as f64).collect()
}

/// Bootstrap standard error of the mean (seeded resampling).
pub fn bootstrap_se(values: &[f64], resamples: usize, seed: u64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut s = 0.0;
        for _ in 0..n {
            s += values[rng.gen_range(0..n)];
        }
        means.push(s / n as f64);
    }
    let m = means.iter().sum::<f64>() / resamples as f64;
    (means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (resamples as f64 - 1.0)).sqrt()
}

/// Plain standard error of the mean.
pub fn standard_error(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n as f64 - 1.0);
    (var / n as f64).sqrt()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_values() {
        assert_eq!(predictive_entropy(&[1.0, 0.0, 0.0]), 0.0);
        let u = predictive_entropy(&[1.0 / 3.0; 3]);
        assert!((u - 3.0f64.ln()).abs() < 1e-12);
        let v = predictive_entropy(&[0.5, 0.25, 0.25]);
        assert!((v - 1.039721).abs() < 1e-6);
    }

    #[test]
    fn mean_rank_cases() {
        // one method always best of four
        let mut vals = Mat::zeros(4, 5);
        for r in 0..5 {
            vals[(0, r)] = 0.1;
            vals[(1, r)] = 0.5 + r as f64;
            vals[(2, r)] = 0.9 + r as f64;
            vals[(3, r)] = 0.7 + r as f64;
        }
        let ranks = mean_rank(&vals);
        assert_eq!(ranks[0], 1.0);
        // all equal -> average rank 2.5 each
        let vals = Mat::zeros(4, 3);
        let ranks = mean_rank(&vals);
        for r in ranks {
            assert!((r - 2.5).abs() < 1e-12);
        }
        // a fixed ordering is returned verbatim
        let mut vals = Mat::zeros(4, 2);
        for r in 0..2 {
            for m in 0..4 {
                vals[(m, r)] = (m + 1) as f64;
            }
        }
        assert_eq!(mean_rank(&vals), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn rank_conservation() {
        let mut vals = Mat::zeros(3, 7);
        let mut rng = StdRng::seed_from_u64(3);
        for v in vals.data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let ranks = mean_rank(&vals);
        let sum: f64 = ranks.iter().sum();
        assert!((sum - 6.0).abs() < 1e-12); // 1+2+3 per repetition
    }

    #[test]
    fn argmax_tie_to_lowest() {
        assert_eq!(argmax_lowest(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax_lowest(&[0.1, 0.45, 0.45]), 1);
    }
}
