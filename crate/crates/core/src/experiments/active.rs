//! Active learning: grow the training set from a pool, picking either the
//! highest-predictive-entropy point or a random one, retraining warm-started
//! after every addition.

use super::metrics::{argmax_lowest, predictive_entropy};
use super::NoiseMode;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{Method, Model, ModelConfig};
use crate::noise::InputNoiseSpec;
use crate::train::{fit, fit_from, TrainConfig};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Entropy,
    Random,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Entropy => "entropy",
            Strategy::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Strategy> {
        match s {
            "entropy" => Ok(Strategy::Entropy),
            "random" => Ok(Strategy::Random),
            other => Err(Error::contract(format!("unknown strategy '{}'", other))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ActiveConfig {
    pub strategy: Strategy,
    pub noise_mode: NoiseMode,
    /// Points moved from the pool into the training set.
    pub points_added: usize,
    pub initial_epochs: usize,
    pub refit_epochs: usize,
    pub train_cfg: TrainConfig,
    pub model_cfg: ModelConfig,
    pub seed: u64,
}

fn dataset_noise(cfg: &ActiveConfig, d: &Dataset) -> Result<InputNoiseSpec> {
    if cfg.model_cfg.method == Method::Mgp {
        return Ok(InputNoiseSpec::None);
    }
    match cfg.noise_mode {
        NoiseMode::Known => {
            let v = d
                .v
                .as_ref()
                .ok_or_else(|| Error::contract("known noise mode needs recorded variances"))?;
            Ok(InputNoiseSpec::PerInstanceKnown(v.clone()))
        }
        NoiseMode::Learned => Ok(InputNoiseSpec::SharedLearned(vec![
            crate::noise::SHARED_NOISE_INIT;
            d.dim()
        ])),
    }
}

/// One active-learning run. Returns the test-error curve, one entry per
/// training-set size (length = points added + 1).
pub fn active_learning_run(
    cfg: &ActiveConfig,
    train: &Dataset,
    test: &Dataset,
    pool: &Dataset,
) -> Result<Vec<f64>> {
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut tc = cfg.train_cfg.clone();
    tc.epochs = cfg.initial_epochs;
    tc.seed = cfg.seed;
    let outcome = fit(
        cfg.model_cfg.clone(),
        &tc,
        train.x_tilde.clone(),
        train.y.clone(),
        dataset_noise(cfg, train)?,
    )?;
    let mut model = outcome.model;

    let mut pool_left: Vec<usize> = (0..pool.n()).collect();
    let mut curve = Vec::with_capacity(cfg.points_added + 1);
    curve.push(test_error(&model, test, &mut rng)?);

    for step in 0..cfg.points_added.min(pool.n()) {
        let pick_pos = match cfg.strategy {
            Strategy::Random => rng.gen_range(0..pool_left.len()),
            Strategy::Entropy => {
                let sub = pool.select(&pool_left);
                let v_star = match &model.noise {
                    InputNoiseSpec::PerInstanceKnown(_) => sub.v.as_ref(),
                    _ => None,
                };
                let probs = model.predict(&sub.x_tilde, v_star, &mut rng)?;
                let mut best = 0;
                let mut best_h = f64::NEG_INFINITY;
                for (k, p) in probs.iter().enumerate() {
                    let h = predictive_entropy(p);
                    if h > best_h {
                        best_h = h;
                        best = k;
                    }
                }
                best
            }
        };
        let idx = pool_left.swap_remove(pick_pos);
        let xrow = Mat::from_vec(1, pool.dim(), pool.x_tilde.row(idx).to_vec());
        let vrow = pool
            .v
            .as_ref()
            .map(|v| Mat::from_vec(1, pool.dim(), v.row(idx).to_vec()));
        model.extend_training_set(&xrow, &[pool.y[idx]], vrow.as_ref())?;

        let mut tc = cfg.train_cfg.clone();
        tc.epochs = cfg.refit_epochs;
        tc.seed = cfg.seed.wrapping_add(step as u64 + 1);
        let outcome = fit_from(model, &tc)?;
        model = outcome.model;
        curve.push(test_error(&model, test, &mut rng)?);
    }
    Ok(curve)
}

fn test_error(model: &Model, test: &Dataset, rng: &mut StdRng) -> Result<f64> {
    let v_star = match &model.noise {
        InputNoiseSpec::PerInstanceKnown(_) => test.v.as_ref(),
        _ => None,
    };
    let probs = model.predict(&test.x_tilde, v_star, rng)?;
    let wrong = probs
        .iter()
        .zip(&test.y)
        .filter(|(p, &y)| argmax_lowest(p) != y)
        .count();
    Ok(wrong as f64 / test.n() as f64)
}
