use nimgp::data::synthetic::{sample_gp_task, SyntheticConfig};
use nimgp::data::{inject_noise, Dataset};
use nimgp::model::{Method, ModelConfig};
use nimgp::noise::InputNoiseSpec;
use nimgp::train::{fit, TrainConfig};
use rand::rngs::StdRng;
use rand::SeedableRng;
use rayon::prelude::*;

fn run(seed: u64, epochs: usize, init_jitter: f64, init_ls: f64, qw: usize) -> (f64, f64, f64) {
    let cfg = SyntheticConfig::toy_1d(2000);
    let task = sample_gp_task(&cfg, seed).unwrap();
    let noisy = inject_noise(&task.dataset, &[0.1], seed ^ 7).unwrap();
    let train: Dataset = noisy.select(&(0..1000).collect::<Vec<_>>());
    let test: Dataset = noisy.select(&(1000..2000).collect::<Vec<_>>());
    let mut mcfg = ModelConfig::new(Method::Nimgp, 3, 100);
    mcfg.mc_predict_samples = 700;
    mcfg.init_jitter_sq = init_jitter;
    mcfg.init_lengthscale = init_ls;
    mcfg.quad_points = qw;
    let tc = TrainConfig { epochs, batch_size: 200, seed: seed ^ 3, num_inducing: Some(100), ..TrainConfig::default() };
    let out = fit(mcfg, &tc, train.x_tilde.clone(), train.y.clone(), InputNoiseSpec::PerInstanceKnown(train.v.clone().unwrap())).unwrap();
    let mut rng = StdRng::seed_from_u64(77);
    let probs = out.model.predict(&test.x_tilde, test.v.as_ref(), &mut rng).unwrap();
    let mut err = 0.0;
    let mut nll = 0.0;
    for i in 0..test.n() {
        let y = test.y[i];
        let pred = probs[i].iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
        if pred != y { err += 1.0; }
        nll -= probs[i][y].ln();
    }
    (err / test.n() as f64, nll / test.n() as f64, out.final_slope)
}

fn main() {
    let jobs: Vec<(&str, u64, usize, f64, f64, usize)> = vec![
        ("seed1 base     ", 1, 750, 1e-2, 1.0, 16),
        ("seed2 base     ", 2, 750, 1e-2, 1.0, 16),
        ("seed0 epochs2k ", 0, 2000, 1e-2, 1.0, 16),
        ("seed0 jit1e-4  ", 0, 750, 1e-4, 1.0, 16),
        ("seed0 ls2      ", 0, 750, 1e-2, 2.0, 16),
    ];
    let results: Vec<_> = jobs.par_iter().map(|(tag, s, e, j, l, q)| {
        let (err, nll, slope) = run(*s, *e, *j, *l, *q);
        format!("{}: err {:.3} nll {:.3} slope {:.2e}", tag, err, nll, slope)
    }).collect();
    for r in results { println!("{}", r); }
}
