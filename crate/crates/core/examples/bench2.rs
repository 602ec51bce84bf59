use nimgp::data::synthetic::{sample_gp_task, SyntheticConfig};
use nimgp::data::inject_noise;
use nimgp::model::{Method, Model, ModelConfig};
use nimgp::noise::InputNoiseSpec;
use nimgp::train::{elbo_estimate, elbo_with_grad, StepInputs};
use std::time::Instant;

fn main() {
    let mut cfg = SyntheticConfig::toy_1d(1000);
    cfg.grid = Some(801);
    let task = sample_gp_task(&cfg, 0).unwrap();
    let noisy = inject_noise(&task.dataset, &[0.1], 1).unwrap();
    let mcfg = ModelConfig::new(Method::Mgp, 3, 100);
    let model = Model::init(mcfg, noisy.x_tilde.clone(), noisy.y.clone(), InputNoiseSpec::None, 3).unwrap();
    let batch: Vec<usize> = (0..200).collect();
    let inputs = StepInputs::deterministic();
    let t0 = Instant::now();
    for _ in 0..50 { let _ = elbo_estimate(&model, &batch, &inputs).unwrap(); }
    println!("forward only: {:.2} ms/step", t0.elapsed().as_secs_f64() / 50.0 * 1e3);
    let t0 = Instant::now();
    for _ in 0..50 { let _ = elbo_with_grad(&model, &batch, &inputs).unwrap(); }
    println!("forward+backward: {:.2} ms/step", t0.elapsed().as_secs_f64() / 50.0 * 1e3);
}
