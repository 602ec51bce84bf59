use nimgp::data::synthetic::{sample_gp_task, SyntheticConfig};
use nimgp::data::inject_noise;
use nimgp::noise::{posterior_test_input, PriorConfig};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

// Bayes-optimal error and NLL on the 2-d synthetic task by Monte Carlo
// integration of the posterior over noiseless inputs.
fn main() {
    let prior = PriorConfig::default();
    for seed in [20260809u64, 20260809 + 1000] {
        let cfg = SyntheticConfig::new(2000, 2, 3);
        let task = sample_gp_task(&cfg, seed).unwrap();
        let noisy = inject_noise(&task.dataset, &[0.1], seed ^ 0x100).unwrap();
        let mut rng = StdRng::seed_from_u64(1);
        let n_eval = 400;
        let n_mc = 3000;
        let mut err = 0.0;
        let mut nll = 0.0;
        for i in 1000..1000 + n_eval {
            let xt = noisy.x_tilde.row(i);
            let y = noisy.y[i];
            let (mu, var) = posterior_test_input(xt, &[0.1, 0.1], &prior);
            let mut counts = [0usize; 3];
            for _ in 0..n_mc {
                let x = [
                    mu[0] + var[0].sqrt() * rng.sample::<f64, _>(StandardNormal),
                    mu[1] + var[1].sqrt() * rng.sample::<f64, _>(StandardNormal),
                ];
                counts[task.latent.argmax_label(&x)] += 1;
            }
            let p: Vec<f64> = counts.iter().map(|&c| (c as f64 + 0.5) / (n_mc as f64 + 1.5)).collect();
            let pred = (0..3).max_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap()).unwrap();
            if pred != y { err += 1.0; }
            nll -= p[y].ln();
        }
        println!(
            "2d seed {}: bayes error {:.4}, bayes NLL {:.4} (over {} test points)",
            seed, err / n_eval as f64, nll / n_eval as f64, n_eval
        );
    }
    // toy 1-d Bayes reference for three seeds
    for seed in [20260808u64, 20260808 + 1000, 20260808 + 2000] {
        let cfg = SyntheticConfig::toy_1d(2000);
        let task = sample_gp_task(&cfg, seed).unwrap();
        let noisy = inject_noise(&task.dataset, &[0.1], seed ^ 0x100).unwrap();
        let mut err = 0.0;
        let mut nll = 0.0;
        let n_eval = 1000;
        for i in 1000..2000 {
            let xt = noisy.x_tilde.row(i);
            let y = noisy.y[i];
            let p = nimgp::experiments::bayes::bayes_optimal_predictive(
                &task.latent, 3, xt, &[0.1], &prior).unwrap();
            let pred = (0..3).max_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap()).unwrap();
            if pred != y { err += 1.0; }
            nll -= p[y].max(1e-12).ln();
        }
        println!(
            "toy seed {}: bayes error {:.4}, bayes NLL {:.4}",
            seed, err / n_eval as f64, nll / n_eval as f64
        );
    }
}
