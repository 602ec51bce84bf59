//! Model serialization: a self-describing flat key-value text format,
//! parameter name -> length -> values in full precision. A checkpoint
//! restores the predictive state of a trained model; continuing training
//! additionally needs the original dataset.

use crate::error::{Error, Result};
use crate::kernel::KernelFamily;
use crate::linalg::Mat;
use crate::model::{Method, Model, ModelConfig};
use crate::noise::{InputNoiseSpec, PriorConfig};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

const HEADER: &str = "nimgp-model v1";

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let cfg = &model.cfg;
    let mut s = String::new();
    s.push_str(HEADER);
    s.push('\n');
    writeln!(s, "method\t{}", cfg.method.name()).unwrap();
    writeln!(s, "num_classes\t{}", cfg.num_classes).unwrap();
    writeln!(s, "data_dim\t{}", model.data_dim).unwrap();
    writeln!(s, "num_inducing\t{}", model.num_inducing()).unwrap();
    let fam = match cfg.kernel_family {
        KernelFamily::SquaredExponentialArd => "se-ard",
        KernelFamily::PolynomialArd => "poly-ard",
    };
    writeln!(s, "kernel_family\t{}", fam).unwrap();
    writeln!(s, "poly_degree\t{}", cfg.poly_degree).unwrap();
    writeln!(s, "poly_offset\t{:.17e}", cfg.poly_offset).unwrap();
    writeln!(s, "label_noise\t{:.17e}", cfg.label_noise).unwrap();
    writeln!(s, "quad_points\t{}", cfg.quad_points).unwrap();
    writeln!(s, "prior_s\t{:.17e}", cfg.prior.s).unwrap();
    writeln!(
        s,
        "nn_hidden\t{}",
        cfg.nn_hidden
            .iter()
            .map(|h| h.to_string())
            .collect::<Vec<_>>()
            .join(",")
    )
    .unwrap();
    writeln!(s, "nn_passthrough\t{}", cfg.nn_passthrough).unwrap();
    writeln!(s, "init_qx_var\t{:.17e}", cfg.init_qx_var).unwrap();
    writeln!(s, "mc_predict_samples\t{}", cfg.mc_predict_samples).unwrap();
    writeln!(s, "n_train\t{}", model.n_train()).unwrap();
    let mode = match &model.noise {
        InputNoiseSpec::None => "none",
        InputNoiseSpec::PerInstanceKnown(_) => "known",
        InputNoiseSpec::SharedLearned(_) => "learned",
    };
    writeln!(s, "noise_mode\t{}", mode).unwrap();
    if let InputNoiseSpec::PerInstanceKnown(v) = &model.noise {
        write!(s, "noise_v\t{}\t{}", v.rows, v.cols).unwrap();
        for t in &v.data {
            write!(s, "\t{:.17e}", t).unwrap();
        }
        s.push('\n');
    }
    for seg in &model.layout.segments {
        write!(s, "param\t{}\t{}", seg.name, seg.len).unwrap();
        for v in &model.theta[seg.offset..seg.offset + seg.len] {
            write!(s, "\t{:.17e}", v).unwrap();
        }
        s.push('\n');
    }
    s.push_str("end\n");
    fs::write(path, s).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let content =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = content.lines();
    let perr = |msg: &str| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: msg.into(),
    };
    if lines.next() != Some(HEADER) {
        return Err(perr("wrong header"));
    }
    let mut kv = std::collections::HashMap::new();
    let mut params: Vec<(String, Vec<f64>)> = Vec::new();
    let mut noise_v: Option<Mat> = None;
    for line in lines {
        if line == "end" {
            break;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields[0] {
            "param" => {
                if fields.len() < 3 {
                    return Err(perr("malformed param line"));
                }
                let name = fields[1].to_string();
                let len: usize = fields[2].parse().map_err(|_| perr("bad param length"))?;
                if fields.len() != 3 + len {
                    return Err(perr("param value count mismatch"));
                }
                let mut vals = Vec::with_capacity(len);
                for f in &fields[3..] {
                    vals.push(f.parse().map_err(|_| perr("bad param value"))?);
                }
                params.push((name, vals));
            }
            "noise_v" => {
                let rows: usize = fields[1].parse().map_err(|_| perr("bad noise rows"))?;
                let cols: usize = fields[2].parse().map_err(|_| perr("bad noise cols"))?;
                if fields.len() != 3 + rows * cols {
                    return Err(perr("noise value count mismatch"));
                }
                let mut vals = Vec::with_capacity(rows * cols);
                for f in &fields[3..] {
                    vals.push(f.parse().map_err(|_| perr("bad noise value"))?);
                }
                noise_v = Some(Mat::from_vec(rows, cols, vals));
            }
            key => {
                if fields.len() != 2 {
                    return Err(perr(&format!("malformed line for key {}", key)));
                }
                kv.insert(key.to_string(), fields[1].to_string());
            }
        }
    }
    let get = |k: &str| -> Result<&String> {
        kv.get(k)
            .ok_or_else(|| perr(&format!("missing key {}", k)))
    };
    let method = Method::parse(get("method")?)?;
    let num_classes: usize = get("num_classes")?.parse().map_err(|_| perr("bad num_classes"))?;
    let data_dim: usize = get("data_dim")?.parse().map_err(|_| perr("bad data_dim"))?;
    let num_inducing: usize = get("num_inducing")?.parse().map_err(|_| perr("bad num_inducing"))?;
    let n_train: usize = get("n_train")?.parse().map_err(|_| perr("bad n_train"))?;
    let mut cfg = ModelConfig::new(method, num_classes, num_inducing);
    cfg.kernel_family = match get("kernel_family")?.as_str() {
        "se-ard" => KernelFamily::SquaredExponentialArd,
        "poly-ard" => KernelFamily::PolynomialArd,
        _ => return Err(perr("unknown kernel family")),
    };
    cfg.poly_degree = get("poly_degree")?.parse().map_err(|_| perr("bad poly_degree"))?;
    cfg.poly_offset = get("poly_offset")?.parse().map_err(|_| perr("bad poly_offset"))?;
    cfg.label_noise = get("label_noise")?.parse().map_err(|_| perr("bad label_noise"))?;
    cfg.quad_points = get("quad_points")?.parse().map_err(|_| perr("bad quad_points"))?;
    cfg.prior = PriorConfig {
        s: get("prior_s")?.parse().map_err(|_| perr("bad prior_s"))?,
    };
    cfg.nn_hidden = if get("nn_hidden")?.is_empty() {
        vec![]
    } else {
        get("nn_hidden")?
            .split(',')
            .map(|h| h.parse().map_err(|_| perr("bad hidden width")))
            .collect::<Result<Vec<usize>>>()?
    };
    cfg.nn_passthrough = get("nn_passthrough")? == "true";
    cfg.init_qx_var = get("init_qx_var")?.parse().map_err(|_| perr("bad init_qx_var"))?;
    cfg.mc_predict_samples = get("mc_predict_samples")?
        .parse()
        .map_err(|_| perr("bad mc_predict_samples"))?;
    let noise = match get("noise_mode")?.as_str() {
        "none" => InputNoiseSpec::None,
        "known" => InputNoiseSpec::PerInstanceKnown(
            noise_v.ok_or_else(|| perr("known noise mode without noise_v"))?,
        ),
        "learned" => InputNoiseSpec::SharedLearned(vec![crate::noise::SHARED_NOISE_INIT; data_dim]),
        _ => return Err(perr("unknown noise mode")),
    };

    // rebuild through the normal constructor, then overwrite the parameters
    let x_stub = Mat::zeros(n_train, data_dim);
    let labels = vec![0usize; n_train];
    let mut model = Model::init(cfg, x_stub, labels, noise, 0)?;
    for (name, vals) in params {
        let r = model
            .layout
            .find(&name)
            .ok_or_else(|| perr(&format!("unknown parameter segment {}", name)))?
            .clone();
        if r.len != vals.len() {
            return Err(perr(&format!("segment {} length mismatch", name)));
        }
        model.theta[r.offset..r.offset + r.len].copy_from_slice(&vals);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn trained_ish(method: Method) -> Model {
        let mut rng = StdRng::seed_from_u64(61);
        let n = 25;
        let d = 2;
        let mut x = Mat::zeros(n, d);
        for v in x.data.iter_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let noise = match method {
            Method::Mgp => InputNoiseSpec::None,
            Method::NimgpNn => InputNoiseSpec::SharedLearned(vec![0.05; d]),
            _ => {
                let mut v = Mat::zeros(n, d);
                for t in v.data.iter_mut() {
                    *t = 0.1;
                }
                InputNoiseSpec::PerInstanceKnown(v)
            }
        };
        let mut cfg = ModelConfig::new(method, 3, 6);
        cfg.nn_hidden = vec![7];
        cfg.mc_predict_samples = 40;
        let mut m = Model::init(cfg, x, labels, noise, 3).unwrap();
        for (k, v) in m.theta.iter_mut().enumerate() {
            *v += 0.1 * ((k as f64).cos());
        }
        m
    }

    #[test]
    fn round_trip_preserves_predictions_bitwise() {
        let dir = std::env::temp_dir().join("nimgp-ckpt-tests");
        fs::create_dir_all(&dir).unwrap();
        for method in [Method::Mgp, Method::Nimgp, Method::NimgpNn, Method::NimgpFo] {
            let model = trained_ish(method);
            let path = dir.join(format!("{}.ckpt", method.name()));
            save_model(&model, &path).unwrap();
            let back = load_model(&path).unwrap();
            assert_eq!(model.theta, back.theta, "{:?}", method);
            let mut q = Mat::zeros(5, 2);
            let mut rng = StdRng::seed_from_u64(8);
            for v in q.data.iter_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
            let vstar = match method {
                Method::Mgp => None,
                _ => Some(Mat::from_vec(5, 2, vec![0.1; 10])),
            };
            let mut r1 = StdRng::seed_from_u64(99);
            let mut r2 = StdRng::seed_from_u64(99);
            let a = model.predict(&q, vstar.as_ref(), &mut r1).unwrap();
            let b = back.predict(&q, vstar.as_ref(), &mut r2).unwrap();
            assert_eq!(a, b, "{:?}", method);
        }
    }

    #[test]
    fn malformed_checkpoints_are_rejected() {
        let dir = std::env::temp_dir().join("nimgp-ckpt-tests");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        fs::write(&path, "not a checkpoint\n").unwrap();
        assert!(load_model(&path).is_err());
    }
}
