//! Datasets: synthetic generation from GP priors, noise injection,
//! standardization, splits, and file ingestion.

pub mod delimited;
pub mod idx;
pub mod synthetic;

pub use delimited::{load_delimited, save_dataset, load_dataset, DelimitedSchema};
pub use idx::{load_idx, write_idx_images, write_idx_labels};
pub use synthetic::{sample_gp_task, GpTask, LatentTask, SyntheticConfig};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Default)]
pub struct DatasetMeta {
    pub name: String,
    pub seed: Option<u64>,
    pub num_classes: usize,
    /// Original label text in first-appearance order; index = internal label.
    pub label_map: Vec<String>,
    /// Rejected degenerate draws before this task (synthetic only).
    pub redraws: usize,
}

/// A classification dataset. Labels are stored 0-based; `meta.label_map`
/// carries the original names. `x` retains the noiseless inputs when the
/// generating process is known (synthetic data only).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Option<Mat>,
    pub x_tilde: Mat,
    pub y: Vec<usize>,
    pub v: Option<Mat>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x_tilde.rows
    }

    pub fn dim(&self) -> usize {
        self.x_tilde.cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.len() != self.n() {
            return Err(Error::contract("labels and inputs disagree"));
        }
        if !self.x_tilde.is_finite() {
            return Err(Error::contract("observed inputs must be finite"));
        }
        if self.y.iter().any(|&y| y >= self.meta.num_classes) {
            return Err(Error::contract("label out of range"));
        }
        if let Some(v) = &self.v {
            if v.rows != self.n() || v.cols != self.dim() {
                return Err(Error::contract("noise variance shape mismatch"));
            }
            if v.data.iter().any(|&t| t < 0.0) {
                return Err(Error::contract("noise variances must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        let d = self.dim();
        let take = |m: &Mat| {
            let mut out = Mat::zeros(idx.len(), d);
            for (r, &i) in idx.iter().enumerate() {
                out.row_mut(r).copy_from_slice(m.row(i));
            }
            out
        };
        Dataset {
            x: self.x.as_ref().map(take),
            x_tilde: take(&self.x_tilde),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            v: self.v.as_ref().map(take),
            meta: self.meta.clone(),
        }
    }
}

/// Add elementwise Gaussian noise to the noiseless inputs; the variance used
/// is recorded in the returned dataset. The input dataset is not mutated.
pub fn inject_noise(data: &Dataset, variance: &[f64], seed: u64) -> Result<Dataset> {
    let d = data.dim();
    let var: Vec<f64> = match variance.len() {
        1 => vec![variance[0]; d],
        l if l == d => variance.to_vec(),
        _ => return Err(Error::contract("noise variance length must be 1 or d")),
    };
    if var.iter().any(|&v| v < 0.0) {
        return Err(Error::contract("noise variance must be >= 0"));
    }
    let base = data.x.as_ref().unwrap_or(&data.x_tilde);
    let mut rng = StdRng::seed_from_u64(seed);
    let mut x_tilde = base.clone();
    for i in 0..x_tilde.rows {
        let row = x_tilde.row_mut(i);
        for j in 0..d {
            let e: f64 = rng.sample(StandardNormal);
            row[j] += var[j].sqrt() * e;
        }
    }
    let mut vmat = Mat::zeros(data.n(), d);
    for i in 0..data.n() {
        vmat.row_mut(i).copy_from_slice(&var);
    }
    Ok(Dataset {
        x: Some(base.clone()),
        x_tilde,
        y: data.y.clone(),
        v: Some(vmat),
        meta: data.meta.clone(),
    })
}

/// Column-wise affine transform fitted on a training set.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Fit on the observed inputs of `train`: zero mean, unit variance;
    /// constant columns keep scale one.
    pub fn fit(train: &Dataset) -> Result<Standardizer> {
        let n = train.n();
        if n == 0 {
            return Err(Error::contract("cannot standardize an empty dataset"));
        }
        let d = train.dim();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (j, v) in train.x_tilde.row(i).iter().enumerate() {
                mean[j] += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for i in 0..n {
            for (j, v) in train.x_tilde.row(i).iter().enumerate() {
                let r = v - mean[j];
                var[j] += r * r;
            }
        }
        let scale = var
            .iter()
            .map(|&v| {
                let s = (v / n as f64).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        let d = data.dim();
        let tx = |m: &Mat| {
            let mut out = m.clone();
            for i in 0..out.rows {
                let row = out.row_mut(i);
                for j in 0..d {
                    row[j] = (row[j] - self.mean[j]) / self.scale[j];
                }
            }
            out
        };
        let v = data.v.as_ref().map(|vm| {
            let mut out = vm.clone();
            for i in 0..out.rows {
                let row = out.row_mut(i);
                for j in 0..d {
                    row[j] /= self.scale[j] * self.scale[j];
                }
            }
            out
        });
        Dataset {
            x: data.x.as_ref().map(tx),
            x_tilde: tx(&data.x_tilde),
            y: data.y.clone(),
            v,
            meta: data.meta.clone(),
        }
    }

    pub fn invert(&self, data: &Dataset) -> Dataset {
        let d = data.dim();
        let tx = |m: &Mat| {
            let mut out = m.clone();
            for i in 0..out.rows {
                let row = out.row_mut(i);
                for j in 0..d {
                    row[j] = row[j] * self.scale[j] + self.mean[j];
                }
            }
            out
        };
        let v = data.v.as_ref().map(|vm| {
            let mut out = vm.clone();
            for i in 0..out.rows {
                let row = out.row_mut(i);
                for j in 0..d {
                    row[j] *= self.scale[j] * self.scale[j];
                }
            }
            out
        });
        Dataset {
            x: data.x.as_ref().map(tx),
            x_tilde: tx(&data.x_tilde),
            y: data.y.clone(),
            v,
            meta: data.meta.clone(),
        }
    }
}

/// Fit on `train`, apply to it and to every other part.
pub fn standardize(train: &Dataset, others: &[&Dataset]) -> Result<(Vec<Dataset>, Standardizer)> {
    let t = Standardizer::fit(train)?;
    let mut out = vec![t.apply(train)];
    for o in others {
        out.push(t.apply(o));
    }
    Ok((out, t))
}

/// Seeded permutation split with the floor-then-remainder size rule.
pub fn split(data: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.is_empty() {
        return Err(Error::contract("split fractions must sum to 1"));
    }
    let n = data.n();
    let mut sizes: Vec<usize> = fractions.iter().map(|f| (f * n as f64).floor() as usize).collect();
    let mut assigned: usize = sizes.iter().sum();
    let parts_n = sizes.len();
    let mut k = 0;
    while assigned < n {
        sizes[k % parts_n] += 1;
        assigned += 1;
        k += 1;
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::contract("split produced an empty part"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = StdRng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut parts = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for s in sizes {
        parts.push(data.select(&order[at..at + s]));
        at += s;
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, d: usize) -> Dataset {
        let mut rng = StdRng::seed_from_u64(50);
        let mut x = Mat::zeros(n, d);
        for v in x.data.iter_mut() {
            *v = rng.gen_range(-4.0..4.0);
        }
        Dataset {
            x: None,
            x_tilde: x,
            y: (0..n).map(|i| i % 3).collect(),
            v: None,
            meta: DatasetMeta {
                name: "tiny".into(),
                num_classes: 3,
                ..Default::default()
            },
        }
    }

    #[test]
    fn inject_noise_is_deterministic_and_nonmutating() {
        let base = tiny(50, 2);
        let a = inject_noise(&base, &[0.1], 7).unwrap();
        let b = inject_noise(&base, &[0.1], 7).unwrap();
        assert_eq!(a.x_tilde, b.x_tilde);
        assert_eq!(base.v, None);
        assert_eq!(a.x.as_ref().unwrap(), &base.x_tilde);
        assert_eq!(a.v.as_ref().unwrap()[(3, 1)], 0.1);
        let zero = inject_noise(&base, &[0.0], 3).unwrap();
        assert_eq!(zero.x_tilde, base.x_tilde);
    }

    #[test]
    fn injected_noise_has_requested_variance() {
        let base = tiny(100_000, 1);
        let a = inject_noise(&base, &[0.25], 11).unwrap();
        let mut s = 0.0;
        let mut s2 = 0.0;
        for i in 0..base.n() {
            let r = a.x_tilde[(i, 0)] - base.x_tilde[(i, 0)];
            s += r;
            s2 += r * r;
        }
        let n = base.n() as f64;
        let var = s2 / n - (s / n) * (s / n);
        let se = 0.25 * (2.0 / n).sqrt();
        assert!((var - 0.25).abs() < 3.0 * se, "var {}", var);
    }

    #[test]
    fn standardizer_centers_and_scales() {
        let base = tiny(200, 3);
        let (parts, t) = standardize(&base, &[]).unwrap();
        let s = &parts[0];
        for j in 0..3 {
            let mut mean = 0.0;
            for i in 0..s.n() {
                mean += s.x_tilde[(i, j)];
            }
            mean /= s.n() as f64;
            assert!(mean.abs() < 1e-10);
            let mut var = 0.0;
            for i in 0..s.n() {
                let r = s.x_tilde[(i, j)] - mean;
                var += r * r;
            }
            var /= s.n() as f64;
            assert!((var - 1.0).abs() < 1e-10);
        }
        // round trip
        let back = t.invert(s);
        assert!(back.x_tilde.frobenius_distance(&base.x_tilde) < 1e-10);
        // already-standardized data gets the identity transform
        let t2 = Standardizer::fit(s).unwrap();
        for j in 0..3 {
            assert!(t2.mean[j].abs() < 1e-12);
            assert!((t2.scale[j] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_keeps_scale_one() {
        let mut base = tiny(40, 2);
        for i in 0..40 {
            base.x_tilde[(i, 1)] = 5.0;
        }
        let t = Standardizer::fit(&base).unwrap();
        assert_eq!(t.scale[1], 1.0);
        let s = t.apply(&base);
        for i in 0..40 {
            assert_eq!(s.x_tilde[(i, 1)], 0.0);
        }
    }

    #[test]
    fn noise_variance_rescales_with_square_of_scale() {
        let base = tiny(100, 1);
        let noisy = inject_noise(&base, &[0.4], 3).unwrap();
        let (parts, t) = standardize(&noisy, &[]).unwrap();
        let v = parts[0].v.as_ref().unwrap();
        for i in 0..parts[0].n() {
            assert!((v[(i, 0)] - 0.4 / (t.scale[0] * t.scale[0])).abs() < 1e-12);
        }
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let base = tiny(214, 2);
        let parts = split(&base, &[0.9, 0.1], 5).unwrap();
        assert_eq!(parts[0].n(), 193);
        assert_eq!(parts[1].n(), 21);
        // equal seeds reproduce
        let again = split(&base, &[0.9, 0.1], 5).unwrap();
        assert_eq!(parts[0].x_tilde, again[0].x_tilde);
        // coverage check through row multiset
        let mut seen: Vec<Vec<u64>> = Vec::new();
        for p in &parts {
            for i in 0..p.n() {
                seen.push(p.x_tilde.row(i).iter().map(|v| v.to_bits()).collect());
            }
        }
        seen.sort();
        let mut orig: Vec<Vec<u64>> = (0..base.n())
            .map(|i| base.x_tilde.row(i).iter().map(|v| v.to_bits()).collect())
            .collect();
        orig.sort();
        assert_eq!(seen, orig);
        assert!(split(&base, &[0.5, 0.4], 1).is_err());
    }
}
