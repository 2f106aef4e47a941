//! Binary-class dataset preparation: class filtering, balanced seeded split,
//! standardization and PCA fitted on the training split only.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::idx::RawData;
use crate::pauli::short_hex;
use crate::rng::{domain, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<i8>,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    /// First class maps to -1, second to +1.
    pub classes: [u8; 2],
    pub train: usize,
    pub test: usize,
    pub pca_dim: usize,
    pub seed: u64,
    /// Rescale each principal component to unit training variance.
    #[serde(default = "default_true")]
    pub rescale_components: bool,
}

fn default_true() -> bool {
    true
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            classes: [0, 3],
            train: 100,
            test: 20,
            pca_dim: 8,
            seed: 0,
            rescale_components: true,
        }
    }
}

/// Statistics fitted on a training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fitted {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `pca_dim` principal directions, each of input length.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub component_scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub options: PrepareOptions,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub fitted: Fitted,
}

impl Preprocessing {
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.options).expect("options serialize"));
        for i in self.train_indices.iter().chain(&self.test_indices) {
            h.update((*i as u64).to_le_bytes());
        }
        let f = &self.fitted;
        for v in f
            .mean
            .iter()
            .chain(&f.scale)
            .chain(f.components.iter().flatten())
            .chain(&f.eigenvalues)
            .chain(&f.component_scale)
        {
            h.update(v.to_bits().to_le_bytes());
        }
        short_hex(&h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub record: Preprocessing,
}

impl Prepared {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        for d in [&p.train, &p.test] {
            if d.features.len() != d.labels.len() {
                return Err(Error::Format("feature and label counts differ".into()));
            }
            crate::learner::validate_labels(&d.labels)?;
        }
        Ok(p)
    }
}

/// Per-feature standardization followed by PCA, all from `rows`.
pub fn fit_preprocessing(rows: &[Vec<f64>], pca_dim: usize, rescale: bool) -> Result<Fitted> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n < 2 {
        return Err(Error::Data("at least two training rows are needed".into()));
    }
    if pca_dim == 0 || pca_dim > d {
        return Err(Error::input(format!("PCA dimension {pca_dim} outside 1..={d}")));
    }
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::input("rows differ in length"));
    }
    let nf = n as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / nf;
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let x = DMatrix::from_fn(n, d, |i, j| (rows[i][j] - mean[j]) / scale[j]);
    let cov = x.transpose() * &x / nf;
    let eig = SymmetricEigen::new((&cov + cov.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut components = Vec::with_capacity(pca_dim);
    let mut eigenvalues = Vec::with_capacity(pca_dim);
    for &k in order.iter().take(pca_dim) {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        if v.iter().find(|c| c.abs() > 1e-12).is_some_and(|c| *c < 0.0) {
            v.iter_mut().for_each(|c| *c = -*c);
        }
        components.push(v);
        eigenvalues.push(eig.eigenvalues[k]);
    }
    let mut fitted = Fitted {
        mean,
        scale,
        components,
        eigenvalues,
        component_scale: vec![1.0; pca_dim],
    };
    if rescale {
        let projected: Vec<Vec<f64>> = rows.iter().map(|r| fitted.transform(r)).collect();
        fitted.component_scale = (0..pca_dim)
            .map(|k| {
                let var = projected.iter().map(|p| p[k] * p[k]).sum::<f64>() / nf;
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
    }
    Ok(fitted)
}

impl Fitted {
    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = row
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        self.components
            .iter()
            .zip(&self.component_scale)
            .map(|(c, s)| c.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / s)
            .collect()
    }
}

/// Filters two classes, draws a class-balanced seeded split and fits the
/// preprocessing on the training part.
pub fn prepare(raw: &RawData, opts: &PrepareOptions) -> Result<Prepared> {
    let [a, b] = opts.classes;
    if a == b {
        return Err(Error::input("the two classes must differ"));
    }
    let mut train_idx = Vec::with_capacity(opts.train);
    let mut test_idx = Vec::with_capacity(opts.test);
    for (ci, class) in [a, b].into_iter().enumerate() {
        let mut members: Vec<usize> = (0..raw.len()).filter(|&i| raw.labels[i] == class).collect();
        let n_train = opts.train / 2 + if ci == 0 { opts.train % 2 } else { 0 };
        let n_test = opts.test / 2 + if ci == 0 { opts.test % 2 } else { 0 };
        if members.len() < n_train + n_test {
            return Err(Error::Data(format!(
                "class {class} has {} samples, {} needed",
                members.len(),
                n_train + n_test
            )));
        }
        members.shuffle(&mut stream(opts.seed, domain::DATA, ci as u64));
        train_idx.extend_from_slice(&members[..n_train]);
        test_idx.extend_from_slice(&members[n_train..n_train + n_test]);
    }
    train_idx.shuffle(&mut stream(opts.seed, domain::DATA, 2));
    test_idx.shuffle(&mut stream(opts.seed, domain::DATA, 3));

    let to_row = |i: usize| raw.images.image(i).iter().map(|&p| p as f64).collect::<Vec<f64>>();
    let label = |i: usize| if raw.labels[i] == a { -1 } else { 1 };
    let train_rows: Vec<Vec<f64>> = train_idx.iter().map(|&i| to_row(i)).collect();
    let fitted = fit_preprocessing(&train_rows, opts.pca_dim, opts.rescale_components)?;
    let train = Dataset {
        features: train_rows.iter().map(|r| fitted.transform(r)).collect(),
        labels: train_idx.iter().map(|&i| label(i)).collect(),
        split: Split::Train,
    };
    let test = Dataset {
        features: test_idx.iter().map(|&i| fitted.transform(&to_row(i))).collect(),
        labels: test_idx.iter().map(|&i| label(i)).collect(),
        split: Split::Test,
    };
    Ok(Prepared {
        train,
        test,
        record: Preprocessing {
            options: *opts,
            train_indices: train_idx,
            test_indices: test_idx,
            fitted,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::idx::synthetic_fashion;

    #[test]
    fn balanced_split_and_labels() {
        let raw = synthetic_fashion(70, 2);
        let p = prepare(&raw, &PrepareOptions::default()).unwrap();
        assert_eq!(p.train.len(), 100);
        assert_eq!(p.test.len(), 20);
        assert_eq!(p.train.labels.iter().filter(|&&l| l == 1).count(), 50);
        assert_eq!(p.train.dim(), 8);
        assert!(p
            .record
            .train_indices
            .iter()
            .all(|i| !p.record.test_indices.contains(i)));
    }

    #[test]
    fn insufficient_samples() {
        let raw = synthetic_fashion(10, 2);
        assert!(matches!(prepare(&raw, &PrepareOptions::default()), Err(Error::Data(_))));
    }

    #[test]
    fn projection_is_decorrelated() {
        let raw = synthetic_fashion(60, 3);
        let p = prepare(&raw, &PrepareOptions::default()).unwrap();
        let n = p.train.len() as f64;
        for a in 0..8 {
            for b in 0..8 {
                let c: f64 = p.train.features.iter().map(|r| r[a] * r[b]).sum::<f64>() / n;
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((c - expect).abs() < 1e-8, "{a},{b}: {c}");
            }
        }
    }

    #[test]
    fn identity_variance_without_reduction_centers() {
        let rows: Vec<Vec<f64>> = vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ]
        .into_iter()
        .map(|r: Vec<f64>| vec![r[0] + 3.0, r[1] - 2.0])
        .collect();
        let scaled: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| vec![r[0] * 2f64.sqrt(), r[1] * 2f64.sqrt()])
            .collect();
        let f = fit_preprocessing(&scaled, 2, true).unwrap();
        for r in &scaled {
            let out = f.transform(r);
            let centered = [(r[0] - f.mean[0]), (r[1] - f.mean[1])];
            // covariance is the identity, so the rotation is a signed permutation
            let mut a: Vec<f64> = out.iter().map(|v| v.abs()).collect();
            let mut b: Vec<f64> = centered.iter().map(|v| v.abs()).collect();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
