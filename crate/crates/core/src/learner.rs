//! Soft-margin SVM on precomputed Gram matrices, margin loss, cross-validation
//! and the Rademacher-complexity generalization bound.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::{EstimatorTag, FeatureTable, GramMatrix};
use crate::pauli::short_hex;
use crate::rng::{domain, stream};

/// Constant in the multiple-kernel Rademacher bound.
pub const ETA0: f64 = 23.0 / 22.0;

/// Regularization grid searched by default.
pub const DEFAULT_C_GRID: [f64; 18] = [
    0.006, 0.015, 0.03, 0.0625, 0.125, 0.25, 0.5, 1.0, 2.0, 5.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0,
];

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmOptions {
    /// Stop once the maximal violating pair gap falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Project non-exact Grams onto the PSD cone before training.
    pub clip_noisy: bool,
    /// Relative eigenvalue tolerance for accepting an exact Gram as PSD.
    pub psd_tolerance: f64,
}

impl Default for SvmOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 10_000_000,
            clip_noisy: true,
            psd_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub support: Vec<usize>,
    pub labels: Vec<i8>,
    pub gram_hash: String,
    pub clipped: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub labels: Vec<i8>,
}

/// Content hash of a Gram matrix's entries.
pub fn matrix_hash(m: &DMatrix<f64>) -> String {
    let mut h = Sha256::new();
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        h.update(v.to_bits().to_le_bytes());
    }
    short_hex(&h.finalize())
}

pub fn validate_labels(y: &[i8]) -> Result<()> {
    if let Some(v) = y.iter().find(|v| **v != 1 && **v != -1) {
        return Err(Error::input(format!("label {v} is not -1 or +1")));
    }
    Ok(())
}

pub fn svm_train(k: &GramMatrix, y: &[i8], c: f64) -> Result<SvmModel> {
    svm_train_with(k, y, c, &SvmOptions::default())
}

pub fn svm_train_with(k: &GramMatrix, y: &[i8], c: f64, opts: &SvmOptions) -> Result<SvmModel> {
    let mut clipped = k.meta().clipped;
    let entries = if k.estimator() == EstimatorTag::Exact {
        if !k.is_psd(opts.psd_tolerance) {
            let min = k.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
            return Err(Error::Data(format!(
                "exact Gram is not positive semidefinite (min eigenvalue {min:e})"
            )));
        }
        k.entries().clone()
    } else if opts.clip_noisy && !k.is_psd(0.0) {
        clipped = true;
        k.clip_psd().into_entries()
    } else {
        k.entries().clone()
    };
    let mut model = solve(&entries, y, c, opts)?;
    model.gram_hash = matrix_hash(k.entries());
    model.clipped = clipped;
    Ok(model)
}

/// SMO with second-order working-set selection on a raw kernel matrix.
pub fn solve(k: &DMatrix<f64>, y: &[i8], c: f64, opts: &SvmOptions) -> Result<SvmModel> {
    let n = y.len();
    if k.nrows() != n || k.ncols() != n {
        return Err(Error::input(format!(
            "Gram is {}x{} but there are {n} labels",
            k.nrows(),
            k.ncols()
        )));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::input(format!("C must be positive, got {c}")));
    }
    validate_labels(y)?;
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::Degenerate("training labels contain a single class".into()));
    }
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let q = |i: usize, j: usize| yf[i] * yf[j] * k[(i, j)];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    let mut iterations = 0;
    loop {
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        for t in 0..n {
            if up(alpha[t], yf[t]) && -yf[t] * grad[t] >= gmax {
                gmax = -yf[t] * grad[t];
                i = t;
            }
        }
        let mut j = usize::MAX;
        let mut gmin = f64::INFINITY;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], yf[t]) {
                continue;
            }
            let v = -yf[t] * grad[t];
            gmin = gmin.min(v);
            if i != usize::MAX && v < gmax {
                let b = gmax - v;
                let mut a = k[(i, i)] + k[(t, t)] - 2.0 * k[(i, t)];
                if a <= 0.0 {
                    a = TAU;
                }
                let obj = -b * b / a;
                if obj <= best {
                    best = obj;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < opts.tolerance {
            break;
        }
        if iterations >= opts.max_iterations {
            return Err(Error::Degenerate(format!(
                "SMO did not converge in {iterations} iterations"
            )));
        }
        iterations += 1;

        let (ai, aj) = (alpha[i], alpha[j]);
        if yf[i] != yf[j] {
            let mut quad = k[(i, i)] + k[(j, j)] + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = k[(i, i)] + k[(j, j)] - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    for t in 0..n {
        let yg = yf[t] * grad[t];
        if alpha[t] >= c {
            if yf[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if yf[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 { free_sum / free as f64 } else { 0.5 * (ub + lb) };

    Ok(SvmModel {
        support: (0..n).filter(|&t| alpha[t] > 0.0).collect(),
        alpha,
        bias: -rho,
        c,
        labels: y.to_vec(),
        gram_hash: matrix_hash(k),
        clipped: false,
        iterations,
    })
}

impl SvmModel {
    pub fn train_size(&self) -> usize {
        self.alpha.len()
    }

    /// ½ αᵀQα − Σα, the minimized form of the dual.
    pub fn dual_objective(&self, k: &DMatrix<f64>) -> f64 {
        dual_objective(k, &self.labels, &self.alpha)
    }

    /// Decision values on the training points.
    pub fn training_scores(&self, k: &DMatrix<f64>) -> Vec<f64> {
        let coef = self.coefficients();
        (0..self.train_size())
            .map(|j| (0..self.train_size()).map(|i| coef[i] * k[(i, j)]).sum::<f64>() + self.bias)
            .collect()
    }

    /// Largest violation of the complementary-slackness conditions.
    pub fn kkt_violation(&self, k: &DMatrix<f64>) -> f64 {
        let scores = self.training_scores(k);
        let tol = 1e-12 * self.c.max(1.0);
        let mut worst = 0.0f64;
        for (t, s) in scores.iter().enumerate() {
            let m = self.labels[t] as f64 * s;
            let a = self.alpha[t];
            let v = if a <= tol {
                (1.0 - m).max(0.0)
            } else if a >= self.c - tol {
                (m - 1.0).max(0.0)
            } else {
                (m - 1.0).abs()
            };
            worst = worst.max(v);
        }
        worst
    }

    /// α_i y_i.
    pub fn coefficients(&self) -> Vec<f64> {
        self.alpha
            .iter()
            .zip(&self.labels)
            .map(|(a, &y)| a * y as f64)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.alpha.len() != m.labels.len() {
            return Err(Error::Format("alpha and labels differ in length".into()));
        }
        validate_labels(&m.labels)?;
        Ok(m)
    }
}

pub fn dual_objective(k: &DMatrix<f64>, y: &[i8], alpha: &[f64]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * (y[i] * y[j]) as f64 * k[(i, j)];
        }
    }
    0.5 * quad - alpha.iter().sum::<f64>()
}

/// Scores K_cross (α∘y) + b and their signs, with sign(0) = +1.
pub fn predict(model: &SvmModel, k_cross: &DMatrix<f64>) -> Result<Prediction> {
    if k_cross.ncols() != model.train_size() {
        return Err(Error::input(format!(
            "kernel block has {} columns, model was trained on {} points",
            k_cross.ncols(),
            model.train_size()
        )));
    }
    let coef = model.coefficients();
    let scores: Vec<f64> = (0..k_cross.nrows())
        .map(|r| {
            model.bias
                + coef
                    .iter()
                    .enumerate()
                    .map(|(i, a)| a * k_cross[(r, i)])
                    .sum::<f64>()
        })
        .collect();
    let labels = scores.iter().map(|&s| if s >= 0.0 { 1 } else { -1 }).collect();
    Ok(Prediction { scores, labels })
}

pub fn accuracy(pred: &[i8], y: &[i8]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

/// Φ_𝒞(z) = min(1, max(0, 1 − z/𝒞)).
pub fn margin_penalty(z: f64, margin: f64) -> f64 {
    (1.0 - z / margin).clamp(0.0, 1.0)
}

/// Mean margin loss of `scores` against `y`.
pub fn margin_loss(scores: &[f64], y: &[i8], margin: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores
        .iter()
        .zip(y)
        .map(|(s, &l)| margin_penalty(l as f64 * s, margin))
        .sum::<f64>()
        / scores.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Number of nonzero kernel weights.
    pub p: usize,
    pub samples: usize,
    pub margin: f64,
    /// Bound on every component kernel's diagonal.
    pub r_squared: f64,
    pub delta: f64,
    /// Traces of the component Lego-kernel Grams.
    pub traces: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub empirical: f64,
    pub generalization_gap: f64,
}

pub fn rademacher_bound(bi: &BoundInputs) -> Result<BoundReport> {
    if !(bi.delta > 0.0 && bi.delta < 1.0) {
        return Err(Error::input(format!("delta must lie in (0, 1), got {}", bi.delta)));
    }
    if bi.p == 0 || bi.samples == 0 {
        return Err(Error::input("p and N must be positive"));
    }
    if !(bi.margin > 0.0) || !(bi.r_squared >= 0.0) {
        return Err(Error::input("margin must be positive and R^2 nonnegative"));
    }
    if bi.traces.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::input("kernel traces must be nonnegative"));
    }
    let n = bi.samples as f64;
    let u_norm = bi.traces.iter().map(|t| t * t).sum::<f64>().sqrt();
    Ok(BoundReport {
        empirical: (2.0 * ETA0 * u_norm).sqrt() / n,
        generalization_gap: complexity_term(bi.p, bi.samples, bi.margin, bi.r_squared)
            + confidence_term(bi.delta, bi.samples),
    })
}

/// (2 p^{1/4} / 𝒞) sqrt(2 η₀ R² / N).
pub fn complexity_term(p: usize, samples: usize, margin: f64, r_squared: f64) -> f64 {
    2.0 * (p as f64).powf(0.25) / margin * (2.0 * ETA0 * r_squared / samples as f64).sqrt()
}

/// 3 sqrt(ln(2/δ) / (2N)).
pub fn confidence_term(delta: f64, samples: usize) -> f64 {
    3.0 * ((2.0 / delta).ln() / (2.0 * samples as f64)).sqrt()
}

/// Stratified fold index for every sample: each class is shuffled by the seed
/// and dealt round-robin, continuing the deal across classes.
pub fn stratified_folds(y: &[i8], folds: usize, seed: u64) -> Result<Vec<usize>> {
    validate_labels(y)?;
    if folds < 2 {
        return Err(Error::input("at least two folds are required"));
    }
    if folds > y.len() {
        return Err(Error::input(format!("{folds} folds for {} samples", y.len())));
    }
    let mut assignment = vec![0; y.len()];
    let mut next = 0;
    for (ci, class) in [-1i8, 1].iter().enumerate() {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == *class).collect();
        if members.len() < 2 {
            return Err(Error::input(format!(
                "class {class} has {} members; cross-validation needs at least 2",
                members.len()
            )));
        }
        members.shuffle(&mut stream(seed, domain::FOLDS, ci as u64));
        for i in members {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best_c: f64,
    /// (C, mean fold accuracy) for every grid value, in grid order.
    pub table: Vec<(f64, f64)>,
}

pub fn cross_validate(k: &GramMatrix, y: &[i8], grid: &[f64], folds: usize, seed: u64) -> Result<CvResult> {
    cross_validate_with(k, y, grid, folds, seed, &SvmOptions::default())
}

pub fn cross_validate_with(
    k: &GramMatrix,
    y: &[i8],
    grid: &[f64],
    folds: usize,
    seed: u64,
    opts: &SvmOptions,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::input("empty C grid"));
    }
    if k.size() != y.len() {
        return Err(Error::input("Gram size and label count differ"));
    }
    let entries = if k.estimator() != EstimatorTag::Exact && opts.clip_noisy {
        k.clip_psd().into_entries()
    } else {
        k.entries().clone()
    };
    let assignment = stratified_folds(y, folds, seed)?;
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| assignment[i] == f);
            (train, test)
        })
        .collect();
    let cells: Vec<(usize, usize)> = (0..grid.len()).flat_map(|c| (0..folds).map(move |f| (c, f))).collect();
    let acc: Vec<f64> = cells
        .par_iter()
        .map(|&(ci, f)| {
            let (train, test) = &splits[f];
            let ktr = entries.select_rows(train.iter()).select_columns(train.iter());
            let ytr: Vec<i8> = train.iter().map(|&i| y[i]).collect();
            let model = solve(&ktr, &ytr, grid[ci], opts)?;
            let kte = entries.select_rows(test.iter()).select_columns(train.iter());
            let yte: Vec<i8> = test.iter().map(|&i| y[i]).collect();
            Ok(accuracy(&predict(&model, &kte)?.labels, &yte))
        })
        .collect::<Result<_>>()?;
    let table: Vec<(f64, f64)> = grid
        .iter()
        .enumerate()
        .map(|(ci, &c)| (c, acc[ci * folds..(ci + 1) * folds].iter().sum::<f64>() / folds as f64))
        .collect();
    let top = table.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let best_c = table
        .iter()
        .filter(|r| r.1 >= top - 1e-12)
        .map(|r| r.0)
        .fold(f64::INFINITY, f64::min);
    Ok(CvResult { best_c, table })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub p: usize,
    pub samples: usize,
    pub seed: u64,
    pub train_risk: f64,
    pub test_risk: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub p: usize,
    pub samples: usize,
    pub mean_train_risk: f64,
    pub mean_test_risk: f64,
    pub mean_gap: f64,
    pub bound: BoundReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapExperiment {
    pub rows: Vec<GapRow>,
    pub summary: Vec<GapSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapSettings {
    pub c: f64,
    pub p_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub margin: f64,
    pub delta: f64,
}

/// Columns chosen for `p` features under `seed`: a seeded permutation's prefix,
/// so larger p nest smaller ones for the same seed.
pub fn feature_subset(total: usize, p: usize, seed: u64) -> Result<Vec<usize>> {
    if p == 0 || p > total {
        return Err(Error::input(format!("cannot choose {p} of {total} features")));
    }
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(&mut stream(seed, domain::FEATURES, 0));
    let mut chosen = idx[..p].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Trains uniform-weight kernels on random p-subsets of the feature columns and
/// records train/test risk (1 − accuracy) for every (p, seed).
pub fn generalization_gap_experiment(
    train: &FeatureTable,
    y_train: &[i8],
    test: &FeatureTable,
    y_test: &[i8],
    settings: &GapSettings,
) -> Result<GapExperiment> {
    if train.rows() != y_train.len() || test.rows() != y_test.len() {
        return Err(Error::input("feature rows and label counts differ"));
    }
    if train.cols() != test.cols() {
        return Err(Error::input("train and test feature tables differ in width"));
    }
    if test.rows() == 0 {
        return Err(Error::input("generalization gap needs at least one test point"));
    }
    if settings.seeds.is_empty() {
        return Err(Error::input("no seeds given"));
    }
    if let Some(&p) = settings.p_values.iter().find(|&&p| p == 0 || p > train.cols()) {
        return Err(Error::input(format!(
            "p = {p} exceeds the {} available features",
            train.cols()
        )));
    }
    let cells: Vec<(usize, u64)> = settings
        .p_values
        .iter()
        .flat_map(|&p| settings.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let rows: Vec<GapRow> = cells
        .par_iter()
        .map(|&(p, seed)| {
            let cols = feature_subset(train.cols(), p, seed)?;
            let w = vec![1.0 / (p as f64).sqrt(); p];
            let tr = train.select_columns(&cols)?;
            let te = test.select_columns(&cols)?;
            let ktr = tr.weighted_inner(&tr, &w)?;
            let kte = te.weighted_inner(&tr, &w)?;
            let model = solve(&ktr, y_train, settings.c, &SvmOptions::default())?;
            let train_acc = accuracy(&predict(&model, &ktr)?.labels, y_train);
            let test_acc = accuracy(&predict(&model, &kte)?.labels, y_test);
            Ok(GapRow {
                p,
                samples: y_train.len(),
                seed,
                train_risk: 1.0 - train_acc,
                test_risk: 1.0 - test_acc,
                gap: train_acc - test_acc,
            })
        })
        .collect::<Result<_>>()?;

    let mut summary = Vec::new();
    for &p in &settings.p_values {
        let group: Vec<&GapRow> = rows.iter().filter(|r| r.p == p).collect();
        let mean = |f: fn(&GapRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / group.len() as f64;
        let traces = lego_traces(train);
        let mut empirical = 0.0;
        let mut bound = None;
        for &seed in &settings.seeds {
            let cols = feature_subset(train.cols(), p, seed)?;
            let b = rademacher_bound(&BoundInputs {
                p,
                samples: y_train.len(),
                margin: settings.margin,
                r_squared: 1.0,
                delta: settings.delta,
                traces: cols.iter().map(|&c| traces[c]).collect(),
            })?;
            empirical += b.empirical / settings.seeds.len() as f64;
            bound = Some(b);
        }
        let bound = BoundReport {
            empirical,
            generalization_gap: bound.map_or(0.0, |b| b.generalization_gap),
        };
        summary.push(GapSummary {
            p,
            samples: y_train.len(),
            mean_train_risk: mean(|r| r.train_risk),
            mean_test_risk: mean(|r| r.test_risk),
            mean_gap: mean(|r| r.gap),
            bound,
        });
    }
    Ok(GapExperiment { rows, summary })
}

/// Tr K_i = Σ_x tr(ρ(x) P_i)² for every feature column.
pub fn lego_traces(table: &FeatureTable) -> Vec<f64> {
    table
        .values()
        .column_iter()
        .map(|c| c.iter().map(|v| v * v).sum())
        .collect()
}

impl GapExperiment {
    pub fn to_csv(&self) -> String {
        use crate::kernels::format_float as f;
        let mut out = String::from("p,N,seed,train_risk,test_risk,gap\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.p,
                r.samples,
                r.seed,
                f(r.train_risk),
                f(r.test_risk),
                f(r.gap)
            ));
        }
        out
    }
}
