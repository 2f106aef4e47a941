//! Experiment configuration and the runs behind each CLI command.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{prepare, PrepareOptions, Prepared};
use crate::error::{Error, Result};
use crate::idx::{parse_idx, synthetic_fashion};
use crate::kernels::{
    dataset_hash, embed_all, format_float, gram, EstimatorTag, FeatureTable, GramMatrix, GramMeta, QuantumKernel,
};
use crate::learner::{
    accuracy, cross_validate, feature_subset, generalization_gap_experiment, predict, svm_train, GapExperiment,
    GapSettings,
};
use crate::mercer::{cross_correlation, MercerDecomposition};
use crate::pauli::{enumerate_h_body, short_hex, KernelConfig, KernelSpec};
use crate::qstate::{EmbeddingConfig, StateVector};
use crate::rng::domain;
use crate::shadows::{default_groups, noisy_gfqk_cross, noisy_gfqk_gram, shadow_features, shadow_gram, shot_budget, BudgetQuery};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorConfig {
    #[default]
    Exact,
    Shadows {
        snapshots: usize,
        #[serde(default)]
        groups: Option<usize>,
        #[serde(default = "default_max_body")]
        max_body: usize,
    },
    ShotNoisy {
        shots: u64,
    },
}

fn default_max_body() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    #[serde(default = "default_c")]
    pub c: f64,
    /// Cross-validated grid; when absent `c` is used as is.
    #[serde(default)]
    pub cv_grid: Option<Vec<f64>>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_c() -> f64 {
    5.0
}
fn default_folds() -> usize {
    10
}
fn default_margin() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    0.05
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            c: default_c(),
            cv_grid: None,
            folds: default_folds(),
            margin: default_margin(),
            delta: default_delta(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    Idx { images: PathBuf, labels: PathBuf },
    /// Generated garment silhouettes, `per_class` images for each of ten classes.
    Synthetic {
        per_class: usize,
        #[serde(default)]
        generator_seed: u64,
    },
    /// Output of `qkern ingest`.
    Prepared { path: PathBuf },
}

impl DataSource {
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DataSource::Idx { images, labels } => {
                fix(images);
                fix(labels);
            }
            DataSource::Prepared { path } => fix(path),
            DataSource::Synthetic { .. } => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(flatten)]
    pub source: DataSource,
    #[serde(default = "default_classes")]
    pub classes: [u8; 2],
    #[serde(default = "default_train")]
    pub train: usize,
    #[serde(default = "default_test")]
    pub test: usize,
    #[serde(default = "default_pca")]
    pub pca: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_classes() -> [u8; 2] {
    [0, 3]
}
fn default_train() -> usize {
    100
}
fn default_test() -> usize {
    20
}
fn default_pca() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default)]
    pub bandwidths: Vec<f64>,
    #[serde(default)]
    pub p_values: Vec<usize>,
    #[serde(default)]
    pub n_values: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Body order of the sub-sampled Pauli features.
    #[serde(default = "default_body")]
    pub body: usize,
    #[serde(default = "default_true")]
    pub include_gfqk: bool,
    /// Shots per fidelity entry; exact fidelities when absent.
    #[serde(default)]
    pub gfqk_shots: Option<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_body() -> usize {
    2
}
fn default_true() -> bool {
    true
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            bandwidths: Vec::new(),
            p_values: Vec::new(),
            n_values: Vec::new(),
            seeds: default_seeds(),
            body: default_body(),
            include_gfqk: true,
            gfqk_shots: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub embedding: EmbeddingConfig,
    pub kernel: KernelConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    /// Master seed for estimator noise.
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        if let Some(base) = path.parent() {
            cfg.dataset.source.rebase(base);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.embedding.validate()?;
        if self.dataset.pca != self.embedding.n {
            return Err(Error::input(format!(
                "PCA dimension {} differs from the {}-qubit embedding",
                self.dataset.pca, self.embedding.n
            )));
        }
        KernelSpec::from_config(self.embedding.n, &self.kernel)?;
        if let EstimatorConfig::Shadows { snapshots: 0, .. } | EstimatorConfig::ShotNoisy { shots: 0 } = self.estimator {
            return Err(Error::input("estimator sample count must be positive"));
        }
        if self.sweep.seeds.is_empty() {
            return Err(Error::input("sweep needs at least one seed"));
        }
        Ok(())
    }

    /// Hash of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        short_hex(&Sha256::digest(&bytes))
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self
    }
}

pub fn quantum_kernel(n: usize, cfg: &KernelConfig) -> Result<QuantumKernel> {
    Ok(match cfg {
        KernelConfig::Gfqk => QuantumKernel::Gfqk,
        KernelConfig::Subsystem { s } => QuantumKernel::Subsystem(crate::pauli::validate_subset(n, s)?),
        KernelConfig::SubsetSize { size } => QuantumKernel::SubsetSize(*size),
        KernelConfig::HBody { body } => QuantumKernel::HBody(*body),
        KernelConfig::Custom { .. } => QuantumKernel::Gtqk(KernelSpec::from_config(n, cfg)?),
    })
}

/// Loads the configured source and prepares it with the dataset seed shifted by `offset`.
pub fn load_dataset(cfg: &DatasetConfig, train: usize, offset: u64) -> Result<Prepared> {
    let opts = PrepareOptions {
        classes: cfg.classes,
        train,
        test: cfg.test,
        pca_dim: cfg.pca,
        seed: cfg.seed.wrapping_add(offset),
        rescale_components: true,
    };
    let raw = match &cfg.source {
        DataSource::Idx { images, labels } => parse_idx(images, labels)?,
        DataSource::Synthetic {
            per_class,
            generator_seed,
        } => synthetic_fashion(*per_class, *generator_seed),
        DataSource::Prepared { path } => {
            let p = Prepared::from_json(&std::fs::read_to_string(path)?)?;
            if p.train.dim() != cfg.pca {
                return Err(Error::input(format!(
                    "prepared data has {} features, config expects {}",
                    p.train.dim(),
                    cfg.pca
                )));
            }
            return Ok(p);
        }
    };
    prepare(&raw, &opts).map_err(|e| e.stage("prepare"))
}

/// Training-set Gram matrix for the configured kernel and estimator.
pub fn run_gram(cfg: &ExperimentConfig) -> Result<(GramMatrix, Prepared)> {
    let data = load_dataset(&cfg.dataset, cfg.dataset.train, 0)?;
    let rows = &data.train.features;
    let n = cfg.embedding.n;
    let g = match &cfg.estimator {
        EstimatorConfig::Exact => gram(rows, &cfg.embedding, &quantum_kernel(n, &cfg.kernel)?)?,
        EstimatorConfig::Shadows {
            snapshots,
            groups,
            max_body,
        } => {
            let spec = KernelSpec::from_config(n, &cfg.kernel)?;
            shadow_gram(
                rows,
                &cfg.embedding,
                &spec,
                *max_body,
                *snapshots,
                groups.unwrap_or_else(|| default_groups(*snapshots)),
                cfg.seed,
            )?
        }
        EstimatorConfig::ShotNoisy { shots } => {
            if cfg.kernel != KernelConfig::Gfqk {
                return Err(Error::input("the shot-noisy estimator applies to the gfqk kernel only"));
            }
            noisy_gfqk_gram(rows, &cfg.embedding, *shots, cfg.seed)?
        }
    };
    Ok((g, data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bandwidth: f64,
    pub p: usize,
    pub mean_accuracy: f64,
    pub stderr: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("bandwidth,p,mean_accuracy,stderr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            format_float(r.bandwidth),
            r.p,
            format_float(r.mean_accuracy),
            format_float(r.stderr)
        ));
    }
    out
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn exact_meta(kernel: String, est: EstimatorTag) -> GramMeta {
    GramMeta {
        kernel,
        dataset: String::new(),
        estimator: est,
        seed: None,
        clipped: false,
    }
}

fn features(
    states: &[StateVector],
    paulis: &[crate::pauli::PauliString],
    est: &EstimatorConfig,
    seed: u64,
    offset: u64,
) -> Result<FeatureTable> {
    match est {
        EstimatorConfig::Shadows { snapshots, groups, .. } => shadow_features(
            states,
            paulis,
            *snapshots,
            groups.unwrap_or_else(|| default_groups(*snapshots)),
            seed,
            domain::SHADOWS,
            offset,
        ),
        _ => FeatureTable::from_states(states, paulis),
    }
}

/// Cross-validates C on the training Gram, refits, and scores the test block.
fn fit_and_score(
    k_train: GramMatrix,
    k_test: &DMatrix<f64>,
    y_train: &[i8],
    y_test: &[i8],
    learner: &LearnerConfig,
    seed: u64,
) -> Result<f64> {
    let c = match &learner.cv_grid {
        Some(grid) => cross_validate(&k_train, y_train, grid, learner.folds, seed)?.best_c,
        None => learner.c,
    };
    let model = svm_train(&k_train, y_train, c)?;
    Ok(accuracy(&predict(&model, k_test)?.labels, y_test))
}

/// Test accuracy against bandwidth for nested random p-subsets of the body-H
/// Pauli features, plus the fidelity kernel (reported with p = 4^n).
pub fn sweep_bandwidth(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let sw = &cfg.sweep;
    if sw.bandwidths.is_empty() {
        return Err(Error::input("sweep.bandwidths is empty"));
    }
    let n = cfg.embedding.n;
    let paulis = enumerate_h_body(n, sw.body)?;
    if let Some(&p) = sw.p_values.iter().find(|&&p| p == 0 || p > paulis.len()) {
        return Err(Error::input(format!("p = {p} outside 1..={}", paulis.len())));
    }
    let datasets: Vec<Prepared> = sw
        .seeds
        .iter()
        .map(|&s| load_dataset(&cfg.dataset, cfg.dataset.train, s))
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> = (0..sw.bandwidths.len())
        .flat_map(|b| (0..sw.seeds.len()).map(move |s| (b, s)))
        .collect();
    let gfqk_p = 1usize << (2 * n);
    // (bandwidth index, p, accuracy)
    let results: Vec<Vec<(usize, usize, f64)>> = cells
        .par_iter()
        .map(|&(bi, si)| -> Result<Vec<(usize, usize, f64)>> {
            let seed = sw.seeds[si];
            let data = &datasets[si];
            let emb = cfg.embedding.clone().with_bandwidth(sw.bandwidths[bi]);
            let tr = embed_all(&data.train.features, &emb)?;
            let te = embed_all(&data.test.features, &emb)?;
            let noise_seed = cfg.seed ^ seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ bi as u64;
            let ftr = features(&tr, &paulis, &cfg.estimator, noise_seed, 0)?;
            let fte = features(&te, &paulis, &cfg.estimator, noise_seed, tr.len() as u64)?;
            let est = match cfg.estimator {
                EstimatorConfig::Exact => EstimatorTag::Exact,
                _ => EstimatorTag::Shadows,
            };
            let mut out = Vec::new();
            for &p in &sw.p_values {
                let cols = feature_subset(paulis.len(), p, seed)?;
                let w = vec![1.0 / (p as f64).sqrt(); p];
                let a = ftr.select_columns(&cols)?;
                let b = fte.select_columns(&cols)?;
                let k_train = a.weighted_inner(&a, &w)?;
                let k_train = GramMatrix::new((&k_train + k_train.transpose()) * 0.5, exact_meta(format!("p{p}"), est))?;
                let k_test = b.weighted_inner(&a, &w)?;
                let acc = fit_and_score(k_train, &k_test, &data.train.labels, &data.test.labels, &cfg.learner, seed)
                    .map_err(|e| e.stage(&format!("sweep p={p}")))?;
                out.push((bi, p, acc));
            }
            if sw.include_gfqk {
                let (k_train, k_test) = match sw.gfqk_shots {
                    None => (
                        gram(&data.train.features, &emb, &QuantumKernel::Gfqk)?,
                        crate::kernels::cross_from_states(&te, &tr, &QuantumKernel::Gfqk)?,
                    ),
                    Some(m) => (
                        noisy_gfqk_gram(&data.train.features, &emb, m, noise_seed)?,
                        noisy_gfqk_cross(&data.test.features, &data.train.features, &emb, m, noise_seed)?,
                    ),
                };
                let acc = fit_and_score(k_train, &k_test, &data.train.labels, &data.test.labels, &cfg.learner, seed)
                    .map_err(|e| e.stage("sweep gfqk"))?;
                out.push((bi, gfqk_p, acc));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<(usize, usize, f64)> = results.into_iter().flatten().collect();
    let mut ps = sw.p_values.clone();
    if sw.include_gfqk {
        ps.push(gfqk_p);
    }
    let mut rows = Vec::new();
    for (bi, &bw) in sw.bandwidths.iter().enumerate() {
        for &p in &ps {
            let accs: Vec<f64> = flat
                .iter()
                .filter(|(b, q, _)| *b == bi && *q == p)
                .map(|t| t.2)
                .collect();
            let (mean, stderr) = mean_stderr(&accs);
            rows.push(SweepRow {
                bandwidth: bw,
                p,
                mean_accuracy: mean,
                stderr,
            });
        }
    }
    Ok(rows)
}

/// Generalization gap against p at every training-set size in `sweep.n_values`.
pub fn gen_gap(cfg: &ExperimentConfig) -> Result<GapExperiment> {
    let sw = &cfg.sweep;
    if sw.n_values.is_empty() || sw.p_values.is_empty() {
        return Err(Error::input("sweep.n_values and sweep.p_values must be nonempty"));
    }
    let n = cfg.embedding.n;
    let paulis = enumerate_h_body(n, sw.body)?;
    let mut all = GapExperiment {
        rows: Vec::new(),
        summary: Vec::new(),
    };
    for &samples in &sw.n_values {
        let data = load_dataset(&cfg.dataset, samples, 0)?;
        let tr = embed_all(&data.train.features, &cfg.embedding)?;
        let te = embed_all(&data.test.features, &cfg.embedding)?;
        let ftr = features(&tr, &paulis, &cfg.estimator, cfg.seed, 0)?;
        let fte = features(&te, &paulis, &cfg.estimator, cfg.seed, tr.len() as u64)?;
        let exp = generalization_gap_experiment(
            &ftr,
            &data.train.labels,
            &fte,
            &data.test.labels,
            &GapSettings {
                c: cfg.learner.c,
                p_values: sw.p_values.clone(),
                seeds: sw.seeds.clone(),
                margin: cfg.learner.margin,
                delta: cfg.learner.delta,
            },
        )
        .map_err(|e| e.stage(&format!("gen-gap N={samples}")))?;
        all.rows.extend(exp.rows);
        all.summary.extend(exp.summary);
    }
    Ok(all)
}

/// CSV "N,M_gfqk,M_lpqk_<H>..." for N = 1..=n_max, plus the crossover per H.
pub fn shots_table(n: usize, bodies: &[usize], eps: f64, n_max: u64) -> Result<(String, Vec<(usize, u64)>)> {
    if bodies.is_empty() || n_max == 0 {
        return Err(Error::input("need at least one H and N-max >= 1"));
    }
    let mut out = String::from("N,M_gfqk");
    for h in bodies {
        out.push_str(&format!(",M_lpqk_{h}"));
    }
    out.push('\n');
    let mut crossovers = Vec::new();
    for &h in bodies {
        crossovers.push((h, shot_budget(&BudgetQuery::new(n, 1, h, eps))?.crossover_n));
    }
    for points in 1..=n_max {
        let mut line = String::new();
        for (i, &h) in bodies.iter().enumerate() {
            let b = shot_budget(&BudgetQuery::new(n, points, h, eps))?;
            if i == 0 {
                line.push_str(&format!("{points},{}", b.m_gfqk));
            }
            line.push_str(&format!(",{}", b.m_lpqk));
        }
        out.push_str(&line);
        out.push('\n');
    }
    Ok((out, crossovers))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MercerReport {
    pub n: usize,
    pub dataset: String,
    pub rank: usize,
    pub eigenvalue_sum: f64,
    pub orthogonality: f64,
    pub reconstruction_error: f64,
    /// Cross-correlation of the modes on the held-out split.
    pub test_cross_correlation: f64,
}

pub fn run_mercer(cfg: &ExperimentConfig) -> Result<(MercerDecomposition, MercerReport)> {
    let data = load_dataset(&cfg.dataset, cfg.dataset.train, 0)?;
    let rows = &data.train.features;
    let g = crate::mercer::feature_gram_operator(rows, &cfg.embedding)?;
    let md = crate::mercer::diagonalize(&g)?.with_dataset(dataset_hash(rows));
    let orth = crate::mercer::lego_rkhs_orthogonality(&md, rows, &cfg.embedding)?;
    let test_cc = if data.test.is_empty() {
        0.0
    } else {
        cross_correlation(&md, &data.test.features, &cfg.embedding)?
    };
    let report = MercerReport {
        n: md.n(),
        dataset: md.dataset().to_string(),
        rank: md.rank(),
        eigenvalue_sum: md.eigenvalues().iter().sum(),
        orthogonality: orth,
        reconstruction_error: md.reconstruction_error(&g),
        test_cross_correlation: test_cc,
    };
    Ok((md, report))
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::input(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: Option<String>,
    pub config: Option<serde_json::Value>,
    pub arguments: serde_json::Value,
    pub seeds: Vec<u64>,
    pub outputs: Vec<OutputRecord>,
}

impl Manifest {
    pub fn new(command: &str, arguments: serde_json::Value) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: None,
            config: None,
            arguments,
            seeds: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn with_config(mut self, cfg: &ExperimentConfig) -> Result<Self> {
        self.config_hash = Some(cfg.hash());
        self.config = Some(serde_json::to_value(cfg)?);
        let mut seeds = vec![cfg.seed, cfg.dataset.seed];
        seeds.extend(&cfg.sweep.seeds);
        self.seeds = seeds;
        Ok(self)
    }

    /// Writes `bytes` atomically and records its digest.
    pub fn emit(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.outputs.push(OutputRecord {
            path: path.display().to_string(),
            sha256: Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect(),
        });
        Ok(())
    }

    /// Manifest path next to the primary output.
    pub fn path_for(out: &Path) -> PathBuf {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        write_atomic(&Self::path_for(out), serde_json::to_string_pretty(self)?.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "embedding": {"n": 4, "bandwidth": 0.3},
                "kernel": {"preset": "h-body", "H": 2},
                "dataset": {"source": "synthetic", "per_class": 30, "pca": 4, "train": 20, "test": 10},
                "sweep": {"bandwidths": [0.1, 0.5], "p_values": [5, 54], "n_values": [10, 20], "seeds": [0, 1]}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn config_defaults_and_hash() {
        let cfg = config();
        assert_eq!(cfg.embedding.layers, 2);
        assert_eq!(cfg.learner.folds, 10);
        assert_eq!(cfg.dataset.classes, [0, 3]);
        let again = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
        assert_ne!(cfg.clone().with_seed(Some(9)).hash(), cfg.hash());
    }

    #[test]
    fn config_errors() {
        let bad = r#"{"embedding": {"n": 4, "bandwidth": 0.3}, "kernel": {"preset": "gfqk"},
                      "dataset": {"source": "synthetic", "per_class": 5, "pca": 8}}"#;
        assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Input(_))));
        assert!(matches!(ExperimentConfig::from_json("{"), Err(Error::Format(_))));
    }

    #[test]
    fn gram_run_is_reproducible() {
        let cfg = config();
        let (a, _) = run_gram(&cfg).unwrap();
        let (b, _) = run_gram(&cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.size(), 20);
    }

    #[test]
    fn sweep_and_gap_shapes() {
        let cfg = config();
        let rows = sweep_bandwidth(&cfg).unwrap();
        assert_eq!(rows.len(), 2 * 3);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.mean_accuracy)));
        let gap = gen_gap(&cfg).unwrap();
        assert_eq!(gap.rows.len(), 2 * 2 * 2);
        assert!(gap.to_csv().starts_with("p,N,seed,train_risk,test_risk,gap\n"));
    }

    #[test]
    fn shots_table_header() {
        let (csv, cross) = shots_table(20, &[1, 2], 1.0, 5).unwrap();
        assert!(csv.starts_with("N,M_gfqk,M_lpqk_1,M_lpqk_2\n1,"));
        assert_eq!(csv.lines().count(), 6);
        assert_eq!(cross.len(), 2);
    }

    #[test]
    fn atomic_write_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sub/out.csv");
        let mut m = Manifest::new("gram", serde_json::json!({}));
        m.emit(&out, b"a,b\n").unwrap();
        m.write(&out).unwrap();
        assert_eq!(std::fs::read(&out).unwrap(), b"a,b\n");
        assert!(dir.path().join("sub/out.csv.manifest.json").exists());
        assert_eq!(std::fs::read_dir(dir.path().join("sub")).unwrap().count(), 2);
    }
}
