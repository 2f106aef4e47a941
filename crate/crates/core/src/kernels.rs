//! Exact evaluation of trace-induced kernels and Gram matrix assembly.
//!
//! Kernels built from Pauli expectations are evaluated feature-first: each
//! point is simulated once, its expectations are stored in a [`FeatureTable`],
//! and kernel entries are weighted inner products of table rows.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pauli::{
    binomial, combinations, degeneracy, enumerate_h_body, h_body_count, short_hex, KernelSpec,
    PauliString,
};
use crate::qstate::{
    all_pauli_expectations, embed, overlap, pauli_expectation, reduced_density_matrix,
    DensityMatrix, EmbeddingConfig, StateVector,
};

/// N x p table of unnormalized Pauli expectations tr(ρ(x) P_i).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    paulis: Vec<PauliString>,
    values: DMatrix<f64>,
}

impl FeatureTable {
    pub fn from_states(states: &[StateVector], paulis: &[PauliString]) -> Result<Self> {
        let n = match states.first() {
            Some(s) => s.n(),
            None => return Err(Error::input("no states to featurize")),
        };
        if states.iter().any(|s| s.n() != n) || paulis.iter().any(|p| p.n() != n) {
            return Err(Error::input("states and Pauli strings disagree on qubit count"));
        }
        // the full Walsh spectrum wins once p exceeds n 2^n strings
        let use_spectrum = n <= 12 && paulis.len() > n * (1usize << n);
        let rows: Vec<Vec<f64>> = states
            .par_iter()
            .map(|s| -> Result<Vec<f64>> {
                if use_spectrum {
                    let all = all_pauli_expectations(s)?;
                    Ok(paulis
                        .iter()
                        .map(|p| all[((p.x_mask() as usize) << n) | p.z_mask() as usize])
                        .collect())
                } else {
                    paulis.iter().map(|p| pauli_expectation(s, p)).collect()
                }
            })
            .collect::<Result<_>>()?;
        let values = DMatrix::from_fn(states.len(), paulis.len(), |i, j| rows[i][j]);
        Ok(Self {
            paulis: paulis.to_vec(),
            values,
        })
    }

    pub fn from_values(paulis: Vec<PauliString>, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != paulis.len() {
            return Err(Error::input("feature columns and Pauli labels differ in count"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("feature table contains non-finite values"));
        }
        Ok(Self { paulis, values })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn paulis(&self) -> &[PauliString] {
        &self.paulis
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_of(&self, p: &PauliString) -> Option<usize> {
        self.paulis.iter().position(|q| q == p)
    }

    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&c) = cols.iter().find(|&&c| c >= self.cols()) {
            return Err(Error::input(format!("column {c} out of range")));
        }
        let paulis = cols.iter().map(|&c| self.paulis[c]).collect();
        let values = DMatrix::from_fn(self.rows(), cols.len(), |i, j| self.values[(i, cols[j])]);
        Ok(Self { paulis, values })
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&r) = rows.iter().find(|&&r| r >= self.rows()) {
            return Err(Error::input(format!("row {r} out of range")));
        }
        let values = DMatrix::from_fn(rows.len(), self.cols(), |i, j| self.values[(rows[i], j)]);
        Ok(Self {
            paulis: self.paulis.clone(),
            values,
        })
    }

    /// sum_j w_j F[a, j] G[b, j] for every row pair.
    pub fn weighted_inner(&self, other: &FeatureTable, weights: &[f64]) -> Result<DMatrix<f64>> {
        if self.cols() != other.cols() || weights.len() != self.cols() {
            return Err(Error::input("feature tables and weights disagree on column count"));
        }
        let scaled = DMatrix::from_fn(self.rows(), self.cols(), |i, j| self.values[(i, j)] * weights[j]);
        Ok(&scaled * other.values.transpose())
    }
}

/// Lego kernel tr(ρ P̄) tr(ρ' P̄) with P̄ = P / sqrt(2^n).
pub fn lego_kernel(x: &[f64], y: &[f64], p: &PauliString, cfg: &EmbeddingConfig) -> Result<f64> {
    let (a, b) = embed_pair(x, y, cfg)?;
    lego_kernel_states(&a, &b, p)
}

pub fn lego_kernel_states(a: &StateVector, b: &StateVector, p: &PauliString) -> Result<f64> {
    let scale = 0.5f64.powi(a.n() as i32);
    Ok(pauli_expectation(a, p)? * pauli_expectation(b, p)? * scale)
}

/// Generalized trace-induced kernel sum_i w_i tr(ρ P_i) tr(ρ' P_i).
pub fn gtqk(x: &[f64], y: &[f64], spec: &KernelSpec, cfg: &EmbeddingConfig) -> Result<f64> {
    let (a, b) = embed_pair(x, y, cfg)?;
    gtqk_states(&a, &b, spec)
}

pub fn gtqk_states(a: &StateVector, b: &StateVector, spec: &KernelSpec) -> Result<f64> {
    check_spec(spec, a.n())?;
    let table = FeatureTable::from_states(&[a.clone(), b.clone()], &spec.paulis())?;
    let w = spec.weights();
    Ok((0..table.cols())
        .map(|j| w[j] * table.values[(0, j)] * table.values[(1, j)])
        .sum())
}

fn check_spec(spec: &KernelSpec, n: usize) -> Result<()> {
    if spec.n() != n {
        return Err(Error::input(format!(
            "kernel spec is for {} qubits, states have {n}",
            spec.n()
        )));
    }
    if spec.support_size() == 0 {
        return Err(Error::input("kernel spec has no nonzero weights"));
    }
    Ok(())
}

/// Global fidelity kernel |<ψ(x)|ψ(x')>|^2.
pub fn gfqk(x: &[f64], y: &[f64], cfg: &EmbeddingConfig) -> Result<f64> {
    let (a, b) = embed_pair(x, y, cfg)?;
    overlap(&a, &b)
}

/// Projected kernel tr(ρ_s(x) ρ_s(x')) on one qubit subset.
pub fn subsystem_lpqk(x: &[f64], y: &[f64], subset: &[usize], cfg: &EmbeddingConfig) -> Result<f64> {
    let (a, b) = embed_pair(x, y, cfg)?;
    subsystem_lpqk_states(&a, &b, subset)
}

pub fn subsystem_lpqk_states(a: &StateVector, b: &StateVector, subset: &[usize]) -> Result<f64> {
    let ra = reduced_density_matrix(a, subset)?;
    let rb = reduced_density_matrix(b, subset)?;
    ra.trace_product(&rb)
}

/// (1/sqrt C(n,S)) times the sum of subsystem kernels over all size-S subsets.
pub fn subset_size_lpqk(x: &[f64], y: &[f64], size: usize, cfg: &EmbeddingConfig) -> Result<f64> {
    let (a, b) = embed_pair(x, y, cfg)?;
    subset_size_lpqk_states(&a, &b, size)
}

pub fn subset_size_lpqk_states(a: &StateVector, b: &StateVector, size: usize) -> Result<f64> {
    let n = a.n();
    if size == 0 || size > n {
        return Err(Error::input(format!("S = {size} outside 1..={n}")));
    }
    if b.n() != n {
        return Err(Error::input("states differ in qubit count"));
    }
    let subsets = combinations(n, size);
    let mut total = 0.0;
    for s in &subsets {
        total += subsystem_lpqk_states(a, b, s)?;
    }
    Ok(total / (subsets.len() as f64).sqrt())
}

/// (1/sqrt d_H) sum over all weight-H strings of tr(ρ P) tr(ρ' P).
pub fn h_body_lpqk(x: &[f64], y: &[f64], body: usize, cfg: &EmbeddingConfig) -> Result<f64> {
    let (a, b) = embed_pair(x, y, cfg)?;
    h_body_lpqk_states(&a, &b, body)
}

pub fn h_body_lpqk_states(a: &StateVector, b: &StateVector, body: usize) -> Result<f64> {
    let n = a.n();
    let d = h_body_count(n, body)? as f64;
    let mut acc = 0.0;
    for p in enumerate_h_body(n, body)? {
        acc += pauli_expectation(a, &p)? * pauli_expectation(b, &p)?;
    }
    Ok(acc / d.sqrt())
}

fn embed_pair(x: &[f64], y: &[f64], cfg: &EmbeddingConfig) -> Result<(StateVector, StateVector)> {
    Ok((embed(x, cfg)?, embed(y, cfg)?))
}

/// Subset-size kernel assembled from H-body kernels:
/// k_S = (1 / (2^S sqrt|S_S|)) sum_{H<=S} sqrt(d_H) D^(S,H) k_H.
///
/// `h_values[h]` holds k_H for h = 0..=size.
pub fn s_from_h(h_values: &[f64], n: usize, size: usize) -> Result<f64> {
    if size > n {
        return Err(Error::input(format!("S = {size} exceeds n = {n}")));
    }
    if h_values.len() <= size {
        return Err(Error::input(format!(
            "need H-body values for H = 0..={size}, got {}",
            h_values.len()
        )));
    }
    let subsets = binomial(n as u64, size as u64) as f64;
    let mut acc = 0.0;
    for (body, k) in h_values.iter().enumerate().take(size + 1) {
        let d = h_body_count(n, body)? as f64;
        acc += d.sqrt() * degeneracy(n, size, body)? as f64 * k;
    }
    Ok(acc / (2f64.powi(size as i32) * subsets.sqrt()))
}

/// Inverse of [`s_from_h`]:
/// k_H = (1/sqrt d_H) sum_{S<=H} (-1)^{H-S} C(n-S, H-S) 2^S sqrt|S_S| k_S.
///
/// `s_values[s]` holds k_S for s = 0..=body; k_0 is the constant kernel 1.
pub fn h_from_s(s_values: &[f64], n: usize, body: usize) -> Result<f64> {
    if body > n {
        return Err(Error::input(format!("H = {body} exceeds n = {n}")));
    }
    if s_values.len() <= body {
        return Err(Error::input(format!(
            "need subset-size values for S = 0..={body}, got {}",
            s_values.len()
        )));
    }
    let mut acc = 0.0;
    for (size, k) in s_values.iter().enumerate().take(body + 1) {
        let sign = if (body - size) % 2 == 0 { 1.0 } else { -1.0 };
        let coeff = binomial((n - size) as u64, (body - size) as u64) as f64;
        let subsets = binomial(n as u64, size as u64) as f64;
        acc += sign * coeff * 2f64.powi(size as i32) * subsets.sqrt() * k;
    }
    Ok(acc / (h_body_count(n, body)? as f64).sqrt())
}

/// Kernel families that [`gram`] can assemble.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantumKernel {
    /// State overlap, evaluated directly.
    Gfqk,
    /// Reduced-state overlap on one subset, evaluated through RDMs.
    Subsystem(Vec<usize>),
    /// Uniform sum of subsystem kernels over all subsets of a size.
    SubsetSize(usize),
    /// H-body kernel, evaluated through its feature table.
    HBody(usize),
    /// Weighted Pauli kernel, evaluated through its feature table.
    Gtqk(KernelSpec),
    Lego(PauliString),
}

impl QuantumKernel {
    pub fn label(&self) -> String {
        match self {
            QuantumKernel::Gfqk => "gfqk".into(),
            QuantumKernel::Subsystem(s) => format!("s-lpqk{s:?}"),
            QuantumKernel::SubsetSize(size) => format!("S-lpqk({size})"),
            QuantumKernel::HBody(h) => format!("h-body({h})"),
            QuantumKernel::Gtqk(spec) => format!("gtqk:{}", spec.hash()),
            QuantumKernel::Lego(p) => format!("lego({p})"),
        }
    }

    pub fn hash(&self) -> String {
        match self {
            QuantumKernel::Gtqk(spec) => spec.hash(),
            other => {
                let digest = Sha256::digest(other.label().as_bytes());
                short_hex(&digest)
            }
        }
    }
}

/// How a Gram matrix was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorTag {
    Exact,
    Shadows,
    ShotNoisy,
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorTag::Exact => "exact",
            EstimatorTag::Shadows => "shadows",
            EstimatorTag::ShotNoisy => "shot-noisy",
        })
    }
}

impl FromStr for EstimatorTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(EstimatorTag::Exact),
            "shadows" => Ok(EstimatorTag::Shadows),
            "shot-noisy" => Ok(EstimatorTag::ShotNoisy),
            other => Err(Error::Format(format!("unknown estimator tag '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramMeta {
    pub kernel: String,
    pub dataset: String,
    pub estimator: EstimatorTag,
    pub seed: Option<u64>,
    /// Set once negative eigenvalues have been clipped to zero.
    #[serde(default)]
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    meta: GramMeta,
}

#[derive(Serialize, Deserialize)]
struct GramJson {
    meta: GramMeta,
    entries: Vec<Vec<f64>>,
}

impl GramMatrix {
    pub fn new(entries: DMatrix<f64>, meta: GramMeta) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::input(format!(
                "Gram matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.nrows() == 0 {
            return Err(Error::input("empty Gram matrix"));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("Gram matrix contains non-finite entries".into()));
        }
        Ok(Self { entries, meta })
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn meta(&self) -> &GramMeta {
        &self.meta
    }

    pub fn estimator(&self) -> EstimatorTag {
        self.meta.estimator
    }

    pub fn symmetry_error(&self) -> f64 {
        let n = self.size();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max((self.entries[(i, j)] - self.entries[(j, i)]).abs());
            }
        }
        worst
    }

    /// Eigenvalues of the symmetrized matrix, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let sym = (&self.entries + self.entries.transpose()) * 0.5;
        let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    /// min eigenvalue >= -rel_tol * max(|max eigenvalue|, tiny).
    pub fn is_psd(&self, rel_tol: f64) -> bool {
        let ev = self.eigenvalues();
        let lo = ev[0];
        let hi = ev[ev.len() - 1].abs().max(f64::MIN_POSITIVE);
        lo >= -rel_tol * hi
    }

    /// Projects onto the PSD cone by zeroing negative eigenvalues.
    pub fn clip_psd(&self) -> GramMatrix {
        let sym = (&self.entries + self.entries.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let vals = eig.eigenvalues.map(|v| v.max(0.0));
        let v = &eig.eigenvectors;
        let rebuilt = v * DMatrix::from_diagonal(&vals) * v.transpose();
        let rebuilt = (&rebuilt + rebuilt.transpose()) * 0.5;
        GramMatrix {
            entries: rebuilt,
            meta: GramMeta {
                clipped: true,
                ..self.meta.clone()
            },
        }
    }

    /// Principal submatrix on `idx`.
    pub fn submatrix(&self, idx: &[usize]) -> GramMatrix {
        GramMatrix {
            entries: DMatrix::from_fn(idx.len(), idx.len(), |i, j| self.entries[(idx[i], idx[j])]),
            meta: self.meta.clone(),
        }
    }

    pub fn to_csv(&self) -> String {
        let seed = self
            .meta
            .seed
            .map(|s| s.to_string())
            .unwrap_or_else(|| "none".into());
        let mut out = format!(
            "# kernel={} estimator={} seed={}\n",
            self.meta.kernel, self.meta.estimator, seed
        );
        for i in 0..self.size() {
            let row: Vec<String> = (0..self.size())
                .map(|j| format_float(self.entries[(i, j)]))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty Gram CSV".into()))?;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| Error::Format("Gram CSV must start with a '# kernel=...' header".into()))?;
        let mut kernel = None;
        let mut estimator = None;
        let mut seed = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("kernel", v)) => kernel = Some(v.to_string()),
                Some(("estimator", v)) => estimator = Some(v.parse::<EstimatorTag>()?),
                Some(("seed", "none")) => seed = None,
                Some(("seed", v)) => {
                    seed = Some(v.parse::<u64>().map_err(|_| Error::Format(format!("bad seed '{v}'")))?)
                }
                _ => return Err(Error::Format(format!("unexpected header field '{field}'"))),
            }
        }
        let rows: Vec<Vec<f64>> = lines
            .map(|l| {
                l.split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Format(format!("bad number '{v}'")))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Format("Gram CSV is not square".into()));
        }
        let entries = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(
            entries,
            GramMeta {
                kernel: kernel.ok_or_else(|| Error::Format("missing kernel= field".into()))?,
                dataset: String::new(),
                estimator: estimator.ok_or_else(|| Error::Format("missing estimator= field".into()))?,
                seed,
                clipped: false,
            },
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let rows = (0..self.size())
            .map(|i| self.entries.row(i).iter().copied().collect())
            .collect();
        Ok(serde_json::to_string_pretty(&GramJson {
            meta: self.meta.clone(),
            entries: rows,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: GramJson = serde_json::from_str(text)?;
        let n = g.entries.len();
        if g.entries.iter().any(|r| r.len() != n) {
            return Err(Error::Format("Gram JSON is not square".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| g.entries[i][j]), g.meta)
    }
}

/// Shortest decimal that parses back to the same f64.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

/// Content hash over the raw f64 bits of a dataset.
pub fn dataset_hash(rows: &[Vec<f64>]) -> String {
    let mut h = Sha256::new();
    h.update((rows.len() as u64).to_le_bytes());
    for r in rows {
        h.update((r.len() as u64).to_le_bytes());
        for v in r {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    short_hex(&h.finalize())
}

pub fn embed_all(rows: &[Vec<f64>], cfg: &EmbeddingConfig) -> Result<Vec<StateVector>> {
    cfg.validate()?;
    rows.par_iter().map(|x| embed(x, cfg)).collect()
}

/// Exact Gram matrix of `kernel` over `rows`.
pub fn gram(rows: &[Vec<f64>], cfg: &EmbeddingConfig, kernel: &QuantumKernel) -> Result<GramMatrix> {
    if rows.is_empty() {
        return Err(Error::input("empty dataset"));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != cfg.n) {
        return Err(Error::input(format!(
            "row of length {} in a {}-qubit embedding",
            r.len(),
            cfg.n
        )));
    }
    let states = embed_all(rows, cfg)?;
    let entries = cross_from_states(&states, &states, kernel)?;
    let entries = (&entries + entries.transpose()) * 0.5;
    GramMatrix::new(
        entries,
        GramMeta {
            kernel: kernel.hash(),
            dataset: dataset_hash(rows),
            estimator: EstimatorTag::Exact,
            seed: None,
            clipped: false,
        },
    )
}

/// Gram matrix restricted to the points at `subset`.
pub fn gram_subset(
    rows: &[Vec<f64>],
    subset: &[usize],
    cfg: &EmbeddingConfig,
    kernel: &QuantumKernel,
) -> Result<GramMatrix> {
    let picked = subset
        .iter()
        .map(|&i| rows.get(i).cloned().ok_or_else(|| Error::input(format!("index {i} out of range"))))
        .collect::<Result<Vec<_>>>()?;
    gram(&picked, cfg, kernel)
}

/// Rectangular block K[i, j] = k(rows_i, cols_j).
pub fn cross_gram(
    rows: &[Vec<f64>],
    cols: &[Vec<f64>],
    cfg: &EmbeddingConfig,
    kernel: &QuantumKernel,
) -> Result<DMatrix<f64>> {
    let a = embed_all(rows, cfg)?;
    let b = embed_all(cols, cfg)?;
    cross_from_states(&a, &b, kernel)
}

/// Kernel block between two embedded sets.
pub fn cross_from_states(
    a: &[StateVector],
    b: &[StateVector],
    kernel: &QuantumKernel,
) -> Result<DMatrix<f64>> {
    let n = match a.first().or(b.first()) {
        Some(s) => s.n(),
        None => return Ok(DMatrix::zeros(a.len(), b.len())),
    };
    if a.iter().chain(b).any(|s| s.n() != n) {
        return Err(Error::input("states differ in qubit count"));
    }
    match kernel {
        QuantumKernel::Gfqk => pairwise(a, b, |u, v| overlap(u, v)),
        QuantumKernel::Subsystem(s) => {
            let ra = rdms(a, s)?;
            let rb = rdms(b, s)?;
            pairwise(&ra, &rb, |u, v| u.trace_product(v))
        }
        QuantumKernel::SubsetSize(size) => {
            let size = *size;
            if size == 0 || size > n {
                return Err(Error::input(format!("S = {size} outside 1..={n}")));
            }
            let subsets = combinations(n, size);
            let mut total = DMatrix::zeros(a.len(), b.len());
            for s in &subsets {
                let ra = rdms(a, s)?;
                let rb = rdms(b, s)?;
                total += pairwise(&ra, &rb, |u, v| u.trace_product(v))?;
            }
            Ok(total / (subsets.len() as f64).sqrt())
        }
        QuantumKernel::HBody(body) => {
            let spec = KernelSpec::preset(n, crate::pauli::Preset::HBody(*body))?;
            weighted_block(a, b, &spec)
        }
        QuantumKernel::Gtqk(spec) => {
            check_spec(spec, n)?;
            weighted_block(a, b, spec)
        }
        QuantumKernel::Lego(p) => {
            if p.n() != n {
                return Err(Error::input("Pauli string and states differ in qubit count"));
            }
            let fa: Vec<f64> = a.iter().map(|s| pauli_expectation(s, p)).collect::<Result<_>>()?;
            let fb: Vec<f64> = b.iter().map(|s| pauli_expectation(s, p)).collect::<Result<_>>()?;
            let scale = 0.5f64.powi(n as i32);
            Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| fa[i] * fb[j] * scale))
        }
    }
}

fn rdms(states: &[StateVector], subset: &[usize]) -> Result<Vec<DensityMatrix>> {
    states
        .par_iter()
        .map(|s| reduced_density_matrix(s, subset))
        .collect()
}

fn pairwise<T: Sync>(
    a: &[T],
    b: &[T],
    f: impl Fn(&T, &T) -> Result<f64> + Sync,
) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = a
        .par_iter()
        .map(|u| b.iter().map(|v| f(u, v)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| rows[i][j]))
}

fn weighted_block(a: &[StateVector], b: &[StateVector], spec: &KernelSpec) -> Result<DMatrix<f64>> {
    let paulis = spec.paulis();
    let fa = FeatureTable::from_states(a, &paulis)?;
    let fb = FeatureTable::from_states(b, &paulis)?;
    fa.weighted_inner(&fb, &spec.weights())
}

/// Gram matrix of a weighted feature kernel from a precomputed table.
pub fn gram_from_features(
    table: &FeatureTable,
    weights: &[f64],
    meta: GramMeta,
) -> Result<GramMatrix> {
    let k = table.weighted_inner(table, weights)?;
    GramMatrix::new((&k + k.transpose()) * 0.5, meta)
}

/// Double centering K - 1K/N - K1/N + 1K1/N^2.
pub fn center_gram(k: &GramMatrix) -> GramMatrix {
    let n = k.size();
    let m = k.entries();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| m.row(i).sum() / nf).collect();
    let col_means: Vec<f64> = (0..n).map(|j| m.column(j).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    let centered = DMatrix::from_fn(n, n, |i, j| m[(i, j)] - row_means[i] - col_means[j] + grand);
    GramMatrix {
        entries: centered,
        meta: k.meta.clone(),
    }
}
