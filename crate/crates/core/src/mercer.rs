//! Empirical Mercer analysis of the fidelity kernel.
//!
//! The data covariance operator is represented in the normalized Pauli basis
//! P̄_j = P_j / sqrt(2^n), with all 4^n strings in canonical order (see
//! [`enumerate_all`]). Diagonalizing it gives the Mercer basis
//! A_i = sum_j V[j, i] P̄_j and eigenvalues γ_i under the empirical measure
//! of the dataset that built it.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::dataset_hash;
use crate::pauli::{enumerate_all, PauliString};
use crate::qstate::{all_pauli_expectations, embed, EmbeddingConfig, StateVector};

/// Largest register the 4^n x 4^n operator is built for.
pub const MAX_MERCER_QUBITS: usize = 6;

/// Modes with γ at or below this are treated as absent.
pub const DEGENERATE_TOL: f64 = 1e-10;

const MAGIC: &[u8; 8] = b"MERCERV1";

fn check_capacity(n: usize) -> Result<()> {
    if n > MAX_MERCER_QUBITS {
        return Err(Error::capacity(format!(
            "Mercer analysis is limited to {MAX_MERCER_QUBITS} qubits, got {n}"
        )));
    }
    Ok(())
}

/// N x 4^n matrix of normalized Pauli features tr(ρ P̄_j).
pub fn normalized_pauli_features(states: &[StateVector]) -> Result<DMatrix<f64>> {
    let n = match states.first() {
        Some(s) => s.n(),
        None => return Err(Error::input("empty dataset")),
    };
    check_capacity(n)?;
    if states.iter().any(|s| s.n() != n) {
        return Err(Error::input("states differ in qubit count"));
    }
    let order = enumerate_all(n)?;
    let scale = 1.0 / 2f64.powi(n as i32).sqrt();
    let rows: Vec<Vec<f64>> = states
        .par_iter()
        .map(|s| -> Result<Vec<f64>> {
            let all = all_pauli_expectations(s)?;
            Ok(order
                .iter()
                .map(|p| all[((p.x_mask() as usize) << n) | p.z_mask() as usize] * scale)
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(states.len(), order.len(), |i, j| rows[i][j]))
}

/// G[i, j] = (1/N) sum_x tr(ρ(x) P̄_i) tr(ρ(x) P̄_j).
pub fn feature_gram_operator(rows: &[Vec<f64>], cfg: &EmbeddingConfig) -> Result<DMatrix<f64>> {
    check_capacity(cfg.n)?;
    if rows.is_empty() {
        return Err(Error::input("empty dataset"));
    }
    let states = rows
        .iter()
        .map(|x| embed(x, cfg))
        .collect::<Result<Vec<_>>>()?;
    operator_from_states(&states)
}

pub fn operator_from_states(states: &[StateVector]) -> Result<DMatrix<f64>> {
    let f = normalized_pauli_features(states)?;
    let g = f.transpose() * &f / states.len() as f64;
    Ok((&g + g.transpose()) * 0.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MercerDecomposition {
    n: usize,
    eigenvalues: Vec<f64>,
    basis: DMatrix<f64>,
    dataset: String,
}

#[derive(Serialize, Deserialize)]
struct MercerJson {
    n: usize,
    dataset: String,
    eigenvalues: Vec<f64>,
    pauli_order: Vec<String>,
}

/// Eigen-decomposes a symmetric 4^n x 4^n operator, sorted by descending γ.
///
/// Each eigenvector is signed so its first entry with magnitude above 1e-12
/// is positive.
pub fn diagonalize(g: &DMatrix<f64>) -> Result<MercerDecomposition> {
    let dim = g.nrows();
    if dim != g.ncols() {
        return Err(Error::input("operator must be square"));
    }
    let n = (1..=MAX_MERCER_QUBITS)
        .find(|&n| 1usize << (2 * n) == dim)
        .ok_or_else(|| Error::input(format!("operator dimension {dim} is not 4^n for n <= 6")))?;
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let asym = (g - g.transpose()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if asym > 1e-12 * scale {
        return Err(Error::input(format!("operator is not symmetric (max deviation {asym:e})")));
    }
    let eig = SymmetricEigen::new(g.clone());
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut basis = DMatrix::from_fn(dim, dim, |r, c| eig.eigenvectors[(r, order[c])]);
    for mut col in basis.column_iter_mut() {
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12).copied() {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
    Ok(MercerDecomposition {
        n,
        eigenvalues,
        basis,
        dataset: String::new(),
    })
}

impl MercerDecomposition {
    /// Builds the operator from `rows` and diagonalizes it, recording the dataset hash.
    pub fn from_dataset(rows: &[Vec<f64>], cfg: &EmbeddingConfig) -> Result<Self> {
        let g = feature_gram_operator(rows, cfg)?;
        let mut md = diagonalize(&g)?;
        md.dataset = dataset_hash(rows);
        Ok(md)
    }

    pub fn with_dataset(mut self, hash: impl Into<String>) -> Self {
        self.dataset = hash.into();
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Column i holds the Pauli-basis coefficients of A_i.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn dataset(&self) -> &str {
        &self.dataset
    }

    /// Number of modes with γ above [`DEGENERATE_TOL`].
    pub fn rank(&self) -> usize {
        self.eigenvalues.iter().filter(|&&g| g > DEGENERATE_TOL).count()
    }

    /// max |V Γ Vᵀ - G|.
    pub fn reconstruction_error(&self, g: &DMatrix<f64>) -> f64 {
        let gamma = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.eigenvalues));
        let r = &self.basis * gamma * self.basis.transpose() - g;
        r.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// max |VᵀV - I|.
    pub fn orthogonality_error(&self) -> f64 {
        let d = self.basis.transpose() * &self.basis - DMatrix::identity(self.dim(), self.dim());
        d.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// N x 4^n matrix of tr(ρ(x) A_i).
    pub fn mode_features(&self, states: &[StateVector]) -> Result<DMatrix<f64>> {
        if let Some(s) = states.iter().find(|s| s.n() != self.n) {
            return Err(Error::input(format!(
                "{}-qubit state against a {}-qubit decomposition",
                s.n(),
                self.n
            )));
        }
        Ok(normalized_pauli_features(states)? * &self.basis)
    }

    fn check_config(&self, cfg: &EmbeddingConfig) -> Result<()> {
        if cfg.n != self.n {
            return Err(Error::input(format!(
                "embedding has {} qubits, decomposition has {}",
                cfg.n, self.n
            )));
        }
        Ok(())
    }

    /// Pauli-basis label order matching the rows of [`Self::basis`].
    pub fn pauli_order(&self) -> Result<Vec<PauliString>> {
        enumerate_all(self.n)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MercerJson {
            n: self.n,
            dataset: self.dataset.clone(),
            eigenvalues: self.eigenvalues.clone(),
            pauli_order: self.pauli_order()?.iter().map(|p| p.to_string()).collect(),
        })?)
    }

    /// Header `MERCERV1`, u32 n, u32 reserved, then V column-major as f64, all little-endian.
    pub fn basis_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 8 * self.basis.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.n as u32).to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        for v in self.basis.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    /// Rebuilds a decomposition from its JSON and basis files.
    pub fn from_parts(json: &str, basis: &[u8]) -> Result<Self> {
        let meta: MercerJson = serde_json::from_str(json)?;
        if basis.len() < 16 || &basis[..8] != MAGIC {
            return Err(Error::Format("basis file lacks the MERCERV1 header".into()));
        }
        let n = u32::from_le_bytes([basis[8], basis[9], basis[10], basis[11]]) as usize;
        check_capacity(n)?;
        if n != meta.n {
            return Err(Error::Format("basis file and JSON disagree on n".into()));
        }
        let dim = 1usize << (2 * n);
        if basis.len() != 16 + 8 * dim * dim || meta.eigenvalues.len() != dim {
            return Err(Error::Format("basis payload has the wrong length".into()));
        }
        let values: Vec<f64> = basis[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self {
            n,
            eigenvalues: meta.eigenvalues,
            basis: DMatrix::from_column_slice(dim, dim, &values),
            dataset: meta.dataset,
        })
    }
}

/// φ_i(x) = tr(ρ(x) A_i) / sqrt(γ_i).
pub fn eigenfunction(md: &MercerDecomposition, mode: usize, x: &[f64], cfg: &EmbeddingConfig) -> Result<f64> {
    md.check_config(cfg)?;
    let gamma = *md
        .eigenvalues
        .get(mode)
        .ok_or_else(|| Error::input(format!("mode {mode} out of range")))?;
    if gamma <= DEGENERATE_TOL {
        return Err(Error::Degenerate(format!(
            "mode {mode} has eigenvalue {gamma:e} below {DEGENERATE_TOL:e}"
        )));
    }
    let s = embed(x, cfg)?;
    let a = md.mode_features(std::slice::from_ref(&s))?;
    Ok(a[(0, mode)] / gamma.sqrt())
}

/// sum_i 2^n w_i tr(ρ(x) A_i) tr(ρ(x') A_i).
pub fn mercer_gtqk(
    x: &[f64],
    y: &[f64],
    weights: &[f64],
    md: &MercerDecomposition,
    cfg: &EmbeddingConfig,
) -> Result<f64> {
    md.check_config(cfg)?;
    let states = [embed(x, cfg)?, embed(y, cfg)?];
    let k = mercer_gram_from_states(&states, &states, weights, md)?;
    Ok(k[(0, 1)])
}

/// Kernel block of the Mercer-basis weighted kernel.
pub fn mercer_gram_from_states(
    a: &[StateVector],
    b: &[StateVector],
    weights: &[f64],
    md: &MercerDecomposition,
) -> Result<DMatrix<f64>> {
    if weights.len() != md.dim() {
        return Err(Error::input(format!(
            "{} weights for {} Mercer modes",
            weights.len(),
            md.dim()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::input("Mercer weights must be finite and nonnegative"));
    }
    let fa = md.mode_features(a)?;
    let fb = md.mode_features(b)?;
    let scale = 2f64.powi(md.n as i32);
    let scaled = DMatrix::from_fn(fa.nrows(), fa.ncols(), |i, j| fa[(i, j)] * weights[j] * scale);
    Ok(scaled * fb.transpose())
}

/// max_{i != j} |(1/N) sum_x tr(ρ(x) A_i) tr(ρ(x) A_j)| on the dataset that built `md`.
pub fn lego_rkhs_orthogonality(md: &MercerDecomposition, rows: &[Vec<f64>], cfg: &EmbeddingConfig) -> Result<f64> {
    let hash = dataset_hash(rows);
    if hash != md.dataset {
        return Err(Error::input(format!(
            "dataset {hash} did not build this decomposition ({})",
            md.dataset
        )));
    }
    cross_correlation(md, rows, cfg)
}

/// Same statistic as [`lego_rkhs_orthogonality`] without the provenance check,
/// for off-distribution diagnostics.
pub fn cross_correlation(md: &MercerDecomposition, rows: &[Vec<f64>], cfg: &EmbeddingConfig) -> Result<f64> {
    md.check_config(cfg)?;
    if rows.is_empty() {
        return Err(Error::input("empty dataset"));
    }
    let states = rows.iter().map(|x| embed(x, cfg)).collect::<Result<Vec<_>>>()?;
    let a = md.mode_features(&states)?;
    let c = a.transpose() * &a / rows.len() as f64;
    let mut worst = 0.0f64;
    for i in 0..c.nrows() {
        for j in 0..c.ncols() {
            if i != j {
                worst = worst.max(c[(i, j)].abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::overlap;

    fn pts(n: usize, count: usize) -> Vec<Vec<f64>> {
        (0..count)
            .map(|i| (0..n).map(|j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0).collect())
            .collect()
    }

    #[test]
    fn single_state_operator_is_rank_one() {
        let cfg = EmbeddingConfig::new(2, 0.7);
        let g = feature_gram_operator(&pts(2, 1), &cfg).unwrap();
        assert!((g.trace() - 1.0).abs() < 1e-12);
        let md = diagonalize(&g).unwrap();
        assert!((md.eigenvalues()[0] - 1.0).abs() < 1e-12);
        assert!(md.eigenvalues()[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn computational_basis_pair_operator() {
        // {|0>, |1>}: only P̄_I and P̄_Z carry weight, each with variance 1/2
        let states = [StateVector::basis(1, 0).unwrap(), StateVector::basis(1, 1).unwrap()];
        let g = operator_from_states(&states).unwrap();
        let order = enumerate_all(1).unwrap();
        let labels: Vec<String> = order.iter().map(|p| p.to_string()).collect();
        assert_eq!(labels, ["I", "X", "Y", "Z"]);
        let expect = [[0.5, 0.0, 0.0, 0.0], [0.0; 4], [0.0; 4], [0.0, 0.0, 0.0, 0.5]];
        for i in 0..4 {
            for j in 0..4 {
                assert!((g[(i, j)] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn capacity_and_symmetry_errors() {
        let cfg = EmbeddingConfig::new(7, 0.5);
        assert!(matches!(feature_gram_operator(&pts(7, 2), &cfg), Err(Error::Capacity(_))));
        let mut g = DMatrix::<f64>::identity(4, 4);
        g[(0, 1)] = 0.1;
        assert!(diagonalize(&g).is_err());
        assert!(diagonalize(&DMatrix::<f64>::identity(5, 5)).is_err());
    }

    #[test]
    fn degenerate_spectrum_identity() {
        let g = DMatrix::<f64>::identity(16, 16) / 16.0;
        let md = diagonalize(&g).unwrap();
        assert!(md.eigenvalues().iter().all(|v| (v - 1.0 / 16.0).abs() < 1e-14));
        assert!(md.orthogonality_error() < 1e-12);
    }

    #[test]
    fn uniform_mercer_weights_give_fidelity() {
        let cfg = EmbeddingConfig::new(2, 0.8);
        let rows = pts(2, 6);
        let md = MercerDecomposition::from_dataset(&rows, &cfg).unwrap();
        let w = vec![0.25; 16];
        for i in 0..rows.len() {
            for j in 0..rows.len() {
                let k = mercer_gtqk(&rows[i], &rows[j], &w, &md, &cfg).unwrap();
                let e = overlap(&embed(&rows[i], &cfg).unwrap(), &embed(&rows[j], &cfg).unwrap()).unwrap();
                assert!((k - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn single_state_eigenfunction_is_one() {
        let cfg = EmbeddingConfig::new(2, 0.8);
        let rows = pts(2, 1);
        let md = MercerDecomposition::from_dataset(&rows, &cfg).unwrap();
        assert!((eigenfunction(&md, 0, &rows[0], &cfg).unwrap() - 1.0).abs() < 1e-10);
        assert!(matches!(
            eigenfunction(&md, 5, &rows[0], &cfg),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn orthogonality_requires_matching_dataset() {
        let cfg = EmbeddingConfig::new(2, 0.8);
        let rows = pts(2, 5);
        let md = MercerDecomposition::from_dataset(&rows, &cfg).unwrap();
        assert!(lego_rkhs_orthogonality(&md, &rows, &cfg).unwrap() <= 1e-8);
        let other: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * 0.5 + 0.3).collect()).collect();
        assert!(lego_rkhs_orthogonality(&md, &other, &cfg).is_err());
        assert!(cross_correlation(&md, &other, &cfg).is_ok());
    }

    #[test]
    fn weight_length_mismatch() {
        let cfg = EmbeddingConfig::new(1, 0.8);
        let rows = pts(1, 3);
        let md = MercerDecomposition::from_dataset(&rows, &cfg).unwrap();
        assert!(mercer_gtqk(&rows[0], &rows[1], &[0.5; 3], &md, &cfg).is_err());
        assert!(mercer_gtqk(&rows[0], &rows[1], &[0.5, -0.1, 0.0, 0.0], &md, &cfg).is_err());
    }

    #[test]
    fn file_round_trip() {
        let cfg = EmbeddingConfig::new(2, 0.8);
        let md = MercerDecomposition::from_dataset(&pts(2, 4), &cfg).unwrap();
        let bytes = md.basis_bytes();
        assert_eq!(&bytes[..8], b"MERCERV1");
        assert_eq!(bytes.len(), 16 + 8 * 256);
        let back = MercerDecomposition::from_parts(&md.to_json().unwrap(), &bytes).unwrap();
        assert_eq!(back, md);
        assert!(MercerDecomposition::from_parts(&md.to_json().unwrap(), &bytes[8..]).is_err());
    }
}
