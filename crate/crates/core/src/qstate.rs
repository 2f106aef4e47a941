//! Exact pure-state simulation of the IQP data embedding.
//!
//! Amplitude index convention: qubit 0 is the most significant bit, so qubit
//! `j` of an `n`-qubit register is bit `n - 1 - j` of the index.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pauli::{validate_subset, PauliString};

/// Statevector memory guard.
pub const MAX_QUBITS: usize = 24;

/// Pairs of qubits that receive a two-body ZZ phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    #[default]
    AllPairs,
    Ring,
}

impl Coupling {
    pub fn pairs(self, n: usize) -> Vec<(usize, usize)> {
        match self {
            Coupling::AllPairs => (0..n)
                .flat_map(|j| (j + 1..n).map(move |k| (j, k)))
                .collect(),
            Coupling::Ring => match n {
                0 | 1 => Vec::new(),
                2 => vec![(0, 1)],
                _ => (0..n).map(|j| (j, (j + 1) % n)).collect(),
            },
        }
    }
}

fn default_layers() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub n: usize,
    pub bandwidth: f64,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default)]
    pub coupling: Coupling,
}

impl EmbeddingConfig {
    /// Two all-pairs layers.
    pub fn new(n: usize, bandwidth: f64) -> Self {
        Self {
            n,
            bandwidth,
            layers: 2,
            coupling: Coupling::AllPairs,
        }
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn with_coupling(mut self, coupling: Coupling) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn with_bandwidth(mut self, bandwidth: f64) -> Self {
        self.bandwidth = bandwidth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n > MAX_QUBITS {
            return Err(Error::capacity(format!(
                "{} qubits exceeds the statevector guard of {MAX_QUBITS}",
                self.n
            )));
        }
        if self.n == 0 {
            return Err(Error::input("qubit count must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.bandwidth) {
            return Err(Error::input(format!(
                "bandwidth {} outside [0, 1]",
                self.bandwidth
            )));
        }
        if self.layers == 0 {
            return Err(Error::input("layers must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub fn new(n: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        if n == 0 || n > MAX_QUBITS {
            return Err(Error::capacity(format!("{n} qubits outside 1..={MAX_QUBITS}")));
        }
        if amplitudes.len() != 1 << n {
            return Err(Error::input(format!(
                "{} amplitudes for {n} qubits",
                amplitudes.len()
            )));
        }
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::input(format!("state norm {norm} is not 1")));
        }
        Ok(Self { n, amplitudes })
    }

    /// Computational basis state |index>.
    pub fn basis(n: usize, index: usize) -> Result<Self> {
        if n == 0 || n > MAX_QUBITS {
            return Err(Error::capacity(format!("{n} qubits outside 1..={MAX_QUBITS}")));
        }
        if index >= 1 << n {
            return Err(Error::input(format!("basis index {index} out of range")));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(Self { n, amplitudes })
    }

    pub fn zero(n: usize) -> Result<Self> {
        Self::basis(n, 0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Tensor product `self ⊗ other`; `self` holds the leading qubits.
    pub fn tensor(&self, other: &StateVector) -> Result<Self> {
        let n = self.n + other.n;
        if n > MAX_QUBITS {
            return Err(Error::capacity(format!("{n} qubits exceeds {MAX_QUBITS}")));
        }
        let amplitudes = self
            .amplitudes
            .iter()
            .flat_map(|a| other.amplitudes.iter().map(move |b| a * b))
            .collect();
        Ok(Self { n, amplitudes })
    }
}

/// In-place normalized Walsh-Hadamard transform, i.e. H applied to every qubit.
pub(crate) fn hadamard_all(v: &mut [Complex64]) {
    let len = v.len();
    let mut h = 1;
    while h < len {
        for block in (0..len).step_by(2 * h) {
            for i in block..block + h {
                let a = v[i];
                let b = v[i + h];
                v[i] = a + b;
                v[i + h] = a - b;
            }
        }
        h *= 2;
    }
    let scale = 1.0 / (len as f64).sqrt();
    for a in v.iter_mut() {
        *a *= scale;
    }
}

/// Phase angle of D(y) on basis index `b`: sum_j y_j z_j + sum_{pairs} y_j y_k z_j z_k,
/// with z = +1 for bit 0 and -1 for bit 1.
fn diagonal_phases(n: usize, y: &[f64], pairs: &[(usize, usize)]) -> Vec<f64> {
    (0..1usize << n)
        .map(|b| {
            let z = |q: usize| if (b >> (n - 1 - q)) & 1 == 0 { 1.0 } else { -1.0 };
            let single: f64 = (0..n).map(|q| y[q] * z(q)).sum();
            let pair: f64 = pairs.iter().map(|&(j, k)| y[j] * y[k] * z(j) * z(k)).sum();
            single + pair
        })
        .collect()
}

/// Prepares (D(λx) H^{⊗n})^layers |0...0>.
pub fn embed(x: &[f64], cfg: &EmbeddingConfig) -> Result<StateVector> {
    cfg.validate()?;
    if x.len() != cfg.n {
        return Err(Error::input(format!(
            "input has {} features, embedding expects {}",
            x.len(),
            cfg.n
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("input contains non-finite values"));
    }
    let n = cfg.n;
    let y: Vec<f64> = x.iter().map(|v| cfg.bandwidth * v).collect();
    let phases: Vec<Complex64> = diagonal_phases(n, &y, &cfg.coupling.pairs(n))
        .into_iter()
        .map(|t| Complex64::from_polar(1.0, t))
        .collect();

    let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
    amps[0] = Complex64::new(1.0, 0.0);
    for _ in 0..cfg.layers {
        hadamard_all(&mut amps);
        for (a, p) in amps.iter_mut().zip(&phases) {
            *a *= p;
        }
    }
    // renormalize away accumulated rounding
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    for a in amps.iter_mut() {
        *a /= norm;
    }
    Ok(StateVector { n, amplitudes: amps })
}

fn check_same_register(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::input(format!("{a}-qubit operand against {b}-qubit operand")));
    }
    Ok(())
}

/// i^k for k mod 4.
fn i_pow(k: u32) -> Complex64 {
    match k % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// <ψ|P|ψ> for an unnormalized Pauli string.
pub fn pauli_expectation(state: &StateVector, p: &PauliString) -> Result<f64> {
    check_same_register(state.n, p.n())?;
    if p.is_identity() {
        return Ok(1.0);
    }
    let x = p.x_mask() as usize;
    let z = p.z_mask() as usize;
    let amps = &state.amplitudes;
    let mut acc = Complex64::new(0.0, 0.0);
    for (b, a) in amps.iter().enumerate() {
        let term = amps[b ^ x].conj() * a;
        if (b & z).count_ones() % 2 == 0 {
            acc += term;
        } else {
            acc -= term;
        }
    }
    Ok((i_pow(p.y_count()) * acc).re.clamp(-1.0, 1.0))
}

/// Every Pauli expectation at once, indexed by `(x_mask << n) | z_mask`.
///
/// One Walsh-Hadamard transform per X pattern gives O(n 4^n) total work.
pub fn all_pauli_expectations(state: &StateVector) -> Result<Vec<f64>> {
    let n = state.n;
    if n > 12 {
        return Err(Error::capacity(format!(
            "full Pauli spectrum on {n} qubits needs 4^{n} values"
        )));
    }
    let dim = 1usize << n;
    let amps = &state.amplitudes;
    let mut out = vec![0.0; dim * dim];
    let mut buf = vec![Complex64::new(0.0, 0.0); dim];
    for x in 0..dim {
        for (b, slot) in buf.iter_mut().enumerate() {
            *slot = amps[b ^ x].conj() * amps[b];
        }
        // unnormalized transform: buf[z] = sum_b (-1)^{b.z} c[b]
        let mut h = 1;
        while h < dim {
            for block in (0..dim).step_by(2 * h) {
                for i in block..block + h {
                    let a = buf[i];
                    let c = buf[i + h];
                    buf[i] = a + c;
                    buf[i + h] = a - c;
                }
            }
            h *= 2;
        }
        for z in 0..dim {
            let y = (x & z).count_ones();
            out[(x << n) | z] = (i_pow(y) * buf[z]).re.clamp(-1.0, 1.0);
        }
    }
    out[0] = 1.0;
    Ok(out)
}

/// Reduced state on a qubit subset. Index order follows the sorted subset,
/// lowest qubit most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    qubits: Vec<usize>,
    entries: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn qubits(&self) -> &[usize] {
        &self.qubits
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.trace()
    }

    /// tr(ρ σ) for Hermitian operands.
    pub fn trace_product(&self, other: &DensityMatrix) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::input("density matrices differ in dimension"));
        }
        Ok(self
            .entries
            .iter()
            .zip(other.entries.transpose().iter())
            .map(|(a, b)| (a * b).re)
            .sum())
    }

    pub fn purity(&self) -> f64 {
        self.trace_product(self).unwrap_or(f64::NAN)
    }

    /// Largest |ρ - ρ†| entry.
    pub fn hermiticity_error(&self) -> f64 {
        let adj = self.entries.adjoint();
        self.entries
            .iter()
            .zip(adj.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Partial trace over the complement of `subset`.
pub fn reduced_density_matrix(state: &StateVector, subset: &[usize]) -> Result<DensityMatrix> {
    let n = state.n;
    let kept = validate_subset(n, subset)?;
    let rest: Vec<usize> = (0..n).filter(|q| !kept.contains(q)).collect();
    let k = kept.len();
    let dim_k = 1usize << k;
    let dim_r = 1usize << rest.len();

    let compose = |a: usize, e: usize| -> usize {
        let mut b = 0usize;
        for (i, &q) in kept.iter().enumerate() {
            if (a >> (k - 1 - i)) & 1 == 1 {
                b |= 1 << (n - 1 - q);
            }
        }
        for (i, &q) in rest.iter().enumerate() {
            if (e >> (rest.len() - 1 - i)) & 1 == 1 {
                b |= 1 << (n - 1 - q);
            }
        }
        b
    };
    // index[a][e] -> full amplitude index
    let index: Vec<Vec<usize>> = (0..dim_k)
        .map(|a| (0..dim_r).map(|e| compose(a, e)).collect())
        .collect();

    let amps = &state.amplitudes;
    let mut rho = DMatrix::from_element(dim_k, dim_k, Complex64::new(0.0, 0.0));
    for a in 0..dim_k {
        for a2 in a..dim_k {
            let v: Complex64 = (0..dim_r)
                .map(|e| amps[index[a][e]] * amps[index[a2][e]].conj())
                .sum();
            rho[(a, a2)] = v;
            rho[(a2, a)] = v.conj();
        }
    }
    Ok(DensityMatrix {
        qubits: kept,
        entries: rho,
    })
}

/// |<a|b>|^2.
pub fn overlap(a: &StateVector, b: &StateVector) -> Result<f64> {
    check_same_register(a.n, b.n)?;
    let inner: Complex64 = a
        .amplitudes
        .iter()
        .zip(&b.amplitudes)
        .map(|(u, v)| u.conj() * v)
        .sum();
    Ok(inner.norm_sqr().clamp(0.0, 1.0))
}

/// <a|b>.
pub fn inner_product(a: &StateVector, b: &StateVector) -> Result<Complex64> {
    check_same_register(a.n, b.n)?;
    Ok(a.amplitudes
        .iter()
        .zip(&b.amplitudes)
        .map(|(u, v)| u.conj() * v)
        .sum())
}
