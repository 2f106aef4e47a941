//! Pauli strings, their enumeration by body count, and the weight presets
//! that turn a generalized trace-induced kernel into each named kernel.
//!
//! A [`PauliString`] stores its symbols as two bit masks. Qubit `j` of an
//! `n`-qubit string lives at bit `n - 1 - j`, matching the statevector
//! convention where qubit 0 is the most significant bit of an amplitude index.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Largest register a [`PauliString`] can address.
pub const MAX_PAULI_QUBITS: usize = 32;

/// Largest sparse weight map a [`KernelSpec`] may hold (4^8 entries).
pub const MAX_SPEC_TERMS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    I,
    X,
    Y,
    Z,
}

impl Symbol {
    /// (x, z) bits of the symplectic representation.
    fn bits(self) -> (bool, bool) {
        match self {
            Symbol::I => (false, false),
            Symbol::X => (true, false),
            Symbol::Y => (true, true),
            Symbol::Z => (false, true),
        }
    }

    fn from_bits(x: bool, z: bool) -> Self {
        match (x, z) {
            (false, false) => Symbol::I,
            (true, false) => Symbol::X,
            (true, true) => Symbol::Y,
            (false, true) => Symbol::Z,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Symbol::I => 'I',
            Symbol::X => 'X',
            Symbol::Y => 'Y',
            Symbol::Z => 'Z',
        }
    }

    /// The three non-identity symbols in canonical order.
    pub const AXES: [Symbol; 3] = [Symbol::X, Symbol::Y, Symbol::Z];
}

/// An `n`-qubit tensor product of single-qubit Paulis (no phase).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PauliString {
    n: usize,
    x: u32,
    z: u32,
}

impl PauliString {
    pub fn identity(n: usize) -> Result<Self> {
        check_register(n)?;
        Ok(Self { n, x: 0, z: 0 })
    }

    pub fn from_symbols(symbols: &[Symbol]) -> Result<Self> {
        let n = symbols.len();
        check_register(n)?;
        let mut p = Self { n, x: 0, z: 0 };
        for (q, s) in symbols.iter().enumerate() {
            p.set(q, *s);
        }
        Ok(p)
    }

    /// Builds a string with the given non-identity symbols placed on `qubits`.
    pub fn from_sparse(n: usize, terms: &[(usize, Symbol)]) -> Result<Self> {
        let mut p = Self::identity(n)?;
        for &(q, s) in terms {
            if q >= n {
                return Err(Error::input(format!("qubit {q} out of range for n = {n}")));
            }
            p.set(q, s);
        }
        Ok(p)
    }

    /// Raw symplectic constructor; masks use bit `n - 1 - j` for qubit `j`.
    pub fn from_masks(n: usize, x: u32, z: u32) -> Result<Self> {
        check_register(n)?;
        let full = full_mask(n);
        if (x | z) & !full != 0 {
            return Err(Error::input("mask has bits outside the register"));
        }
        Ok(Self { n, x, z })
    }

    fn set(&mut self, qubit: usize, s: Symbol) {
        let bit = 1u32 << (self.n - 1 - qubit);
        let (xb, zb) = s.bits();
        self.x = if xb { self.x | bit } else { self.x & !bit };
        self.z = if zb { self.z | bit } else { self.z & !bit };
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn x_mask(&self) -> u32 {
        self.x
    }

    pub fn z_mask(&self) -> u32 {
        self.z
    }

    pub fn support_mask(&self) -> u32 {
        self.x | self.z
    }

    pub fn symbol(&self, qubit: usize) -> Symbol {
        let bit = 1u32 << (self.n - 1 - qubit);
        Symbol::from_bits(self.x & bit != 0, self.z & bit != 0)
    }

    pub fn symbols(&self) -> Vec<Symbol> {
        (0..self.n).map(|q| self.symbol(q)).collect()
    }

    /// Non-identity qubit positions, ascending.
    pub fn support(&self) -> Vec<usize> {
        (0..self.n).filter(|&q| self.symbol(q) != Symbol::I).collect()
    }

    pub fn weight(&self) -> usize {
        self.support_mask().count_ones() as usize
    }

    pub fn is_identity(&self) -> bool {
        self.support_mask() == 0
    }

    /// Number of Y factors; P acts as i^{#Y} (-1)^{b.z} on |b> -> |b xor x>.
    pub fn y_count(&self) -> u32 {
        (self.x & self.z).count_ones()
    }

    /// True when every qubit in the support lies in `subset` (given as a mask).
    pub fn supported_within(&self, subset_mask: u32) -> bool {
        self.support_mask() & !subset_mask == 0
    }

    fn symbol_key(&self) -> impl Iterator<Item = Symbol> + '_ {
        self.support().into_iter().map(|q| self.symbol(q))
    }
}

/// Canonical order: body count, then support (lexicographic), then symbols
/// on the support with X < Y < Z.
impl Ord for PauliString {
    fn cmp(&self, other: &Self) -> Ordering {
        self.n
            .cmp(&other.n)
            .then(self.weight().cmp(&other.weight()))
            .then_with(|| self.support().cmp(&other.support()))
            .then_with(|| self.symbol_key().cmp(other.symbol_key()))
    }
}

impl PartialOrd for PauliString {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for q in 0..self.n {
            write!(f, "{}", self.symbol(q).as_char())?;
        }
        Ok(())
    }
}

impl fmt::Debug for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PauliString({self})")
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let symbols = s
            .chars()
            .map(|c| match c {
                'I' => Ok(Symbol::I),
                'X' => Ok(Symbol::X),
                'Y' => Ok(Symbol::Y),
                'Z' => Ok(Symbol::Z),
                other => Err(Error::input(format!("invalid Pauli symbol '{other}' in \"{s}\""))),
            })
            .collect::<Result<Vec<_>>>()?;
        if symbols.is_empty() {
            return Err(Error::input("empty Pauli string"));
        }
        Self::from_symbols(&symbols)
    }
}

fn check_register(n: usize) -> Result<()> {
    if n == 0 || n > MAX_PAULI_QUBITS {
        return Err(Error::input(format!(
            "qubit count {n} outside 1..={MAX_PAULI_QUBITS}"
        )));
    }
    Ok(())
}

fn full_mask(n: usize) -> u32 {
    if n >= 32 {
        u32::MAX
    } else {
        (1u32 << n) - 1
    }
}

/// Mask with the bits for `qubits` set.
#[cfg(test)]
pub(crate) fn qubit_mask(n: usize, qubits: &[usize]) -> u32 {
    qubits.iter().fold(0u32, |m, &q| m | (1u32 << (n - 1 - q)))
}

/// Binomial coefficient C(n, k); zero when k > n.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// d_H = C(n, H) * 3^H, the number of H-body Pauli strings.
pub fn h_body_count(n: usize, body: usize) -> Result<u128> {
    if body > n {
        return Err(Error::input(format!("body count {body} exceeds n = {n}")));
    }
    Ok(binomial(n as u64, body as u64) * 3u128.pow(body as u32))
}

/// D^(S,H) = C(n - H, S - H): how many size-S subsets contain a fixed H-subset.
pub fn degeneracy(n: usize, size: usize, body: usize) -> Result<u128> {
    if body > size {
        return Err(Error::input(format!("H = {body} exceeds S = {size}")));
    }
    if size > n {
        return Err(Error::input(format!("S = {size} exceeds n = {n}")));
    }
    Ok(binomial((n - body) as u64, (size - body) as u64))
}

/// All k-subsets of 0..n in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // rightmost position that can still advance
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < n - k + i {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// All strings of weight exactly `body`, in canonical order.
pub fn enumerate_h_body(n: usize, body: usize) -> Result<Vec<PauliString>> {
    check_register(n)?;
    if body > n {
        return Err(Error::input(format!("body count {body} exceeds n = {n}")));
    }
    let total = h_body_count(n, body)?;
    if total > MAX_SPEC_TERMS as u128 * 4 {
        return Err(Error::capacity(format!(
            "{total} strings of weight {body} on {n} qubits"
        )));
    }
    let mut out = Vec::with_capacity(total as usize);
    for support in combinations(n, body) {
        let count = 3usize.pow(body as u32);
        for code in 0..count {
            let mut p = PauliString { n, x: 0, z: 0 };
            // first support qubit is the most significant base-3 digit
            let mut rem = code;
            for &q in support.iter().rev() {
                p.set(q, Symbol::AXES[rem % 3]);
                rem /= 3;
            }
            out.push(p);
        }
    }
    Ok(out)
}

/// All 4^n strings, grouped by weight (the canonical global order).
pub fn enumerate_all(n: usize) -> Result<Vec<PauliString>> {
    check_register(n)?;
    if n > 8 {
        return Err(Error::capacity(format!(
            "full Pauli enumeration on {n} qubits exceeds the 4^8 limit"
        )));
    }
    let mut out = Vec::with_capacity(1 << (2 * n));
    for body in 0..=n {
        out.extend(enumerate_h_body(n, body)?);
    }
    Ok(out)
}

/// All strings supported inside `subset` (4^|subset| of them), canonical order.
pub fn enumerate_within(n: usize, subset: &[usize]) -> Result<Vec<PauliString>> {
    let subset = validate_subset(n, subset)?;
    let mut out = Vec::with_capacity(1 << (2 * subset.len()));
    for body in 0..=subset.len() {
        for chosen in combinations(subset.len(), body) {
            let qubits: Vec<usize> = chosen.iter().map(|&i| subset[i]).collect();
            for code in 0..3usize.pow(body as u32) {
                let mut p = PauliString { n, x: 0, z: 0 };
                let mut rem = code;
                for &q in qubits.iter().rev() {
                    p.set(q, Symbol::AXES[rem % 3]);
                    rem /= 3;
                }
                out.push(p);
            }
        }
    }
    Ok(out)
}

/// Sorted, de-duplicated, range-checked copy of a nonempty qubit subset.
pub fn validate_subset(n: usize, subset: &[usize]) -> Result<Vec<usize>> {
    if subset.is_empty() {
        return Err(Error::input("qubit subset is empty"));
    }
    let mut s = subset.to_vec();
    s.sort_unstable();
    if s.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::input(format!("qubit subset {subset:?} has duplicates")));
    }
    if let Some(&q) = s.last() {
        if q >= n {
            return Err(Error::input(format!("qubit {q} out of range for n = {n}")));
        }
    }
    Ok(s)
}

/// Which named kernel a [`KernelSpec`] realizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Preset {
    Gfqk,
    /// Projection onto one fixed qubit subset s.
    Subsystem(Vec<usize>),
    /// Uniform sum over all subsets of size S.
    SubsetSize(usize),
    /// All Pauli strings of weight exactly H.
    HBody(usize),
    Custom,
}

/// JSON form of a kernel choice, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset")]
pub enum KernelConfig {
    #[serde(rename = "gfqk")]
    Gfqk,
    #[serde(rename = "s-lpqk")]
    Subsystem { s: Vec<usize> },
    #[serde(rename = "S-lpqk")]
    SubsetSize {
        #[serde(rename = "S")]
        size: usize,
    },
    #[serde(rename = "h-body")]
    HBody {
        #[serde(rename = "H")]
        body: usize,
    },
    #[serde(rename = "custom")]
    Custom {
        weights: BTreeMap<String, f64>,
        #[serde(default)]
        enforce_normalization: bool,
    },
}

/// Sparse nonnegative weights over Pauli strings: one generalized
/// trace-induced kernel k = sum_i w_i tr(rho P_i) tr(rho' P_i).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    n: usize,
    preset: Preset,
    terms: Vec<(PauliString, f64)>,
    enforce_normalization: bool,
}

impl KernelSpec {
    /// Validates and stores `terms` in canonical order. Zero weights are dropped.
    pub fn custom(
        n: usize,
        terms: impl IntoIterator<Item = (PauliString, f64)>,
        enforce_normalization: bool,
    ) -> Result<Self> {
        Self::build(n, Preset::Custom, terms.into_iter().collect(), enforce_normalization)
    }

    fn build(
        n: usize,
        preset: Preset,
        mut terms: Vec<(PauliString, f64)>,
        enforce_normalization: bool,
    ) -> Result<Self> {
        check_register(n)?;
        terms.retain(|(_, w)| *w != 0.0);
        if terms.len() > MAX_SPEC_TERMS {
            return Err(Error::capacity(format!(
                "{} weights exceed the sparse limit of {MAX_SPEC_TERMS}",
                terms.len()
            )));
        }
        let mut seen = HashSet::with_capacity(terms.len());
        for (p, w) in &terms {
            if p.n() != n {
                return Err(Error::input(format!("{p} is not a {n}-qubit string")));
            }
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::input(format!("weight {w} on {p} is not a finite nonnegative value")));
            }
            if !seen.insert(*p) {
                return Err(Error::input(format!("duplicate weight for {p}")));
            }
        }
        terms.sort_by(|a, b| a.0.cmp(&b.0));
        let spec = Self {
            n,
            preset,
            terms,
            enforce_normalization,
        };
        if enforce_normalization {
            let norm = spec.weight_norm_sq();
            if (norm - 1.0).abs() > 1e-10 {
                return Err(Error::input(format!(
                    "sum of squared weights is {norm}, expected 1"
                )));
            }
        }
        Ok(spec)
    }

    /// Weight map of a named kernel.
    pub fn preset(n: usize, preset: Preset) -> Result<Self> {
        check_register(n)?;
        let terms: Vec<(PauliString, f64)> = match &preset {
            Preset::Gfqk => {
                let w = 0.5f64.powi(n as i32);
                enumerate_all(n)?.into_iter().map(|p| (p, w)).collect()
            }
            Preset::Subsystem(s) => {
                let s = validate_subset(n, s)?;
                let w = 0.5f64.powi(s.len() as i32);
                enumerate_within(n, &s)?.into_iter().map(|p| (p, w)).collect()
            }
            Preset::SubsetSize(size) => {
                let size = *size;
                if size == 0 || size > n {
                    return Err(Error::input(format!("S = {size} outside 1..={n}")));
                }
                let subsets = binomial(n as u64, size as u64) as f64;
                let scale = 1.0 / (2f64.powi(size as i32) * subsets.sqrt());
                let mut terms = Vec::new();
                for body in 0..=size {
                    let w = degeneracy(n, size, body)? as f64 * scale;
                    terms.extend(enumerate_h_body(n, body)?.into_iter().map(|p| (p, w)));
                }
                terms
            }
            Preset::HBody(body) => {
                let d = h_body_count(n, *body)? as f64;
                let w = 1.0 / d.sqrt();
                enumerate_h_body(n, *body)?.into_iter().map(|p| (p, w)).collect()
            }
            Preset::Custom => {
                return Err(Error::input("custom specs are built with KernelSpec::custom"));
            }
        };
        Self::build(n, preset, terms, false)
    }

    /// Equal weights 1/sqrt(p) on a chosen set of Pauli strings.
    pub fn uniform_over(n: usize, paulis: &[PauliString]) -> Result<Self> {
        if paulis.is_empty() {
            return Err(Error::input("empty Pauli selection"));
        }
        let w = 1.0 / (paulis.len() as f64).sqrt();
        Self::custom(n, paulis.iter().map(|&p| (p, w)), false)
    }

    pub fn from_config(n: usize, cfg: &KernelConfig) -> Result<Self> {
        match cfg {
            KernelConfig::Gfqk => Self::preset(n, Preset::Gfqk),
            KernelConfig::Subsystem { s } => Self::preset(n, Preset::Subsystem(s.clone())),
            KernelConfig::SubsetSize { size } => Self::preset(n, Preset::SubsetSize(*size)),
            KernelConfig::HBody { body } => Self::preset(n, Preset::HBody(*body)),
            KernelConfig::Custom {
                weights,
                enforce_normalization,
            } => {
                let terms = weights
                    .iter()
                    .map(|(label, w)| Ok((label.parse::<PauliString>()?, *w)))
                    .collect::<Result<Vec<_>>>()?;
                Self::custom(n, terms, *enforce_normalization)
            }
        }
    }

    /// Explicit JSON form; presets are expanded to their weight tables.
    pub fn to_config(&self) -> KernelConfig {
        match &self.preset {
            Preset::Gfqk => KernelConfig::Gfqk,
            Preset::Subsystem(s) => KernelConfig::Subsystem { s: s.clone() },
            Preset::SubsetSize(size) => KernelConfig::SubsetSize { size: *size },
            Preset::HBody(body) => KernelConfig::HBody { body: *body },
            Preset::Custom => KernelConfig::Custom {
                weights: self.terms.iter().map(|(p, w)| (p.to_string(), *w)).collect(),
                enforce_normalization: self.enforce_normalization,
            },
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn preset_kind(&self) -> &Preset {
        &self.preset
    }

    pub fn enforces_normalization(&self) -> bool {
        self.enforce_normalization
    }

    /// Nonzero weights in canonical Pauli order.
    pub fn terms(&self) -> &[(PauliString, f64)] {
        &self.terms
    }

    pub fn paulis(&self) -> Vec<PauliString> {
        self.terms.iter().map(|(p, _)| *p).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.terms.iter().map(|(_, w)| *w).collect()
    }

    /// Number of nonzero weights p.
    pub fn support_size(&self) -> usize {
        self.terms.len()
    }

    pub fn max_weight_body(&self) -> usize {
        self.terms.iter().map(|(p, _)| p.weight()).max().unwrap_or(0)
    }

    pub fn weight_norm_sq(&self) -> f64 {
        self.terms.iter().map(|(_, w)| w * w).sum()
    }

    pub fn weight_of(&self, p: &PauliString) -> f64 {
        self.terms
            .binary_search_by(|(q, _)| q.cmp(p))
            .map(|i| self.terms[i].1)
            .unwrap_or(0.0)
    }

    /// Content hash over (label, weight bits) pairs; stable across runs.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        for (p, w) in &self.terms {
            h.update(p.to_string().as_bytes());
            h.update(w.to_bits().to_le_bytes());
        }
        short_hex(&h.finalize())
    }
}

pub(crate) fn short_hex(bytes: &[u8]) -> String {
    bytes.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
