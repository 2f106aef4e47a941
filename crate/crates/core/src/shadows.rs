//! Finite-measurement estimators: random-Pauli classical shadows for local
//! expectations, binomial shot noise for the inversion-test fidelity kernel,
//! and the measurement-budget comparison between the two.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    dataset_hash, embed_all, gram_from_features, EstimatorTag, FeatureTable, GramMatrix, GramMeta,
};
use crate::pauli::{h_body_count, KernelSpec, PauliString};
use crate::qstate::{overlap, EmbeddingConfig, StateVector};
use crate::rng::{domain, stream};

/// Median-of-means group count used when the caller does not choose one.
pub fn default_groups(snapshots: usize) -> usize {
    if snapshots < 100 {
        1
    } else {
        10
    }
}

/// One randomized measurement: a basis per qubit and the observed bits.
///
/// Bases are stored as symplectic masks (X: x bit, Z: z bit, Y: both), with
/// every qubit measured in a non-identity basis. Bit `n - 1 - j` of `outcome`
/// is the result on qubit `j` (1 means the -1 eigenvalue).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Snapshot {
    pub x: u32,
    pub z: u32,
    pub outcome: u32,
}

impl Snapshot {
    /// Single-snapshot estimate of tr(ρP): prod_j 3 σ_j over the support when
    /// the bases match P there, otherwise 0.
    pub fn value(&self, p: &PauliString) -> f64 {
        let supp = p.support_mask();
        if supp == 0 {
            return 1.0;
        }
        if self.x & supp != p.x_mask() || self.z & supp != p.z_mask() {
            return 0.0;
        }
        let mag = 3f64.powi(supp.count_ones() as i32);
        if (self.outcome & supp).count_ones() % 2 == 0 {
            mag
        } else {
            -mag
        }
    }

    fn basis_code(&self, n: usize, qubit: usize) -> u8 {
        let bit = 1u32 << (n - 1 - qubit);
        match (self.x & bit != 0, self.z & bit != 0) {
            (true, false) => 0,
            (true, true) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShadowSet {
    n: usize,
    seed: Option<u64>,
    snapshots: Vec<Snapshot>,
}

#[derive(Serialize, Deserialize)]
struct ShadowJson {
    n: usize,
    #[serde(rename = "T")]
    count: usize,
    seed: Option<u64>,
    snapshots: Vec<SnapshotJson>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotJson {
    basis: String,
    outcome: String,
}

impl ShadowSet {
    pub fn new(n: usize, snapshots: Vec<Snapshot>, seed: Option<u64>) -> Result<Self> {
        if n == 0 || n > 32 {
            return Err(Error::input(format!("{n} qubits outside 1..=32")));
        }
        let full = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
        for s in &snapshots {
            if (s.x | s.z) != full || s.outcome & !full != 0 {
                return Err(Error::input("snapshot has an identity basis or stray bits"));
            }
        }
        Ok(Self { n, seed, snapshots })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    /// Little-endian layout: u32 n, u32 T, then per snapshot n basis bytes
    /// (0 = X, 1 = Y, 2 = Z) and ceil(n/8) outcome bytes. Qubit j's outcome
    /// is bit j % 8 of outcome byte j / 8.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.n;
        let out_bytes = n.div_ceil(8);
        let mut buf = Vec::with_capacity(8 + self.len() * (n + out_bytes));
        buf.extend_from_slice(&(n as u32).to_le_bytes());
        buf.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for s in &self.snapshots {
            for q in 0..n {
                buf.push(s.basis_code(n, q));
            }
            let mut bits = vec![0u8; out_bytes];
            for q in 0..n {
                if s.outcome & (1 << (n - 1 - q)) != 0 {
                    bits[q / 8] |= 1 << (q % 8);
                }
            }
            buf.extend_from_slice(&bits);
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |at: usize| -> Result<u32> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .ok_or_else(|| Error::Format("shadow record header is truncated".into()))
        };
        let n = word(0)? as usize;
        let count = word(4)? as usize;
        if n == 0 || n > 32 {
            return Err(Error::Format(format!("shadow record claims {n} qubits")));
        }
        let out_bytes = n.div_ceil(8);
        let rec = n + out_bytes;
        if bytes.len() != 8 + count * rec {
            return Err(Error::Format(format!(
                "shadow record length {} does not match {count} snapshots of {rec} bytes",
                bytes.len()
            )));
        }
        let mut snapshots = Vec::with_capacity(count);
        for t in 0..count {
            let r = &bytes[8 + t * rec..8 + (t + 1) * rec];
            let mut s = Snapshot { x: 0, z: 0, outcome: 0 };
            for q in 0..n {
                let bit = 1u32 << (n - 1 - q);
                match r[q] {
                    0 => s.x |= bit,
                    1 => {
                        s.x |= bit;
                        s.z |= bit
                    }
                    2 => s.z |= bit,
                    b => return Err(Error::Format(format!("invalid basis byte {b}"))),
                }
                if r[n + q / 8] & (1 << (q % 8)) != 0 {
                    s.outcome |= bit;
                }
            }
            snapshots.push(s);
        }
        Self::new(n, snapshots, None)
    }

    pub fn to_json(&self) -> Result<String> {
        let n = self.n;
        let snapshots = self
            .snapshots
            .iter()
            .map(|s| SnapshotJson {
                basis: (0..n).map(|q| ['X', 'Y', 'Z'][s.basis_code(n, q) as usize]).collect(),
                outcome: (0..n)
                    .map(|q| if s.outcome & (1 << (n - 1 - q)) != 0 { '1' } else { '0' })
                    .collect(),
            })
            .collect();
        Ok(serde_json::to_string(&ShadowJson {
            n,
            count: self.len(),
            seed: self.seed,
            snapshots,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: ShadowJson = serde_json::from_str(text)?;
        if j.count != j.snapshots.len() {
            return Err(Error::Format("snapshot count does not match T".into()));
        }
        let n = j.n;
        let snapshots = j
            .snapshots
            .iter()
            .map(|s| {
                if s.basis.len() != n || s.outcome.len() != n {
                    return Err(Error::Format("snapshot length does not match n".into()));
                }
                let mut snap = Snapshot { x: 0, z: 0, outcome: 0 };
                for (q, (b, o)) in s.basis.chars().zip(s.outcome.chars()).enumerate() {
                    let bit = 1u32 << (n - 1 - q);
                    match b {
                        'X' => snap.x |= bit,
                        'Y' => {
                            snap.x |= bit;
                            snap.z |= bit
                        }
                        'Z' => snap.z |= bit,
                        other => return Err(Error::Format(format!("invalid basis '{other}'"))),
                    }
                    match o {
                        '0' => {}
                        '1' => snap.outcome |= bit,
                        other => return Err(Error::Format(format!("invalid outcome '{other}'"))),
                    }
                }
                Ok(snap)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, snapshots, j.seed)
    }
}

/// Applies a 2x2 unitary to one qubit.
fn apply_1q(amps: &mut [Complex64], n: usize, qubit: usize, u: &[[Complex64; 2]; 2]) {
    let stride = 1usize << (n - 1 - qubit);
    for block in (0..amps.len()).step_by(2 * stride) {
        for i in block..block + stride {
            let a = amps[i];
            let b = amps[i + stride];
            amps[i] = u[0][0] * a + u[0][1] * b;
            amps[i + stride] = u[1][0] * a + u[1][1] * b;
        }
    }
}

fn basis_rotations() -> [[[Complex64; 2]; 2]; 2] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let r = |v: f64| Complex64::new(v, 0.0);
    let i = |v: f64| Complex64::new(0.0, v);
    // X: H;  Y: H S†
    [[[r(h), r(h)], [r(h), r(-h)]], [[r(h), i(-h)], [r(h), i(h)]]]
}

/// Draws one snapshot using the given random source.
pub fn sample_snapshot<R: Rng + ?Sized>(state: &StateVector, rng: &mut R) -> Snapshot {
    let n = state.n();
    let rot = basis_rotations();
    let mut amps = state.amplitudes().to_vec();
    let mut snap = Snapshot { x: 0, z: 0, outcome: 0 };
    for q in 0..n {
        let bit = 1u32 << (n - 1 - q);
        match rng.random_range(0..3u8) {
            0 => {
                snap.x |= bit;
                apply_1q(&mut amps, n, q, &rot[0]);
            }
            1 => {
                snap.x |= bit;
                snap.z |= bit;
                apply_1q(&mut amps, n, q, &rot[1]);
            }
            _ => snap.z |= bit,
        }
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut idx = amps.len() - 1;
    for (b, a) in amps.iter().enumerate() {
        acc += a.norm_sqr();
        if u < acc {
            idx = b;
            break;
        }
    }
    snap.outcome = idx as u32;
    snap
}

/// T random-Pauli snapshots of `state`, reproducible from `seed`.
pub fn collect_shadows(state: &StateVector, count: usize, seed: u64) -> Result<ShadowSet> {
    collect_shadows_stream(state, count, seed, domain::SHADOWS, 0)
}

fn collect_shadows_stream(
    state: &StateVector,
    count: usize,
    seed: u64,
    dom: u64,
    index: u64,
) -> Result<ShadowSet> {
    if count == 0 {
        return Err(Error::input("snapshot count T must be at least 1"));
    }
    let mut rng = stream(seed, dom, index);
    let snapshots = (0..count).map(|_| sample_snapshot(state, &mut rng)).collect();
    Ok(ShadowSet {
        n: state.n(),
        seed: Some(seed),
        snapshots,
    })
}

/// Median of `groups` contiguous-block means of the single-snapshot values.
pub fn estimate_pauli(shadows: &ShadowSet, p: &PauliString, groups: usize) -> Result<f64> {
    if shadows.is_empty() {
        return Err(Error::input("empty shadow set"));
    }
    if p.n() != shadows.n {
        return Err(Error::input("Pauli string and shadows differ in qubit count"));
    }
    if groups == 0 || groups > shadows.len() {
        return Err(Error::input(format!(
            "group count {groups} outside 1..={}",
            shadows.len()
        )));
    }
    if p.is_identity() {
        return Ok(1.0);
    }
    let t = shadows.len();
    let base = t / groups;
    let extra = t % groups;
    let mut means = Vec::with_capacity(groups);
    let mut start = 0;
    for g in 0..groups {
        let len = base + usize::from(g < extra);
        let sum: f64 = shadows.snapshots[start..start + len]
            .iter()
            .map(|s| s.value(p))
            .sum();
        means.push(sum / len as f64);
        start += len;
    }
    Ok(median(&mut means))
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Shadow-estimated feature table: one shadow set per state, drawn from
/// stream `(seed, dom, offset + row)`.
pub fn shadow_features(
    states: &[StateVector],
    paulis: &[PauliString],
    count: usize,
    groups: usize,
    seed: u64,
    dom: u64,
    offset: u64,
) -> Result<FeatureTable> {
    if states.is_empty() {
        return Err(Error::input("no states to featurize"));
    }
    let rows: Vec<Vec<f64>> = states
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let set = collect_shadows_stream(s, count, seed, dom, offset + i as u64)?;
            paulis.iter().map(|p| estimate_pauli(&set, p, groups)).collect()
        })
        .collect::<Result<_>>()?;
    let values = DMatrix::from_fn(states.len(), paulis.len(), |i, j| rows[i][j]);
    FeatureTable::from_values(paulis.to_vec(), values)
}

/// Shadow-estimated Gram matrix of a bounded-weight Pauli kernel.
pub fn shadow_gram(
    rows: &[Vec<f64>],
    cfg: &EmbeddingConfig,
    spec: &KernelSpec,
    max_body: usize,
    count: usize,
    groups: usize,
    seed: u64,
) -> Result<GramMatrix> {
    if spec.n() != cfg.n {
        return Err(Error::input("kernel spec and embedding differ in qubit count"));
    }
    if let Some((p, _)) = spec.terms().iter().find(|(p, _)| p.weight() > max_body) {
        return Err(Error::input(format!(
            "{p} has weight {} above the shadow limit {max_body}",
            p.weight()
        )));
    }
    if spec.support_size() == 0 {
        return Err(Error::input("kernel spec has no nonzero weights"));
    }
    let states = embed_all(rows, cfg)?;
    let table = shadow_features(&states, &spec.paulis(), count, groups, seed, domain::SHADOWS, 0)?;
    gram_from_features(
        &table,
        &spec.weights(),
        GramMeta {
            kernel: spec.hash(),
            dataset: dataset_hash(rows),
            estimator: EstimatorTag::Shadows,
            seed: Some(seed),
            clipped: false,
        },
    )
}

/// Binomial(m, k) / m.
fn sample_fraction<R: Rng + ?Sized>(k: f64, shots: u64, rng: &mut R) -> f64 {
    let p = k.clamp(0.0, 1.0);
    let hits = Binomial::new(shots, p).map(|b| b.sample(rng)).unwrap_or(0);
    hits as f64 / shots as f64
}

/// Inversion-test fidelity Gram with `shots` samples per entry (diagonal included).
pub fn noisy_gfqk_gram(rows: &[Vec<f64>], cfg: &EmbeddingConfig, shots: u64, seed: u64) -> Result<GramMatrix> {
    if shots == 0 {
        return Err(Error::input("shots per element must be at least 1"));
    }
    if rows.is_empty() {
        return Err(Error::input("empty dataset"));
    }
    let states = embed_all(rows, cfg)?;
    let n = states.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| {
                    let k = overlap(&states[i], &states[j])?;
                    let mut rng = stream(seed, domain::SHOTS, (i * n + j) as u64);
                    Ok(sample_fraction(k, shots, &mut rng))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let entries = DMatrix::from_fn(n, n, |i, j| {
        if i <= j {
            upper[i][j - i]
        } else {
            upper[j][i - j]
        }
    });
    GramMatrix::new(
        entries,
        GramMeta {
            kernel: crate::kernels::QuantumKernel::Gfqk.hash(),
            dataset: dataset_hash(rows),
            estimator: EstimatorTag::ShotNoisy,
            seed: Some(seed),
            clipped: false,
        },
    )
}

/// Shot-noisy fidelity block between two sets (e.g. test x train).
pub fn noisy_gfqk_cross(
    rows: &[Vec<f64>],
    cols: &[Vec<f64>],
    cfg: &EmbeddingConfig,
    shots: u64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if shots == 0 {
        return Err(Error::input("shots per element must be at least 1"));
    }
    let a = embed_all(rows, cfg)?;
    let b = embed_all(cols, cfg)?;
    let nb = b.len();
    let out: Vec<Vec<f64>> = a
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            b.iter()
                .enumerate()
                .map(|(j, v)| {
                    let k = overlap(u, v)?;
                    let mut rng = stream(seed, domain::SHOTS_CROSS, (i * nb + j) as u64);
                    Ok(sample_fraction(k, shots, &mut rng))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(a.len(), nb, |i, j| out[i][j]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantMode {
    /// Constants dropped.
    #[default]
    Asymptotic,
    /// Multiply each side by a user-supplied confidence constant.
    Calibrated { gfqk: f64, lpqk: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetQuery {
    pub n: usize,
    /// Training-set size N.
    pub points: u64,
    /// Body count H.
    pub body: usize,
    pub eps: f64,
    /// Fixed shots per fidelity entry; overrides ceil(1/eps^2) when set.
    pub shots_per_element: Option<u64>,
    pub constants: ConstantMode,
    /// Logarithm base; natural log when `None`.
    pub log_base: Option<f64>,
}

impl BudgetQuery {
    pub fn new(n: usize, points: u64, body: usize, eps: f64) -> Self {
        Self {
            n,
            points,
            body,
            eps,
            shots_per_element: None,
            constants: ConstantMode::Asymptotic,
            log_base: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub m_gfqk: u128,
    pub m_lpqk: u128,
    pub crossover_n: u64,
}

/// Per-entry and per-point shot costs (c_g, c_l) for a query.
fn unit_costs(q: &BudgetQuery) -> Result<(u128, u128)> {
    if !(q.eps > 0.0) || !q.eps.is_finite() {
        return Err(Error::input(format!("target error {} must be positive", q.eps)));
    }
    let d = h_body_count(q.n, q.body)? as f64;
    let log = match q.log_base {
        None => d.ln(),
        Some(b) if b > 0.0 && b != 1.0 => d.ln() / b.ln(),
        Some(b) => return Err(Error::input(format!("invalid log base {b}"))),
    };
    let (cg, cl) = match q.constants {
        ConstantMode::Asymptotic => (1.0, 1.0),
        ConstantMode::Calibrated { gfqk, lpqk } => {
            if !(gfqk > 0.0 && lpqk > 0.0) {
                return Err(Error::input("calibration constants must be positive"));
            }
            (gfqk, lpqk)
        }
    };
    let inv_eps2 = 1.0 / (q.eps * q.eps);
    let per_entry = match q.shots_per_element {
        Some(m) => (cg * m as f64).ceil(),
        None => (cg * inv_eps2).ceil(),
    };
    let per_point = (cl * log * 3f64.powi(q.body as i32) * inv_eps2).ceil();
    Ok((per_entry as u128, per_point as u128))
}

/// Total shots for the fidelity Gram (N(N+1)/2 entries) and for shadow
/// estimation of all H-body features (N points), plus the smallest N where
/// the latter is cheaper.
pub fn shot_budget(q: &BudgetQuery) -> Result<Budget> {
    if q.points == 0 {
        return Err(Error::input("N must be at least 1"));
    }
    let (cg, cl) = unit_costs(q)?;
    let n = q.points as u128;
    let m_gfqk = n * (n + 1) / 2 * cg;
    let m_lpqk = n * cl;
    // N cl < N(N+1)/2 cg  <=>  N + 1 > 2 cl / cg
    let crossover = if cg == 0 {
        u64::MAX
    } else {
        let mut c = (2 * cl / cg).max(1) as u64;
        while c > 1 && ((c - 1) as u128 + 1) * cg > 2 * cl {
            c -= 1;
        }
        while (c as u128 + 1) * cg <= 2 * cl {
            c += 1;
        }
        c
    };
    Ok(Budget {
        m_gfqk,
        m_lpqk,
        crossover_n: crossover,
    })
}
