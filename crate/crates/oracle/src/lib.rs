//! Slow, dense reference implementations for cross-checking the fast paths.
//!
//! Everything here works on explicit 2^n x 2^n matrices built by Kronecker
//! products, with qubit 0 as the leftmost tensor factor.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

pub fn single(symbol: char) -> CMat {
    let z = c(0.0, 0.0);
    let o = c(1.0, 0.0);
    match symbol {
        'I' => CMat::from_row_slice(2, 2, &[o, z, z, o]),
        'X' => CMat::from_row_slice(2, 2, &[z, o, o, z]),
        'Y' => CMat::from_row_slice(2, 2, &[z, c(0.0, -1.0), c(0.0, 1.0), z]),
        'Z' => CMat::from_row_slice(2, 2, &[o, z, z, -o]),
        'H' => {
            let h = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            CMat::from_row_slice(2, 2, &[h, h, h, -h])
        }
        _ => panic!("unknown symbol {symbol}"),
    }
}

/// Dense matrix of a Pauli label such as "XIZ".
pub fn pauli_matrix(label: &str) -> CMat {
    label
        .chars()
        .fold(CMat::identity(1, 1), |acc, s| kron(&acc, &single(s)))
}

/// Label with `symbol` on the listed qubits and I elsewhere.
pub fn sparse_label(n: usize, ops: &[(usize, char)]) -> String {
    let mut chars = vec!['I'; n];
    for &(q, s) in ops {
        chars[q] = s;
    }
    chars.into_iter().collect()
}

/// All 4^n labels in "IXYZ" odometer order.
pub fn all_labels(n: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| "IXYZ".chars().map(move |s| format!("{p}{s}")))
            .collect();
    }
    out
}

pub fn label_weight(label: &str) -> usize {
    label.chars().filter(|&s| s != 'I').count()
}

/// (D(y) H^{⊗n})^layers |0>, with D built as the exponential of the dense
/// diagonal generator sum_j y_j Z_j + sum_(j,k) y_j y_k Z_j Z_k.
pub fn iqp_state(x: &[f64], bandwidth: f64, layers: usize, pairs: &[(usize, usize)]) -> CVec {
    let n = x.len();
    let dim = 1 << n;
    let y: Vec<f64> = x.iter().map(|v| v * bandwidth).collect();
    let mut gen = CMat::zeros(dim, dim);
    for j in 0..n {
        gen += pauli_matrix(&sparse_label(n, &[(j, 'Z')])) * c(y[j], 0.0);
    }
    for &(j, k) in pairs {
        gen += pauli_matrix(&sparse_label(n, &[(j, 'Z'), (k, 'Z')])) * c(y[j] * y[k], 0.0);
    }
    for i in 0..dim {
        for j in 0..dim {
            assert!(i == j || gen[(i, j)].norm() == 0.0, "generator is not diagonal");
        }
    }
    let d = CMat::from_diagonal(&CVec::from_fn(dim, |i, _| (c(0.0, 1.0) * gen[(i, i)]).exp()));
    let h = (0..n).fold(CMat::identity(1, 1), |acc, _| kron(&acc, &single('H')));
    let step = d * h;
    let mut psi = CVec::zeros(dim);
    psi[0] = c(1.0, 0.0);
    for _ in 0..layers {
        psi = &step * psi;
    }
    psi
}

pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|j| (j + 1..n).map(move |k| (j, k))).collect()
}

pub fn density(psi: &CVec) -> CMat {
    psi * psi.adjoint()
}

/// tr(ρ P) for a dense ρ and Pauli label.
pub fn expectation(rho: &CMat, label: &str) -> f64 {
    (rho * pauli_matrix(label)).trace().re
}

pub fn fidelity(a: &CVec, b: &CVec) -> f64 {
    a.dotc(b).norm_sqr()
}

/// Partial trace keeping `keep` (sorted), by explicit index summation.
pub fn partial_trace(rho: &CMat, n: usize, keep: &[usize]) -> CMat {
    let traced: Vec<usize> = (0..n).filter(|q| !keep.contains(q)).collect();
    let k = keep.len();
    let bit = |idx: usize, q: usize| (idx >> (n - 1 - q)) & 1;
    let compose = |kept: usize, env: usize| {
        let mut idx = 0;
        for (pos, &q) in keep.iter().enumerate() {
            idx |= ((kept >> (k - 1 - pos)) & 1) << (n - 1 - q);
        }
        for (pos, &q) in traced.iter().enumerate() {
            idx |= ((env >> (traced.len() - 1 - pos)) & 1) << (n - 1 - q);
        }
        debug_assert!(keep.iter().enumerate().all(|(p, &q)| bit(idx, q) == (kept >> (k - 1 - p)) & 1));
        idx
    };
    CMat::from_fn(1 << k, 1 << k, |i, j| {
        (0..1usize << traced.len())
            .map(|e| rho[(compose(i, e), compose(j, e))])
            .sum()
    })
}

pub fn trace_product(a: &CMat, b: &CMat) -> f64 {
    (a * b).trace().re
}

pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let mut r: u128 = 1;
    for i in 0..k.min(n - k) {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

/// Cyclic Jacobi eigensolver; eigenvalues descending with matching columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = cs * mkp - sn * mkq;
                    m[(k, q)] = sn * mkp + cs * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = cs * mpk - sn * mqk;
                    m[(q, k)] = sn * mpk + cs * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = cs * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + cs * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, col| v[(r, order[col])]);
    (values, vectors)
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
}

/// Minimizes ½ αᵀQα − Σα over 0 ≤ α ≤ C, yᵀα = 0 by enumerating every
/// {lower, upper, free} assignment and solving the KKT system on the free set.
pub fn qp_dual(k: &DMatrix<f64>, y: &[i8], cbox: f64) -> Option<QpSolution> {
    let n = y.len();
    assert!(n <= 10, "exhaustive QP is for tiny problems");
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let q = DMatrix::from_fn(n, n, |i, j| yf[i] * yf[j] * k[(i, j)]);
    let tol = 1e-8;
    let mut best: Option<QpSolution> = None;
    for code in 0..3usize.pow(n as u32) {
        // 0 = lower bound, 1 = upper bound, 2 = free
        let state: Vec<usize> = (0..n).map(|i| code / 3usize.pow(i as u32) % 3).collect();
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut alpha: Vec<f64> = state.iter().map(|&s| if s == 1 { cbox } else { 0.0 }).collect();
        let nu_interval;
        if free.is_empty() {
            let eq: f64 = (0..n).map(|i| yf[i] * alpha[i]).sum();
            if eq.abs() > tol {
                continue;
            }
            nu_interval = None;
        } else {
            let f = free.len();
            let mut sys = DMatrix::<f64>::zeros(f + 1, f + 1);
            let mut rhs = DVector::<f64>::zeros(f + 1);
            for (r, &i) in free.iter().enumerate() {
                for (cc, &j) in free.iter().enumerate() {
                    sys[(r, cc)] = q[(i, j)];
                }
                sys[(r, f)] = yf[i];
                rhs[r] = 1.0 - (0..n).filter(|j| state[*j] == 1).map(|j| q[(i, j)] * cbox).sum::<f64>();
                sys[(f, r)] = yf[i];
            }
            rhs[f] = -(0..n).filter(|j| state[*j] == 1).map(|j| yf[j] * cbox).sum::<f64>();
            let svd = sys.clone().svd(true, true);
            let sol = match svd.solve(&rhs, 1e-12) {
                Ok(s) => s,
                Err(_) => continue,
            };
            if (&sys * &sol - &rhs).amax() > 1e-9 {
                continue;
            }
            for (r, &i) in free.iter().enumerate() {
                alpha[i] = sol[r];
            }
            nu_interval = Some(sol[f]);
        }
        if alpha.iter().any(|&a| a < -tol || a > cbox + tol) {
            continue;
        }
        let grad: Vec<f64> = (0..n).map(|i| (0..n).map(|j| q[(i, j)] * alpha[j]).sum::<f64>() - 1.0).collect();
        // stationarity: grad_i + ν y_i ≥ 0 at lower, ≤ 0 at upper, = 0 when free
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..n {
            let bound = -grad[i] / yf[i];
            match (state[i], yf[i] > 0.0) {
                (0, true) | (1, false) => lo = lo.max(bound),
                (0, false) | (1, true) => hi = hi.min(bound),
                _ => {}
            }
        }
        let nu = match nu_interval {
            Some(v) => {
                if v < lo - 1e-7 || v > hi + 1e-7 {
                    continue;
                }
                v
            }
            None => {
                if lo > hi + 1e-7 {
                    continue;
                }
                0.5 * (lo + hi)
            }
        };
        let objective = 0.5
            * (0..n)
                .map(|i| (0..n).map(|j| alpha[i] * q[(i, j)] * alpha[j]).sum::<f64>())
                .sum::<f64>()
            - alpha.iter().sum::<f64>();
        if best.as_ref().is_none_or(|b| objective < b.objective - 1e-12) {
            best = Some(QpSolution {
                alpha,
                bias: nu,
                objective,
            });
        }
    }
    best
}

/// Decision value Σ α_i y_i k(x, x_i) + b for one kernel row.
pub fn decision(sol: &QpSolution, y: &[i8], row: &[f64]) -> f64 {
    sol.alpha
        .iter()
        .zip(y)
        .zip(row)
        .map(|((a, &l), k)| a * l as f64 * k)
        .sum::<f64>()
        + sol.bias
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut s = 0;
        while s < idx.len() {
            let mut e = s;
            while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[s]] {
                e += 1;
            }
            let avg = (s + e) as f64 / 2.0 + 1.0;
            for &i in &idx[s..=e] {
                r[i] = avg;
            }
            s = e + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
