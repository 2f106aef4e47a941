use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use qkern_core::pauli::{enumerate_all, PauliString};
use qkern_core::qstate::{
    all_pauli_expectations, embed, overlap, pauli_expectation, reduced_density_matrix, Coupling,
    EmbeddingConfig,
};
use qkern_oracle as oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn ring_pairs(n: usize) -> Vec<(usize, usize)> {
    match n {
        0 | 1 => vec![],
        2 => vec![(0, 1)],
        _ => (0..n).map(|j| (j.min((j + 1) % n), j.max((j + 1) % n))).collect(),
    }
}

#[test]
fn embedding_matches_dense_unitary() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 1..=4 {
        for layers in 1..=3 {
            for coupling in [Coupling::AllPairs, Coupling::Ring] {
                let x = random_point(&mut rng, n);
                let cfg = EmbeddingConfig::new(n, 0.7).with_layers(layers).with_coupling(coupling);
                let fast = embed(&x, &cfg).unwrap();
                let pairs = match coupling {
                    Coupling::AllPairs => oracle::all_pairs(n),
                    Coupling::Ring => ring_pairs(n),
                };
                let dense = oracle::iqp_state(&x, 0.7, layers, &pairs);
                for (a, b) in fast.amplitudes().iter().zip(dense.iter()) {
                    assert!((a - b).norm() < 1e-12, "n={n} layers={layers} {coupling:?}");
                }
            }
        }
    }
}

#[test]
fn pauli_expectations_match_dense_traces() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 3;
    let cfg = EmbeddingConfig::new(n, 0.9);
    for _ in 0..3 {
        let x = random_point(&mut rng, n);
        let state = embed(&x, &cfg).unwrap();
        let rho = oracle::density(&oracle::iqp_state(&x, 0.9, 2, &oracle::all_pairs(n)));
        let spectrum = all_pauli_expectations(&state).unwrap();
        for label in oracle::all_labels(n) {
            let p: PauliString = label.parse().unwrap();
            let dense = oracle::expectation(&rho, &label);
            let direct = pauli_expectation(&state, &p).unwrap();
            let walsh = spectrum[((p.x_mask() as usize) << n) | p.z_mask() as usize];
            assert!((direct - dense).abs() < 1e-12, "{label}");
            assert!((walsh - dense).abs() < 1e-12, "{label}");
        }
    }
}

#[test]
fn reduced_states_match_dense_partial_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 4;
    let cfg = EmbeddingConfig::new(n, 0.6);
    let x = random_point(&mut rng, n);
    let state = embed(&x, &cfg).unwrap();
    let rho = oracle::density(&oracle::iqp_state(&x, 0.6, 2, &oracle::all_pairs(n)));
    for keep in [vec![0], vec![3], vec![1, 2], vec![0, 3], vec![0, 1, 3], vec![0, 1, 2, 3]] {
        let fast = reduced_density_matrix(&state, &keep).unwrap();
        let dense = oracle::partial_trace(&rho, n, &keep);
        assert_eq!(fast.entries().shape(), dense.shape());
        let err = (fast.entries() - &dense).iter().fold(0.0f64, |m, v| m.max(v.norm()));
        assert!(err < 1e-12, "{keep:?}: {err}");
        assert!((fast.trace() - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(fast.hermiticity_error() < 1e-12);
    }
}

#[test]
fn overlap_equals_pauli_completeness_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for n in 1..=4 {
        let cfg = EmbeddingConfig::new(n, 0.95);
        let a = embed(&random_point(&mut rng, n), &cfg).unwrap();
        let b = embed(&random_point(&mut rng, n), &cfg).unwrap();
        let sum: f64 = enumerate_all(n)
            .unwrap()
            .iter()
            .map(|p| pauli_expectation(&a, p).unwrap() * pauli_expectation(&b, p).unwrap())
            .sum::<f64>()
            / f64::from(1u32 << n);
        let dense = oracle::fidelity(
            &nalgebra::DVector::from_column_slice(a.amplitudes()),
            &nalgebra::DVector::from_column_slice(b.amplitudes()),
        );
        assert!((overlap(&a, &b).unwrap() - sum).abs() < 1e-12);
        assert!((dense - sum).abs() < 1e-12);
    }
}

#[test]
fn bell_pair_reduced_state_is_maximally_mixed() {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let z = Complex64::new(0.0, 0.0);
    let bell = qkern_core::qstate::StateVector::new(
        2,
        vec![Complex64::new(h, 0.0), z, z, Complex64::new(h, 0.0)],
    )
    .unwrap();
    let r = reduced_density_matrix(&bell, &[1]).unwrap();
    let expect = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
    for i in 0..2 {
        for j in 0..2 {
            assert!((r.entries()[(i, j)].re - expect[(i, j)]).abs() < 1e-15);
        }
    }
    assert!((r.purity() - 0.5).abs() < 1e-15);
}

proptest! {
    #[test]
    fn pure_state_pauli_spectrum_sums_to_dimension(
        n in 1usize..=5,
        seed in any::<u64>(),
        bandwidth in 0.05f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = EmbeddingConfig::new(n, bandwidth);
        let s = embed(&random_point(&mut rng, n), &cfg).unwrap();
        let spec = all_pauli_expectations(&s).unwrap();
        prop_assert!(spec.iter().all(|v| v.abs() <= 1.0));
        let total: f64 = spec.iter().map(|v| v * v).sum();
        prop_assert!((total - f64::from(1u32 << n)).abs() < 1e-9);
    }

    #[test]
    fn overlap_is_symmetric_and_bounded(n in 1usize..=5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = EmbeddingConfig::new(n, 0.8);
        let a = embed(&random_point(&mut rng, n), &cfg).unwrap();
        let b = embed(&random_point(&mut rng, n), &cfg).unwrap();
        let ab = overlap(&a, &b).unwrap();
        prop_assert!((ab - overlap(&b, &a).unwrap()).abs() < 1e-14);
        prop_assert!((-1e-15..=1.0 + 1e-12).contains(&ab));
        prop_assert!((overlap(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}
