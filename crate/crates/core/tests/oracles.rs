mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use shsbarrier::catalog::{kuramoto_reference_certificates, kuramoto_subsystem, KuramotoParams};
use shsbarrier::compose::{check_small_gain, SmallGainData};
use shsbarrier::generator::{apply_generator, mode_coupling};
use shsbarrier::model::InputSet;

use common::*;

#[test]
fn dynkin_formula_on_random_switched_systems() {
    for seed in [11u64, 12, 13] {
        let est = dynkin_switched(seed);
        assert!(
            est.mean.abs() <= 3.0 * est.std_err + 1e-3,
            "seed {seed}: residual {} with standard error {}",
            est.mean,
            est.std_err
        );
    }
}

#[test]
fn dynkin_check_detects_a_missing_jump_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sub = random_switched_system(&mut rng);
    let b = quadratic_barriers(&mut rng);
    let g: Vec<_> = (0..2)
        .map(|p| {
            let t = apply_generator(&sub, p, &b[p]).unwrap();
            &(&t.drift + &t.diffusion) + &mode_coupling(&sub, p, &b).unwrap()
        })
        .collect();
    let est = dynkin_residual(&sub, &b, &|p, x| g[p].eval_unchecked(&[x]), 0.7, 1.0, 1e-3, 10000, 11);
    assert!(est.mean.abs() > 3.0 * est.std_err + 1e-3, "{} {}", est.mean, est.std_err);
}

#[test]
fn kuramoto_generator_matches_term_by_term_oracle() {
    let params = KuramotoParams::new(10, InputSet::Free { dim: 1 });
    let sub = kuramoto_subsystem(0, &params);
    let cert = &kuramoto_reference_certificates(&sub.id)[0];
    let b = cert.barriers();
    let vars = sub.all_vars();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for p in 0..2 {
        let g = &apply_generator(&sub, p, &b[p]).unwrap().total() + &mode_coupling(&sub, p, &b).unwrap().embed(&vars).unwrap();
        for _ in 0..50 {
            let z: Vec<f64> = (0..vars.len())
                .map(|k| rand::Rng::random_range(&mut rng, if k == 0 { 0.0..6.28 } else { -1.0..1.0 }))
                .collect();
            let expect = generator_at(&sub, &b, p, &z);
            let got = g.eval_unchecked(&z);
            assert!((got - expect).abs() <= 1e-9 * expect.abs().max(1.0), "{got} vs {expect}");
        }
    }
}

#[test]
fn zero_multiplier_sos_form_equals_pointwise_conditions() {
    let gap = sos_pointwise_gap(5, 200);
    assert!(gap <= 1e-9, "relative gap {gap}");
}

#[test]
fn homogeneous_spectral_radius() {
    let sgd = SmallGainData::uniform(100, 5e-5, 5e-7);
    let r = check_small_gain(&sgd).unwrap();
    assert!((r.spectral_radius - 0.99).abs() < 1e-6);
    assert!((dense_spectral_radius(&sgd) - 0.99).abs() < 1e-9);
}

fn gains(n: usize) -> impl Strategy<Value = SmallGainData> {
    sparse_gains(n, 0.5)
}

fn dense_gains(n: usize) -> impl Strategy<Value = SmallGainData> {
    sparse_gains(n, 1.0)
}

/// Random gains; each off-diagonal entry is kept with probability `density`.
fn sparse_gains(n: usize, density: f64) -> impl Strategy<Value = SmallGainData> {
    (
        prop::collection::vec(0.5f64..2.0, n),
        prop::collection::vec(0.01f64..1.0, n * n),
        prop::collection::vec(prop::bool::weighted(density), n * n),
    )
        .prop_map(move |(l, d, keep)| SmallGainData {
            lambda: l,
            delta: (0..n)
                .map(|i| (0..n).map(|j| if i == j || !keep[i * n + j] { 0.0 } else { d[i * n + j] / n as f64 }).collect())
                .collect(),
            barrier_max: vec![f64::INFINITY; n],
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn power_iteration_matches_dense_eigensolve(sgd in (2usize..=10).prop_flat_map(dense_gains)) {
        let r = check_small_gain(&sgd).unwrap();
        let dense = dense_spectral_radius(&sgd);
        prop_assert!((r.spectral_radius - dense).abs() <= 1e-8 * dense.max(1.0),
            "power {} dense {}", r.spectral_radius, dense);
    }

    // Defective blocks perturb dense eigenvalues by about eps^(1/k), so the
    // reducible case gets a looser tolerance.
    #[test]
    fn reducible_radius_matches_dense_eigensolve(sgd in (2usize..=10).prop_flat_map(gains)) {
        let r = check_small_gain(&sgd).unwrap();
        let dense = dense_spectral_radius(&sgd);
        prop_assert!((r.spectral_radius - dense).abs() <= 1e-5 * dense.max(1.0),
            "power {} dense {}", r.spectral_radius, dense);
    }

    #[test]
    fn weights_exist_iff_radius_below_one(sgd in (2usize..=6).prop_flat_map(gains)) {
        let r = check_small_gain(&sgd).unwrap();
        if let Some(mu) = &r.mu {
            let cols = shsbarrier::compose::weighted_columns(&sgd, mu);
            prop_assert!(cols.iter().all(|&c| c < 0.0));
            prop_assert!(mu.iter().all(|&m| m > 0.0));
        }
        if r.spectral_radius < 0.999 {
            prop_assert!(r.mu.is_some());
        }
        if r.spectral_radius >= 1.0 {
            prop_assert!(r.mu.is_none());
        }
    }
}
