mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use sparse_hw::matrix_norms::*;

const TOL: f64 = 1e-9;

fn matrix_strategy(max_n: usize) -> impl Strategy<Value = (DMatrix<f64>, Vec<f64>)> {
    (1..=max_n).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n * n).prop_map(move |v| DMatrix::from_row_slice(n, n, &v)),
            prop::collection::vec(0.0f64..=1.0, n),
        )
    })
}

#[test]
fn spectral_matches_jacobi_oracle() {
    let mut rng = rng(1);
    for n in 1..=16 {
        for (m, k) in [(n, n), (n, (n + 3) / 2), ((n + 1) / 2, n)] {
            let a = random_matrix(&mut rng, m, k);
            let want = jacobi_singular_values(&a)[0];
            assert!(rel_close(spectral_norm(&a), want, 1e-8), "{m}x{k}");
            let v = opnorm(&a, 2.0, 2.0, &OpNormOptions::default()).unwrap();
            assert!(v.exact && rel_close(v.value, want, 1e-8));
        }
    }
}

#[test]
fn opnorm_matches_grid_oracle() {
    let mut rng = rng(2);
    let opts = OpNormOptions::default();
    for i in 0..20 {
        let a = random_matrix(&mut rng, 3, 3);
        let alpha = 1.0 + (i % 5) as f64 * 0.25;
        let a_star = conjugate_exponent(alpha);
        let got = opnorm(&a, alpha, a_star, &opts).unwrap().value;
        let grid = grid_opnorm3(&a, alpha, a_star, 100_000);
        assert!(rel_close(got, grid, 0.01), "alpha={alpha}: {got} vs grid {grid}");
    }
}

#[test]
fn opnorm_chain_for_log_concave_exponents() {
    let mut rng = rng(3);
    let opts = OpNormOptions::default();
    for i in 0..20 {
        let a = random_matrix(&mut rng, 3, 3);
        let alpha = 1.0 + (i % 5) as f64 * 0.25;
        let a_star = conjugate_exponent(alpha);
        let aa = opnorm(&a, alpha, a_star, &opts).unwrap().value;
        let two = opnorm(&a, 2.0, a_star, &opts).unwrap().value;
        let spec = spectral_norm(&a);
        // ‖x‖_α ≥ ‖x‖_2 for α ≤ 2, and ‖y‖_{α*} ≤ ‖y‖_2 for α* ≥ 2
        assert!(aa <= two * (1.0 + 1e-6), "{aa} > {two}");
        assert!(two <= spec * (1.0 + 1e-9), "{two} > {spec}");
        let grid_two = grid_opnorm3(&a, 2.0, a_star, 100_000);
        assert!(rel_close(two, grid_two, 0.01));
    }
}

#[test]
fn closed_forms_against_direct_definitions() {
    let mut rng = rng(4);
    for _ in 0..20 {
        let a = random_matrix(&mut rng, 4, 3);
        let opts = OpNormOptions::default();
        let max_col_l2 = (0..3).map(|j| lp(&a.column(j).iter().copied().collect::<Vec<_>>(), 2.0)).fold(0.0, f64::max);
        assert!(rel_close(opnorm(&a, 1.0, 2.0, &opts).unwrap().value, max_col_l2, 1e-12));
        let max_row_l2 = (0..4).map(|i| lp(&a.row(i).iter().copied().collect::<Vec<_>>(), 2.0)).fold(0.0, f64::max);
        assert!(rel_close(opnorm(&a, 2.0, f64::INFINITY, &opts).unwrap().value, max_row_l2, 1e-12));
        assert!(rel_close(opnorm(&a, 1.0, f64::INFINITY, &opts).unwrap().value, max_abs(&a), 1e-12));
    }
}

#[test]
fn gamma1_is_expected_masked_frobenius() {
    let mut rng = rng(5);
    for n in 1..=6 {
        let a = random_matrix(&mut rng, n, n);
        let p = random_p(&mut rng, n, 0.0, 1.0);
        // γ₁ = E‖(δ_i δ_j a_ij)‖²_F over independent masks
        let want: f64 = masks(&p)
            .iter()
            .map(|(m, prob)| {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        if m[i] && m[j] {
                            s += a[(i, j)] * a[(i, j)];
                        }
                    }
                }
                prob * s
            })
            .sum();
        assert!(rel_close(gamma1(&a, &p).unwrap(), want, 1e-12));
    }
}

#[test]
fn weighted_functionals_at_full_retention() {
    let mut rng = rng(6);
    let a = random_symmetric(&mut rng, 5, true);
    let one = vec![1.0; 5];
    assert_eq!(gamma1(&a, &one).unwrap(), frobenius_sq(&a));
    assert!(rel_close(weighted_spectral(&a, &one).unwrap(), spectral_norm(&a), 1e-12));
    let max_row = row_norms(&a).into_iter().fold(0.0, f64::max);
    assert!(rel_close(row_weighted_max(&a, &one).unwrap(), max_row, 1e-12));
}

#[test]
fn cached_stats_agree_with_free_functions() {
    let mut rng = rng(7);
    let a = random_symmetric(&mut rng, 6, false);
    let stats = MatrixStats::new(a.clone());
    assert_eq!(stats.frobenius(), frobenius(&a));
    assert_eq!(stats.spectral(), spectral_norm(&a));
    assert_eq!(stats.spectral(), stats.spectral());
    assert_eq!(stats.mixed(3.0).unwrap(), mixed_norm(&a, 3.0).unwrap());
    let first = stats.opnorm(1.5, 3.0).unwrap();
    assert_eq!(first, stats.opnorm(1.5, 3.0).unwrap());
    assert!(!stats.cached_values().is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sparse_norm_chain((a, p) in matrix_strategy(8)) {
        let two_inf = opnorm(&a, 2.0, f64::INFINITY, &OpNormOptions::default()).unwrap().value;
        let spec = spectral_norm(&a);
        let slack = TOL * spec.max(1.0);
        prop_assert!(row_weighted_max(&a, &p).unwrap() <= two_inf + slack);
        prop_assert!(two_inf <= spec + slack);
        prop_assert!(weighted_spectral(&a, &p).unwrap() <= spec + slack);
        prop_assert!(max_abs(&a) <= spec + slack);
        prop_assert!(gamma1(&a, &p).unwrap() <= frobenius_sq(&a) + slack);
    }

    #[test]
    fn frobenius_submultiplicative((a, _p) in matrix_strategy(8)) {
        let ata = a.transpose() * &a;
        prop_assert!(frobenius(&ata) <= spectral_norm(&a) * frobenius(&a) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn norms_are_absolutely_homogeneous((a, p) in matrix_strategy(6), s in -10.0f64..10.0) {
        prop_assume!(s.abs() > 1e-3);
        let sa = &a * s;
        let k = s.abs();
        prop_assert!(rel_close(frobenius(&sa), k * frobenius(&a), 1e-12) || frobenius(&a) == 0.0);
        prop_assert!(rel_close(spectral_norm(&sa), k * spectral_norm(&a), 1e-10) || frobenius(&a) == 0.0);
        prop_assert!(rel_close(gamma1(&sa, &p).unwrap(), k * k * gamma1(&a, &p).unwrap(), 1e-12) || gamma1(&a, &p).unwrap() == 0.0);
        prop_assert!(rel_close(mixed_norm(&sa, 3.0).unwrap(), k * mixed_norm(&a, 3.0).unwrap(), 1e-12) || frobenius(&a) == 0.0);
    }

    #[test]
    fn mixed_norm_decreases_in_exponent((a, _p) in matrix_strategy(6)) {
        let m1 = mixed_norm(&a, 1.5).unwrap();
        let m2 = mixed_norm(&a, 2.0).unwrap();
        let m3 = mixed_norm(&a, 4.0).unwrap();
        let mi = mixed_norm(&a, f64::INFINITY).unwrap();
        prop_assert!(m1 >= m2 * (1.0 - 1e-12));
        prop_assert!(m2 >= m3 * (1.0 - 1e-12));
        prop_assert!(m3 >= mi * (1.0 - 1e-12));
    }
}
