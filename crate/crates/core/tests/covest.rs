mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use sparse_hw::covest::*;
use sparse_hw::matrix_norms::spectral_norm;
use sparse_hw::rv_models::DistributionSpec;
use sparse_hw::stats::wilson;
use sparse_hw::Error;

fn unit_sparse(rng: &mut sparse_hw::rng::RngStream, d: usize, k: usize) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..d).collect();
    for i in 0..k {
        let j = rand::Rng::random_range(rng, i..d);
        idx.swap(i, j);
    }
    let mut th = vec![0.0; d];
    for &i in &idx[..k] {
        th[i] = gauss(rng);
    }
    let n = th.iter().map(|v| v * v).sum::<f64>().sqrt();
    th.iter().map(|v| v / n).collect()
}

/// `E‖BᵀDiag(δ)A_{θ,p}Diag(δ)B‖²_F` by walking every mask.
fn mask_enumerated_moment(b: &DMatrix<f64>, theta: &[f64], p: &[f64], r: f64) -> f64 {
    let d = p.len();
    let a = DMatrix::from_fn(d, d, |j, k| {
        if j == k {
            theta[j] * theta[j] / p[j]
        } else {
            theta[j] * theta[k] / (p[j] * p[k])
        }
    });
    masks(p).iter().map(|(m, prob)| prob * masked_conjugation_norm(b, &a, m).powf(r)).sum()
}

#[test]
fn ipw_is_unbiased_on_small_instance() {
    let mut rng = rng(1);
    let b = random_matrix(&mut rng, 3, 2);
    let p = random_p(&mut rng, 3, 0.3, 1.0);
    let model = MultivariateModel::new(b, 1.0, p).unwrap();
    let check = ipw_unbiasedness(&model, 20, 20_000, 5, 4.0).unwrap();
    assert!(check.passed, "max z {}", check.max_z);
    assert!(check.max_z > 0.0);
}

#[test]
fn observed_mask_rates_within_wilson() {
    let p = vec![0.2, 0.5, 0.9, 1.0];
    let model = MultivariateModel::new(DMatrix::identity(4, 4), 0.8, p.clone()).unwrap();
    let s = generate_samples(&model, 10_000, 3).unwrap();
    for (j, &q) in p.iter().enumerate() {
        let hits = s.masks.column(j).iter().map(|&v| v as u64).sum();
        assert!(wilson(hits, 10_000, 3.29).contains(q), "column {j}");
        // unobserved entries are zero and observed entries are not
        for i in 0..s.len() {
            assert_eq!(s.values[(i, j)] == 0.0, s.masks[(i, j)] == 0);
        }
    }
}

#[test]
fn zero_retention_is_rejected() {
    let err = MultivariateModel::new(DMatrix::identity(2, 2), 1.0, vec![0.5, 0.0]).unwrap_err();
    assert!(matches!(err, Error::ZeroRetention(1)));
    assert!(a_theta_p(&[1.0, 0.0], &[0.0, 1.0]).is_err());
}

#[test]
fn rip_dominates_random_directions() {
    let mut rng = rng(2);
    for _ in 0..5 {
        let m = random_symmetric(&mut rng, 6, false);
        let mut prev = 0.0;
        for k in 1..=3 {
            let rip = rip_k(&m, k).unwrap();
            assert_eq!(rip.supports_checked, binomial(6, k));
            assert!(rip.value >= prev);
            prev = rip.value;
            for _ in 0..10_000 {
                let th = unit_sparse(&mut rng, 6, k);
                assert!(quadratic_deviation(&m, &th) <= rip.value * (1.0 + 1e-12));
            }
        }
        assert!((rip_k(&m, 6).unwrap().value - spectral_norm(&m)).abs() <= 1e-10 * spectral_norm(&m).max(1.0));
    }
}

#[test]
fn rip_pairs_match_closed_form() {
    let mut rng = rng(3);
    let m = random_symmetric(&mut rng, 5, false);
    let mut best: f64 = 0.0;
    for i in 0..5 {
        for j in i + 1..5 {
            let (a, b, c) = (m[(i, i)], m[(j, j)], m[(i, j)]);
            let mid = (a + b) / 2.0;
            let rad = (((a - b) / 2.0).powi(2) + c * c).sqrt();
            best = best.max((mid + rad).abs()).max((mid - rad).abs());
        }
    }
    assert!(rel_close(rip_k(&m, 2).unwrap().value, best, 1e-12));
    let one = (0..5).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    assert_eq!(rip_k(&m, 1).unwrap().value, one);
}

#[test]
fn rip_budget_is_enforced() {
    let m = DMatrix::<f64>::identity(60, 60);
    assert!(matches!(rip_k(&m, 10), Err(Error::BudgetExceeded(_))));
}

#[test]
fn exact_second_moment_matches_mask_enumeration() {
    let mut rng = rng(4);
    for _ in 0..10 {
        let d = 2 + rand::Rng::random_range(&mut rng, 0..3usize);
        let m = 1 + rand::Rng::random_range(&mut rng, 0..3usize);
        let b = random_matrix(&mut rng, d, m);
        let p = random_p(&mut rng, d, 0.1, 1.0);
        let theta: Vec<f64> = (0..d).map(|_| gauss(&mut rng)).collect();
        let want = mask_enumerated_moment(&b, &theta, &p, 2.0);
        let got = expected_frob_sq_exact(&b, &theta, &p).unwrap();
        assert!(rel_close(got, want, 1e-10), "{got} vs {want}");
    }
}

#[test]
fn exact_second_moment_matches_monte_carlo() {
    let mut rng = rng(5);
    for i in 0..5 {
        let b = random_matrix(&mut rng, 3, 2);
        let p = random_p(&mut rng, 3, 0.2, 1.0);
        let theta = unit_sparse(&mut rng, 3, 3);
        let exact = expected_frob_sq_exact(&b, &theta, &p).unwrap();
        let mc = expected_frob_sq_mc(&b, &theta, &p, 100_000, i).unwrap();
        assert!((mc.mean - exact).abs() <= 3.0 * mc.half_width, "{} vs {exact} ± {}", mc.mean, mc.half_width);
    }
}

#[test]
fn first_moment_below_root_second_moment() {
    let mut rng = rng(6);
    let b = random_matrix(&mut rng, 4, 3);
    let p = random_p(&mut rng, 4, 0.2, 1.0);
    let theta = unit_sparse(&mut rng, 4, 2);
    let a = a_theta_p(&theta, &p).unwrap();
    let first = masked_conjugation_power_mc(&b, &a, &p, 1.0, 50_000, 2).unwrap();
    let second = expected_frob_sq_exact(&b, &theta, &p).unwrap();
    assert!(first.mean <= second.sqrt() + first.half_width);
}

#[test]
fn k2_methods_agree() {
    let mut rng = rng(7);
    let b = random_matrix(&mut rng, 4, 2);
    let p = random_p(&mut rng, 4, 0.3, 1.0);
    let model = MultivariateModel::new(b.clone(), 1.0, p.clone()).unwrap();
    let theta = unit_sparse(&mut rng, 4, 2);
    let exact = k1_k2_terms(&model, &theta, K2Method::Exact).unwrap();
    let mc = k1_k2_terms(&model, &theta, K2Method::MonteCarlo { samples: 100_000, seed: 1 }).unwrap();
    assert_eq!(exact.k1, mc.k1);
    assert!(exact.k2_sq_half_width.is_none());
    assert!((exact.k2_sq - mc.k2_sq).abs() <= 3.0 * mc.k2_sq_half_width.unwrap());
    // K1 from its definition
    let s = spectral_norm(&b);
    let wf = (0..4).map(|j| p[j] * b.row(j).norm_squared()).sum::<f64>().sqrt();
    let u2: f64 = theta.iter().zip(&p).map(|(t, q)| (t / q).powi(2)).sum();
    assert!(rel_close(exact.k1, s * (wf + s) * u2, 1e-12));
}

#[test]
fn a_theta_p_entries() {
    let theta = [0.6, -0.8, 0.0];
    let p = [0.5, 0.25, 1.0];
    let a = a_theta_p(&theta, &p).unwrap();
    assert!((a[(0, 0)] - 0.72).abs() < 1e-14);
    assert!((a[(1, 1)] - 2.56).abs() < 1e-14);
    assert!((a[(0, 1)] - (-3.84)).abs() < 1e-14);
    assert_eq!(a[(2, 2)], 0.0);
    assert_eq!(a, a.transpose());
}

#[test]
fn diagonal_conjugation_moment_bound() {
    let mut rng = rng(8);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let b = random_matrix(&mut rng, 4, 3);
        let p = random_p(&mut rng, 4, 0.05, 1.0);
        let diag: Vec<f64> = (0..4).map(|_| gauss(&mut rng)).collect();
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag.clone()));
        for r in [1.0, 2.0, 4.0, 8.0] {
            let moment: f64 = masks(&p).iter().map(|(m, q)| q * masked_conjugation_norm(&b, &a, m).powf(r)).sum();
            worst = worst.max(moment.powf(1.0 / r) / diag_conjugation_rhs(&b, &diag, &p, r));
        }
    }
    assert!(worst <= 1.0, "fitted constant {worst}");
}

#[test]
fn rank_one_conjugation_holds_for_every_mask() {
    let mut rng = rng(9);
    for _ in 0..20 {
        let b = random_matrix(&mut rng, 5, 3);
        let x: Vec<f64> = (0..5).map(|_| gauss(&mut rng)).collect();
        let xv = nalgebra::DVector::from_vec(x.clone());
        let a = &xv * xv.transpose();
        let rhs = rank_one_conjugation_rhs(&b, &x);
        for (m, _) in masks(&[0.5; 5]) {
            assert!(masked_conjugation_norm(&b, &a, &m) <= rhs * (1.0 + 1e-12));
        }
    }
}

#[test]
fn sup_k1_closed_form_is_attained_on_an_axis() {
    let mut rng = rng(10);
    let b = random_matrix(&mut rng, 5, 3);
    let p = vec![0.9, 0.4, 0.7, 0.3, 1.0];
    let model = MultivariateModel::new(b, 1.0, p).unwrap();
    let rhs = rip_bound_rhs(1.0, 2, 100, &model, &SupOptions::default()).unwrap();
    let on_axis = k1(&model, &ThetaSet::new(5, 2).unwrap().axis(3)).unwrap();
    assert!(rel_close(rhs.sup_k1, on_axis, 1e-12));
    assert_eq!(rhs.directions_evaluated, 5 + 256);
    assert_eq!(rhs.k2_method, K2Method::Exact);
    assert!(rel_close(rhs.value, rhs.first + rhs.second + rhs.third, 1e-15));
    assert!(rel_close(rhs.log_term, 1.0 + 2.0 * (48.0 * std::f64::consts::E * 5.0 / 2.0).ln(), 1e-15));
}

#[test]
fn rip_concentration_shape() {
    let mut rng = rng(11);
    let b = random_matrix(&mut rng, 5, 3);
    let model = MultivariateModel::new(b, 1.0, vec![0.6; 5]).unwrap();
    let rep = rip_concentration(&model, 200, 2, &[1.0, 2.0, 4.0], 200, 3, &SupOptions::default(), 1.0).unwrap();
    assert!(rep.passed, "{rep:?}");
    for w in rep.quantiles.windows(2) {
        assert!(w[1] >= w[0]);
    }
    for (q, r) in rep.quantiles.iter().zip(&rep.rhs) {
        assert!(*q <= rep.fitted * r * (1.0 + 1e-12));
    }
}

#[test]
fn samples_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rng(12);
    let model = MultivariateModel::with_distribution(random_matrix(&mut rng, 3, 2), DistributionSpec::rademacher(), vec![0.5, 1.0, 0.8]).unwrap();
    let s = generate_samples(&model, 50, 4).unwrap();
    let path = write_samples(dir.path(), "run", &s, &model, 4).unwrap();
    let (manifest, back) = read_samples(&path).unwrap();
    assert_eq!(manifest.model().unwrap(), model);
    assert_eq!(manifest.n, 50);
    assert_eq!(back.masks, s.masks);
    assert_eq!(back.values, s.values);
    assert_eq!(ipw_estimator(&back, model.p()).unwrap(), ipw_estimator(&s, model.p()).unwrap());
}

#[test]
fn estimator_matches_direct_formula() {
    let mut rng = rng(13);
    let model = MultivariateModel::new(random_matrix(&mut rng, 3, 3), 1.5, vec![0.4, 0.7, 1.0]).unwrap();
    let s = generate_samples(&model, 30, 1).unwrap();
    let est = ipw_estimator(&s, model.p()).unwrap();
    let p = model.p();
    for j in 0..3 {
        for k in 0..3 {
            let sum: f64 = (0..30).map(|i| s.values[(i, j)] * s.values[(i, k)]).sum();
            let w = if j == k { p[j] } else { p[j] * p[k] };
            assert!((est[(j, k)] - sum / (30.0 * w)).abs() <= 1e-12 * sum.abs().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rip_is_monotone_and_bounded(seed in any::<u64>(), d in 2usize..=6) {
        let mut r = rng(seed);
        let m = random_symmetric(&mut r, d, false);
        let mut prev = 0.0;
        for k in 1..=d {
            let v = rip_k(&m, k).unwrap().value;
            prop_assert!(v >= prev);
            prev = v;
        }
        prop_assert!((prev - spectral_norm(&m)).abs() <= 1e-10 * spectral_norm(&m).max(1.0));
    }

    #[test]
    fn random_directions_are_k_sparse_units(seed in any::<u64>(), d in 1usize..=12, k in 1usize..=12) {
        prop_assume!(k <= d);
        let omega = ThetaSet::new(d, k).unwrap();
        let mut r = rng(seed);
        let th = omega.random_direction(&mut r);
        prop_assert!(omega.contains(&th));
        prop_assert!(th.iter().filter(|v| **v != 0.0).count() <= k);
    }
}
