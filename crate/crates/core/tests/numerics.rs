use nalgebra::DMatrix;
use proptest::prelude::*;
use rmlab::numerics::*;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal};

/// F density, integrated with composite Simpson on a `u = x / (1 + x)` grid.
fn f_cdf_by_quadrature(x: f64, d1: f64, d2: f64) -> f64 {
    let ln_c = 0.5 * d1 * (d1 / d2).ln() - ln_beta(0.5 * d1, 0.5 * d2);
    let density = |t: f64| -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        (ln_c + (0.5 * d1 - 1.0) * t.ln() - 0.5 * (d1 + d2) * (1.0 + d1 * t / d2).ln()).exp()
    };
    // substitute t = s^2 to remove the t^(d1/2 - 1) singularity at 0
    let upper = x.sqrt();
    let steps = 20_000;
    let h = upper / steps as f64;
    let g = |s: f64| 2.0 * s * density(s * s);
    let mut sum = g(0.0) + g(upper);
    for k in 1..steps {
        sum += g(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

#[test]
fn f_cdf_matches_independent_library() {
    for &(d1, d2) in &[(1.0, 1.0), (2.0, 5.0), (8.0, 4.0), (11.0, 154.0), (11.0, 168.0), (11.0, 14.0), (3.5, 30.25)] {
        let oracle = FisherSnedecor::new(d1, d2).unwrap();
        for &x in &[0.01, 0.2, 0.9, 1.0, 1.7, 3.0, 9.0, 40.0] {
            let ours = f_cdf(x, d1, d2).unwrap();
            let theirs = oracle.cdf(x);
            assert!((ours - theirs).abs() < 1e-12, "F({d1},{d2}) at {x}: {ours} vs {theirs}");
            let sf = f_sf(x, d1, d2).unwrap();
            assert!((sf - oracle.sf(x)).abs() < 1e-12 * sf.max(1e-3));
        }
    }
}

#[test]
fn f_cdf_matches_quadrature() {
    for &(d1, d2) in &[(2.0, 7.0), (8.0, 112.0), (11.0, 4.0), (5.0, 5.0)] {
        for &x in &[0.3, 1.0, 2.5] {
            let q = f_cdf_by_quadrature(x, d1, d2);
            assert!((f_cdf(x, d1, d2).unwrap() - q).abs() < 1e-8, "F({d1},{d2}) at {x}");
        }
    }
}

#[test]
fn extreme_tail_keeps_relative_accuracy() {
    // sf computed directly, not as 1 - cdf
    let sf = f_sf(200.0, 11.0, 154.0).unwrap();
    let oracle = FisherSnedecor::new(11.0, 154.0).unwrap().sf(200.0);
    assert!(sf > 0.0 && ((sf - oracle) / oracle).abs() < 1e-8);
}

#[test]
fn beta_reg_matches_independent_library() {
    for &(a, b) in &[(0.5, 0.5), (1.0, 3.0), (5.5, 77.0), (40.0, 2.0)] {
        for &x in &[0.001, 0.1, 0.5, 0.93] {
            let ours = beta_reg(a, b, x).unwrap();
            let theirs = statrs::function::beta::beta_reg(a, b, x);
            assert!((ours - theirs).abs() < 1e-12, "I_{x}({a},{b})");
        }
    }
}

#[test]
fn normals_have_unit_moments_and_pass_ks() {
    let mut rng = derive_stream(2024, 7, 0);
    let n = 100_000;
    let mut xs: Vec<f64> = (0..n).map(|_| std_normal(&mut rng)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
    assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(), "var {var}");

    xs.sort_by(f64::total_cmp);
    let phi = Normal::new(0.0, 1.0).unwrap();
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = phi.cdf(x);
            (c - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - c)
        })
        .fold(0.0, f64::max);
    // 1% critical value of the one-sample KS statistic
    assert!(d < 1.63 / (n as f64).sqrt(), "KS D = {d}");
}

fn spd_from(entries: &[f64], m: usize) -> SymMatrix {
    let b = DMatrix::from_row_slice(m, m, &entries[..m * m]);
    SymMatrix::symmetrize(&b * b.transpose() + DMatrix::identity(m, m) * 0.5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cholesky_reconstructs(entries in prop::collection::vec(-2.0..2.0f64, 36), m in 1usize..=6) {
        let a = spd_from(&entries, m);
        let l = cholesky(&a).unwrap();
        for i in 0..m {
            prop_assert!(l[(i, i)] > 0.0);
            for j in (i + 1)..m {
                prop_assert_eq!(l[(i, j)], 0.0);
            }
        }
        let back = &l * l.transpose();
        prop_assert!((back - a.as_matrix()).abs().max() < 1e-12 * a.max_abs().max(1.0));
        let via_eigen: f64 = a.as_matrix().clone().symmetric_eigen().eigenvalues.iter().map(|v| v.ln()).sum();
        prop_assert!((logdet(&a).unwrap() - via_eigen).abs() < 1e-9);
    }

    #[test]
    fn spd_solve_and_inverse_agree(entries in prop::collection::vec(-2.0..2.0f64, 25), rhs in prop::collection::vec(-5.0..5.0f64, 5)) {
        let a = spd_from(&entries, 5);
        let b = DMatrix::from_column_slice(5, 1, &rhs);
        let x = spd_solve(&a, &b).unwrap();
        prop_assert!((a.as_matrix() * &x - &b).abs().max() < 1e-10);
        let inv = a.spd_inverse().unwrap();
        prop_assert!((inv.as_matrix() * &b - &x).abs().max() < 1e-10);
    }

    #[test]
    fn f_cdf_is_monotone_and_complementary(x in 0.0..50.0f64, dx in 0.0..5.0f64, d1 in 0.5..30.0f64, d2 in 0.5..200.0f64) {
        let lo = f_cdf(x, d1, d2).unwrap();
        let hi = f_cdf(x + dx, d1, d2).unwrap();
        prop_assert!((0.0..=1.0).contains(&lo) && lo <= hi + 1e-15);
        prop_assert!((lo + f_sf(x, d1, d2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn streams_are_pure_functions_of_their_path(seed: u64, cond: u64, rep: u64) {
        let mut a = derive_stream(seed, cond, rep);
        let mut b = derive_stream(seed, cond, rep);
        let xs: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        prop_assert_eq!(&xs, &ys);
        let mut c = derive_stream(seed, cond, rep.wrapping_add(1));
        prop_assert_ne!(xs[0], c.next_u64());
    }
}
