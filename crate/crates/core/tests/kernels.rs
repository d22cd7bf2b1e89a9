use proptest::prelude::*;

use sve_core::kernels::{
    check_complete_monotonicity, modulus_bound, modulus_scan, nonneg_tolerance, recombine, search_nonneg_counterexample,
    ExpSumKernel, Kernel, SampledKernel,
};

/// Flat until 1, then a steep drop: not non-negativity preserving.
fn shelf() -> SampledKernel {
    SampledKernel::new(vec![0.0, 1.0, 1.2, 3.0], vec![1.0, 1.0, 0.1, 0.05]).unwrap()
}

/// Exhaustive search over a lattice: three ordered times on `{0, 0.25, .., 1}`
/// and coefficients on `{-1, -0.5, 0, 0.5, 1}` with non-negative partial sums
/// at each time. Returns the most negative recombination value on `[0, 2]`.
fn lattice_minimum(kernel: &dyn Kernel) -> f64 {
    let grid: Vec<f64> = (0..=4).map(|i| i as f64 * 0.25).collect();
    let coeffs = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let scan: Vec<f64> = (0..=800).map(|i| i as f64 * 2.0 / 800.0).collect();
    let mut worst = f64::INFINITY;
    for a in 0..grid.len() {
        for b in a + 1..grid.len() {
            for c in b + 1..grid.len() {
                let times = [grid[a], grid[b], grid[c]];
                for &x1 in &coeffs {
                    for &x2 in &coeffs {
                        for &x3 in &coeffs {
                            let xs = [x1, x2, x3];
                            let admissible =
                                (0..3).all(|m| recombine(kernel, &times[..=m], &xs[..=m], times[m]) >= 0.0);
                            if !admissible {
                                continue;
                            }
                            for &t in scan.iter().filter(|&&t| t >= times[2]) {
                                worst = worst.min(recombine(kernel, &times, &xs, t));
                            }
                        }
                    }
                }
            }
        }
    }
    worst
}

#[test]
fn lattice_oracle_agrees_with_search_on_expsum() {
    let k = ExpSumKernel::new(vec![0.7, 0.3], vec![0.5, 3.0]).unwrap();
    assert!(lattice_minimum(&k) >= -nonneg_tolerance(&k));
    assert!(search_nonneg_counterexample(&k, 3, 1.0, 2000, 11).is_none());
}

#[test]
fn lattice_oracle_agrees_with_search_on_shelf() {
    let k = shelf();
    assert!(lattice_minimum(&k) < -0.1);
    let cert = search_nonneg_counterexample(&k, 3, 1.0, 2000, 11).expect("shelf kernel has counterexamples");
    assert!(cert.verify(&k));
    assert_eq!(cert.times.len(), 3);
}

#[test]
fn tampered_certificate_fails_verification() {
    let k = shelf();
    let mut cert = search_nonneg_counterexample(&k, 2, 1.0, 2000, 5).unwrap();
    assert!(cert.verify(&k));
    cert.coefficients.iter_mut().for_each(|c| *c = c.abs());
    assert!(!cert.verify(&k));
}

fn expsum_strategy() -> impl Strategy<Value = ExpSumKernel> {
    prop::collection::vec((0.01f64..2.0, 0.0f64..8.0), 1..4).prop_map(|pairs| {
        let (w, l): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        ExpSumKernel::new(w, l).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn expsum_is_positive_decreasing_convex(k in expsum_strategy(), s in 0.0f64..3.0, d in 0.0f64..1.0) {
        let sum: f64 = k.weights().iter().sum();
        prop_assert!((k.at_zero() - sum).abs() <= 1e-14 * sum);
        prop_assert!(k.eval(s) > 0.0);
        prop_assert!(k.eval(s + d) <= k.eval(s));
        prop_assert!(k.deriv1(s) <= 0.0);
        prop_assert!(k.deriv2(s) >= 0.0);
    }

    #[test]
    fn expsum_passes_cm_check(k in expsum_strategy()) {
        let r = check_complete_monotonicity(&k, 2.0, 4, 201);
        prop_assert!(r.passed, "{:?}", r.first_violation());
    }

    #[test]
    fn modulus_bound_dominates_scan(k in expsum_strategy(), delta in 0.01f64..1.0) {
        let bound = modulus_bound(&k, 1.0, delta).unwrap();
        prop_assert!(bound >= modulus_scan(&k, 1.0, delta, 1000) - 1e-12);
    }

    #[test]
    fn certificates_reverify(seed in 0u64..1000, points in 2usize..5) {
        let k = shelf();
        if let Some(cert) = search_nonneg_counterexample(&k, points, 1.0, 200, seed) {
            prop_assert!(cert.verify(&k));
            prop_assert!(cert.violation_value < 0.0);
        }
    }

    #[test]
    fn expsum_search_never_certifies(k in expsum_strategy(), seed in 0u64..1000) {
        prop_assert!(search_nonneg_counterexample(&k, 3, 1.0, 100, seed).is_none());
    }
}
