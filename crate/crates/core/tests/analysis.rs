use proptest::prelude::*;

use sve_core::analysis::convergence::{convergence_study, oracle_study, StudyConfig};
use sve_core::analysis::l1_distance;
use sve_core::analysis::yw::{build_yw, lemma_terms};
use sve_core::exec::with_threads;
use sve_core::*;

fn bundle() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn l1_is_a_pseudometric(a in bundle(), b in bundle(), c in bundle()) {
        let t = [0.0, 0.25, 0.5, 1.0];
        let d = |x: &[Vec<f64>], y: &[Vec<f64>]| l1_distance(x, y, &t).unwrap().value;
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() <= 1e-15);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }

    #[test]
    fn lemma_bounds_hold_for_random_tuples(
        x in -5.0f64..5.0, y in -5.0f64..5.0, a in -5.0f64..5.0, b in -5.0f64..5.0, u in 1e-6f64..10.0, c in 0.1f64..3.0,
    ) {
        let yw = build_yw(100.0, 0.01).unwrap();
        let coeffs = affine_coefficients(1.0, 1.0, 0.5, 0.3, 1.5).unwrap();
        let cm = sve_core::model::half_holder_constant(&coeffs, 5.0, 401);
        // the grid constant need not dominate off-grid pairs; enlarge it by the pairs at hand
        let ratio = |p: f64, q: f64| if p == q { 0.0 } else { (coeffs.gamma(p) - coeffs.gamma(q)).abs() / (p - q).abs().sqrt() };
        let cm = cm.max(ratio(x, y)).max(ratio(a, b));
        let t = lemma_terms(&yw, &coeffs, c, cm, &[x, y, a, b, u]);
        prop_assert!(t.one_jump <= t.one_jump_bound + 1e-9);
        prop_assert!(t.two_scheme <= t.two_scheme_bound + 1e-9);
    }
}

fn desk_kernel() -> ExpSumKernel {
    ExpSumKernel::new(vec![0.7, 0.3], vec![0.5, 3.0]).unwrap()
}

#[test]
fn zero_model_gives_zero_table() {
    let kernel = desk_kernel();
    let coeffs = ModelCoefficients::zero(1.5).unwrap();
    let cfg = StudyConfig {
        kernel: &kernel,
        coeffs: &coeffs,
        x0: 0.7,
        horizon: 1.0,
        substeps: 4,
        driver: StableDriverParams::exact(1.5).unwrap(),
        exec: Execution::Parallel,
    };
    let t = convergence_study(&cfg, &[4, 8, 16], 40, 1).unwrap();
    for r in &t.rows {
        assert_eq!(r.sup_l1_xi_xhat.value, 0.0);
        assert_eq!(r.sup_l1_xhat_xbar.value, 0.0);
        assert_eq!(r.sup_mean_xi.value, 0.7);
    }
    assert!(t.rows.iter().filter_map(|r| r.cauchy.as_ref()).all(|c| c.value == 0.0));
    assert_eq!(t.moment_variation, 0.0);
    assert!(t.passed());
}

#[test]
fn convergence_table_is_thread_count_invariant() {
    let kernel = desk_kernel();
    let coeffs = affine_coefficients(1.0, 1.0, 0.5, 0.3, 1.5).unwrap();
    let study = |exec| {
        let cfg = StudyConfig {
            kernel: &kernel,
            coeffs: &coeffs,
            x0: 1.0,
            horizon: 1.0,
            substeps: 4,
            driver: StableDriverParams::exact(1.5).unwrap(),
            exec,
        };
        convergence_study(&cfg, &[4, 8, 16], 50, 2).unwrap()
    };
    let reference = with_threads(Some(1), || study(Execution::Parallel));
    assert_eq!(reference, with_threads(Some(4), || study(Execution::Parallel)));
    assert_eq!(reference, study(Execution::Sequential));
    assert_eq!(reference.to_csv(), study(Execution::Sequential).to_csv());
}

#[test]
fn rejects_bad_levels() {
    let kernel = desk_kernel();
    let coeffs = affine_coefficients(1.0, 1.0, 0.5, 0.3, 1.5).unwrap();
    let cfg = StudyConfig {
        kernel: &kernel,
        coeffs: &coeffs,
        x0: 1.0,
        horizon: 1.0,
        substeps: 4,
        driver: StableDriverParams::exact(1.5).unwrap(),
        exec: Execution::Sequential,
    };
    assert!(convergence_study(&cfg, &[], 10, 0).is_err());
    assert!(convergence_study(&cfg, &[4, 6], 10, 0).is_err());
}

#[test]
fn oracle_distance_shrinks_with_resolution() {
    let coeffs = affine_coefficients(1.0, 1.0, 0.5, 0.3, 1.5).unwrap();
    let driver = StableDriverParams::exact(1.5).unwrap();
    let s = oracle_study(&desk_kernel(), &coeffs, 1.0, 1.0, &[(4, 4), (8, 8), (16, 16)], &driver, 200, 3, Execution::Parallel).unwrap();
    assert_eq!(s.flagged_paths, 0);
    assert!(s.rows.windows(2).all(|w| w[1].sup_l1_xi.value < w[0].sup_l1_xi.value), "{:?}", s.rows);

    // with a constant kernel xi is the plain SDE up to summation order; X_hat is frozen between nodes
    let one = ExpSumKernel::constant(1.0).unwrap();
    let s = oracle_study(&one, &coeffs, 1.0, 1.0, &[(4, 4), (8, 4)], &driver, 50, 3, Execution::Parallel).unwrap();
    assert!(s.rows.iter().all(|r| r.sup_l1_xi.value < 1e-12), "{:?}", s.rows);
}
