use proptest::prelude::*;

use sve_core::exec::with_threads;
use sve_core::kernels::Kernel;
use sve_core::levy::derive_path_noise;
use sve_core::scheme::RunOptions;
use sve_core::stats::mean_se;
use sve_core::*;

fn desk_kernel() -> ExpSumKernel {
    ExpSumKernel::new(vec![0.7, 0.3], vec![0.5, 3.0]).unwrap()
}

#[test]
fn recombination_identity_holds_on_every_interval() {
    let kernel = desk_kernel();
    let coeffs = affine_coefficients(1.0, 1.0, 0.5, 0.3, 1.5).unwrap();
    let grid = SchemeGrid::new(1.0, 16, 8).unwrap();
    let scheme = SplitScheme::new(&kernel, &coeffs, 1.0, grid).unwrap();
    let k0 = kernel.at_zero();
    for i in 0..20 {
        let p = scheme.run_path(&derive_path_noise(42, i, grid.noise_grid(), &StableDriverParams::exact(1.5).unwrap())).unwrap();
        for k in 0..grid.steps {
            for q in 1..grid.substeps {
                let fine = k * grid.substeps + q;
                let t = grid.fine_time(fine);
                let direct: f64 = 1.0
                    + p.node_jumps[..k].iter().enumerate().map(|(j, jump)| jump / k0 * kernel.eval(t - grid.node(j + 1))).sum::<f64>();
                assert!((p.xhat[fine] - direct).abs() <= 1e-12, "path {i} t {t}: {} vs {direct}", p.xhat[fine]);
            }
            if k > 0 {
                assert_eq!(p.xhat[k * grid.substeps], p.xi_left[k - 1]);
                assert_eq!(p.node_jumps[k - 1], p.xi_left[k - 1] - p.xhat_left[k - 1]);
            }
        }
        assert_eq!(*p.xhat.last().unwrap(), *p.xhat_left.last().unwrap());
    }
}

/// `m(t) = x0 + int_0^t K(t - s)(a - kappa m(s)) ds` by the trapezoid rule.
fn volterra_mean(kernel: &dyn Kernel, x0: f64, a: f64, kappa: f64, horizon: f64, steps: usize) -> f64 {
    let h = horizon / steps as f64;
    let mut m = vec![x0];
    for i in 1..=steps {
        let t = i as f64 * h;
        let k = |j: usize| kernel.eval(t - j as f64 * h);
        let known: f64 = (0..i).map(|j| (if j == 0 { 0.5 } else { 1.0 }) * k(j) * (a - kappa * m[j])).sum::<f64>() * h;
        // implicit endpoint term: m_i = x0 + known + h/2 K(0)(a - kappa m_i)
        let k0 = k(i);
        m.push((x0 + known + 0.5 * h * k0 * a) / (1.0 + 0.5 * h * k0 * kappa));
    }
    m[steps]
}

#[test]
fn first_moment_matches_linear_volterra_equation() {
    let kernel = desk_kernel();
    let (a, kappa, x0) = (1.0, 2.0, 0.3);
    let coeffs = affine_coefficients(a, kappa, 0.4, 0.2, 1.5).unwrap();
    let grid = SchemeGrid::new(1.0, 64, 8).unwrap();
    let paths = run_split_scheme(
        &kernel,
        &coeffs,
        x0,
        grid,
        &StableDriverParams::exact(1.5).unwrap(),
        4000,
        9,
        RunOptions { store_barx: false, ..RunOptions::default() },
    )
    .unwrap();
    let terminal: Vec<f64> = paths.paths.iter().map(|p| *p.xhat.last().unwrap()).collect();
    let e = mean_se(&terminal);
    let m = volterra_mean(&kernel, x0, a, kappa, 1.0, 20_000);
    assert!((e.mean - m).abs() <= 4.0 * e.se + 0.01, "{} ± {} vs {m}", e.mean, e.se);
}

#[test]
fn moment_bound_stays_order_one() {
    let kernel = desk_kernel();
    let coeffs = affine_coefficients(1.0, 1.0, 0.5, 0.3, 1.5).unwrap();
    for n in [8, 32] {
        let grid = SchemeGrid::new(1.0, n, 8).unwrap();
        let paths =
            run_split_scheme(&kernel, &coeffs, 1.0, grid, &StableDriverParams::exact(1.5).unwrap(), 500, 3, RunOptions::default()).unwrap();
        let s = paths.summary();
        assert!(s.sup_mean_xi.value < 1.2 && s.sup_mean_xhat.value < 1.2, "{s:?}");
    }
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let kernel = desk_kernel();
    let coeffs = affine_coefficients(1.0, 1.0, 0.5, 0.3, 1.5).unwrap();
    let grid = SchemeGrid::new(1.0, 8, 4).unwrap();
    for driver in [StableDriverParams::exact(1.5).unwrap(), StableDriverParams::thinned(1.5, None).unwrap()] {
        let run = |exec| {
            run_split_scheme(&kernel, &coeffs, 1.0, grid, &driver, 64, 5, RunOptions { exec, store_barx: true }).unwrap()
        };
        let seq = run(Execution::Sequential);
        assert_eq!(seq, run(Execution::Parallel));
        assert_eq!(seq, with_threads(Some(3), || run(Execution::Parallel)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scheme_paths_stay_non_negative(
        a in 0.0f64..2.0,
        kappa in 0.0f64..3.0,
        sigma in 0.0f64..1.5,
        eta in 0.0f64..1.0,
        alpha in 1.2f64..1.9,
        w in 0.1f64..1.0,
        lambda in 0.1f64..5.0,
        x0 in 0.0f64..2.0,
        thinned in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let kernel = ExpSumKernel::new(vec![w, 1.0 - w + 0.05], vec![lambda, lambda + 2.0]).unwrap();
        let coeffs = affine_coefficients(a, kappa, sigma, eta, alpha).unwrap();
        let driver = if thinned { StableDriverParams::thinned(alpha, None).unwrap() } else { StableDriverParams::exact(alpha).unwrap() };
        let grid = SchemeGrid::new(1.0, 8, 4).unwrap();
        let paths = run_split_scheme(&kernel, &coeffs, x0, grid, &driver, 16, seed, RunOptions::default()).unwrap();
        prop_assert!(paths.min_xhat() >= -1e-12, "min xhat {}", paths.min_xhat());
        for p in &paths.paths {
            prop_assert!(p.xi.iter().all(|&x| x >= 0.0));
        }
    }
}
