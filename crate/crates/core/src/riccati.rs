//! Riccati–Volterra equation of the Volterra alpha-CIR process:
//! `psi(t) = u K(t) + int_0^t K(t - s) F(s, psi(s)) ds`,
//! `F(s, p) = f(s) - kappa p + sigma^2 p^2 / 2 + eta^alpha |p|^alpha / cos(pi (2 - alpha) / 2)`,
//! and `E[exp(u X_T + int_0^T f(T - s) X_s ds)] = exp(Y0)` with
//! `Y0 = u X0 + X0 int_0^T F(s, psi(s)) ds + a int_0^T psi(s) ds`.

use serde::Serialize;
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::kernels::Kernel;
use crate::levy::{derive_path_noise, laplace_coefficient, StableDriverParams};
use crate::model::{AffineParams, ModelCoefficients};
use crate::scheme::{SchemeError, SchemeGrid, SchemePath, SchemePaths, SplitScheme};
use crate::stats::{mean_se, MeanEstimate};

/// Fixed-point tolerance of the corrector.
pub const CORRECTOR_TOL: f64 = 1e-10;
pub const CORRECTOR_MAX_ITER: usize = 50;
pub const BLOWUP_GUARD: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq, Serialize)]
pub enum RiccatiError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("|psi| = {value} exceeded the guard at t = {time}")]
    BlowUp { time: f64, value: f64 },
    #[error("corrector did not converge at t = {time} after {iterations} iterations")]
    NonConvergence { time: f64, iterations: usize },
}

/// The forcing `f` on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ForcingFn {
    Constant(f64),
    /// Values at `s = i * step`, linearly interpolated, constant past the end.
    Grid { step: f64, values: Vec<f64> },
}

impl ForcingFn {
    pub fn zero() -> Self {
        ForcingFn::Constant(0.0)
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            ForcingFn::Constant(c) => *c,
            ForcingFn::Grid { step, values } => {
                let pos = (s / step).max(0.0);
                let i = pos.floor() as usize;
                if i + 1 >= values.len() {
                    return *values.last().unwrap_or(&0.0);
                }
                let w = pos - i as f64;
                values[i] * (1.0 - w) + values[i + 1] * w
            }
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            ForcingFn::Constant(c) => *c == 0.0,
            ForcingFn::Grid { values, .. } => values.iter().all(|&v| v == 0.0),
        }
    }

    fn max_value(&self) -> f64 {
        match self {
            ForcingFn::Constant(c) => *c,
            ForcingFn::Grid { values, .. } => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RiccatiProblem<'a> {
    pub u: f64,
    pub forcing: ForcingFn,
    pub params: AffineParams,
    pub x0: f64,
    pub kernel: &'a dyn Kernel,
    pub horizon: f64,
    pub step: f64,
}

impl RiccatiProblem<'_> {
    pub fn validate(&self) -> Result<(), RiccatiError> {
        let bad = |m: String| Err(RiccatiError::Invalid(m));
        if !(self.u <= 0.0) {
            return bad(format!("u = {} must be non-positive", self.u));
        }
        if !(self.forcing.max_value() <= 0.0) {
            return bad("f must be non-positive".into());
        }
        if let ForcingFn::Grid { step, values } = &self.forcing {
            if !(*step > 0.0) || values.is_empty() {
                return bad("forcing grid needs a positive step and at least one value".into());
            }
        }
        if !(self.horizon > 0.0 && self.step > 0.0 && self.step <= self.horizon) {
            return bad(format!("need 0 < step <= horizon, got step {} horizon {}", self.step, self.horizon));
        }
        if !(self.x0 >= 0.0) {
            return bad(format!("X0 = {} must be non-negative", self.x0));
        }
        self.params.validate().map_err(|e| RiccatiError::Invalid(e.to_string()))
    }

    fn nodes(&self) -> usize {
        ((self.horizon / self.step).round() as usize).max(1)
    }
}

/// `F(psi)` for a given value of the forcing.
pub fn riccati_rhs(psi: f64, f_val: f64, params: &AffineParams) -> f64 {
    f_val - params.kappa * psi
        + 0.5 * params.sigma * params.sigma * psi * psi
        + params.eta.powf(params.alpha) * laplace_coefficient(params.alpha) * psi.abs().powf(params.alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiccatiDiagnostics {
    pub max_iterations: usize,
    /// Largest residual of the discrete equation over the grid.
    pub max_residual: f64,
    /// `psi <= 0` on the whole grid.
    pub non_positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiccatiSolution {
    pub step: f64,
    pub times: Vec<f64>,
    pub psi: Vec<f64>,
    /// `F(t_i, psi(t_i))`.
    pub rhs: Vec<f64>,
    pub diagnostics: RiccatiDiagnostics,
}

/// Trapezoidal product quadrature with a left-rectangle predictor and a
/// fixed-point corrector at each node.
pub fn solve_psi(problem: &RiccatiProblem<'_>) -> Result<RiccatiSolution, RiccatiError> {
    problem.validate()?;
    let n = problem.nodes();
    let h = problem.horizon / n as f64;
    let times: Vec<f64> = (0..=n).map(|i| problem.horizon * i as f64 / n as f64).collect();
    let ktab: Vec<f64> = times.iter().map(|&t| problem.kernel.eval(t)).collect();
    let fvals: Vec<f64> = times.iter().map(|&t| problem.forcing.eval(t)).collect();
    let rhs_at = |i: usize, p: f64| riccati_rhs(p, fvals[i], &problem.params);
    let k0 = ktab[0];

    let mut psi = Vec::with_capacity(n + 1);
    let mut rhs = Vec::with_capacity(n + 1);
    psi.push(problem.u * k0);
    rhs.push(rhs_at(0, psi[0]));
    let mut max_iterations = 0;
    for i in 1..=n {
        let history: f64 = (1..i).map(|j| ktab[i - j] * rhs[j]).sum();
        let base = problem.u * ktab[i] + h * (0.5 * ktab[i] * rhs[0] + history);
        let mut p = problem.u * ktab[i] + h * (ktab[i] * rhs[0] + history);
        let mut iterations = 0;
        loop {
            if !(p.abs() <= BLOWUP_GUARD) {
                return Err(RiccatiError::BlowUp { time: times[i], value: p });
            }
            let next = base + 0.5 * h * k0 * rhs_at(i, p);
            iterations += 1;
            let done = (next - p).abs() <= CORRECTOR_TOL * (1.0 + p.abs());
            p = next;
            if done {
                break;
            }
            if iterations >= CORRECTOR_MAX_ITER {
                return Err(RiccatiError::NonConvergence { time: times[i], iterations });
            }
        }
        if !(p.abs() <= BLOWUP_GUARD) {
            return Err(RiccatiError::BlowUp { time: times[i], value: p });
        }
        max_iterations = max_iterations.max(iterations);
        psi.push(p);
        rhs.push(rhs_at(i, p));
    }

    let max_residual = (0..=n)
        .map(|i| {
            let quad = if i == 0 {
                0.0
            } else {
                let inner: f64 = (1..i).map(|j| ktab[i - j] * rhs[j]).sum();
                h * (0.5 * ktab[i] * rhs[0] + inner + 0.5 * k0 * rhs[i])
            };
            (psi[i] - problem.u * ktab[i] - quad).abs()
        })
        .fold(0.0, f64::max);
    let non_positive = psi.iter().all(|&p| p <= 0.0);
    Ok(RiccatiSolution {
        step: h,
        times,
        psi,
        rhs,
        diagnostics: RiccatiDiagnostics { max_iterations, max_residual, non_positive },
    })
}

fn trapezoid(step: f64, values: &[f64]) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => step * (0.5 * values[0] + values[1..n - 1].iter().sum::<f64>() + 0.5 * values[n - 1]),
    }
}

/// `Y0` from a solved `psi`.
pub fn laplace_exponent(problem: &RiccatiProblem<'_>, solution: &RiccatiSolution) -> f64 {
    problem.u * problem.x0
        + problem.x0 * trapezoid(solution.step, &solution.rhs)
        + problem.params.a * trapezoid(solution.step, &solution.psi)
}

/// `exp(u X_hat_T + sum_j f(T - s_j) X_hat_{s_j} h)` over the substep left
/// endpoints `s_j`.
pub fn laplace_functional(path: &SchemePath, grid: &SchemeGrid, u: f64, forcing: &ForcingFn) -> f64 {
    let m = grid.fine_steps();
    let h = grid.fine_step();
    let mut exponent = u * path.xhat[m];
    if !forcing.is_zero() {
        for (j, x) in path.xhat[..m].iter().enumerate() {
            exponent += forcing.eval(grid.horizon - grid.fine_time(j)) * x * h;
        }
    }
    exponent.exp()
}

/// Mean and standard error of [`laplace_functional`] over completed paths.
pub fn mc_laplace(paths: &SchemePaths, u: f64, forcing: &ForcingFn) -> MeanEstimate {
    let values: Vec<f64> = paths.paths.iter().map(|p| laplace_functional(p, &paths.grid, u, forcing)).collect();
    mean_se(&values)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamedLaplace {
    pub estimate: MeanEstimate,
    pub flagged: usize,
    pub requested: usize,
}

/// [`mc_laplace`] without keeping the paths: each path is simulated, reduced to
/// its functional value and dropped.
#[allow(clippy::too_many_arguments)]
pub fn mc_laplace_streaming(
    kernel: &dyn Kernel,
    coeffs: &ModelCoefficients,
    x0: f64,
    grid: SchemeGrid,
    driver: &StableDriverParams,
    n_paths: usize,
    master_seed: u64,
    u: f64,
    forcing: &ForcingFn,
    exec: Execution,
) -> Result<StreamedLaplace, SchemeError> {
    let scheme = SplitScheme::new(kernel, coeffs, x0, grid)?.with_barx(false);
    let results = exec::map_indices(exec, n_paths, |i| {
        let noise = derive_path_noise(master_seed, i as u64, grid.noise_grid(), driver);
        scheme.run_path(&noise).map(|p| laplace_functional(&p, &grid, u, forcing))
    });
    let mut values = Vec::with_capacity(n_paths);
    let mut flagged = 0;
    for r in results {
        match r {
            Ok(v) => values.push(v),
            Err(SchemeError::Inner(_)) => flagged += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(StreamedLaplace { estimate: mean_se(&values), flagged, requested: n_paths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::ExpSumKernel;
    use approx::assert_relative_eq;

    fn params(a: f64, kappa: f64, sigma: f64, eta: f64) -> AffineParams {
        AffineParams { a, kappa, sigma, eta, alpha: 1.5 }
    }

    #[test]
    fn rhs_examples() {
        assert_eq!(riccati_rhs(0.0, 0.0, &params(1.0, 1.0, 0.5, 0.3)), 0.0);
        assert_relative_eq!(riccati_rhs(-1.0, 0.0, &params(1.0, 0.0, 2f64.sqrt(), 0.0)), 1.0, epsilon = 1e-15);
        assert_relative_eq!(riccati_rhs(-1.0, 0.0, &params(1.0, 0.0, 0.0, 1.0)), 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn zero_data_gives_zero() {
        let k = ExpSumKernel::new(vec![0.7, 0.3], vec![0.5, 3.0]).unwrap();
        let p = RiccatiProblem { u: 0.0, forcing: ForcingFn::zero(), params: params(1.0, 1.0, 0.5, 0.3), x0: 1.0, kernel: &k, horizon: 1.0, step: 0.01 };
        let s = solve_psi(&p).unwrap();
        assert!(s.psi.iter().all(|&v| v == 0.0));
        assert_eq!(laplace_exponent(&p, &s), 0.0);
    }

    #[test]
    fn linear_case_is_exact() {
        let k = ExpSumKernel::constant(1.0).unwrap();
        let forcing = ForcingFn::Grid { step: 0.25, values: vec![0.0, -1.0, -2.0, -1.0, 0.0] };
        let p = RiccatiProblem { u: -0.7, forcing: forcing.clone(), params: params(1.0, 0.0, 0.0, 0.0), x0: 1.0, kernel: &k, horizon: 1.0, step: 0.25 };
        let s = solve_psi(&p).unwrap();
        // piecewise linear f: trapezoid is exact at the nodes
        let expected = [-0.7, -0.825, -1.2, -1.575, -1.7];
        for (a, b) in s.psi.iter().zip(expected) {
            assert_relative_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn a_and_x0_zero_give_zero_exponent() {
        let k = ExpSumKernel::new(vec![1.0], vec![2.0]).unwrap();
        let p = RiccatiProblem { u: -1.0, forcing: ForcingFn::Constant(-0.5), params: params(0.0, 1.0, 0.5, 0.3), x0: 0.0, kernel: &k, horizon: 1.0, step: 0.01 };
        let s = solve_psi(&p).unwrap();
        assert_eq!(laplace_exponent(&p, &s), 0.0);
        assert!(s.diagnostics.non_positive);
        assert!(s.diagnostics.max_residual <= 1e-8 * (1.0 + 1.0));
        assert_relative_eq!(s.psi[0], -1.0);
    }

    #[test]
    fn guard_violation_is_reported() {
        let k = ExpSumKernel::constant(1.0).unwrap();
        let p = RiccatiProblem { u: 0.0, forcing: ForcingFn::Constant(-1e8), params: params(1.0, 1.0, 0.0, 0.0), x0: 1.0, kernel: &k, horizon: 1.0, step: 1e-3 };
        match solve_psi(&p) {
            Err(RiccatiError::BlowUp { time, .. }) => assert!(time > 0.0 && time < 0.02),
            other => panic!("expected a guard violation, got {other:?}"),
        }
    }

    #[test]
    fn rejects_positive_inputs() {
        let k = ExpSumKernel::constant(1.0).unwrap();
        let base = RiccatiProblem { u: 0.5, forcing: ForcingFn::zero(), params: params(1.0, 1.0, 0.5, 0.3), x0: 1.0, kernel: &k, horizon: 1.0, step: 0.1 };
        assert!(matches!(solve_psi(&base), Err(RiccatiError::Invalid(_))));
        let p = RiccatiProblem { u: -0.5, forcing: ForcingFn::Constant(0.1), ..base };
        assert!(matches!(solve_psi(&p), Err(RiccatiError::Invalid(_))));
    }

    #[test]
    fn forcing_interpolation() {
        let f = ForcingFn::Grid { step: 0.5, values: vec![0.0, -1.0] };
        assert_eq!(f.eval(0.25), -0.5);
        assert_eq!(f.eval(3.0), -1.0);
    }
}
