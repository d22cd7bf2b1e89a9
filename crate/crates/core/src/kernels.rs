//! Convolution kernels `K: R+ -> R+` and the checkers for complete monotonicity
//! and non-negativity preservation.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel evaluated at negative time {0}")]
    NegativeTime(f64),
    #[error("derivative order {0} not supported (expected 0, 1 or 2)")]
    UnsupportedOrder(u8),
    #[error("invalid kernel: {0}")]
    Invalid(String),
    #[error("modulus step must satisfy 0 < delta <= horizon (delta = {delta}, horizon = {horizon})")]
    BadModulusStep { delta: f64, horizon: f64 },
}

/// A convolution kernel with two derivatives.
///
/// Evaluation methods assume `t >= 0`; use [`eval_kernel`] for a checked entry
/// point.
pub trait Kernel: Send + Sync + fmt::Debug {
    fn eval(&self, t: f64) -> f64;
    fn deriv1(&self, t: f64) -> f64;
    fn deriv2(&self, t: f64) -> f64;

    fn at_zero(&self) -> f64 {
        self.eval(0.0)
    }

    /// Whether the kernel is known to be convex on `R+`. Convex non-increasing
    /// kernels attain their modulus of continuity at the origin.
    fn is_convex(&self) -> bool {
        false
    }

    /// `max_[0,T] K`.
    fn sup_value(&self, horizon: f64) -> f64 {
        grid_sup(horizon, |t| self.eval(t))
    }

    /// `max_[0,T] |K'|`.
    fn sup_abs_deriv1(&self, horizon: f64) -> f64 {
        grid_sup(horizon, |t| self.deriv1(t).abs())
    }

    /// `int_0^T |K''|`.
    fn abs_deriv2_integral(&self, horizon: f64) -> f64 {
        let n = 4096;
        let h = horizon / n as f64;
        let mut acc = 0.5 * (self.deriv2(0.0).abs() + self.deriv2(horizon).abs());
        for i in 1..n {
            acc += self.deriv2(i as f64 * h).abs();
        }
        acc * h
    }
}

fn grid_sup(horizon: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = 4096;
    let h = horizon / n as f64;
    (0..=n).map(|i| f(i as f64 * h)).fold(f64::NEG_INFINITY, f64::max)
}

/// `K(t) = sum_i w_i exp(-lambda_i t)`: a completely monotone kernel with a
/// discrete Bernstein measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpSumKernel {
    weights: Vec<f64>,
    rates: Vec<f64>,
}

impl ExpSumKernel {
    pub fn new(weights: Vec<f64>, rates: Vec<f64>) -> Result<Self, KernelError> {
        if weights.is_empty() {
            return Err(KernelError::Invalid("at least one exponential is required".into()));
        }
        if weights.len() != rates.len() {
            return Err(KernelError::Invalid(format!(
                "{} weights but {} rates",
                weights.len(),
                rates.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(KernelError::Invalid(format!("weight {w} is not a positive number")));
        }
        if let Some(l) = rates.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(KernelError::Invalid(format!("rate {l} is not a non-negative number")));
        }
        for (i, a) in rates.iter().enumerate() {
            if rates[i + 1..].contains(a) {
                return Err(KernelError::Invalid(format!("rate {a} appears twice")));
            }
        }
        Ok(Self { weights, rates })
    }

    /// The constant kernel `K = c`.
    pub fn constant(c: f64) -> Result<Self, KernelError> {
        Self::new(vec![c], vec![0.0])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Derivative of arbitrary order.
    pub fn deriv(&self, order: u32, t: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.rates)
            .map(|(w, l)| {
                let decay = (-l * t).exp();
                if order == 0 {
                    w * decay
                } else {
                    w * (-l).powi(order as i32) * decay
                }
            })
            .sum()
    }
}

impl Kernel for ExpSumKernel {
    fn eval(&self, t: f64) -> f64 {
        self.deriv(0, t)
    }

    fn deriv1(&self, t: f64) -> f64 {
        self.deriv(1, t)
    }

    fn deriv2(&self, t: f64) -> f64 {
        self.deriv(2, t)
    }

    fn at_zero(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn is_convex(&self) -> bool {
        true
    }

    fn sup_value(&self, _horizon: f64) -> f64 {
        self.at_zero()
    }

    fn sup_abs_deriv1(&self, _horizon: f64) -> f64 {
        self.deriv1(0.0).abs()
    }

    fn abs_deriv2_integral(&self, horizon: f64) -> f64 {
        // K'' >= 0, so the integral telescopes.
        self.deriv1(horizon) - self.deriv1(0.0)
    }
}

/// A kernel given by samples, linearly interpolated and held constant beyond
/// the last sample. Admissible in the checkers only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledKernel {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl SampledKernel {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self, KernelError> {
        if times.len() < 2 || times.len() != values.len() {
            return Err(KernelError::Invalid(
                "sampled kernel needs at least two (time, value) pairs of equal length".into(),
            ));
        }
        if times[0] != 0.0 {
            return Err(KernelError::Invalid("first sample time must be 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(KernelError::Invalid("sample times must be strictly increasing".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(KernelError::Invalid("sample values must be finite and non-negative".into()));
        }
        if values[0] <= 0.0 {
            return Err(KernelError::Invalid("K(0) must be positive".into()));
        }
        Ok(Self { times, values })
    }

    fn segment(&self, t: f64) -> Option<usize> {
        if t >= *self.times.last().unwrap() {
            return None;
        }
        // index of the segment [times[i], times[i+1]) containing t
        Some(self.times.partition_point(|&s| s <= t) - 1)
    }
}

impl Kernel for SampledKernel {
    fn eval(&self, t: f64) -> f64 {
        match self.segment(t) {
            None => *self.values.last().unwrap(),
            Some(i) => {
                let (t0, t1) = (self.times[i], self.times[i + 1]);
                let (v0, v1) = (self.values[i], self.values[i + 1]);
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }

    fn deriv1(&self, t: f64) -> f64 {
        match self.segment(t) {
            None => 0.0,
            Some(i) => {
                (self.values[i + 1] - self.values[i]) / (self.times[i + 1] - self.times[i])
            }
        }
    }

    fn deriv2(&self, _t: f64) -> f64 {
        0.0
    }

    fn sup_abs_deriv1(&self, horizon: f64) -> f64 {
        self.times
            .windows(2)
            .zip(self.values.windows(2))
            .filter(|(t, _)| t[0] < horizon)
            .map(|(t, v)| ((v[1] - v[0]) / (t[1] - t[0])).abs())
            .fold(0.0, f64::max)
    }
}

/// Kernel specification as it appears in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    Expsum { w: Vec<f64>, lambda: Vec<f64> },
    Sampled { times: Vec<f64>, values: Vec<f64> },
}

impl KernelSpec {
    pub fn build(&self) -> Result<Box<dyn Kernel>, KernelError> {
        Ok(match self {
            KernelSpec::Expsum { w, lambda } => Box::new(ExpSumKernel::new(w.clone(), lambda.clone())?),
            KernelSpec::Sampled { times, values } => {
                Box::new(SampledKernel::new(times.clone(), values.clone())?)
            }
        })
    }

    /// Only sum-of-exponential kernels may drive the scheme.
    pub fn build_expsum(&self) -> Result<ExpSumKernel, KernelError> {
        match self {
            KernelSpec::Expsum { w, lambda } => ExpSumKernel::new(w.clone(), lambda.clone()),
            KernelSpec::Sampled { .. } => Err(KernelError::Invalid(
                "sampled kernels are only admissible in kernel checks".into(),
            )),
        }
    }
}

/// Checked evaluation of `K`, `K'` or `K''`.
pub fn eval_kernel(kernel: &dyn Kernel, t: f64, order: u8) -> Result<f64, KernelError> {
    if !(t >= 0.0) {
        return Err(KernelError::NegativeTime(t));
    }
    match order {
        0 => Ok(kernel.eval(t)),
        1 => Ok(kernel.deriv1(t)),
        2 => Ok(kernel.deriv2(t)),
        o => Err(KernelError::UnsupportedOrder(o)),
    }
}

/// Upper bound for the modulus of continuity `w_{K,T}(delta)` of a
/// non-increasing kernel.
pub fn modulus_bound(kernel: &dyn Kernel, horizon: f64, delta: f64) -> Result<f64, KernelError> {
    if !(delta > 0.0 && delta <= horizon) {
        return Err(KernelError::BadModulusStep { delta, horizon });
    }
    let drop_at_origin = kernel.at_zero() - kernel.eval(delta);
    if kernel.is_convex() {
        return Ok(drop_at_origin);
    }
    let lipschitz = kernel.sup_abs_deriv1(horizon) * delta;
    let total_drop = kernel.at_zero() - kernel.eval(horizon);
    Ok(lipschitz.min(total_drop).max(drop_at_origin))
}

/// Grid estimate of `w_{K,T}(delta)`: the largest `|K(s) - K(s')|` over grid
/// pairs on `[0, T]` with `|s - s'| <= delta`.
pub fn modulus_scan(kernel: &dyn Kernel, horizon: f64, delta: f64, points: usize) -> f64 {
    let n = points.max(2) - 1;
    let h = horizon / n as f64;
    let values: Vec<f64> = (0..=n).map(|i| kernel.eval(i as f64 * h)).collect();
    let reach = ((delta / h) * (1.0 + 1e-12)).floor() as usize;
    let mut worst = 0.0_f64;
    for i in 0..=n {
        for j in (i + 1)..=(i + reach).min(n) {
            worst = worst.max((values[i] - values[j]).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CmViolation {
    /// 0 means strict positivity was violated.
    pub order: usize,
    pub time: f64,
    /// `(-1)^k Delta^k_h K(t)`
    pub value: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CmReport {
    pub passed: bool,
    pub horizon: f64,
    pub max_order: usize,
    pub grid_size: usize,
    pub step: f64,
    pub violation_count: usize,
    /// The first violation found at each failing order, by ascending order.
    pub violations: Vec<CmViolation>,
}

impl CmReport {
    pub fn first_violation(&self) -> Option<&CmViolation> {
        self.violations.first()
    }
}

/// Rounding guard for non-negativity scans.
pub fn nonneg_tolerance(kernel: &dyn Kernel) -> f64 {
    1e-12 * (1.0 + kernel.at_zero())
}

/// Checks `(-1)^k Delta^k_h K >= -tol` for `k = 1..=max_order` by forward
/// differences on a uniform grid of `[0, T]`, together with strict positivity
/// of `K` (a completely monotone function with `K(0) > 0` never vanishes).
pub fn check_complete_monotonicity(
    kernel: &dyn Kernel,
    horizon: f64,
    max_order: usize,
    grid_size: usize,
) -> CmReport {
    let grid_size = grid_size.max(max_order + 2);
    let step = horizon / (grid_size - 1) as f64;
    let mut diffs: Vec<f64> = (0..grid_size).map(|i| kernel.eval(i as f64 * step)).collect();
    let base_tol = nonneg_tolerance(kernel);
    let mut violations = Vec::new();
    let mut violation_count = 0;

    let mut first_zero = None;
    for (i, v) in diffs.iter().enumerate() {
        if !(*v > 0.0) {
            violation_count += 1;
            first_zero.get_or_insert(CmViolation { order: 0, time: i as f64 * step, value: *v, tolerance: 0.0 });
        }
    }
    violations.extend(first_zero);

    for order in 1..=max_order {
        for i in 0..diffs.len() - 1 {
            diffs[i] = diffs[i + 1] - diffs[i];
        }
        diffs.pop();
        // a k-th difference accumulates roughly 2^k rounding errors of size tol
        let tol = base_tol * (1u64 << order.min(60)) as f64;
        let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
        let mut first = None;
        for (i, d) in diffs.iter().enumerate() {
            let signed = sign * d;
            if signed < -tol {
                violation_count += 1;
                first.get_or_insert(CmViolation { order, time: i as f64 * step, value: signed, tolerance: tol });
            }
        }
        violations.extend(first);
    }

    CmReport {
        passed: violation_count == 0,
        horizon,
        max_order,
        grid_size,
        step,
        violation_count,
        violations,
    }
}

/// A counterexample to non-negativity preservation: coefficients whose kernel
/// partial sums at the grid points are all non-negative while the
/// recombination goes negative at `violation_time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonNegCertificate {
    pub times: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub violation_time: f64,
    pub violation_value: f64,
}

/// `sum_{t_m <= t} x_m K(t - t_m)`
pub fn recombine(kernel: &dyn Kernel, times: &[f64], coefficients: &[f64], t: f64) -> f64 {
    times
        .iter()
        .zip(coefficients)
        .filter(|(tm, _)| **tm <= t)
        .map(|(tm, x)| x * kernel.eval(t - tm))
        .sum()
}

impl NonNegCertificate {
    /// Re-verifies the certificate from scratch.
    pub fn verify(&self, kernel: &dyn Kernel) -> bool {
        let tol = nonneg_tolerance(kernel);
        let increasing = self.times.windows(2).all(|w| w[1] > w[0]);
        let partial_ok = (0..self.times.len()).all(|m| {
            recombine(kernel, &self.times[..=m], &self.coefficients[..=m], self.times[m]) >= 0.0
        });
        let value = recombine(kernel, &self.times, &self.coefficients, self.violation_time);
        increasing && partial_ok && value < -tol
    }
}

/// Randomized search for a [`NonNegCertificate`].
///
/// Each trial draws `M` ordered times in `[0, T]` and builds the coefficients
/// greedily: `x_m` is chosen so the m-th partial sum lands uniformly in
/// `[0, slack]`, with `slack` log-uniform (and sometimes exactly zero). The
/// recombination is then scanned on a fine grid of `[0, t_M + T]`.
pub fn search_nonneg_counterexample(
    kernel: &dyn Kernel,
    points: usize,
    horizon: f64,
    trials: usize,
    seed: u64,
) -> Option<NonNegCertificate> {
    const SCAN: usize = 1024;
    let k0 = kernel.at_zero();
    let tol = nonneg_tolerance(kernel);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if points == 0 {
        return None;
    }

    for _ in 0..trials {
        let mut times: Vec<f64> = (0..points).map(|_| rng.random::<f64>() * horizon).collect();
        if rng.random_bool(0.5) {
            times[0] = 0.0;
        }
        times.sort_by(f64::total_cmp);
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            continue;
        }

        let mut coefficients = Vec::with_capacity(points);
        for m in 0..points {
            let slack = if m == 0 {
                1.0
            } else if rng.random_bool(0.25) {
                0.0
            } else {
                10f64.powf(-6.0 * rng.random::<f64>())
            };
            let target = slack * rng.random::<f64>();
            let previous = recombine(kernel, &times[..m], &coefficients, times[m]);
            let mut x = (target - previous) / k0;
            coefficients.push(x);
            // float rounding may leave the partial sum a hair below zero
            let mut partial = recombine(kernel, &times[..=m], &coefficients, times[m]);
            while partial < 0.0 {
                x += 2.0 * partial.abs().max(f64::MIN_POSITIVE) / k0;
                coefficients[m] = x;
                partial = recombine(kernel, &times[..=m], &coefficients, times[m]);
            }
        }

        let end = times[points - 1] + horizon;
        let scan = (0..=SCAN).map(|i| end * i as f64 / SCAN as f64).chain(times.iter().copied());
        let worst = scan
            .map(|t| (t, recombine(kernel, &times, &coefficients, t)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((t, value)) = worst {
            if value < -tol {
                return Some(NonNegCertificate {
                    times,
                    coefficients,
                    violation_time: t,
                    violation_value: value,
                });
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_exp() -> ExpSumKernel {
        ExpSumKernel::new(vec![2.0, 1.0], vec![1.0, 3.0]).unwrap()
    }

    #[test]
    fn constant_kernel_is_flat() {
        let k = ExpSumKernel::constant(1.0).unwrap();
        assert_eq!(eval_kernel(&k, 2.7, 0).unwrap(), 1.0);
        assert_eq!(eval_kernel(&k, 2.7, 1).unwrap(), 0.0);
    }

    #[test]
    fn expsum_at_origin() {
        let k = two_exp();
        assert_eq!(eval_kernel(&k, 0.0, 0).unwrap(), 3.0);
        assert_eq!(eval_kernel(&k, 0.0, 1).unwrap(), -5.0);
        assert_eq!(eval_kernel(&k, 0.0, 2).unwrap(), 11.0);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let k = two_exp();
        let h = 1e-6;
        // one-sided at 0 would lose an order; check at interior points and at 0 via K(h), K(-h) extension
        let fd0 = (k.deriv(0, h) - k.deriv(0, -h)) / (2.0 * h);
        assert_relative_eq!(fd0, -5.0, epsilon = 1e-6);
        for &t in &[0.3, 1.0, 2.5] {
            let fd1 = (k.eval(t + h) - k.eval(t - h)) / (2.0 * h);
            assert_relative_eq!(fd1, k.deriv1(t), epsilon = 1e-6);
            let h2 = 1e-4;
            let fd2 = (k.eval(t + h2) - 2.0 * k.eval(t) + k.eval(t - h2)) / (h2 * h2);
            assert_relative_eq!(fd2, k.deriv2(t), epsilon = 1e-5);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let k = two_exp();
        assert_eq!(eval_kernel(&k, -0.1, 0), Err(KernelError::NegativeTime(-0.1)));
        assert_eq!(eval_kernel(&k, 0.1, 3), Err(KernelError::UnsupportedOrder(3)));
        assert!(ExpSumKernel::new(vec![], vec![]).is_err());
        assert!(ExpSumKernel::new(vec![1.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(ExpSumKernel::new(vec![-1.0], vec![1.0]).is_err());
        assert!(ExpSumKernel::new(vec![1.0], vec![-1.0]).is_err());
        assert!(modulus_bound(&k, 1.0, 0.0).is_err());
        assert!(modulus_bound(&k, 1.0, -1.0).is_err());
        assert!(SampledKernel::new(vec![0.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(SampledKernel::new(vec![0.5, 1.0], vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn modulus_of_single_exponential() {
        let k = ExpSumKernel::new(vec![1.0], vec![1.0]).unwrap();
        let bound = modulus_bound(&k, 1.0, 0.1).unwrap();
        assert_relative_eq!(bound, 1.0 - (-0.1f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(bound, 0.09516258196404048, epsilon = 1e-15);
        // exact: the grid scan over [0, T - delta] finds the same maximum at s = 0
        let scan = modulus_scan(&k, 1.0, 0.1, 1001);
        assert_relative_eq!(scan, bound, epsilon = 1e-12);
        assert_eq!(modulus_bound(&ExpSumKernel::constant(2.0).unwrap(), 1.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn modulus_bound_for_non_convex_kernel() {
        let k = SampledKernel::new(vec![0.0, 1.0, 1.2, 3.0], vec![1.0, 1.0, 0.1, 0.05]).unwrap();
        for &delta in &[0.01, 0.1, 0.5, 2.0] {
            let bound = modulus_bound(&k, 3.0, delta).unwrap();
            assert!(bound >= modulus_scan(&k, 3.0, delta, 1000) - 1e-12);
        }
    }

    #[test]
    fn sampled_kernel_interpolates() {
        let k = SampledKernel::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.0]).unwrap();
        assert_relative_eq!(k.eval(0.5), 0.75);
        assert_relative_eq!(k.eval(1.5), 0.25);
        assert_eq!(k.eval(5.0), 0.0);
        assert_eq!(k.deriv1(0.5), -0.5);
        assert_eq!(k.deriv1(5.0), 0.0);
    }

    #[test]
    fn cm_check_passes_for_expsum() {
        let report = check_complete_monotonicity(&two_exp(), 2.0, 4, 401);
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn cm_check_flags_hat_kernel_at_kink() {
        let k = SampledKernel::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 0.0]).unwrap();
        let report = check_complete_monotonicity(&k, 2.0, 2, 201);
        assert!(!report.passed);
        let first = report.first_violation().unwrap();
        assert_relative_eq!(first.time, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn single_point_search_finds_nothing() {
        let k = SampledKernel::new(vec![0.0, 1.0, 1.2, 3.0], vec![1.0, 1.0, 0.1, 0.05]).unwrap();
        assert!(search_nonneg_counterexample(&k, 1, 2.0, 200, 3).is_none());
        assert!(search_nonneg_counterexample(&two_exp(), 1, 2.0, 200, 3).is_none());
    }

    #[test]
    fn kernel_spec_parses() {
        let spec: KernelSpec = serde_json::from_str(r#"{"type":"expsum","w":[0.7,0.3],"lambda":[0.5,3]}"#).unwrap();
        let k = spec.build_expsum().unwrap();
        assert_relative_eq!(k.at_zero(), 1.0);
        let sampled: KernelSpec =
            serde_json::from_str(r#"{"type":"sampled","times":[0,1],"values":[1,0.5]}"#).unwrap();
        assert!(sampled.build().is_ok());
        assert!(sampled.build_expsum().is_err());
        assert!(serde_json::from_str::<KernelSpec>(r#"{"type":"expsum","w":[1]}"#).is_err());
    }
}
