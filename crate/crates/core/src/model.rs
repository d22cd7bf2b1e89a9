//! Coefficient functions `mu`, `sigma`, `gamma` of the Lévy-driven equation and
//! sampling-based validation of the standing assumptions.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter {name} = {value} outside its domain ({domain})")]
    Domain { name: &'static str, value: f64, domain: &'static str },
}

type Coefficient = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Parameters of the Volterra alpha-stable CIR model
/// `mu(x) = a - kappa x`, `sigma(x) = sigma_bar sqrt(x+)`,
/// `gamma(x) = eta_bar sign(x) |x|^(1/alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub a: f64,
    pub kappa: f64,
    pub sigma: f64,
    pub eta: f64,
    pub alpha: f64,
}

impl AffineParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        check(self.a, "a", "a >= 0", |v| v >= 0.0)?;
        check(self.kappa, "kappa", "finite", |v| v.is_finite())?;
        check(self.sigma, "sigma", "sigma >= 0", |v| v >= 0.0)?;
        check(self.eta, "eta", "eta >= 0", |v| v >= 0.0)?;
        check_alpha(self.alpha)
    }
}

fn check(value: f64, name: &'static str, domain: &'static str, ok: impl Fn(f64) -> bool) -> Result<(), ModelError> {
    if value.is_finite() && ok(value) {
        Ok(())
    } else {
        Err(ModelError::Domain { name, value, domain })
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<(), ModelError> {
    check(alpha, "alpha", "1 < alpha < 2", |v| v > 1.0 && v < 2.0)
}

/// The coefficients of `X = X0 + int K(t-s) (mu ds + sigma dB + gamma dL)`.
#[derive(Clone)]
pub struct ModelCoefficients {
    mu: Coefficient,
    sigma: Coefficient,
    gamma: Coefficient,
    alpha: f64,
    affine: Option<AffineParams>,
}

impl fmt::Debug for ModelCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelCoefficients")
            .field("alpha", &self.alpha)
            .field("affine", &self.affine)
            .finish_non_exhaustive()
    }
}

impl ModelCoefficients {
    /// Arbitrary coefficient functions. Only `alpha` is checked here;
    /// the remaining assumptions are checked by [`validate_assumptions`].
    pub fn custom(
        mu: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        gamma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        alpha: f64,
    ) -> Result<Self, ModelError> {
        check_alpha(alpha)?;
        Ok(Self { mu: Arc::new(mu), sigma: Arc::new(sigma), gamma: Arc::new(gamma), alpha, affine: None })
    }

    /// All coefficients identically zero.
    pub fn zero(alpha: f64) -> Result<Self, ModelError> {
        Self::custom(|_| 0.0, |_| 0.0, |_| 0.0, alpha)
    }

    #[inline]
    pub fn mu(&self, x: f64) -> f64 {
        (self.mu)(x)
    }

    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        (self.sigma)(x)
    }

    #[inline]
    pub fn gamma(&self, x: f64) -> f64 {
        (self.gamma)(x)
    }

    /// Lévy jump coefficient `eta(x, u) = u gamma(x)`.
    #[inline]
    pub fn eta(&self, x: f64, u: f64) -> f64 {
        u * self.gamma(x)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn affine(&self) -> Option<&AffineParams> {
        self.affine.as_ref()
    }
}

/// Builds the alpha-stable CIR coefficients.
pub fn affine_coefficients(a: f64, kappa: f64, sigma: f64, eta: f64, alpha: f64) -> Result<ModelCoefficients, ModelError> {
    let params = AffineParams { a, kappa, sigma, eta, alpha };
    params.validate()?;
    let inv_alpha = 1.0 / alpha;
    Ok(ModelCoefficients {
        mu: Arc::new(move |x| a - kappa * x),
        sigma: Arc::new(move |x: f64| sigma * x.max(0.0).sqrt()),
        gamma: Arc::new(move |x: f64| {
            if x == 0.0 {
                0.0
            } else {
                eta * x.signum() * x.abs().powf(inv_alpha)
            }
        }),
        alpha,
        affine: Some(params),
    })
}

/// Model specification as it appears in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    AlphaCir { a: f64, kappa: f64, sigma: f64, eta: f64, alpha: f64 },
}

impl ModelSpec {
    pub fn build(&self) -> Result<ModelCoefficients, ModelError> {
        match *self {
            ModelSpec::AlphaCir { a, kappa, sigma, eta, alpha } => affine_coefficients(a, kappa, sigma, eta, alpha),
        }
    }

    pub fn params(&self) -> AffineParams {
        match *self {
            ModelSpec::AlphaCir { a, kappa, sigma, eta, alpha } => AffineParams { a, kappa, sigma, eta, alpha },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Largest (or worst) sampled value of the checked quantity.
    pub value: f64,
    pub worst_point: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub passed: bool,
    /// Smallest L with `|mu| + sigma^2 + |gamma|^alpha <= L (1 + |x|)` on the grid.
    pub growth_constant: f64,
    /// Smallest L'_m with the local regularity inequality on the sampled pairs.
    pub local_constant: f64,
    pub checks: Vec<AssumptionCheck>,
    /// The point where the worst violation (or the growth supremum) was found.
    pub worst_point: Option<f64>,
}

/// Logarithmic grid on `[0, 1e3]` together with its negatives.
pub fn default_growth_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    let n = 400;
    for i in 0..=n {
        let x = 10f64.powf(-6.0 + 9.0 * i as f64 / n as f64);
        grid.push(x);
        grid.push(-x);
    }
    grid.sort_by(f64::total_cmp);
    grid
}

fn growth_ratio(coeffs: &ModelCoefficients, x: f64) -> f64 {
    (coeffs.mu(x).abs() + coeffs.sigma(x).powi(2) + coeffs.gamma(x).abs().powf(coeffs.alpha)) / (1.0 + x.abs())
}

fn local_ratio(coeffs: &ModelCoefficients, x: f64, y: f64) -> f64 {
    let d = (x - y).abs();
    if d == 0.0 {
        return 0.0;
    }
    ((coeffs.mu(x) - coeffs.mu(y)).abs()
        + (coeffs.sigma(x) - coeffs.sigma(y)).powi(2)
        + (coeffs.gamma(x) - coeffs.gamma(y)).powi(2))
        / d
}

/// Numerically checks the sign conditions at zero, linear growth, local
/// regularity on `pair_samples` and monotonicity of `gamma` on `x_grid`.
///
/// Growth fails when the growth ratio over the outer decade of the grid exceeds
/// twice its supremum over the inner part: a linear bound cannot hold when the
/// ratio keeps climbing with `|x|`. Local regularity fails when shrinking a
/// pair's separation by 1e4 inflates its ratio by more than 10.
pub fn validate_assumptions(coeffs: &ModelCoefficients, x_grid: &[f64], pair_samples: &[(f64, f64)]) -> AssumptionReport {
    let mut checks = Vec::new();
    let mu0 = coeffs.mu(0.0);
    let sigma0 = coeffs.sigma(0.0);
    let gamma0 = coeffs.gamma(0.0);
    checks.push(AssumptionCheck { name: "mu(0) >= 0", passed: mu0 >= 0.0, value: mu0, worst_point: Some(0.0) });
    checks.push(AssumptionCheck { name: "sigma(0) = 0", passed: sigma0 == 0.0, value: sigma0, worst_point: Some(0.0) });
    checks.push(AssumptionCheck { name: "gamma(0) = 0", passed: gamma0 == 0.0, value: gamma0, worst_point: Some(0.0) });

    let x_max = x_grid.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let mut growth_constant = 0.0_f64;
    let mut growth_at = None;
    let (mut inner_sup, mut outer_sup) = (0.0_f64, 0.0_f64);
    let mut finite = true;
    for &x in x_grid {
        let r = growth_ratio(coeffs, x);
        if !r.is_finite() {
            finite = false;
            growth_at = Some(x);
            continue;
        }
        if r > growth_constant {
            growth_constant = r;
            growth_at = Some(x);
        }
        if x.abs() >= 0.1 * x_max {
            outer_sup = outer_sup.max(r);
        } else {
            inner_sup = inner_sup.max(r);
        }
    }
    let growth_ok = finite && outer_sup <= 2.0 * inner_sup.max(f64::MIN_POSITIVE);
    checks.push(AssumptionCheck { name: "linear growth", passed: growth_ok, value: growth_constant, worst_point: growth_at });

    let mut local_constant = 0.0_f64;
    let mut local_at = None;
    let mut local_ok = true;
    for &(x, y) in pair_samples {
        let r = local_ratio(coeffs, x, y);
        if !r.is_finite() {
            local_ok = false;
            local_at = Some(x);
            continue;
        }
        if r > local_constant {
            local_constant = r;
            local_at = Some(x);
        }
        // shrink the pair around x and watch for a diverging ratio
        let d = (y - x).abs().max(1e-4);
        let coarse = local_ratio(coeffs, x, x + 1e-4 * d.signum());
        let fine = local_ratio(coeffs, x, x + 1e-8 * d.signum());
        if fine > 10.0 * coarse.max(1e-300) && fine > 1.0 {
            local_ok = false;
            local_at = Some(x);
        }
    }
    checks.push(AssumptionCheck { name: "local regularity", passed: local_ok, value: local_constant, worst_point: local_at });

    let mut sorted = x_grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut monotone = true;
    let mut mono_at = None;
    for w in sorted.windows(2) {
        if coeffs.gamma(w[1]) < coeffs.gamma(w[0]) {
            monotone = false;
            mono_at.get_or_insert(w[0]);
        }
    }
    checks.push(AssumptionCheck { name: "gamma non-decreasing", passed: monotone, value: 0.0, worst_point: mono_at });

    let passed = checks.iter().all(|c| c.passed);
    let worst_point = checks.iter().find(|c| !c.passed).and_then(|c| c.worst_point).or(growth_at);
    AssumptionReport { passed, growth_constant, local_constant, checks, worst_point }
}

/// Largest sampled ratio `|gamma(x) - gamma(y)| / |x - y|^(1/2)` over a grid
/// of pairs in `[-m, m]^2`.
pub fn half_holder_constant(coeffs: &ModelCoefficients, m: f64, grid_points: usize) -> f64 {
    let n = grid_points.max(2);
    let xs: Vec<f64> = (0..n).map(|i| -m + 2.0 * m * i as f64 / (n - 1) as f64).collect();
    let gs: Vec<f64> = xs.iter().map(|&x| coeffs.gamma(x)).collect();
    let mut best = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            best = best.max((gs[j] - gs[i]).abs() / (xs[j] - xs[i]).sqrt());
        }
    }
    best
}
