//! Yamada–Watanabe approximations `phi_{delta,eps}` of `|x|` and numerical
//! checks of their inequalities.
//!
//! The density is `psi(x) = H tau(ln x) 2 / (x ln delta)` on `[eps/delta, eps]`
//! where `tau` is a trapezoid in log scale with linear ramps over 5% of the
//! log-support at each end. Since `dx / x = d ln x`, the untapered integral is
//! 2 and the tapered one is `1.9 H`, so `H = 1 / 1.9`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::model::ModelCoefficients;

/// Relative width of each ramp of the taper, in log scale.
pub const RAMP_FRACTION: f64 = 0.05;
/// Slack allowed in every inequality check.
pub const CHECK_SLACK: f64 = 1e-9;

const RAMP_CELLS: usize = 64;
const PLATEAU_CELLS: usize = 512;

const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

fn gauss_legendre(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    GL_NODES.iter().zip(GL_WEIGHTS).map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

#[derive(Debug, Error, Clone, PartialEq, Serialize)]
pub enum YwError {
    #[error("delta = {0} must exceed 1")]
    Delta(f64),
    #[error("eps = {0} must lie in (0, 1)")]
    Eps(f64),
    #[error("plateau height {0} exceeds 1")]
    Height(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YWFunction {
    pub delta: f64,
    pub eps: f64,
    /// Plateau height `H` of the taper.
    pub height: f64,
    log_lo: f64,
    log_len: f64,
    ramp: f64,
    /// Cell boundaries in `x` covering `[eps/delta, eps]`.
    cells: Vec<f64>,
    /// `phi` at the cell boundaries.
    cumulative: Vec<f64>,
}

/// Builds `phi_{delta,eps}` and its cached quadrature tables.
pub fn build_yw(delta: f64, eps: f64) -> Result<YWFunction, YwError> {
    if !(delta > 1.0 && delta.is_finite()) {
        return Err(YwError::Delta(delta));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(YwError::Eps(eps));
    }
    let log_len = delta.ln();
    let log_lo = eps.ln() - log_len;
    let ramp = RAMP_FRACTION * log_len;
    let height = 1.0 / (2.0 * (1.0 - RAMP_FRACTION));
    if height > 1.0 {
        return Err(YwError::Height(height));
    }
    // log-uniform cells within each of the three pieces, aligned with the kinks
    let pieces = [(0.0, ramp, RAMP_CELLS), (ramp, log_len - ramp, PLATEAU_CELLS), (log_len - ramp, log_len, RAMP_CELLS)];
    let mut logs = vec![log_lo];
    for (a, b, n) in pieces {
        for i in 1..=n {
            logs.push(log_lo + a + (b - a) * i as f64 / n as f64);
        }
    }
    let mut cells: Vec<f64> = logs.iter().map(|l| l.exp()).collect();
    *cells.last_mut().expect("non-empty") = eps;
    let mut yw = YWFunction { delta, eps, height, log_lo, log_len, ramp, cells, cumulative: Vec::new() };
    let mut cumulative = Vec::with_capacity(yw.cells.len());
    cumulative.push(0.0);
    for w in yw.cells.windows(2) {
        let last = *cumulative.last().expect("non-empty");
        cumulative.push(last + gauss_legendre(w[0], w[1], |x| yw.dphi_abs(x)));
    }
    yw.cumulative = cumulative;
    Ok(yw)
}

impl YWFunction {
    pub fn support(&self) -> (f64, f64) {
        (self.eps / self.delta, self.eps)
    }

    /// Taper `tau` at position `s = ln x - ln(eps/delta)` in `[0, ln delta]`.
    fn taper(&self, s: f64) -> f64 {
        if s <= 0.0 || s >= self.log_len {
            0.0
        } else if s < self.ramp {
            s / self.ramp
        } else if s > self.log_len - self.ramp {
            (self.log_len - s) / self.ramp
        } else {
            1.0
        }
    }

    /// `int_{eps/delta}^{x} psi` as a function of `s = ln x - ln(eps/delta)`.
    fn primitive(&self, s: f64) -> f64 {
        let (r, l) = (self.ramp, self.log_len);
        let scale = 2.0 * self.height / l;
        let area = if s <= 0.0 {
            0.0
        } else if s < r {
            s * s / (2.0 * r)
        } else if s <= l - r {
            r / 2.0 + (s - r)
        } else if s < l {
            r / 2.0 + (l - 2.0 * r) + r / 2.0 - (l - s).powi(2) / (2.0 * r)
        } else {
            l - r
        };
        scale * area
    }

    /// `psi_{delta,eps}(x)`.
    pub fn density(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if !(x > lo && x < hi) {
            return 0.0;
        }
        self.height * self.taper(x.ln() - self.log_lo) * 2.0 / (x * self.log_len)
    }

    fn dphi_abs(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x <= lo {
            0.0
        } else if x >= hi {
            1.0
        } else {
            self.primitive(x.ln() - self.log_lo)
        }
    }

    pub fn phi(&self, x: f64) -> f64 {
        let a = x.abs();
        let (lo, hi) = self.support();
        if a <= lo {
            return 0.0;
        }
        let end = *self.cumulative.last().expect("non-empty");
        if a >= hi {
            return end + (a - hi);
        }
        let c = self.cells.partition_point(|&b| b <= a) - 1;
        self.cumulative[c] + gauss_legendre(self.cells[c], a, |z| self.dphi_abs(z))
    }

    pub fn dphi(&self, x: f64) -> f64 {
        if x == 0.0 {
            0.0
        } else {
            x.signum() * self.dphi_abs(x.abs())
        }
    }

    pub fn d2phi(&self, x: f64) -> f64 {
        self.density(x.abs())
    }

    /// `phi(x) - |x|` for `|x| >= eps`.
    pub fn asymptotic_offset(&self) -> f64 {
        self.cumulative.last().expect("non-empty") - self.eps
    }

    /// `int psi` by Gauss–Legendre in the log variable, cell by cell.
    pub fn density_integral(&self) -> f64 {
        self.cells
            .windows(2)
            .map(|w| gauss_legendre(w[0].ln(), w[1].ln(), |l| {
                let x = l.exp();
                self.density(x) * x
            }))
            .sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub name: String,
    pub violations: usize,
    /// Largest observed `lhs - rhs` (negative when every sample holds strictly).
    pub worst_excess: f64,
    pub worst_sample: Vec<f64>,
}

impl InequalityCheck {
    fn new(name: &str) -> Self {
        Self { name: name.into(), violations: 0, worst_excess: f64::NEG_INFINITY, worst_sample: Vec::new() }
    }

    fn record(&mut self, lhs: f64, rhs: f64, sample: &[f64]) {
        let excess = lhs - rhs;
        if !(excess <= CHECK_SLACK) {
            self.violations += 1;
        }
        if excess > self.worst_excess || excess.is_nan() {
            self.worst_excess = excess;
            self.worst_sample = sample.to_vec();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YwReport {
    pub samples: usize,
    pub checks: Vec<InequalityCheck>,
}

impl YwReport {
    pub fn violations(&self) -> usize {
        self.checks.iter().map(|c| c.violations).sum()
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0
    }
}

/// A random magnitude concentrated around the support of `psi`.
fn sample_point<R: Rng>(yw: &YWFunction, rng: &mut R) -> f64 {
    let (lo, hi) = yw.support();
    let magnitude = match rng.random_range(0..4) {
        0 => rng.random_range(lo..=hi),
        1 => (rng.random_range((lo / 100.0).ln()..(100.0 * hi).ln())).exp(),
        2 => rng.random_range(0.0..1.0),
        _ => rng.random_range(0.0..10.0f64),
    };
    if rng.random::<bool>() {
        magnitude
    } else {
        -magnitude
    }
}

/// Checks `|x| <= eps + phi(x)`, `|phi'| <= 1`,
/// `0 <= phi'' = psi(|x|) <= 2 / (|x| ln delta)` and `phi(-x) = phi(x)` at
/// random points plus the support endpoints and zero.
pub fn verify_yw_inequalities(yw: &YWFunction, samples: usize, seed: u64) -> YwReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = yw.support();
    let bound = 2.0 / yw.delta.ln();
    let mut abs_bound = InequalityCheck::new("|x| <= eps + phi(x)");
    let mut slope = InequalityCheck::new("|phi'(x)| <= 1");
    let mut curvature = InequalityCheck::new("phi''(x) <= 2 / (|x| log delta)");
    let mut convex = InequalityCheck::new("phi''(x) >= 0");
    let mut symmetric = InequalityCheck::new("phi(-x) = phi(x)");
    let fixed = [0.0, lo, -lo, hi, -hi];
    let total = samples.max(1);
    for k in 0..total + fixed.len() {
        let x = if k < fixed.len() { fixed[k] } else { sample_point(yw, &mut rng) };
        let s = [x];
        abs_bound.record(x.abs(), yw.eps + yw.phi(x), &s);
        slope.record(yw.dphi(x).abs(), 1.0, &s);
        let d2 = yw.d2phi(x);
        let cap = if d2 == 0.0 { 0.0 } else { bound / x.abs() };
        curvature.record(d2, cap, &s);
        convex.record(-d2, 0.0, &s);
        symmetric.record((yw.phi(-x) - yw.phi(x)).abs(), 0.0, &s);
    }
    YwReport { samples: total + fixed.len(), checks: vec![abs_bound, slope, curvature, convex, symmetric] }
}

/// Half-open box of the lemma samples: `(x, y, alpha, beta)` in `[-m, m]^4`,
/// `u` in `(0, u_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaDomain {
    pub m: f64,
    pub u_max: f64,
}

impl Default for LemmaDomain {
    fn default() -> Self {
        Self { m: 5.0, u_max: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub samples: usize,
    /// `C_m` in `f(u) = C_m u`.
    pub holder_constant: f64,
    pub checks: Vec<InequalityCheck>,
}

impl LemmaReport {
    pub fn violations(&self) -> usize {
        self.checks.iter().map(|c| c.violations).sum()
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0
    }
}

/// Both sides of the two inequalities at one tuple `(x, y, alpha, beta, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaTerms {
    pub one_jump: f64,
    pub one_jump_bound: f64,
    pub two_scheme: f64,
    pub two_scheme_bound: f64,
}

/// With `h(x, y, u) = u (gamma(x) - gamma(y))`, `z = x - y`, `f(u) = C_m u`:
/// `phi(z + c h(x,y,u)) - phi(z) - c h(x,y,u) phi'(z)` against
/// `2 (c v c^2)(f ^ f^2)(eps^(1/2) + 1/ln delta)`, and
/// `phi(z + c h(a,b,u)) - phi(z + c h(x,y,u)) - c (h(a,b,u) - h(x,y,u)) phi'(z)` against
/// `6 (c v c^2)(f ^ f^2)(|x-a|^(1/2) + |y-b|^(1/2) + 1/ln delta + delta/(eps ln delta)(|x-a| + |y-b|))`.
pub fn lemma_terms(yw: &YWFunction, coeffs: &ModelCoefficients, c: f64, holder_constant: f64, tuple: &[f64; 5]) -> LemmaTerms {
    let [x, y, a, b, u] = *tuple;
    let g = |p: f64| coeffs.gamma(p);
    let h = |p: f64, q: f64| u * (g(p) - g(q));
    let cc = c.max(c * c);
    let inv_log = 1.0 / yw.delta.ln();
    let f = holder_constant * u;
    let fm = f.min(f * f);
    let z = x - y;
    let hxy = h(x, y);
    let hab = h(a, b);
    let (dx, dy) = ((x - a).abs(), (y - b).abs());
    LemmaTerms {
        one_jump: yw.phi(z + c * hxy) - yw.phi(z) - c * hxy * yw.dphi(z),
        one_jump_bound: 2.0 * cc * fm * (yw.eps.sqrt() + inv_log),
        two_scheme: yw.phi(z + c * hab) - yw.phi(z + c * hxy) - c * (hab - hxy) * yw.dphi(z),
        two_scheme_bound: 6.0 * cc * fm * (dx.sqrt() + dy.sqrt() + inv_log + yw.delta / (yw.eps * yw.delta.ln()) * (dx + dy)),
    }
}

fn near<R: Rng>(x: f64, m: f64, scale: f64, rng: &mut R) -> f64 {
    let offset = (rng.random_range((1e-9 * scale).ln()..(10.0 * scale).ln())).exp();
    let y = if rng.random::<bool>() { x + offset } else { x - offset };
    y.clamp(-m, m)
}

/// Checks both one-jump inequalities for `eta(x, u) = u gamma(x)` with
/// `f(u) = C_m u`, where `C_m` is the largest half-Hölder ratio of `gamma`
/// seen on a grid of `[-m, m]` and on every sampled pair.
pub fn verify_yw_lemmas(
    yw: &YWFunction,
    coeffs: &ModelCoefficients,
    c: f64,
    samples: usize,
    seed: u64,
    domain: LemmaDomain,
) -> LemmaReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = domain.m;
    let tuples: Vec<[f64; 5]> = (0..samples.max(1))
        .map(|k| {
            let x = rng.random_range(-m..=m);
            let y = match k % 3 {
                0 => rng.random_range(-m..=m),
                _ => near(x, m, yw.eps, &mut rng),
            };
            let (a, b) = match k % 4 {
                0 => (rng.random_range(-m..=m), rng.random_range(-m..=m)),
                1 => (x, y),
                _ => (near(x, m, yw.eps, &mut rng), near(y, m, yw.eps, &mut rng)),
            };
            let u = domain.u_max * (1.0 - rng.random::<f64>());
            [x, y, a, b, u]
        })
        .collect();

    let g = |x: f64| coeffs.gamma(x);
    let ratio = |x: f64, y: f64| if x == y { 0.0 } else { (g(x) - g(y)).abs() / (x - y).abs().sqrt() };
    let mut cm = crate::model::half_holder_constant(coeffs, m, 401);
    for t in &tuples {
        cm = cm.max(ratio(t[0], t[1])).max(ratio(t[2], t[0])).max(ratio(t[3], t[1])).max(ratio(t[2], t[3]));
    }

    let mut one_jump_lower = InequalityCheck::new("one-jump lower bound");
    let mut one_jump_upper = InequalityCheck::new("one-jump upper bound");
    let mut two_scheme_upper = InequalityCheck::new("two-scheme upper bound");
    for t in &tuples {
        let terms = lemma_terms(yw, coeffs, c, cm, t);
        one_jump_lower.record(-terms.one_jump, 0.0, t);
        one_jump_upper.record(terms.one_jump, terms.one_jump_bound, t);
        two_scheme_upper.record(terms.two_scheme, terms.two_scheme_bound, t);
    }
    LemmaReport { samples: tuples.len(), holder_constant: cm, checks: vec![one_jump_lower, one_jump_upper, two_scheme_upper] }
}
