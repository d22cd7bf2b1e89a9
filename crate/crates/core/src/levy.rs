//! The spectrally positive compensated alpha-stable driver `L` and the
//! reproducible per-path noise (Brownian increments plus jump content).
//!
//! The driver is normalized by its Laplace transform
//! `E[exp(u L_t)] = exp(t |u|^alpha / cos(pi (2 - alpha) / 2))` for `u <= 0`,
//! which is the totally skewed stable law `S_alpha(t^(1/alpha), 1, 0)`.
//! Its Lévy measure is `c_alpha u^(-1-alpha) du` with `c_alpha` given by
//! [`laplace_calibrated_scale`]; the thinned representation uses that measure so
//! both driver modes describe the same process.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::exec::Execution;
use crate::model::check_alpha;
use crate::stats::MomentAccumulator;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LevyError {
    #[error("alpha = {0} outside the open interval (1, 2)")]
    Alpha(f64),
    #[error("jump threshold must be positive, got {0}")]
    Threshold(f64),
    #[error("noise grid needs at least one step over a positive horizon")]
    EmptyGrid,
    #[error("cannot coarsen {steps} steps by a factor of {factor}")]
    Coarsen { steps: usize, factor: usize },
}

fn alpha_ok(alpha: f64) -> Result<(), LevyError> {
    check_alpha(alpha).map_err(|_| LevyError::Alpha(alpha))
}

/// `int_0^inf (u ^ u^2) u^(-1-alpha) du = 1/(2 - alpha) + 1/(alpha - 1)`.
pub fn compensator_mass(alpha: f64) -> Result<f64, LevyError> {
    alpha_ok(alpha)?;
    Ok(1.0 / (2.0 - alpha) + 1.0 / (alpha - 1.0))
}

/// `1 / cos(pi (2 - alpha) / 2)`, positive on `(1, 2)`.
pub fn laplace_coefficient(alpha: f64) -> f64 {
    1.0 / (FRAC_PI_2 * (2.0 - alpha)).cos()
}

/// `E[exp(u L_t)]` for `u <= 0`.
pub fn stable_laplace_transform(alpha: f64, u: f64, t: f64) -> f64 {
    (t * u.abs().powf(alpha) * laplace_coefficient(alpha)).exp()
}

/// The constant `c` such that `c u^(-1-alpha) du` has Laplace exponent
/// `|u|^alpha / cos(pi (2 - alpha) / 2)`:
/// `c = alpha (alpha - 1) / (Gamma(2 - alpha) cos(pi (2 - alpha) / 2))`.
pub fn laplace_calibrated_scale(alpha: f64) -> f64 {
    alpha * (alpha - 1.0) * laplace_coefficient(alpha) / gamma(2.0 - alpha)
}

/// The Lévy measure `scale * u^(-1-alpha) du` on `(0, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevyMeasure {
    pub alpha: f64,
    pub scale: f64,
}

impl LevyMeasure {
    /// `u^(-1-alpha) du` without a scale constant.
    pub fn unit(alpha: f64) -> Self {
        Self { alpha, scale: 1.0 }
    }

    pub fn laplace_calibrated(alpha: f64) -> Self {
        Self { alpha, scale: laplace_calibrated_scale(alpha) }
    }

    /// `nu([eps, inf))`
    pub fn tail_mass(&self, eps: f64) -> f64 {
        self.scale * eps.powf(-self.alpha) / self.alpha
    }

    /// `int_eps^inf u nu(du)`
    pub fn tail_mean(&self, eps: f64) -> f64 {
        self.scale * eps.powf(1.0 - self.alpha) / (self.alpha - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverMode {
    /// Exact stable increments on every substep.
    Exact,
    /// Large jumps above the threshold at exact times, compensated by a drift;
    /// small jumps dropped.
    Thinned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableDriverParams {
    pub alpha: f64,
    pub mode: DriverMode,
    /// Large-jump threshold; `None` picks `h^(1/alpha)` for the finest step `h`.
    pub threshold: Option<f64>,
    pub measure: LevyMeasure,
}

impl StableDriverParams {
    pub fn exact(alpha: f64) -> Result<Self, LevyError> {
        alpha_ok(alpha)?;
        Ok(Self { alpha, mode: DriverMode::Exact, threshold: None, measure: LevyMeasure::laplace_calibrated(alpha) })
    }

    pub fn thinned(alpha: f64, threshold: Option<f64>) -> Result<Self, LevyError> {
        alpha_ok(alpha)?;
        if let Some(eps) = threshold {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(LevyError::Threshold(eps));
            }
        }
        Ok(Self { alpha, mode: DriverMode::Thinned, threshold, measure: LevyMeasure::laplace_calibrated(alpha) })
    }

    pub fn with_measure(mut self, measure: LevyMeasure) -> Self {
        self.measure = measure;
        self
    }

    pub fn resolved_threshold(&self, finest_step: f64) -> f64 {
        self.threshold.unwrap_or_else(|| finest_step.powf(1.0 / self.alpha))
    }
}

/// Driver configuration as it appears in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverSpec {
    pub mode: DriverMode,
    #[serde(default)]
    pub threshold: Option<f64>,
}

impl Default for DriverSpec {
    fn default() -> Self {
        Self { mode: DriverMode::Exact, threshold: None }
    }
}

impl DriverSpec {
    pub fn build(&self, alpha: f64) -> Result<StableDriverParams, LevyError> {
        match self.mode {
            DriverMode::Exact => StableDriverParams::exact(alpha),
            DriverMode::Thinned => StableDriverParams::thinned(alpha, self.threshold),
        }
    }
}

/// One draw of `S_alpha(1, 1, 0)` by the Chambers–Mallows–Stuck method.
/// Mean zero for `alpha in (1, 2)`.
pub fn standard_skewed_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let tan = (FRAC_PI_2 * alpha).tan();
    let shift = tan.atan() / alpha;
    let scale = (1.0 + tan * tan).powf(0.5 / alpha);
    let v = loop {
        let v = PI * (rng.random::<f64>() - 0.5);
        if v.abs() < FRAC_PI_2 {
            break v;
        }
    };
    let w: f64 = Exp1.sample(rng);
    let shifted = alpha * (v + shift);
    scale * shifted.sin() / v.cos().powf(1.0 / alpha) * ((v - shifted).cos() / w).powf((1.0 - alpha) / alpha)
}

/// One draw of the compensated increment `L_{t+dt} - L_t`.
pub fn sample_stable_increment<R: Rng + ?Sized>(alpha: f64, dt: f64, rng: &mut R) -> f64 {
    dt.powf(1.0 / alpha) * standard_skewed_stable(alpha, rng)
}

/// Jumps of `L` above the threshold on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpStream {
    pub times: Vec<f64>,
    pub sizes: Vec<f64>,
    pub threshold: f64,
    /// Compensating drift per unit time, `int_eps^inf u nu(du)`.
    pub drift_rate: f64,
}

impl JumpStream {
    /// `sum of jumps - drift_rate * T`
    pub fn compensated_sum(&self, horizon: f64) -> f64 {
        self.sizes.iter().sum::<f64>() - self.drift_rate * horizon
    }
}

/// Poisson thinning of the Lévy measure above `threshold`.
pub fn sample_large_jumps<R: Rng + ?Sized>(measure: &LevyMeasure, threshold: f64, horizon: f64, rng: &mut R) -> JumpStream {
    let rate = measure.tail_mass(threshold);
    let mean = rate * horizon;
    let count = if mean > 0.0 {
        Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0)
    } else {
        0
    };
    let mut events: Vec<(f64, f64)> = (0..count)
        .map(|_| {
            let t = horizon * rng.random::<f64>();
            let v: f64 = rng.random();
            (t, threshold * (1.0 - v).powf(-1.0 / measure.alpha))
        })
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    events.dedup_by(|a, b| a.0 == b.0);
    let (times, sizes) = events.into_iter().unzip();
    JumpStream { times, sizes, threshold, drift_rate: measure.tail_mean(threshold) }
}

/// Uniform grid carrying the driver noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl NoiseGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, LevyError> {
        if steps == 0 || !(horizon > 0.0 && horizon.is_finite()) {
            return Err(LevyError::EmptyGrid);
        }
        Ok(Self { horizon, steps })
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum JumpContent {
    /// Compensated stable increment per step.
    Stable(Vec<f64>),
    Thinned(JumpStream),
}

/// All randomness one path consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverNoise {
    pub path_index: u64,
    pub grid: NoiseGrid,
    pub brownian: Vec<f64>,
    pub jumps: JumpContent,
}

/// Deterministic noise for `path_index`: the Brownian and jump streams are the
/// ChaCha8 streams `2 i` and `2 i + 1` under `master_seed`, so the result does
/// not depend on which worker draws it or in which order.
pub fn derive_path_noise(master_seed: u64, path_index: u64, grid: NoiseGrid, params: &StableDriverParams) -> DriverNoise {
    let h = grid.step();
    let sqrt_h = h.sqrt();
    let mut brownian_rng = ChaCha8Rng::seed_from_u64(master_seed);
    brownian_rng.set_stream(2 * path_index);
    let mut jump_rng = ChaCha8Rng::seed_from_u64(master_seed);
    jump_rng.set_stream(2 * path_index + 1);

    let brownian = (0..grid.steps)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut brownian_rng);
            sqrt_h * z
        })
        .collect();
    let jumps = match params.mode {
        DriverMode::Exact => JumpContent::Stable(
            (0..grid.steps).map(|_| sample_stable_increment(params.alpha, h, &mut jump_rng)).collect(),
        ),
        DriverMode::Thinned => JumpContent::Thinned(sample_large_jumps(
            &params.measure,
            params.resolved_threshold(h),
            grid.horizon,
            &mut jump_rng,
        )),
    };
    DriverNoise { path_index, grid, brownian, jumps }
}

impl DriverNoise {
    /// Aggregates `factor` consecutive steps into one. Jump events are kept
    /// verbatim.
    pub fn coarsen(&self, factor: usize) -> Result<DriverNoise, LevyError> {
        if factor == 0 || !self.grid.steps.is_multiple_of(factor) {
            return Err(LevyError::Coarsen { steps: self.grid.steps, factor });
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let sum_chunks = |v: &[f64]| v.chunks(factor).map(|c| c.iter().sum()).collect::<Vec<f64>>();
        Ok(DriverNoise {
            path_index: self.path_index,
            grid: NoiseGrid { horizon: self.grid.horizon, steps: self.grid.steps / factor },
            brownian: sum_chunks(&self.brownian),
            jumps: match &self.jumps {
                JumpContent::Stable(dl) => JumpContent::Stable(sum_chunks(dl)),
                JumpContent::Thinned(stream) => JumpContent::Thinned(stream.clone()),
            },
        })
    }

    /// Rows `(path, substep, dB, dL_or_jump_list)` of the noise dump; in thinned
    /// mode the last column lists `time:size` pairs falling in the substep.
    pub fn csv_rows(&self) -> Vec<String> {
        let h = self.grid.step();
        let mut cursor = 0;
        (0..self.grid.steps)
            .map(|j| {
                let last = match &self.jumps {
                    JumpContent::Stable(dl) => format!("{}", dl[j]),
                    JumpContent::Thinned(stream) => {
                        let end = (j + 1) as f64 * h;
                        let mut items = Vec::new();
                        while cursor < stream.times.len() && (stream.times[cursor] <= end || j + 1 == self.grid.steps) {
                            items.push(format!("{}:{}", stream.times[cursor], stream.sizes[cursor]));
                            cursor += 1;
                        }
                        items.join(";")
                    }
                };
                format!("{},{},{},{}", self.path_index, j, self.brownian[j], last)
            })
            .collect()
    }
}

/// Monte Carlo check of [`stable_laplace_transform`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StableLaplaceTest {
    pub alpha: f64,
    pub u: f64,
    pub t: f64,
    pub draws: usize,
    pub mean: f64,
    pub se: f64,
    pub target: f64,
    pub z_score: f64,
}

impl StableLaplaceTest {
    pub fn passed(&self, z_max: f64) -> bool {
        self.z_score.abs() <= z_max
    }
}

const DRAW_BLOCK: usize = 1 << 16;

/// Mean of `exp(u L_t)` over `draws` samples. Block `b` of `2^16` draws uses
/// stream `b` of the seeded generator and blocks are merged in order, so the
/// result does not depend on the thread count.
pub fn stable_laplace_test(alpha: f64, u: f64, t: f64, draws: usize, seed: u64, exec: Execution) -> Result<StableLaplaceTest, LevyError> {
    alpha_ok(alpha)?;
    let ranges = crate::exec::blocks(draws, DRAW_BLOCK);
    let partial = crate::exec::map_indices(exec, ranges.len(), |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let mut acc = MomentAccumulator::new(1);
        for _ in ranges[b].clone() {
            acc.push([(u * sample_stable_increment(alpha, t, &mut rng)).exp()]);
        }
        acc
    });
    let mut acc = MomentAccumulator::new(1);
    for p in &partial {
        acc.merge(p);
    }
    let e = acc.estimate(0);
    let target = stable_laplace_transform(alpha, u, t);
    let diff = e.mean - target;
    let z_score = if e.se > 0.0 { diff / e.se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(StableLaplaceTest { alpha, u, t, draws, mean: e.mean, se: e.se, target, z_score })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn compensator_mass_values() {
        assert_eq!(compensator_mass(1.5).unwrap(), 4.0);
        assert_relative_eq!(compensator_mass(1.1).unwrap(), 1.0 / 0.9 + 10.0, epsilon = 1e-12);
        assert!(compensator_mass(1.0).is_err());
        assert!(compensator_mass(2.0).is_err());
        assert!(compensator_mass(f64::NAN).is_err());
        // blows up at both ends
        let grid = [1.001, 1.01, 1.1, 1.5];
        let values: Vec<f64> = grid.iter().map(|&a| compensator_mass(a).unwrap()).collect();
        assert!(values.windows(2).all(|w| w[0] > w[1]));
        let upper = [1.5, 1.9, 1.99, 1.999];
        let values: Vec<f64> = upper.iter().map(|&a| compensator_mass(a).unwrap()).collect();
        assert!(values.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn calibrated_scale_reproduces_laplace_exponent() {
        // int_0^inf (e^{-u z} - 1 + u z) c z^{-1-alpha} dz by quadrature in log scale
        for &alpha in &[1.2, 1.5, 1.8] {
            let c = laplace_calibrated_scale(alpha);
            let n = 200_000;
            let (lo, hi) = (-60.0_f64, 5.0_f64);
            let dh = (hi - lo) / n as f64;
            let mut acc = 0.0;
            for i in 0..n {
                let s = lo + (i as f64 + 0.5) * dh;
                let z = s.exp();
                let integrand = if z < 1e-4 { 0.5 * z * z - z * z * z / 6.0 } else { (-z).exp() - 1.0 + z };
                acc += integrand * c * z.powf(-alpha) * dh;
            }
            // below e^-60 the integrand is z^2 / 2
            let small = lo.exp();
            acc += c * small.powf(2.0 - alpha) / (2.0 * (2.0 - alpha));
            // beyond z = e^5 the exponential is negligible: integrate (z - 1) exactly
            let big = hi.exp();
            acc += c * (big.powf(1.0 - alpha) / (alpha - 1.0) - big.powf(-alpha) / alpha);
            assert_relative_eq!(acc, laplace_coefficient(alpha), max_relative = 1e-6);
        }
    }

    #[test]
    fn large_jump_rate_for_unit_measure() {
        let m = LevyMeasure::unit(1.5);
        assert_relative_eq!(m.tail_mass(1.0), 2.0 / 3.0);
        assert_relative_eq!(m.tail_mean(1.0), 2.0);
    }

    #[test]
    fn sizes_exceed_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stream = sample_large_jumps(&LevyMeasure::unit(1.5), 0.05, 2.0, &mut rng);
        assert!(!stream.sizes.is_empty());
        assert!(stream.sizes.iter().all(|&u| u >= 0.05));
        assert!(stream.times.windows(2).all(|w| w[1] > w[0]));
        assert!(stream.times.iter().all(|&t| (0.0..=2.0).contains(&t)));
    }

    #[test]
    fn huge_threshold_gives_empty_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let empty = (0..1000)
            .filter(|_| sample_large_jumps(&LevyMeasure::unit(1.5), 1e8, 1.0, &mut rng).times.is_empty())
            .count();
        assert_eq!(empty, 1000);
    }

    #[test]
    fn noise_is_deterministic() {
        let grid = NoiseGrid::new(1.0, 64).unwrap();
        for params in [StableDriverParams::exact(1.5).unwrap(), StableDriverParams::thinned(1.5, None).unwrap()] {
            let a = derive_path_noise(42, 7, grid, &params);
            let b = derive_path_noise(42, 7, grid, &params);
            assert_eq!(a, b);
            assert_ne!(a, derive_path_noise(42, 8, grid, &params));
            assert_ne!(a, derive_path_noise(43, 7, grid, &params));
        }
    }

    #[test]
    fn coarsening_sums_increments() {
        let grid = NoiseGrid::new(1.0, 8).unwrap();
        let noise = derive_path_noise(1, 0, grid, &StableDriverParams::exact(1.5).unwrap());
        let coarse = noise.coarsen(4).unwrap();
        assert_eq!(coarse.grid.steps, 2);
        assert_relative_eq!(coarse.brownian[1], noise.brownian[4..].iter().sum::<f64>());
        assert!(noise.coarsen(3).is_err());
        assert!(noise.coarsen(0).is_err());
    }

    #[test]
    fn csv_rows_list_every_jump_once() {
        let grid = NoiseGrid::new(1.0, 16).unwrap();
        let params = StableDriverParams::thinned(1.5, Some(0.05)).unwrap();
        let noise = derive_path_noise(3, 2, grid, &params);
        let rows = noise.csv_rows();
        assert_eq!(rows.len(), 16);
        let listed: usize = rows
            .iter()
            .map(|r| r.rsplit(',').next().unwrap())
            .filter(|s| !s.is_empty())
            .map(|s| s.split(';').count())
            .sum();
        match &noise.jumps {
            JumpContent::Thinned(s) => assert_eq!(listed, s.times.len()),
            _ => unreachable!(),
        }
    }

    #[test]
    fn default_threshold() {
        let p = StableDriverParams::thinned(1.5, None).unwrap();
        assert_relative_eq!(p.resolved_threshold(1.0 / 64.0), (1.0f64 / 64.0).powf(1.0 / 1.5));
        assert!(StableDriverParams::thinned(1.5, Some(0.0)).is_err());
    }

    #[test]
    fn laplace_test_is_thread_invariant() {
        let a = stable_laplace_test(1.5, -1.0, 1.0, 150_000, 4, Execution::Sequential).unwrap();
        let b = crate::exec::with_threads(Some(3), || stable_laplace_test(1.5, -1.0, 1.0, 150_000, 4, Execution::Parallel).unwrap());
        assert_eq!(a, b);
        assert!(a.passed(3.0), "{a:?}");
        let zero = stable_laplace_test(1.5, 0.0, 1.0, 10, 4, Execution::Sequential).unwrap();
        assert_eq!((zero.mean, zero.z_score), (1.0, 0.0));
    }
}
