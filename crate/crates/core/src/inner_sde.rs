//! Explicit solver for the constant-kernel jump SDE
//! `xi_t = x_init + int_{t_k}^t K(0) (mu(xi) ds + sigma(xi) dB + gamma(xi-) dL)`
//! on one scheme interval.
//!
//! Full truncation: coefficients are evaluated at `x+`. The state is floored at
//! zero after every substep.

use serde::Serialize;
use thiserror::Error;

use crate::model::ModelCoefficients;

/// States with `|x|` above this abort the path.
pub const OVERFLOW_GUARD: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq, Serialize)]
pub enum InnerError {
    #[error("state {value} at time {time} left the admissible range")]
    Overflow { time: f64, value: f64 },
    #[error("noise slice has {available} substeps, {needed} required")]
    ShortNoise { needed: usize, available: usize },
    #[error("initial value {0} is negative")]
    NegativeStart(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PositivityPolicy {
    FullTruncationFloor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InnerSolveConfig {
    pub substeps: usize,
    pub policy: PositivityPolicy,
}

impl InnerSolveConfig {
    pub fn new(substeps: usize) -> Self {
        assert!(substeps >= 1, "at least one substep per interval");
        Self { substeps, policy: PositivityPolicy::FullTruncationFloor }
    }
}

/// Pre-floor statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NegativityDiagnostics {
    /// Smallest state reached before flooring (positive when no step went below zero).
    pub min_pre_floor: f64,
    pub floor_events: usize,
}

impl Default for NegativityDiagnostics {
    fn default() -> Self {
        Self { min_pre_floor: f64::INFINITY, floor_events: 0 }
    }
}

impl NegativityDiagnostics {
    pub fn merge(&mut self, other: &NegativityDiagnostics) {
        self.min_pre_floor = self.min_pre_floor.min(other.min_pre_floor);
        self.floor_events += other.floor_events;
    }

    fn record(&mut self, x: f64) -> f64 {
        self.min_pre_floor = self.min_pre_floor.min(x);
        if x < 0.0 {
            self.floor_events += 1;
            0.0
        } else {
            x
        }
    }
}

/// Jump part of the noise over the slice.
#[derive(Debug, Clone, Copy)]
pub enum SliceJumps<'a> {
    /// Stable increment per substep, applied at the substep end.
    Stable(&'a [f64]),
    /// Large jumps (the whole stream; only events in `(start, end]` are used)
    /// with the compensating drift rate.
    Thinned { times: &'a [f64], sizes: &'a [f64], drift_rate: f64 },
}

/// Noise for consecutive substeps starting at `start_time`.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSlice<'a> {
    pub start_time: f64,
    /// End of the last substep; jumps up to and including it are applied.
    pub end_time: f64,
    pub step: f64,
    pub brownian: &'a [f64],
    pub jumps: SliceJumps<'a>,
}

/// `mu(x) dt + sigma(x) dB`, the shared continuous part of every update.
#[inline]
pub(crate) fn diffusion_increment(coeffs: &ModelCoefficients, x: f64, dt: f64, db: f64) -> f64 {
    coeffs.mu(x) * dt + coeffs.sigma(x) * db
}

/// Continuous part of a substep in thinned mode, including the compensator.
#[inline]
pub(crate) fn thinned_increment(coeffs: &ModelCoefficients, x: f64, dt: f64, db: f64, drift_rate: f64) -> f64 {
    diffusion_increment(coeffs, x, dt, db) - coeffs.gamma(x) * drift_rate * dt
}

/// Driver increment over one substep in exact mode.
#[inline]
pub(crate) fn exact_increment(coeffs: &ModelCoefficients, x: f64, dt: f64, db: f64, dl: f64) -> f64 {
    diffusion_increment(coeffs, x, dt, db) + coeffs.gamma(x) * dl
}

/// Output of an inner solve, appended step by step.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InnerPath {
    /// State at the substep grid points, starting with `x_init`; the last entry
    /// is the left limit at the interval end.
    pub values: Vec<f64>,
    /// Realized driver increments `(x_after - x_before) / K(0)` per substep,
    /// excluding jumps placed at exact times.
    pub increments: Vec<f64>,
    /// `(time, realized jump / K(0))` for jumps placed at exact times.
    pub jumps: Vec<(f64, f64)>,
    pub diagnostics: NegativityDiagnostics,
}

impl InnerPath {
    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("inner path is never empty")
    }
}

pub(crate) fn guard(time: f64, x: f64) -> Result<f64, InnerError> {
    if x.is_finite() && x.abs() <= OVERFLOW_GUARD {
        Ok(x)
    } else {
        Err(InnerError::Overflow { time, value: x })
    }
}

/// Advances `substeps` steps from `x_init`, appending to `out`.
/// `out.values` receives the `substeps` new states (not `x_init`).
pub(crate) fn advance(
    coeffs: &ModelCoefficients,
    k0: f64,
    x_init: f64,
    substeps: usize,
    slice: &NoiseSlice<'_>,
    jump_cursor: &mut usize,
    out: &mut InnerPath,
) -> Result<f64, InnerError> {
    let h = slice.step;
    let mut x = x_init;
    for q in 0..substeps {
        let end = if q + 1 == substeps { slice.end_time } else { slice.start_time + (q + 1) as f64 * h };
        let before = x;
        match slice.jumps {
            SliceJumps::Stable(dl) => {
                let raw = x + k0 * exact_increment(coeffs, x.max(0.0), h, slice.brownian[q], dl[q]);
                x = out.diagnostics.record(guard(end, raw)?);
                out.increments.push((x - before) / k0);
            }
            SliceJumps::Thinned { times, sizes, drift_rate } => {
                let raw = x + k0 * thinned_increment(coeffs, x.max(0.0), h, slice.brownian[q], drift_rate);
                x = out.diagnostics.record(guard(end, raw)?);
                out.increments.push((x - before) / k0);
                while *jump_cursor < times.len() && times[*jump_cursor] <= end {
                    let tau = times[*jump_cursor];
                    let pre = x;
                    let raw = x + k0 * coeffs.eta(x.max(0.0), sizes[*jump_cursor]);
                    x = out.diagnostics.record(guard(tau, raw)?);
                    out.jumps.push((tau, (x - pre) / k0));
                    *jump_cursor += 1;
                }
            }
        }
        out.values.push(x);
    }
    Ok(x)
}

/// First jump index strictly after `t`; a jump at a substep end belongs to
/// that substep.
pub(crate) fn jump_cursor_at(times: &[f64], t: f64) -> usize {
    times.partition_point(|&tau| tau <= t)
}

/// Solves the inner equation over `config.substeps` substeps of `slice`.
///
/// In thinned mode jumps are applied at their event times after the
/// continuous part of the substep that contains them, each using the current
/// left limit.
pub fn solve_inner(
    coeffs: &ModelCoefficients,
    k0: f64,
    x_init: f64,
    config: &InnerSolveConfig,
    slice: &NoiseSlice<'_>,
) -> Result<InnerPath, InnerError> {
    if x_init < 0.0 {
        return Err(InnerError::NegativeStart(x_init));
    }
    let available = match slice.jumps {
        SliceJumps::Stable(dl) => slice.brownian.len().min(dl.len()),
        SliceJumps::Thinned { .. } => slice.brownian.len(),
    };
    if available < config.substeps {
        return Err(InnerError::ShortNoise { needed: config.substeps, available });
    }
    let mut out = InnerPath { values: Vec::with_capacity(config.substeps + 1), ..Default::default() };
    out.values.push(x_init);
    let mut cursor = match slice.jumps {
        SliceJumps::Thinned { times, .. } => jump_cursor_at(times, slice.start_time),
        SliceJumps::Stable(_) => 0,
    };
    advance(coeffs, k0, x_init, config.substeps, slice, &mut cursor, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{derive_path_noise, JumpContent, NoiseGrid, StableDriverParams};
    use crate::model::affine_coefficients;
    use approx::assert_relative_eq;

    fn slice<'a>(noise: &'a crate::levy::DriverNoise) -> NoiseSlice<'a> {
        NoiseSlice {
            start_time: 0.0,
            end_time: noise.grid.horizon,
            step: noise.grid.step(),
            brownian: &noise.brownian,
            jumps: match &noise.jumps {
                JumpContent::Stable(dl) => SliceJumps::Stable(dl),
                JumpContent::Thinned(s) => SliceJumps::Thinned { times: &s.times, sizes: &s.sizes, drift_rate: s.drift_rate },
            },
        }
    }

    #[test]
    fn zero_coefficients_keep_state() {
        let coeffs = crate::model::ModelCoefficients::zero(1.5).unwrap();
        let noise = derive_path_noise(1, 0, NoiseGrid::new(0.5, 32).unwrap(), &StableDriverParams::exact(1.5).unwrap());
        let path = solve_inner(&coeffs, 1.0, 0.7, &InnerSolveConfig::new(32), &slice(&noise)).unwrap();
        assert!(path.values.iter().all(|&v| v == 0.7));
        assert!(path.increments.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_drift_is_exact() {
        let coeffs = crate::model::ModelCoefficients::custom(|_| 0.25, |_| 0.0, |_| 0.0, 1.5).unwrap();
        let h = 0.5;
        let noise = derive_path_noise(1, 0, NoiseGrid::new(h, 8).unwrap(), &StableDriverParams::exact(1.5).unwrap());
        let path = solve_inner(&coeffs, 1.0, 1.0, &InnerSolveConfig::new(8), &slice(&noise)).unwrap();
        assert_relative_eq!(path.terminal(), 1.0 + 0.25 * h, epsilon = 1e-14);
    }

    #[test]
    fn drift_only_mean_matches_ode() {
        // sigma = eta = 0: the Euler recursion m_{n+1} = m_n + K0 h (a - kappa m_n)
        // approaches the ODE solution a/kappa + (x0 - a/kappa) e^{-K0 kappa t} at rate O(h).
        let (a, kappa, k0, x0, horizon) = (1.0, 0.5, 1.3, 3.0, 1.0);
        let coeffs = affine_coefficients(a, kappa, 0.0, 0.0, 1.5).unwrap();
        let exact = a / kappa + (x0 - a / kappa) * (-k0 * kappa * horizon).exp();
        let mut errors = Vec::new();
        for n in [16usize, 32, 64] {
            let noise = derive_path_noise(2, 0, NoiseGrid::new(horizon, n).unwrap(), &StableDriverParams::exact(1.5).unwrap());
            let path = solve_inner(&coeffs, k0, x0, &InnerSolveConfig::new(n), &slice(&noise)).unwrap();
            errors.push((path.terminal() - exact).abs());
        }
        assert!(errors[0] < 0.05);
        assert_relative_eq!(errors[0] / errors[1], 2.0, max_relative = 0.1);
        assert_relative_eq!(errors[1] / errors[2], 2.0, max_relative = 0.1);
    }

    #[test]
    fn output_is_non_negative() {
        let coeffs = affine_coefficients(0.05, 3.0, 2.0, 1.0, 1.3).unwrap();
        for mode in [StableDriverParams::exact(1.3).unwrap(), StableDriverParams::thinned(1.3, None).unwrap()] {
            let mut floors = 0;
            for p in 0..200 {
                let noise = derive_path_noise(3, p, NoiseGrid::new(1.0, 64).unwrap(), &mode);
                let path = solve_inner(&coeffs, 1.0, 0.01, &InnerSolveConfig::new(64), &slice(&noise)).unwrap();
                assert!(path.values.iter().all(|&v| v >= 0.0));
                floors += path.diagnostics.floor_events;
            }
            assert!(floors > 0, "the test model should hit zero");
        }
    }

    #[test]
    fn increments_reconstruct_state() {
        let coeffs = affine_coefficients(1.0, 1.0, 0.5, 0.3, 1.5).unwrap();
        let k0 = 1.7;
        for mode in [StableDriverParams::exact(1.5).unwrap(), StableDriverParams::thinned(1.5, Some(0.05)).unwrap()] {
            let noise = derive_path_noise(4, 1, NoiseGrid::new(1.0, 128).unwrap(), &mode);
            let path = solve_inner(&coeffs, k0, 1.0, &InnerSolveConfig::new(128), &slice(&noise)).unwrap();
            let total: f64 = path.increments.iter().sum::<f64>() + path.jumps.iter().map(|j| j.1).sum::<f64>();
            assert_relative_eq!(1.0 + k0 * total, path.terminal(), max_relative = 1e-12);
        }
    }

    #[test]
    fn overflow_is_flagged() {
        let coeffs = crate::model::ModelCoefficients::custom(|x| 1e3 * x, |_| 0.0, |_| 0.0, 1.5).unwrap();
        let noise = derive_path_noise(1, 0, NoiseGrid::new(1.0, 64).unwrap(), &StableDriverParams::exact(1.5).unwrap());
        let err = solve_inner(&coeffs, 1.0, 1.0, &InnerSolveConfig::new(64), &slice(&noise)).unwrap_err();
        assert!(matches!(err, InnerError::Overflow { .. }));
    }

    #[test]
    fn rejects_short_noise_and_negative_start() {
        let coeffs = crate::model::ModelCoefficients::zero(1.5).unwrap();
        let noise = derive_path_noise(1, 0, NoiseGrid::new(1.0, 4).unwrap(), &StableDriverParams::exact(1.5).unwrap());
        assert!(matches!(
            solve_inner(&coeffs, 1.0, 1.0, &InnerSolveConfig::new(8), &slice(&noise)),
            Err(InnerError::ShortNoise { .. })
        ));
        assert!(matches!(
            solve_inner(&coeffs, 1.0, -1.0, &InnerSolveConfig::new(4), &slice(&noise)),
            Err(InnerError::NegativeStart(_))
        ));
    }
}
