//! The splitting scheme: the inner chain `xi`, the kernel-recombined process
//! `X_hat`, the convolution form `X_bar`, and the multi-factor Markovian
//! oracle for sums of exponentials.
//!
//! On `[t_k, t_{k+1})`,
//! `X_hat_t = X0 + sum_{j <= k} J_j / K(0) * K(t - t_j)` with node jumps
//! `J_j = X_hat_{t_j} - X_hat_{t_j-}`, while `xi` solves the constant-kernel
//! equation started from `X_hat_{t_{k+1}-}`. At each node `X_hat_{t_k}` is set
//! to `xi_{t_k-}`.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::inner_sde::{
    advance, exact_increment, guard, jump_cursor_at, thinned_increment, InnerError, InnerPath, NegativityDiagnostics,
    NoiseSlice, SliceJumps,
};
use crate::kernels::{ExpSumKernel, Kernel};
use crate::levy::{derive_path_noise, DriverNoise, JumpContent, LevyError, NoiseGrid, StableDriverParams};
use crate::model::ModelCoefficients;
use crate::stats::MomentAccumulator;

#[derive(Debug, Error, Clone, PartialEq, Serialize)]
pub enum SchemeError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("initial value {0} is negative")]
    NegativeStart(f64),
    #[error("noise has {got} steps, the scheme needs {expected}")]
    NoiseMismatch { expected: usize, got: usize },
    #[error("evaluation time {time} lies beyond the ledger horizon {horizon}")]
    BeyondLedger { time: f64, horizon: f64 },
    #[error("driver: {0}")]
    Driver(String),
    #[error(transparent)]
    Inner(#[from] InnerError),
}

impl From<LevyError> for SchemeError {
    fn from(e: LevyError) -> Self {
        SchemeError::Driver(e.to_string())
    }
}

/// `t_k = k T / N`, each interval split into `substeps` equal substeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SchemeGrid {
    pub horizon: f64,
    pub steps: usize,
    pub substeps: usize,
}

impl SchemeGrid {
    pub fn new(horizon: f64, steps: usize, substeps: usize) -> Result<Self, SchemeError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(SchemeError::Grid(format!("horizon {horizon} must be positive")));
        }
        if steps == 0 || substeps == 0 {
            return Err(SchemeError::Grid("N and n_sub must be at least 1".into()));
        }
        Ok(Self { horizon, steps, substeps })
    }

    pub fn node(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.steps as f64
    }

    pub fn fine_steps(&self) -> usize {
        self.steps * self.substeps
    }

    pub fn fine_step(&self) -> f64 {
        self.horizon / self.fine_steps() as f64
    }

    pub fn fine_time(&self, i: usize) -> f64 {
        self.horizon * i as f64 / self.fine_steps() as f64
    }

    pub fn fine_times(&self) -> Vec<f64> {
        (0..=self.fine_steps()).map(|i| self.fine_time(i)).collect()
    }

    pub fn noise_grid(&self) -> NoiseGrid {
        NoiseGrid { horizon: self.horizon, steps: self.fine_steps() }
    }

    /// `nu(t, N)`: the `k` with `t_k <= t < t_{k+1}`; `T` maps to `N - 1`.
    pub fn locate(&self, t: f64) -> Result<usize, SchemeError> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(SchemeError::Grid(format!("time {t} outside [0, {}]", self.horizon)));
        }
        let mut k = ((t / self.horizon * self.steps as f64).floor() as usize).min(self.steps - 1);
        while k > 0 && self.node(k) > t {
            k -= 1;
        }
        while k + 1 < self.steps && self.node(k + 1) <= t {
            k += 1;
        }
        Ok(k)
    }
}

/// Increments of the driving semimartingale `Z` on the substep grid:
/// `dZ_j` for `[s_j, s_j + h)` plus jumps placed at exact times.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ZLedger {
    pub horizon: f64,
    pub increments: Vec<f64>,
    pub jumps: Vec<(f64, f64)>,
}

impl ZLedger {
    pub fn step(&self) -> f64 {
        if self.increments.is_empty() {
            self.horizon
        } else {
            self.horizon / self.increments.len() as f64
        }
    }

    pub fn left_endpoint(&self, j: usize) -> f64 {
        self.horizon * j as f64 / self.increments.len() as f64
    }
}

/// `X_bar_t = X0 + sum_{s_j < t} K(t - s_j) dZ_j + sum_{tau <= t} K(t - tau) dJ_tau`.
pub fn compute_barx(kernel: &dyn Kernel, x0: f64, ledger: &ZLedger, eval_times: &[f64]) -> Result<Vec<f64>, SchemeError> {
    let slack = 1e-12 * ledger.horizon.max(1.0);
    eval_times
        .iter()
        .map(|&t| {
            if t > ledger.horizon + slack || t < 0.0 {
                return Err(SchemeError::BeyondLedger { time: t, horizon: ledger.horizon });
            }
            let mut x = x0;
            for (j, dz) in ledger.increments.iter().enumerate() {
                let s = ledger.left_endpoint(j);
                if s >= t {
                    break;
                }
                x += kernel.eval(t - s) * dz;
            }
            for &(tau, dj) in &ledger.jumps {
                if tau <= t {
                    x += kernel.eval(t - tau) * dj;
                }
            }
            Ok(x)
        })
        .collect()
}

/// One simulated path. All fine-grid vectors have `N n_sub + 1` entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemePath {
    pub index: u64,
    /// `xi` at the substep grid, right-continuous at the nodes; the last entry
    /// is `xi_{T-}`.
    pub xi: Vec<f64>,
    /// `X_hat` at the substep grid; the last entry is `X_hat_{T-}`.
    pub xhat: Vec<f64>,
    pub xbar: Option<Vec<f64>>,
    pub ledger: ZLedger,
    /// `xi_{t_{k+1}-}` for `k = 0..N`.
    pub xi_left: Vec<f64>,
    /// `X_hat_{t_{k+1}-}` for `k = 0..N`.
    pub xhat_left: Vec<f64>,
    /// `X_hat_{t_j} - X_hat_{t_j-}` for `j = 1..N`.
    pub node_jumps: Vec<f64>,
    pub diagnostics: NegativityDiagnostics,
}

/// The scheme for one kernel, model and grid, with the kernel tabulated on the
/// substep grid.
#[derive(Debug)]
pub struct SplitScheme<'a> {
    kernel: &'a dyn Kernel,
    coeffs: &'a ModelCoefficients,
    x0: f64,
    grid: SchemeGrid,
    k0: f64,
    table: Vec<f64>,
    store_barx: bool,
}

impl<'a> SplitScheme<'a> {
    pub fn new(kernel: &'a dyn Kernel, coeffs: &'a ModelCoefficients, x0: f64, grid: SchemeGrid) -> Result<Self, SchemeError> {
        if !(x0 >= 0.0 && x0.is_finite()) {
            return Err(SchemeError::NegativeStart(x0));
        }
        let table = (0..=grid.fine_steps()).map(|i| kernel.eval(grid.fine_time(i))).collect();
        Ok(Self { kernel, coeffs, x0, grid, k0: kernel.at_zero(), table, store_barx: true })
    }

    /// Whether `run_path` also fills `X_bar` (quadratic cost in the substep count).
    pub fn with_barx(mut self, store: bool) -> Self {
        self.store_barx = store;
        self
    }

    pub fn grid(&self) -> &SchemeGrid {
        &self.grid
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    fn recombine_fine(&self, node_coeffs: &[f64], i: usize) -> f64 {
        let n_sub = self.grid.substeps;
        let mut x = self.x0;
        for (j, c) in node_coeffs.iter().enumerate() {
            x += c * self.table[i - (j + 1) * n_sub];
        }
        x
    }

    pub fn run_path(&self, noise: &DriverNoise) -> Result<SchemePath, SchemeError> {
        let m = self.grid.fine_steps();
        if noise.grid.steps != m {
            return Err(SchemeError::NoiseMismatch { expected: m, got: noise.grid.steps });
        }
        let (n, n_sub, h) = (self.grid.steps, self.grid.substeps, self.grid.fine_step());
        let mut xi = Vec::with_capacity(m + 1);
        let mut xhat = Vec::with_capacity(m + 1);
        let mut xi_left = Vec::with_capacity(n);
        let mut xhat_left = Vec::with_capacity(n);
        let mut node_jumps = Vec::with_capacity(n.saturating_sub(1));
        let mut node_coeffs: Vec<f64> = Vec::with_capacity(n);
        let mut inner = InnerPath { values: Vec::with_capacity(n_sub), increments: Vec::with_capacity(m), ..Default::default() };
        let mut cursor = match &noise.jumps {
            JumpContent::Thinned(s) => jump_cursor_at(&s.times, 0.0),
            JumpContent::Stable(_) => 0,
        };
        let mut glued = self.x0;
        for k in 0..n {
            let base = k * n_sub;
            xhat.push(glued);
            for q in 1..n_sub {
                xhat.push(self.recombine_fine(&node_coeffs, base + q));
            }
            let left = self.recombine_fine(&node_coeffs, base + n_sub);
            xhat_left.push(left);
            let x_init = left.max(0.0);
            if left < 0.0 {
                inner.diagnostics.min_pre_floor = inner.diagnostics.min_pre_floor.min(left);
                inner.diagnostics.floor_events += 1;
            }
            xi.push(x_init);
            let slice = NoiseSlice {
                start_time: self.grid.fine_time(base),
                end_time: self.grid.fine_time(base + n_sub),
                step: h,
                brownian: &noise.brownian[base..base + n_sub],
                jumps: match &noise.jumps {
                    JumpContent::Stable(dl) => SliceJumps::Stable(&dl[base..base + n_sub]),
                    JumpContent::Thinned(s) => SliceJumps::Thinned { times: &s.times, sizes: &s.sizes, drift_rate: s.drift_rate },
                },
            };
            inner.values.clear();
            let end = advance(self.coeffs, self.k0, x_init, n_sub, &slice, &mut cursor, &mut inner)?;
            xi.extend_from_slice(&inner.values[..n_sub - 1]);
            xi_left.push(end);
            if k + 1 < n {
                node_jumps.push(end - left);
                node_coeffs.push((end - left) / self.k0);
                glued = end;
            }
        }
        xhat.push(xhat_left[n - 1]);
        xi.push(xi_left[n - 1]);
        let ledger = ZLedger { horizon: self.grid.horizon, increments: inner.increments, jumps: inner.jumps };
        let xbar = self.store_barx.then(|| self.barx_fine(&ledger));
        Ok(SchemePath {
            index: noise.path_index,
            xi,
            xhat,
            xbar,
            ledger,
            xi_left,
            xhat_left,
            node_jumps,
            diagnostics: inner.diagnostics,
        })
    }

    /// `X_bar` on the substep grid using the tabulated kernel.
    pub fn barx_fine(&self, ledger: &ZLedger) -> Vec<f64> {
        let m = ledger.increments.len();
        let times = self.grid.fine_times();
        let mut out: Vec<f64> = (0..=m)
            .map(|i| {
                let conv: f64 = self.table[1..=i].iter().rev().zip(&ledger.increments[..i]).map(|(k, dz)| k * dz).sum();
                self.x0 + conv
            })
            .collect();
        for &(tau, dj) in &ledger.jumps {
            let first = times.partition_point(|&t| t < tau);
            for (x, &t) in out[first..].iter_mut().zip(&times[first..]) {
                *x += self.kernel.eval(t - tau) * dj;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlaggedPath {
    pub index: u64,
    pub error: InnerError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunOptions {
    pub exec: Execution,
    pub store_barx: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { exec: Execution::Parallel, store_barx: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemePaths {
    pub grid: SchemeGrid,
    pub x0: f64,
    pub master_seed: u64,
    pub requested: usize,
    pub paths: Vec<SchemePath>,
    pub flagged: Vec<FlaggedPath>,
}

/// Runs `n_paths` independent paths; path `i` uses the noise
/// `derive_path_noise(master_seed, i, ..)`.
#[allow(clippy::too_many_arguments)]
pub fn run_split_scheme(
    kernel: &dyn Kernel,
    coeffs: &ModelCoefficients,
    x0: f64,
    grid: SchemeGrid,
    driver: &StableDriverParams,
    n_paths: usize,
    master_seed: u64,
    options: RunOptions,
) -> Result<SchemePaths, SchemeError> {
    let scheme = SplitScheme::new(kernel, coeffs, x0, grid)?.with_barx(options.store_barx);
    let results = exec::map_indices(options.exec, n_paths, |i| {
        let noise = derive_path_noise(master_seed, i as u64, grid.noise_grid(), driver);
        scheme.run_path(&noise)
    });
    let mut paths = Vec::with_capacity(n_paths);
    let mut flagged = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(p) => paths.push(p),
            Err(SchemeError::Inner(error)) => flagged.push(FlaggedPath { index: i as u64, error }),
            Err(e) => return Err(e),
        }
    }
    Ok(SchemePaths { grid, x0, master_seed, requested: n_paths, paths, flagged })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupMean {
    pub value: f64,
    pub se: f64,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeSummary {
    pub requested_paths: usize,
    pub completed_paths: usize,
    pub flagged_paths: usize,
    pub flag_rate: f64,
    pub min_xhat: f64,
    pub min_xi: f64,
    pub min_pre_floor: f64,
    pub floor_events: usize,
    pub sup_mean_xi: SupMean,
    pub sup_mean_xhat: SupMean,
    pub sup_l1_xi_xhat: SupMean,
    pub sup_l1_xhat_xbar: Option<SupMean>,
    pub times: Vec<f64>,
    pub mean_xi: Vec<f64>,
    pub mean_xhat: Vec<f64>,
}

fn sup_mean(acc: &MomentAccumulator, times: &[f64]) -> SupMean {
    let (i, e) = acc.sup();
    SupMean { value: e.mean, se: e.se, time: times[i] }
}

impl SchemePaths {
    pub fn flag_rate(&self) -> f64 {
        if self.requested == 0 {
            0.0
        } else {
            self.flagged.len() as f64 / self.requested as f64
        }
    }

    pub fn min_xhat(&self) -> f64 {
        self.paths.iter().flat_map(|p| p.xhat.iter().copied()).fold(f64::INFINITY, f64::min)
    }

    pub fn summary(&self) -> SchemeSummary {
        let times = self.grid.fine_times();
        let len = times.len();
        let mut xi = MomentAccumulator::new(len);
        let mut xhat = MomentAccumulator::new(len);
        let mut gap = MomentAccumulator::new(len);
        let mut bar_gap = MomentAccumulator::new(len);
        let mut diag = NegativityDiagnostics::default();
        let mut has_bar = !self.paths.is_empty();
        for p in &self.paths {
            xi.push(p.xi.iter().copied());
            xhat.push(p.xhat.iter().copied());
            gap.push(p.xi.iter().zip(&p.xhat).map(|(a, b)| (a - b).abs()));
            match &p.xbar {
                Some(bar) => bar_gap.push(p.xhat.iter().zip(bar).map(|(a, b)| (a - b).abs())),
                None => has_bar = false,
            }
            diag.merge(&p.diagnostics);
        }
        let n = xi.count.max(1) as f64;
        SchemeSummary {
            requested_paths: self.requested,
            completed_paths: self.paths.len(),
            flagged_paths: self.flagged.len(),
            flag_rate: self.flag_rate(),
            min_xhat: self.min_xhat(),
            min_xi: self.paths.iter().flat_map(|p| p.xi.iter().copied()).fold(f64::INFINITY, f64::min),
            min_pre_floor: diag.min_pre_floor,
            floor_events: diag.floor_events,
            sup_mean_xi: sup_mean(&xi, &times),
            sup_mean_xhat: sup_mean(&xhat, &times),
            sup_l1_xi_xhat: sup_mean(&gap, &times),
            sup_l1_xhat_xbar: has_bar.then(|| sup_mean(&bar_gap, &times)),
            mean_xi: xi.sum.iter().map(|s| s / n).collect(),
            mean_xhat: xhat.sum.iter().map(|s| s / n).collect(),
            times,
        }
    }

    /// `path,time,xi,xhat,xbar` rows; `xbar` is empty when not computed.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "path,time,xi,xhat,xbar")?;
        let times = self.grid.fine_times();
        for p in &self.paths {
            for (i, t) in times.iter().enumerate() {
                match &p.xbar {
                    Some(bar) => writeln!(w, "{},{},{},{},{}", p.index, t, p.xi[i], p.xhat[i], bar[i])?,
                    None => writeln!(w, "{},{},{},{},", p.index, t, p.xi[i], p.xhat[i])?,
                }
            }
        }
        Ok(())
    }
}

/// Output of the factor-system solve on the noise grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OraclePath {
    pub values: Vec<f64>,
    pub factors: Vec<f64>,
    pub diagnostics: NegativityDiagnostics,
}

/// Explicit Euler for `X = X0 + sum w_i X^i`,
/// `dX^i = -lambda_i X^i dt + mu(X+) dt + sigma(X+) dB + gamma(X+) dL`, on the
/// noise grid. `X` is floored at zero; the reflection is spread over the
/// factors so that the factor identity keeps holding.
pub fn run_markovian_oracle(
    kernel: &ExpSumKernel,
    coeffs: &ModelCoefficients,
    x0: f64,
    noise: &DriverNoise,
) -> Result<OraclePath, SchemeError> {
    if !(x0 >= 0.0 && x0.is_finite()) {
        return Err(SchemeError::NegativeStart(x0));
    }
    let (w, lam) = (kernel.weights(), kernel.rates());
    let k0 = kernel.at_zero();
    let grid = noise.grid;
    let h = grid.step();
    let mut factors = vec![0.0; w.len()];
    let mut values = Vec::with_capacity(grid.steps + 1);
    let mut diag = NegativityDiagnostics::default();
    let mut x = x0;
    values.push(x);

    let settle = |raw: f64, time: f64, factors: &mut [f64], diag: &mut NegativityDiagnostics| -> Result<f64, InnerError> {
        let raw = guard(time, raw)?;
        diag.min_pre_floor = diag.min_pre_floor.min(raw);
        if raw < 0.0 {
            diag.floor_events += 1;
            for f in factors.iter_mut() {
                *f += -raw / k0;
            }
            Ok(0.0)
        } else {
            Ok(raw)
        }
    };

    let mut cursor = match &noise.jumps {
        JumpContent::Thinned(s) => jump_cursor_at(&s.times, 0.0),
        JumpContent::Stable(_) => 0,
    };
    for q in 0..grid.steps {
        let end = grid.horizon * (q + 1) as f64 / grid.steps as f64;
        let xp = x.max(0.0);
        let dz = match &noise.jumps {
            JumpContent::Stable(dl) => exact_increment(coeffs, xp, h, noise.brownian[q], dl[q]),
            JumpContent::Thinned(s) => thinned_increment(coeffs, xp, h, noise.brownian[q], s.drift_rate),
        };
        let mut acc: Option<f64> = None;
        for ((f, wi), li) in factors.iter_mut().zip(w).zip(lam) {
            let upd = -li * *f * h + dz;
            *f += upd;
            acc = Some(match acc {
                None => wi * upd,
                Some(a) => a + wi * upd,
            });
        }
        x = settle(x + acc.unwrap_or(0.0), end, &mut factors, &mut diag)?;
        if let JumpContent::Thinned(s) = &noise.jumps {
            while cursor < s.times.len() && (s.times[cursor] <= end || q + 1 == grid.steps) {
                let tau = s.times[cursor];
                let dj = coeffs.eta(x.max(0.0), s.sizes[cursor]);
                for f in factors.iter_mut() {
                    *f += dj;
                }
                x = settle(x + k0 * dj, tau, &mut factors, &mut diag)?;
                cursor += 1;
            }
        }
        values.push(x);
    }
    Ok(OraclePath { values, factors, diagnostics: diag })
}
