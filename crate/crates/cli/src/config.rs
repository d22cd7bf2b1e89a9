//! Run configuration: one JSON document per run.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sve_core::kernels::KernelSpec;
use sve_core::levy::DriverSpec;
use sve_core::model::ModelSpec;
use sve_core::riccati::ForcingFn;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: KernelSpec,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default = "default_x0")]
    pub x0: f64,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub driver: DriverSpec,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub kernel_check: KernelCheckOptions,
    #[serde(default)]
    pub simulate: SimulateOptions,
    #[serde(default)]
    pub laplace: LaplaceOptions,
    #[serde(default)]
    pub stable_test: StableTestOptions,
    #[serde(default)]
    pub yw: YwOptions,
}

fn default_x0() -> f64 {
    1.0
}

fn default_paths() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(rename = "N_list", default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    pub n_sub: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelCheckOptions {
    /// Defaults to the grid horizon, or 1.
    pub horizon: Option<f64>,
    pub max_order: usize,
    pub grid_size: usize,
    pub points: usize,
    pub trials: usize,
}

impl Default for KernelCheckOptions {
    fn default() -> Self {
        Self { horizon: None, max_order: 4, grid_size: 401, points: 3, trials: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateOptions {
    pub store_barx: bool,
    pub noise_csv: bool,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self { store_barx: true, noise_csv: false }
    }
}

/// `f` as a constant or as samples on the psi grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ForcingSpec {
    Constant(f64),
    Samples(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaplaceOptions {
    pub u: f64,
    pub f: ForcingSpec,
    pub psi_step: f64,
    /// Skip the Monte Carlo estimate when false.
    pub mc: bool,
    pub z_max: f64,
}

impl Default for LaplaceOptions {
    fn default() -> Self {
        Self { u: -0.5, f: ForcingSpec::Constant(0.0), psi_step: 1e-3, mc: true, z_max: 3.0 }
    }
}

impl LaplaceOptions {
    pub fn forcing(&self) -> ForcingFn {
        match &self.f {
            ForcingSpec::Constant(c) => ForcingFn::Constant(*c),
            ForcingSpec::Samples(v) => ForcingFn::Grid { step: self.psi_step, values: v.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StableTestOptions {
    /// Defaults to the model's alpha, or 1.5.
    pub alpha: Option<f64>,
    pub u: f64,
    pub t: f64,
    pub draws: usize,
    pub z_max: f64,
}

impl Default for StableTestOptions {
    fn default() -> Self {
        Self { alpha: None, u: -1.0, t: 1.0, draws: 1_000_000, z_max: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct YwOptions {
    pub enabled: bool,
    pub delta: f64,
    pub eps: f64,
    pub samples: usize,
    /// Jump-size constant `c`; defaults to `K(0)`.
    pub c: Option<f64>,
}

impl Default for YwOptions {
    fn default() -> Self {
        Self { enabled: true, delta: 100.0, eps: 0.01, samples: 100_000, c: None }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if !(cfg.x0.is_finite() && cfg.x0 >= 0.0) {
            return Err(CliError::Config(format!("x0 = {} must be finite and non-negative", cfg.x0)));
        }
        Ok(cfg)
    }

    pub fn model(&self) -> Result<&ModelSpec, CliError> {
        self.model.as_ref().ok_or_else(|| CliError::Config("this command needs a `model` section".into()))
    }

    pub fn grid(&self) -> Result<&GridSpec, CliError> {
        self.grid.as_ref().ok_or_else(|| CliError::Config("this command needs a `grid` section".into()))
    }

    pub fn steps(&self) -> Result<usize, CliError> {
        self.grid()?.n.ok_or_else(|| CliError::Config("grid.N is required".into()))
    }

    pub fn levels(&self) -> Result<Vec<usize>, CliError> {
        self.grid()?.n_list.clone().ok_or_else(|| CliError::Config("grid.N_list is required".into()))
    }
}
