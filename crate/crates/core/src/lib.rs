//! Simulation and verification toolkit for one-dimensional stochastic Volterra
//! equations with jumps
//! `X_t = X0 + int_0^t K(t - s) (mu(X_s) ds + sigma(X_s) dB_s + int eta(X_{s-}, u) N~(ds, du))`.
//!
//! The crate provides kernel checks ([`kernels`]), model coefficients
//! ([`model`]), spectrally positive stable drivers ([`levy`]), the
//! non-negativity-preserving splitting scheme ([`inner_sde`], [`scheme`]), the
//! Riccati–Volterra Laplace transform of the Volterra alpha-CIR process
//! ([`riccati`]) and convergence diagnostics ([`analysis`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod exec;
pub mod inner_sde;
pub mod kernels;
pub mod levy;
pub mod model;
pub mod riccati;
pub mod scheme;
pub mod stats;

pub use exec::Execution;
pub use kernels::{ExpSumKernel, Kernel, KernelSpec, SampledKernel};
pub use levy::{DriverMode, DriverNoise, StableDriverParams};
pub use model::{affine_coefficients, ModelCoefficients, ModelSpec};
pub use scheme::{run_split_scheme, SchemeGrid, SchemePaths, SplitScheme};

/// Version string embedded in every output artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
