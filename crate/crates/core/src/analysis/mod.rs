//! Diagnostics: Yamada–Watanabe functions and L1 convergence measurements.

pub mod convergence;
pub mod yw;

use serde::Serialize;
use thiserror::Error;

use crate::levy::LevyError;
use crate::scheme::{SchemeError, SupMean};
use crate::stats::MomentAccumulator;

pub use convergence::{convergence_study, oracle_study, ConvergenceRow, ConvergenceTable, OracleStudy, StudyConfig};
pub use yw::{build_yw, verify_yw_inequalities, verify_yw_lemmas, YWFunction};

#[derive(Debug, Error, Clone, PartialEq, Serialize)]
pub enum AnalysisError {
    #[error("path bundles differ: {0}")]
    Mismatch(String),
    #[error("invalid resolution list: {0}")]
    Levels(String),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error("driver: {0}")]
    Driver(String),
}

impl From<LevyError> for AnalysisError {
    fn from(e: LevyError) -> Self {
        AnalysisError::Driver(e.to_string())
    }
}

/// `sup_t mean_p |a_p(t) - b_p(t)|` over paired paths, with the standard
/// error of the mean at the sup-attaining time.
pub fn l1_distance(a: &[Vec<f64>], b: &[Vec<f64>], times: &[f64]) -> Result<SupMean, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::Mismatch(format!("{} vs {} paths", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(AnalysisError::Mismatch("no paths".into()));
    }
    let mut acc = MomentAccumulator::new(times.len());
    for (pa, pb) in a.iter().zip(b) {
        if pa.len() != times.len() || pb.len() != times.len() {
            return Err(AnalysisError::Mismatch(format!("path length {} / {} vs {} times", pa.len(), pb.len(), times.len())));
        }
        acc.push(pa.iter().zip(pb).map(|(x, y)| (x - y).abs()));
    }
    let (i, e) = acc.sup();
    Ok(SupMean { value: e.mean, se: e.se, time: times[i] })
}
