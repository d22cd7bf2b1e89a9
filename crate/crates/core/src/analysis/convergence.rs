//! Coupled multi-resolution runs of the scheme and the resulting L1 tables.

use serde::Serialize;

use crate::exec::{self, Execution};
use crate::kernels::{ExpSumKernel, Kernel};
use crate::levy::{derive_path_noise, DriverNoise, NoiseGrid, StableDriverParams};
use crate::model::ModelCoefficients;
use crate::scheme::{run_markovian_oracle, SchemeError, SchemeGrid, SplitScheme, SupMean};
use crate::stats::{mean_se, MomentAccumulator};

use super::AnalysisError;

/// Acceptable share of aborted paths.
pub const MAX_FLAG_RATE: f64 = 1e-3;
const BLOCK: usize = 16;

#[derive(Debug, Clone)]
pub struct StudyConfig<'a> {
    pub kernel: &'a dyn Kernel,
    pub coeffs: &'a ModelCoefficients,
    pub x0: f64,
    pub horizon: f64,
    pub substeps: usize,
    pub driver: StableDriverParams,
    pub exec: Execution,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub sup_l1_xi_xhat: SupMean,
    pub sup_l1_xhat_xbar: SupMean,
    /// `sup_t mean |X_bar^{2N} - X_bar^N|` on the common evaluation grid, when
    /// `2N` is also in the study.
    pub cauchy: Option<SupMean>,
    pub sup_mean_xi: SupMean,
    pub sup_mean_xhat: SupMean,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CauchyCheck {
    pub n: usize,
    pub next_n: usize,
    /// Next Cauchy distance minus this one.
    pub difference: f64,
    pub paired_se: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub cauchy_checks: Vec<CauchyCheck>,
    /// `max / min - 1` of `sup_t mean(xi^N)` over the rows.
    pub moment_variation: f64,
    pub requested_paths: usize,
    pub flagged_paths: usize,
    pub flag_rate: f64,
    pub horizon: f64,
    pub substeps: usize,
    pub master_seed: u64,
    /// Times of the common evaluation grid used for the Cauchy column.
    pub eval_times: Vec<f64>,
}

impl ConvergenceTable {
    pub fn cauchy_non_increasing(&self) -> bool {
        self.cauchy_checks.iter().all(|c| c.passed)
    }

    pub fn flag_rate_ok(&self) -> bool {
        self.flag_rate < MAX_FLAG_RATE
    }

    pub fn passed(&self) -> bool {
        self.flag_rate_ok() && self.cauchy_non_increasing()
    }

    pub fn row(&self, n: usize) -> Option<&ConvergenceRow> {
        self.rows.iter().find(|r| r.n == n)
    }

    /// `N,sup_l1_xi_xhat,se,...` rows; empty Cauchy cells where not defined.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "N,sup_l1_xi_xhat,se_xi_xhat,sup_l1_xhat_xbar,se_xhat_xbar,cauchy_next,se_cauchy,sup_mean_xi,se_mean_xi,sup_mean_xhat,se_mean_xhat\n",
        );
        for r in &self.rows {
            let (c, cse) = r.cauchy.as_ref().map(|c| (c.value.to_string(), c.se.to_string())).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.n,
                r.sup_l1_xi_xhat.value,
                r.sup_l1_xi_xhat.se,
                r.sup_l1_xhat_xbar.value,
                r.sup_l1_xhat_xbar.se,
                c,
                cse,
                r.sup_mean_xi.value,
                r.sup_mean_xi.se,
                r.sup_mean_xhat.value,
                r.sup_mean_xhat.se,
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
struct RunAccumulators {
    gap_xi_xhat: MomentAccumulator,
    gap_xhat_xbar: MomentAccumulator,
    xi: MomentAccumulator,
    xhat: MomentAccumulator,
}

impl RunAccumulators {
    fn new(len: usize) -> Self {
        Self {
            gap_xi_xhat: MomentAccumulator::new(len),
            gap_xhat_xbar: MomentAccumulator::new(len),
            xi: MomentAccumulator::new(len),
            xhat: MomentAccumulator::new(len),
        }
    }

    fn merge(&mut self, o: &RunAccumulators) {
        self.gap_xi_xhat.merge(&o.gap_xi_xhat);
        self.gap_xhat_xbar.merge(&o.gap_xhat_xbar);
        self.xi.merge(&o.xi);
        self.xhat.merge(&o.xhat);
    }
}

struct BlockResult {
    runs: Vec<RunAccumulators>,
    /// Per kept path, per run: `X_bar` on the evaluation grid.
    bars: Vec<Vec<Vec<f64>>>,
    flagged: usize,
}

fn check_levels(levels: &[usize]) -> Result<(), AnalysisError> {
    if levels.is_empty() {
        return Err(AnalysisError::Levels("empty list".into()));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AnalysisError::Levels("levels must be strictly ascending".into()));
    }
    let finest = *levels.last().expect("non-empty");
    if levels.iter().any(|&n| n == 0 || !finest.is_multiple_of(n) || !n.is_multiple_of(levels[0])) {
        return Err(AnalysisError::Levels("every level must divide the finest and be a multiple of the coarsest".into()));
    }
    Ok(())
}

fn sup_of(acc: &MomentAccumulator, times: &[f64]) -> SupMean {
    let (i, e) = acc.sup();
    SupMean { value: e.mean, se: e.se, time: times[i] }
}

/// Runs the scheme at every `N` in `levels` on noise simulated at the finest
/// resolution and aggregated to the coarser ones. A path aborted at any level
/// is dropped from every level.
pub fn convergence_study(
    config: &StudyConfig<'_>,
    levels: &[usize],
    n_paths: usize,
    master_seed: u64,
) -> Result<ConvergenceTable, AnalysisError> {
    check_levels(levels)?;
    let n_sub = config.substeps;
    let finest = *levels.last().expect("checked");
    let coarsest = levels[0];
    let grids: Vec<SchemeGrid> = levels.iter().map(|&n| SchemeGrid::new(config.horizon, n, n_sub)).collect::<Result<_, _>>()?;
    let schemes: Vec<SplitScheme<'_>> =
        grids.iter().map(|g| SplitScheme::new(config.kernel, config.coeffs, config.x0, *g)).collect::<Result<_, _>>()?;
    let fine_noise = NoiseGrid::new(config.horizon, finest * n_sub)?;
    let eval_len = coarsest * n_sub + 1;

    let block_results = exec::map_indices(config.exec, n_paths.div_ceil(BLOCK), |b| -> Result<BlockResult, SchemeError> {
        let mut runs: Vec<RunAccumulators> = grids.iter().map(|g| RunAccumulators::new(g.fine_steps() + 1)).collect();
        let mut bars = Vec::new();
        let mut flagged = 0;
        'paths: for i in (b * BLOCK)..((b + 1) * BLOCK).min(n_paths) {
            let noise = derive_path_noise(master_seed, i as u64, fine_noise, &config.driver);
            let mut paths = Vec::with_capacity(levels.len());
            for (&n, scheme) in levels.iter().zip(&schemes) {
                let coarse = noise.coarsen(finest / n)?;
                match scheme.run_path(&coarse) {
                    Ok(p) => paths.push(p),
                    Err(SchemeError::Inner(_)) => {
                        flagged += 1;
                        continue 'paths;
                    }
                    Err(e) => return Err(e),
                }
            }
            let mut path_bars = Vec::with_capacity(levels.len());
            for ((p, acc), &n) in paths.iter().zip(runs.iter_mut()).zip(levels) {
                let bar = p.xbar.as_ref().expect("scheme stores X_bar");
                acc.gap_xi_xhat.push(p.xi.iter().zip(&p.xhat).map(|(a, b)| (a - b).abs()));
                acc.gap_xhat_xbar.push(p.xhat.iter().zip(bar).map(|(a, b)| (a - b).abs()));
                acc.xi.push(p.xi.iter().copied());
                acc.xhat.push(p.xhat.iter().copied());
                let stride = n / coarsest;
                path_bars.push((0..eval_len).map(|e| bar[e * stride]).collect());
            }
            bars.push(path_bars);
        }
        Ok(BlockResult { runs, bars, flagged })
    });

    let mut runs: Vec<RunAccumulators> = grids.iter().map(|g| RunAccumulators::new(g.fine_steps() + 1)).collect();
    let mut bars: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n_paths);
    let mut flagged = 0;
    for r in block_results {
        let r = r?;
        for (acc, o) in runs.iter_mut().zip(&r.runs) {
            acc.merge(o);
        }
        bars.extend(r.bars);
        flagged += r.flagged;
    }

    let eval_times = grids[0].fine_times();
    // Cauchy column: per path |X_bar^{2N} - X_bar^N| on the evaluation grid
    let cauchy_values: Vec<Option<Vec<Vec<f64>>>> = levels
        .iter()
        .map(|&n| {
            let j = levels.iter().position(|&m| m == 2 * n)?;
            let i = levels.iter().position(|&m| m == n).expect("present");
            Some(bars.iter().map(|pb| pb[j].iter().zip(&pb[i]).map(|(a, b)| (a - b).abs()).collect()).collect())
        })
        .collect();
    let cauchy_sup: Vec<Option<(usize, SupMean)>> = cauchy_values
        .iter()
        .map(|v| {
            v.as_ref().map(|per_path| {
                let mut acc = MomentAccumulator::new(eval_len);
                for p in per_path {
                    acc.push(p.iter().copied());
                }
                let (t, e) = acc.sup();
                (t, SupMean { value: e.mean, se: e.se, time: eval_times[t] })
            })
        })
        .collect();

    let rows: Vec<ConvergenceRow> = levels
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let times = grids[k].fine_times();
            ConvergenceRow {
                n,
                sup_l1_xi_xhat: sup_of(&runs[k].gap_xi_xhat, &times),
                sup_l1_xhat_xbar: sup_of(&runs[k].gap_xhat_xbar, &times),
                cauchy: cauchy_sup[k].as_ref().map(|c| c.1.clone()),
                sup_mean_xi: sup_of(&runs[k].xi, &times),
                sup_mean_xhat: sup_of(&runs[k].xhat, &times),
            }
        })
        .collect();

    let defined: Vec<usize> = (0..levels.len()).filter(|&k| cauchy_sup[k].is_some()).collect();
    let cauchy_checks = defined
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let (ta, sa) = cauchy_sup[a].clone().expect("defined");
            let (tb, sb) = cauchy_sup[b].clone().expect("defined");
            let va = cauchy_values[a].as_ref().expect("defined");
            let vb = cauchy_values[b].as_ref().expect("defined");
            let diffs: Vec<f64> = va.iter().zip(vb).map(|(pa, pb)| pb[tb] - pa[ta]).collect();
            let paired = mean_se(&diffs);
            let difference = sb.value - sa.value;
            CauchyCheck { n: levels[a], next_n: levels[b], difference, paired_se: paired.se, passed: difference <= 2.0 * paired.se }
        })
        .collect();

    let moments: Vec<f64> = rows.iter().map(|r| r.sup_mean_xi.value).collect();
    let (lo, hi) = moments.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    Ok(ConvergenceTable {
        rows,
        cauchy_checks,
        moment_variation: hi / lo - 1.0,
        requested_paths: n_paths,
        flagged_paths: flagged,
        flag_rate: if n_paths == 0 { 0.0 } else { flagged as f64 / n_paths as f64 },
        horizon: config.horizon,
        substeps: n_sub,
        master_seed,
        eval_times,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub n: usize,
    pub substeps: usize,
    /// `sup_t mean |xi - X|` against the factor-system solution.
    pub sup_l1_xi: SupMean,
    /// `sup_t mean |X_hat - X|`.
    pub sup_l1_xhat: SupMean,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleStudy {
    pub rows: Vec<OracleRow>,
    pub requested_paths: usize,
    pub flagged_paths: usize,
    /// Per kept path, per row: `|xi - X|` and `|X_hat - X|` on the evaluation grid.
    #[serde(skip)]
    pub per_path: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
    pub eval_times: Vec<f64>,
}

impl OracleStudy {
    /// Mean and standard error over paths of `d_next(t_next) - ratio * d(t)`
    /// for the `xi` column, where `t` are the sup-attaining times.
    pub fn paired_ratio_check(&self, row: usize, next: usize, ratio: f64) -> (f64, f64) {
        let (ta, tb) = (self.time_index(&self.rows[row].sup_l1_xi), self.time_index(&self.rows[next].sup_l1_xi));
        let diffs: Vec<f64> = self.per_path.iter().map(|p| p[next].0[tb] - ratio * p[row].0[ta]).collect();
        let e = mean_se(&diffs);
        (e.mean, e.se)
    }

    fn time_index(&self, s: &SupMean) -> usize {
        self.eval_times.iter().position(|&t| t == s.time).unwrap_or(0)
    }
}

/// Compares the split scheme with the factor system on shared noise for each
/// `(N, n_sub)` resolution. Noise is generated on the finest fine grid and
/// aggregated; distances are taken on the coarsest fine grid.
#[allow(clippy::too_many_arguments)]
pub fn oracle_study(
    kernel: &ExpSumKernel,
    coeffs: &ModelCoefficients,
    x0: f64,
    horizon: f64,
    resolutions: &[(usize, usize)],
    driver: &StableDriverParams,
    n_paths: usize,
    master_seed: u64,
    exec: Execution,
) -> Result<OracleStudy, AnalysisError> {
    let fine: Vec<usize> = resolutions.iter().map(|(n, s)| n * s).collect();
    let finest = fine.iter().copied().max().ok_or_else(|| AnalysisError::Levels("empty list".into()))?;
    let coarsest = fine.iter().copied().min().expect("non-empty");
    if fine.iter().any(|&m| m == 0 || finest % m != 0 || m % coarsest != 0) {
        return Err(AnalysisError::Levels("fine grids must be nested".into()));
    }
    let grids: Vec<SchemeGrid> = resolutions.iter().map(|&(n, s)| SchemeGrid::new(horizon, n, s)).collect::<Result<_, _>>()?;
    let schemes: Vec<SplitScheme<'_>> =
        grids.iter().map(|g| SplitScheme::new(kernel, coeffs, x0, *g).map(|s| s.with_barx(false))).collect::<Result<_, _>>()?;
    let fine_noise = NoiseGrid::new(horizon, finest)?;
    type PathOut = Option<Vec<(Vec<f64>, Vec<f64>)>>;
    let outs: Vec<Result<PathOut, SchemeError>> = exec::map_indices(exec, n_paths, |i| {
        let noise = derive_path_noise(master_seed, i as u64, fine_noise, driver);
        let mut out = Vec::with_capacity(grids.len());
        for (m, scheme) in fine.iter().zip(&schemes) {
            let coarse: DriverNoise = noise.coarsen(finest / m)?;
            let run = scheme.run_path(&coarse).and_then(|p| run_markovian_oracle(kernel, coeffs, x0, &coarse).map(|o| (p, o)));
            let (p, o) = match run {
                Ok(v) => v,
                Err(SchemeError::Inner(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let stride = m / coarsest;
            let pick = |v: &[f64]| -> Vec<f64> { (0..=coarsest).map(|e| (v[e * stride] - o.values[e * stride]).abs()).collect() };
            out.push((pick(&p.xi), pick(&p.xhat)));
        }
        Ok(Some(out))
    });
    let mut per_path = Vec::with_capacity(n_paths);
    let mut flagged = 0;
    for o in outs {
        match o? {
            Some(v) => per_path.push(v),
            None => flagged += 1,
        }
    }
    let eval_times: Vec<f64> = (0..=coarsest).map(|e| horizon * e as f64 / coarsest as f64).collect();
    let rows = resolutions
        .iter()
        .enumerate()
        .map(|(k, &(n, s))| {
            let mut a = MomentAccumulator::new(coarsest + 1);
            let mut b = MomentAccumulator::new(coarsest + 1);
            for p in &per_path {
                a.push(p[k].0.iter().copied());
                b.push(p[k].1.iter().copied());
            }
            OracleRow { n, substeps: s, sup_l1_xi: sup_of(&a, &eval_times), sup_l1_xhat: sup_of(&b, &eval_times) }
        })
        .collect();
    Ok(OracleStudy { rows, requested_paths: n_paths, flagged_paths: flagged, per_path, eval_times })
}
