use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use sve_core::analysis::convergence::{convergence_study, ConvergenceTable, StudyConfig};
use sve_core::analysis::yw::{build_yw, verify_yw_inequalities, verify_yw_lemmas, LemmaDomain, LemmaReport, YwReport};
use sve_core::analysis::AnalysisError;
use sve_core::kernels::{
    check_complete_monotonicity, modulus_bound, search_nonneg_counterexample, CmReport, Kernel, NonNegCertificate,
};
use sve_core::levy::{derive_path_noise, stable_laplace_test, StableLaplaceTest};
use sve_core::riccati::{laplace_exponent, mc_laplace_streaming, solve_psi, RiccatiDiagnostics, RiccatiError, RiccatiProblem};
use sve_core::scheme::{FlaggedPath, RunOptions, SchemeSummary};
use sve_core::{run_split_scheme, Execution, SchemeGrid, VERSION};

use crate::config::RunConfig;
use crate::CliError;

/// Tolerance on `min X_hat` and the admissible flagged-path rate.
const POSITIVITY_TOL: f64 = 1e-12;
const MAX_FLAG_RATE: f64 = 1e-3;

pub struct Outcome {
    pub passed: bool,
    pub message: String,
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    version: &'static str,
    command: &'static str,
    seed: u64,
    passed: bool,
    config: &'a RunConfig,
    #[serde(flatten)]
    report: T,
}

fn write_json<T: Serialize>(out: &Path, file: &str, command: &'static str, cfg: &RunConfig, passed: bool, report: T) -> Result<(), CliError> {
    let env = Envelope { version: VERSION, command, seed: cfg.seed, passed, config: cfg, report };
    let mut w = BufWriter::new(File::create(out.join(file))?);
    serde_json::to_writer_pretty(&mut w, &env).map_err(|e| CliError::Run(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

/// CSV with a leading `#` line echoing version, seed and config.
fn csv_writer(out: &Path, file: &str, cfg: &RunConfig) -> Result<BufWriter<File>, CliError> {
    let mut w = BufWriter::new(File::create(out.join(file))?);
    let echo = serde_json::to_string(cfg).map_err(|e| CliError::Run(e.to_string()))?;
    writeln!(w, "# svelab {VERSION} seed={} config={echo}", cfg.seed)?;
    Ok(w)
}

pub fn prepare_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    Ok(())
}

#[derive(Serialize)]
struct KernelCheckReport {
    horizon: f64,
    kernel_at_zero: f64,
    modulus_bound_tenth: f64,
    complete_monotonicity: CmReport,
    nonneg_counterexample: Option<NonNegCertificate>,
}

pub fn kernel_check(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let kernel = cfg.kernel.build().map_err(config_err)?;
    let o = &cfg.kernel_check;
    let horizon = o.horizon.or(cfg.grid.as_ref().map(|g| g.horizon)).unwrap_or(1.0);
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(CliError::Config(format!("kernel check horizon {horizon} must be positive")));
    }
    let cm = check_complete_monotonicity(kernel.as_ref(), horizon, o.max_order, o.grid_size);
    let cert = search_nonneg_counterexample(kernel.as_ref(), o.points, horizon, o.trials, cfg.seed);
    let passed = cm.passed && cert.is_none();
    let mut message = format!("complete monotonicity: {}; non-negativity search: ", if cm.passed { "pass" } else { "FAIL" });
    message += match &cert {
        None => "no counterexample".to_string(),
        Some(c) => format!("counterexample, value {:.3e} at t = {}", c.violation_value, c.violation_time),
    }
    .as_str();
    if let Some(v) = cm.first_violation() {
        message += &format!("; first violation at order {} t = {} (value {:.3e})", v.order, v.time, v.value);
    }
    let report = KernelCheckReport {
        horizon,
        kernel_at_zero: kernel.at_zero(),
        modulus_bound_tenth: modulus_bound(kernel.as_ref(), horizon, horizon / 10.0).map_err(config_err)?,
        complete_monotonicity: cm,
        nonneg_counterexample: cert,
    };
    write_json(out, "kernel_check.json", "kernel-check", cfg, passed, report)?;
    Ok(Outcome { passed, message })
}

#[derive(Serialize)]
struct SimulateReport {
    summary: SchemeSummary,
    flagged: Vec<FlaggedPath>,
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let kernel = cfg.kernel.build_expsum().map_err(config_err)?;
    let model = cfg.model()?;
    let coeffs = model.build().map_err(config_err)?;
    let driver = cfg.driver.build(model.params().alpha).map_err(config_err)?;
    let g = cfg.grid()?;
    let grid = SchemeGrid::new(g.horizon, cfg.steps()?, g.n_sub).map_err(config_err)?;
    let options = RunOptions { exec: Execution::Parallel, store_barx: cfg.simulate.store_barx };
    let paths = run_split_scheme(&kernel, &coeffs, cfg.x0, grid, &driver, cfg.paths, cfg.seed, options).map_err(config_err)?;

    let mut w = csv_writer(out, "paths.csv", cfg)?;
    paths.write_csv(&mut w)?;
    w.flush()?;
    if cfg.simulate.noise_csv {
        let mut w = csv_writer(out, "noise.csv", cfg)?;
        writeln!(w, "path,substep,dB,dL")?;
        for i in 0..cfg.paths as u64 {
            for row in derive_path_noise(cfg.seed, i, grid.noise_grid(), &driver).csv_rows() {
                writeln!(w, "{row}")?;
            }
        }
        w.flush()?;
    }

    let summary = paths.summary();
    let passed = summary.min_xhat >= -POSITIVITY_TOL && summary.flag_rate < MAX_FLAG_RATE;
    let message = format!(
        "{} paths, min X_hat = {:.3e}, flagged = {}, sup_t mean(xi) = {:.5}",
        summary.completed_paths, summary.min_xhat, summary.flagged_paths, summary.sup_mean_xi.value
    );
    write_json(out, "summary.json", "simulate", cfg, passed, SimulateReport { summary, flagged: paths.flagged })?;
    Ok(Outcome { passed, message })
}

#[derive(Serialize)]
struct YwSection {
    delta: f64,
    eps: f64,
    c: f64,
    inequalities: YwReport,
    lemmas: LemmaReport,
}

#[derive(Serialize)]
struct ConvergeReport {
    table: ConvergenceTable,
    yw: Option<YwSection>,
}

pub fn converge(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let kernel = cfg.kernel.build_expsum().map_err(config_err)?;
    let model = cfg.model()?;
    let coeffs = model.build().map_err(config_err)?;
    let driver = cfg.driver.build(model.params().alpha).map_err(config_err)?;
    let g = cfg.grid()?;
    let study = StudyConfig {
        kernel: &kernel,
        coeffs: &coeffs,
        x0: cfg.x0,
        horizon: g.horizon,
        substeps: g.n_sub,
        driver,
        exec: Execution::Parallel,
    };
    let table = convergence_study(&study, &cfg.levels()?, cfg.paths, cfg.seed).map_err(|e| match e {
        AnalysisError::Scheme(_) | AnalysisError::Driver(_) | AnalysisError::Levels(_) => config_err(e),
        AnalysisError::Mismatch(m) => CliError::Run(m),
    })?;

    let yw = if cfg.yw.enabled {
        let y = &cfg.yw;
        let f = build_yw(y.delta, y.eps).map_err(config_err)?;
        let c = y.c.unwrap_or(kernel.at_zero());
        Some(YwSection {
            delta: y.delta,
            eps: y.eps,
            c,
            inequalities: verify_yw_inequalities(&f, y.samples, cfg.seed),
            lemmas: verify_yw_lemmas(&f, &coeffs, c, y.samples, cfg.seed, LemmaDomain::default()),
        })
    } else {
        None
    };

    let mut w = csv_writer(out, "convergence.csv", cfg)?;
    w.write_all(table.to_csv().as_bytes())?;
    w.flush()?;

    let yw_ok = yw.as_ref().is_none_or(|s| s.inequalities.passed() && s.lemmas.passed());
    let passed = table.passed() && yw_ok;
    let mut message = format!(
        "{} levels, Cauchy non-increasing: {}, flag rate {:.2e}, moment variation {:.4}",
        table.rows.len(),
        table.cauchy_non_increasing(),
        table.flag_rate,
        table.moment_variation
    );
    if let Some(s) = &yw {
        message += &format!(", YW violations {}", s.inequalities.violations() + s.lemmas.violations());
    }
    write_json(out, "convergence.json", "converge", cfg, passed, ConvergeReport { table, yw })?;
    Ok(Outcome { passed, message })
}

#[derive(Serialize)]
struct PsiGrid {
    times: Vec<f64>,
    psi: Vec<f64>,
}

#[derive(Serialize)]
#[allow(non_snake_case)]
struct LaplaceReport {
    u: f64,
    psi_grid: PsiGrid,
    Y0: f64,
    transform: f64,
    diagnostics: RiccatiDiagnostics,
    mc_estimate: Option<f64>,
    mc_se: Option<f64>,
    z_score: Option<f64>,
    mc_paths: Option<usize>,
    mc_flagged: Option<usize>,
}

pub fn laplace(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let kernel = cfg.kernel.build_expsum().map_err(config_err)?;
    let model = cfg.model()?;
    let g = cfg.grid()?;
    let o = &cfg.laplace;
    let forcing = o.forcing();
    let problem = RiccatiProblem {
        u: o.u,
        forcing: forcing.clone(),
        params: model.params(),
        x0: cfg.x0,
        kernel: &kernel,
        horizon: g.horizon,
        step: o.psi_step,
    };
    let solution = solve_psi(&problem).map_err(|e| match e {
        RiccatiError::Invalid(_) => config_err(e),
        _ => CliError::Run(e.to_string()),
    })?;
    let y0 = laplace_exponent(&problem, &solution);
    let transform = y0.exp();

    let mut report = LaplaceReport {
        u: o.u,
        psi_grid: PsiGrid { times: solution.times.clone(), psi: solution.psi.clone() },
        Y0: y0,
        transform,
        diagnostics: solution.diagnostics.clone(),
        mc_estimate: None,
        mc_se: None,
        z_score: None,
        mc_paths: None,
        mc_flagged: None,
    };
    let mut passed = true;
    let mut message = format!("exp(Y0) = {transform:.6}");
    if o.mc {
        let coeffs = model.build().map_err(config_err)?;
        let driver = cfg.driver.build(model.params().alpha).map_err(config_err)?;
        let grid = SchemeGrid::new(g.horizon, cfg.steps()?, g.n_sub).map_err(config_err)?;
        let r = mc_laplace_streaming(&kernel, &coeffs, cfg.x0, grid, &driver, cfg.paths, cfg.seed, o.u, &forcing, Execution::Parallel)
            .map_err(config_err)?;
        let diff = r.estimate.mean - transform;
        let z = if r.estimate.se > 0.0 { diff / r.estimate.se } else if diff.abs() <= 1e-12 { 0.0 } else { f64::INFINITY };
        passed = z.abs() <= o.z_max && (r.flagged as f64) < MAX_FLAG_RATE * r.requested as f64;
        message += &format!(", mc = {:.6} ± {:.6}, z = {z:.2}", r.estimate.mean, r.estimate.se);
        report.mc_estimate = Some(r.estimate.mean);
        report.mc_se = Some(r.estimate.se);
        report.z_score = Some(z);
        report.mc_paths = Some(r.requested);
        report.mc_flagged = Some(r.flagged);
    }
    write_json(out, "laplace.json", "laplace", cfg, passed, report)?;
    Ok(Outcome { passed, message })
}

pub fn stable_test(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let o = &cfg.stable_test;
    let alpha = o.alpha.or(cfg.model.as_ref().map(|m| m.params().alpha)).unwrap_or(1.5);
    if !(o.u <= 0.0 && o.t > 0.0 && o.draws > 0) {
        return Err(CliError::Config("stable_test needs u <= 0, t > 0 and draws > 0".into()));
    }
    let r: StableLaplaceTest = stable_laplace_test(alpha, o.u, o.t, o.draws, cfg.seed, Execution::Parallel).map_err(config_err)?;
    let passed = r.passed(o.z_max);
    let message = format!("E[exp(u L_t)] = {:.5} ± {:.5}, target {:.5}, z = {:.2}", r.mean, r.se, r.target, r.z_score);
    write_json(out, "stable_test.json", "stable-test", cfg, passed, r)?;
    Ok(Outcome { passed, message })
}
