//! Orchestration of one configured run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use bsde_core::basis::{standard_basis_families, uniform_cells, BasisFamily};
use bsde_core::cache;
use bsde_core::driver::{standard_drivers, Driver};
use bsde_core::forward::Ratio;
use bsde_core::linear::{apriori_ratio, mean_at, SolutionDiagnostics};
use bsde_core::picard::{solve_semilinear, PicardTrace, Window};
use bsde_core::registry::Params;
use bsde_core::stats;
use bsde_core::terminal::{standard_terminals, terminal_values, TerminalCondition};
use bsde_core::verification::{
    comparison_check, corrupt_big_y, error_budget, frozen_problem, orthogonal_decomposition_check, random_tests,
    refinement_study, run_tests, time_consistency_check, ComparisonReport, ComparisonSide, ConsistencyReport,
    OrthogonalityReport, RefinementTable, VerificationReport, BIAS_FACTOR,
};
use bsde_core::{
    AdaptedProcess, BsdeError, FiltrationModel, GalerkinBasis, LinearBsdeProblem, PathEnsemble, PathValues, TimeGrid,
    TranspositionSolution,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::csv::render_csv;
use crate::error::CliError;

/// What a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Solve the configured problem.
    Solve,
    /// Solve, then run the duality suite and its companion checks.
    Verify,
    /// Solve the `[problem]` and `[comparison]` problems and compare them.
    Compare,
    /// Compare a whole-horizon solve with a solve restricted to `[split, T]`.
    Consistency,
    /// Refinement study over step counts, path counts and state degrees.
    Sweep,
    /// Simulate the ensemble and write it to the cache file.
    Cache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub id: u64,
    pub paths: usize,
    pub steps: usize,
    pub horizon: f64,
    pub seed: u64,
    pub model: FiltrationModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub terminal: String,
    pub driver: String,
    pub lipschitz_declared: f64,
    pub lipschitz_observed: f64,
    pub windows: Vec<Window>,
    pub picard: Vec<PicardTrace>,
    pub y0_mean: Vec<f64>,
    pub y0_std: Vec<f64>,
    pub y_sup_l2: f64,
    pub big_y_l2_l2: f64,
    /// Largest per-knot martingale defect of `M`.
    pub martingale_residual: f64,
    pub corrected_form_residual: f64,
    pub apriori_ratio: Ratio,
    pub error_budget: f64,
    pub diagnostics: SolutionDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentinelReport {
    /// Shift applied to `Y`.
    pub shift: f64,
    pub failures: usize,
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub duality: VerificationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pseudo: Option<VerificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentinel: Option<SentinelReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orthogonality: Option<OrthogonalityReport>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub lower: SolutionSummary,
    pub report: ComparisonReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSummary {
    pub path: PathBuf,
    pub bytes: u64,
    pub round_trip_exact: bool,
}

/// Everything a run produced. Only `timings` varies between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: Command,
    pub config: RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<SolutionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency: Option<ConsistencyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<RefinementTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub pass: bool,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String, CliError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    /// The report without its timings, for reproducibility comparisons.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: BTreeMap::new(),
            ..self.clone()
        }
    }
}

/// A finished run: the report plus the objects it was computed from.
#[derive(Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub ensemble: Option<PathEnsemble>,
    pub solution: Option<TranspositionSolution>,
}

impl RunOutput {
    /// Per-knot CSV of the main solution, if one was computed.
    pub fn csv(&self) -> Option<String> {
        match (&self.solution, &self.ensemble) {
            (Some(sol), Some(ens)) => Some(render_csv(sol, ens)),
            _ => None,
        }
    }

    /// Write `report.json` and, when there is a solution, `solution.csv`.
    pub fn write(&self, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(out_dir).map_err(|source| io(out_dir, source))?;
        let mut written = Vec::new();
        let report = out_dir.join("report.json");
        std::fs::write(&report, self.report.to_json()?).map_err(|source| io(&report, source))?;
        written.push(report);
        if let Some(csv) = self.csv() {
            let path = out_dir.join("solution.csv");
            std::fs::write(&path, csv).map_err(|source| io(&path, source))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn io(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct Timer(BTreeMap<String, f64>);

impl Timer {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.0.insert(stage.to_string(), start.elapsed().as_secs_f64());
        out
    }
}

/// Ensemble described by the config: loaded from the cache file when it
/// exists and matches, simulated otherwise.
pub fn build_ensemble(config: &RunConfig) -> Result<PathEnsemble, CliError> {
    let grid = TimeGrid::uniform(config.grid.horizon, config.grid.steps).map_err(|e| CliError::core("grid", e))?;
    let model = config.ensemble.filtration()?;
    if let Some(path) = config.ensemble.cache.as_deref().filter(|p| p.exists()) {
        let ens = cache::load(path).map_err(|e| CliError::core("ensemble.cache", e))?;
        let matches = ens.grid() == &grid
            && ens.model() == &model
            && ens.n_paths() == config.ensemble.paths
            && ens.seed() == config.ensemble.seed;
        if !matches {
            return Err(CliError::field(
                "ensemble.cache",
                format!("{} holds a different ensemble than the config describes", path.display()),
            ));
        }
        return Ok(ens);
    }
    let ens = PathEnsemble::simulate(&grid, model, config.ensemble.paths, config.ensemble.seed)?;
    if let Some(path) = &config.ensemble.cache {
        cache::save(&ens, path).map_err(|e| CliError::core("ensemble.cache", e))?;
    }
    Ok(ens)
}

fn summarize_ensemble(ens: &PathEnsemble) -> EnsembleSummary {
    EnsembleSummary {
        id: ens.id().0,
        paths: ens.n_paths(),
        steps: ens.steps(),
        horizon: ens.grid().horizon(),
        seed: ens.seed(),
        model: *ens.model(),
    }
}

fn build_basis(config: &RunConfig, ens: &PathEnsemble) -> Result<GalerkinBasis, CliError> {
    let family: Arc<dyn BasisFamily> = Arc::from(
        standard_basis_families()
            .build(&config.basis.family, &Params::new())
            .map_err(|e| CliError::core("basis.family", e))?,
    );
    GalerkinBasis::tensor(
        ens,
        uniform_cells(ens.steps(), config.basis.cell_size),
        config.basis.state_degree,
        family,
    )
    .map_err(|e| CliError::core("basis", e))
}

/// A driver/terminal pair taken from the registries.
pub struct ProblemParts {
    pub terminal_name: String,
    pub driver_name: String,
    pub terminal: Box<dyn TerminalCondition>,
    pub driver: Box<dyn Driver>,
}

impl ProblemParts {
    pub fn build(
        terminal: &str,
        terminal_params: &Params,
        driver: &str,
        driver_params: &Params,
        field: (&'static str, &'static str),
    ) -> Result<Self, CliError> {
        Ok(Self {
            terminal_name: terminal.to_string(),
            driver_name: driver.to_string(),
            terminal: standard_terminals()
                .build(terminal, terminal_params)
                .map_err(|e| CliError::core(field.0, e))?,
            driver: standard_drivers()
                .build(driver, driver_params)
                .map_err(|e| CliError::core(field.1, e))?,
        })
    }
}

/// A solved problem with the linear problem its solution satisfies.
pub struct Solved {
    pub terminal: PathValues,
    pub solution: TranspositionSolution,
    pub frozen: LinearBsdeProblem,
    pub summary: SolutionSummary,
}

pub fn solve_parts(
    parts: &ProblemParts,
    config: &RunConfig,
    ens: &PathEnsemble,
    basis: &GalerkinBasis,
) -> Result<Solved, BsdeError> {
    let terminal = terminal_values(parts.terminal.as_ref(), ens)?;
    let semi = solve_semilinear(parts.driver.as_ref(), &terminal, ens, basis, &config.linear, &config.picard)?;
    let sol = semi.solution;
    let frozen = frozen_problem(parts.driver.as_ref(), &sol, &terminal, ens)?;
    let y0: Vec<f64> = sol.y.column(0, 0);
    let summary = SolutionSummary {
        terminal: parts.terminal_name.clone(),
        driver: parts.driver_name.clone(),
        lipschitz_declared: parts.driver.lipschitz(),
        lipschitz_observed: semi.lipschitz_observed,
        windows: semi.windows,
        picard: semi.traces,
        y0_mean: mean_at(&sol.y, 0),
        y0_std: vec![stats::std_dev(&y0)],
        y_sup_l2: sol.diagnostics.y_sup_l2,
        big_y_l2_l2: sol.diagnostics.big_y_l2_l2,
        martingale_residual: sol.diagnostics.regression_residual,
        corrected_form_residual: semi.corrected_form_residual,
        apriori_ratio: apriori_ratio(&sol, &frozen, ens),
        error_budget: error_budget(&sol),
        diagnostics: sol.diagnostics.clone(),
    };
    Ok(Solved {
        terminal,
        solution: sol,
        frozen,
        summary,
    })
}

/// Shift applied to `Y` by the verification sentinel.
pub const SENTINEL_SHIFT: f64 = 1.0;

pub fn verify(config: &RunConfig, ens: &PathEnsemble, solved: &Solved) -> Result<VerificationSummary, BsdeError> {
    let v = &config.verification;
    let sol = &solved.solution;
    let tests = random_tests(ens, sol.dim(), &v.tests)?;
    let duality = run_tests(sol, &solved.frozen, ens, &tests, false)?;
    let pseudo = if v.pseudo {
        Some(run_tests(sol, &solved.frozen, ens, &tests, true)?)
    } else {
        None
    };
    let sentinel = if v.sentinel {
        let corrupted = corrupt_big_y(sol, SENTINEL_SHIFT);
        let r = run_tests(&corrupted, &solved.frozen, ens, &tests, false)?;
        Some(SentinelReport {
            shift: SENTINEL_SHIFT,
            failures: r.failures,
            detected: r.failures > 0,
        })
    } else {
        None
    };
    let orthogonality = if v.orthogonality {
        let probe = AdaptedProcess::constant(ens, &vec![1.0; sol.dim()]);
        Some(orthogonal_decomposition_check(sol, ens, &probe)?)
    } else {
        None
    };
    let pass = duality.pass
        && pseudo.as_ref().is_none_or(|r| r.pass)
        && sentinel.as_ref().is_none_or(|s| s.detected)
        && orthogonality.as_ref().is_none_or(|o| o.pass);
    Ok(VerificationSummary {
        duality,
        pseudo,
        sentinel,
        orthogonality,
        pass,
    })
}

/// Default comparison tolerance: the bias factor times both error budgets.
pub fn comparison_tolerance(upper: &TranspositionSolution, lower: &TranspositionSolution) -> f64 {
    BIAS_FACTOR * (error_budget(upper) + error_budget(lower))
}

/// Run `command` on a validated config. Configuration problems are returned
/// as errors; solver failures are recorded in the report with `pass = false`.
pub fn run(config: &RunConfig, command: Command) -> Result<RunOutput, CliError> {
    config.validate()?;
    let mut timer = Timer(BTreeMap::new());
    let mut report = RunReport {
        command,
        config: config.clone(),
        ensemble: None,
        solution: None,
        verification: None,
        comparison: None,
        consistency: None,
        sweep: None,
        cache: None,
        error: None,
        pass: false,
        timings: BTreeMap::new(),
    };
    if command == Command::Compare && config.comparison.is_none() {
        return Err(CliError::field("comparison", "the compare command needs a [comparison] table"));
    }
    if command == Command::Cache && config.ensemble.cache.is_none() {
        return Err(CliError::field("ensemble.cache", "the cache command needs a cache path"));
    }

    if command == Command::Sweep {
        let spec = config.sweep.clone().unwrap_or_default();
        let outcome = timer.time("sweep", || -> Result<RefinementTable, BsdeError> {
            let steps = spec.steps.iter().copied().max().unwrap_or(0).max(spec.sweep_steps);
            let paths = spec.n_paths.iter().copied().max().unwrap_or(0);
            let grid = TimeGrid::uniform(config.grid.horizon, steps)?;
            let model = config.ensemble.filtration().map_err(|e| BsdeError::Config(e.to_string()))?;
            let finest = PathEnsemble::simulate(&grid, model, paths, config.ensemble.seed)?;
            refinement_study(&spec, &finest)
        });
        match outcome {
            Ok(table) => {
                report.pass = table.y_non_increasing_in_steps
                    && table.big_y_non_increasing_in_steps
                    && table.se_scaling_ok;
                report.sweep = Some(table);
            }
            Err(e) => report.error = Some(e.to_string()),
        }
        report.timings = timer.0;
        return Ok(RunOutput {
            report,
            ensemble: None,
            solution: None,
        });
    }

    let ens = timer.time("ensemble", || build_ensemble(config))?;
    report.ensemble = Some(summarize_ensemble(&ens));

    if command == Command::Cache {
        let path = config.ensemble.cache.clone().expect("checked above");
        let reloaded = cache::load(&path).map_err(|e| CliError::core("ensemble.cache", e))?;
        let bytes = std::fs::metadata(&path).map_err(|source| io(&path, source))?.len();
        let exact = reloaded == ens;
        report.cache = Some(CacheSummary {
            path,
            bytes,
            round_trip_exact: exact,
        });
        report.pass = exact;
        report.timings = timer.0;
        return Ok(RunOutput {
            report,
            ensemble: Some(ens),
            solution: None,
        });
    }

    let basis = build_basis(config, &ens)?;
    let p = &config.problem;
    let parts = ProblemParts::build(
        &p.terminal,
        &p.terminal_params,
        &p.driver,
        &p.driver_params,
        ("problem.terminal", "problem.driver"),
    )?;
    let solved = match timer.time("solve", || solve_parts(&parts, config, &ens, &basis)) {
        Ok(s) => s,
        Err(e) => {
            report.error = Some(e.to_string());
            report.timings = timer.0;
            return Ok(RunOutput {
                report,
                ensemble: Some(ens),
                solution: None,
            });
        }
    };
    report.solution = Some(solved.summary.clone());

    let stage: Result<bool, BsdeError> = match command {
        Command::Solve => Ok(true),
        Command::Verify => timer.time("verify", || verify(config, &ens, &solved)).map(|v| {
            let pass = v.pass;
            report.verification = Some(v);
            pass
        }),
        Command::Compare => {
            let c = config.comparison.as_ref().expect("checked above");
            let lower_parts = ProblemParts::build(
                &c.terminal,
                &c.terminal_params,
                &c.driver,
                &c.driver_params,
                ("comparison.terminal", "comparison.driver"),
            )?;
            timer.time("compare", || -> Result<bool, BsdeError> {
                let lower = solve_parts(&lower_parts, config, &ens, &basis)?;
                let tol = c
                    .tolerance
                    .unwrap_or_else(|| comparison_tolerance(&solved.solution, &lower.solution));
                let r = comparison_check(
                    &ens,
                    ComparisonSide {
                        driver: parts.driver.as_ref(),
                        terminal: &solved.terminal,
                        solution: &solved.solution,
                    },
                    ComparisonSide {
                        driver: lower_parts.driver.as_ref(),
                        terminal: &lower.terminal,
                        solution: &lower.solution,
                    },
                    tol,
                )?;
                let pass = r.pass && r.equality_consistent;
                report.comparison = Some(ComparisonSummary {
                    lower: lower.summary,
                    report: r,
                });
                Ok(pass)
            })
        }
        Command::Consistency => {
            let split = config
                .consistency
                .as_ref()
                .and_then(|c| c.split)
                .unwrap_or(ens.steps() / 2);
            timer
                .time("consistency", || {
                    time_consistency_check(&solved.frozen, &ens, &basis, &config.linear, split)
                })
                .map(|r| {
                    let pass = r.pass;
                    report.consistency = Some(r);
                    pass
                })
        }
        Command::Sweep | Command::Cache => unreachable!("handled above"),
    };
    match stage {
        Ok(pass) => report.pass = pass,
        Err(e) => report.error = Some(e.to_string()),
    }
    report.timings = timer.0;
    Ok(RunOutput {
        report,
        ensemble: Some(ens),
        solution: Some(solved.solution),
    })
}

/// Load `path`, apply an optional seed override, run and write the outputs to `out_dir`.
pub fn run_config(
    path: &Path,
    command: Command,
    seed_override: Option<u64>,
    out_dir: Option<&Path>,
) -> Result<RunOutput, CliError> {
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = seed_override {
        config.ensemble.seed = seed;
    }
    let output = run(&config, command)?;
    if let Some(dir) = out_dir {
        output.write(dir)?;
    }
    Ok(output)
}
