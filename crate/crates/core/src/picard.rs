//! Semilinear equation `dy = f(t, y, Y) dt + Y dw` by Picard iteration on
//! short windows, stitched backward from `T`.
//!
//! On a window of length `Δ` the frozen-coefficient map contracts once
//! `C·K·(Δ + √Δ) < 1`. The constant `C` is not available, so windows are
//! planned with `C = 1` and a target factor `θ`, and a window that shows an
//! empirical ratio `≥ 1` is bisected.

use serde::{Deserialize, Serialize};

use crate::basis::GalerkinBasis;
use crate::condexp::condexp_process_window;
use crate::driver::{audit_lipschitz, driver_process, Driver};
use crate::ensemble::PathEnsemble;
use crate::error::{BsdeError, Result};
use crate::grid::TimeGrid;
use crate::linear::{martingale_part, solve_linear_window, LinearSpec, SolutionDiagnostics, TranspositionSolution};
use crate::process::{l2_l2_norm_window, sup_l2_norm_window, AdaptedProcess, PathValues};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardConfig {
    /// Stop once `‖y_{k+1} − y_k‖_{sup-L²} + ‖Y_{k+1} − Y_k‖_{L²L²}` drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Target contraction factor used to size windows.
    pub theta: f64,
    /// Use this many equal windows instead of the planned ones.
    pub window_count: Option<usize>,
    pub max_bisections: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 100,
            theta: 0.5,
            window_count: None,
            max_bisections: 8,
        }
    }
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(BsdeError::Config(format!("Picard tolerance must be positive, got {}", self.tolerance)));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(BsdeError::Config(format!("theta must lie in (0, 1), got {}", self.theta)));
        }
        if self.max_iterations == 0 {
            return Err(BsdeError::Config("max_iterations must be positive".into()));
        }
        if self.window_count == Some(0) {
            return Err(BsdeError::Config("window_count must be positive".into()));
        }
        Ok(())
    }
}

/// Largest `Δ` with `K(Δ + √Δ) ≤ θ`; infinite when `K = 0`.
pub fn window_length(lipschitz: f64, theta: f64) -> f64 {
    if lipschitz <= 0.0 {
        return f64::INFINITY;
    }
    // √Δ is the positive root of x² + x − θ/K.
    let x = 0.5 * (-1.0 + (1.0 + 4.0 * theta / lipschitz).sqrt());
    x * x
}

/// Time windows `[a, b]` covering `[0, T]` in chronological order. Windows are
/// laid backward from `T`, so the first one may be shorter.
pub fn plan_windows(horizon: f64, lipschitz: f64, theta: f64) -> Result<Vec<(f64, f64)>> {
    if !(lipschitz >= 0.0) || !(theta > 0.0 && theta < 1.0) || !(horizon > 0.0) {
        return Err(BsdeError::Config(format!(
            "cannot plan windows for T={horizon}, K={lipschitz}, theta={theta}"
        )));
    }
    let delta = window_length(lipschitz, theta);
    if delta >= horizon {
        return Ok(vec![(0.0, horizon)]);
    }
    let full = (horizon / delta).floor() as usize;
    let mut bounds: Vec<f64> = (0..=full).map(|k| horizon - k as f64 * delta).collect();
    let last = *bounds.last().unwrap();
    if last > 1e-12 * horizon {
        bounds.push(0.0);
    } else {
        *bounds.last_mut().unwrap() = 0.0;
    }
    bounds.reverse();
    Ok(bounds.windows(2).map(|w| (w[0], w[1])).collect())
}

/// A window in knot indices, `start < end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

/// Snap time windows to knots; every window keeps at least one step.
pub fn windows_on_grid(grid: &TimeGrid, windows: &[(f64, f64)]) -> Vec<Window> {
    let mut cuts: Vec<usize> = windows.iter().map(|w| grid.knot_at_or_after(w.0)).collect();
    cuts.push(grid.steps());
    cuts[0] = 0;
    cuts.dedup();
    cuts.windows(2)
        .map(|w| Window { start: w[0], end: w[1] })
        .collect()
}

fn equal_windows(steps: usize, count: usize) -> Vec<Window> {
    let count = count.min(steps).max(1);
    let mut cuts: Vec<usize> = (0..=count).map(|k| k * steps / count).collect();
    cuts.dedup();
    cuts.windows(2).map(|w| Window { start: w[0], end: w[1] }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub distance: f64,
    /// `distance_k / distance_{k−1}`, from the second iteration on.
    pub ratio: Option<f64>,
}

/// Iteration history of one attempted window.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PicardTrace {
    pub start: usize,
    pub end: usize,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    /// The window was abandoned and split in two.
    pub bisected: bool,
    pub bisection_depth: usize,
}

impl PicardTrace {
    /// Largest empirical contraction ratio seen.
    pub fn max_ratio(&self) -> Option<f64> {
        self.iterations.iter().filter_map(|r| r.ratio).reduce(f64::max)
    }

    pub fn accepted(&self) -> bool {
        self.converged && !self.bisected
    }
}

struct Attempt {
    solution: Option<TranspositionSolution>,
    trace: PicardTrace,
}

#[allow(clippy::too_many_arguments)]
fn iterate(
    driver: &dyn Driver,
    terminal: &PathValues,
    window: Window,
    ens: &PathEnsemble,
    basis: &GalerkinBasis,
    spec: &LinearSpec,
    config: &PicardConfig,
    depth: usize,
) -> Result<Attempt> {
    let Window { start, end } = window;
    let local = basis.restrict(start, end)?;
    let mut trace = PicardTrace {
        start,
        end,
        bisection_depth: depth,
        ..PicardTrace::default()
    };
    let dim = terminal.dim();
    let zero = AdaptedProcess::zeros(ens, dim);

    if driver.is_state_free() {
        let f = driver_process(driver, ens, &zero, &zero, start, end)?;
        let sol = solve_linear_window(ens, &f, terminal, start, end, &local, spec)?;
        trace.iterations.push(IterationRecord {
            iteration: 1,
            distance: 0.0,
            ratio: None,
        });
        trace.converged = true;
        return Ok(Attempt {
            solution: Some(sol),
            trace,
        });
    }

    let (mut p, _) = condexp_process_window(terminal, start, end, ens, &spec.regression)?;
    let mut big_p = zero;
    let mut previous: Option<f64> = None;
    for k in 1..=config.max_iterations {
        let f = driver_process(driver, ens, &p, &big_p, start, end)?;
        let sol = solve_linear_window(ens, &f, terminal, start, end, &local, spec)?;
        let distance = sup_l2_norm_window(&sol.y.sub(&p)?, start, end)
            + l2_l2_norm_window(ens, &sol.big_y.sub(&big_p)?, start, end);
        let ratio = previous.map(|d| if d > 0.0 { distance / d } else { 0.0 });
        trace.iterations.push(IterationRecord {
            iteration: k,
            distance,
            ratio,
        });
        if distance < config.tolerance {
            trace.converged = true;
            return Ok(Attempt {
                solution: Some(sol),
                trace,
            });
        }
        if ratio.is_some_and(|r| r >= 1.0) {
            return Ok(Attempt { solution: None, trace });
        }
        previous = Some(distance);
        p = sol.y;
        big_p = sol.big_y;
    }
    Err(BsdeError::Picard {
        start,
        end,
        reason: format!("no convergence within {} iterations", config.max_iterations),
        trace: Box::new(trace),
    })
}

fn merge_diagnostics(earlier: &SolutionDiagnostics, later: &SolutionDiagnostics) -> SolutionDiagnostics {
    let mut galerkin = earlier.galerkin.clone();
    let g2 = &later.galerkin;
    galerkin.elements += g2.elements;
    galerkin.active_elements += g2.active_elements;
    galerkin.condition = galerkin.condition.max(g2.condition);
    galerkin.ridge = galerkin.ridge.max(g2.ridge);
    galerkin.solve_residual = galerkin.solve_residual.max(g2.solve_residual);
    galerkin.warnings.extend(g2.warnings.iter().cloned());
    let mut regression = earlier.regression.clone();
    regression.extend(later.regression.iter().cloned());
    let mut defects = earlier.martingale_defects.clone();
    defects.extend(later.martingale_defects.iter().copied());
    SolutionDiagnostics {
        galerkin,
        regression,
        regression_residual: earlier.regression_residual.max(later.regression_residual),
        martingale_defects: defects,
        y_sup_l2: earlier.y_sup_l2.max(later.y_sup_l2),
        big_y_l2_l2: (earlier.big_y_l2_l2.powi(2) + later.big_y_l2_l2.powi(2)).sqrt(),
    }
}

/// Join solutions on `[a, b]` and `[b, c]`; `y(b)` comes from the later one.
fn stitch(ens: &PathEnsemble, earlier: TranspositionSolution, later: TranspositionSolution) -> Result<TranspositionSolution> {
    debug_assert_eq!(earlier.end, later.start);
    let dim = earlier.dim();
    let (a, b, c) = (earlier.start, earlier.end, later.end);
    let pick = |e: &AdaptedProcess, l: &AdaptedProcess, upto_earlier: usize| -> AdaptedProcess {
        let mut out = l.clone();
        for (i, row) in out.paths_mut().enumerate() {
            for j in a..upto_earlier {
                row[j * dim..(j + 1) * dim].copy_from_slice(e.value(i, j));
            }
        }
        out
    };
    let y = pick(&earlier.y, &later.y, b);
    let big_y = pick(&earlier.big_y, &later.big_y, b);
    let f = pick(&earlier.f, &later.f, b);
    let m = martingale_part(ens, &y, &f, a, c)?;
    Ok(TranspositionSolution {
        start: a,
        end: c,
        y,
        big_y,
        m,
        f,
        diagnostics: merge_diagnostics(&earlier.diagnostics, &later.diagnostics),
    })
}

/// Solve one window by Picard iteration, bisecting when the iteration fails to contract.
/// Returns the window solution and every attempted trace (bisected ones included).
#[allow(clippy::too_many_arguments)]
pub fn picard_window(
    driver: &dyn Driver,
    terminal: &PathValues,
    window: Window,
    ens: &PathEnsemble,
    basis: &GalerkinBasis,
    spec: &LinearSpec,
    config: &PicardConfig,
) -> Result<(TranspositionSolution, Vec<PicardTrace>)> {
    config.validate()?;
    let mut traces = Vec::new();
    let sol = solve_recursive(driver, terminal, window, ens, basis, spec, config, 0, &mut traces)?;
    Ok((sol, traces))
}

#[allow(clippy::too_many_arguments)]
fn solve_recursive(
    driver: &dyn Driver,
    terminal: &PathValues,
    window: Window,
    ens: &PathEnsemble,
    basis: &GalerkinBasis,
    spec: &LinearSpec,
    config: &PicardConfig,
    depth: usize,
    traces: &mut Vec<PicardTrace>,
) -> Result<TranspositionSolution> {
    let attempt = iterate(driver, terminal, window, ens, basis, spec, config, depth)?;
    if let Some(sol) = attempt.solution {
        traces.push(attempt.trace);
        return Ok(sol);
    }
    let mut trace = attempt.trace;
    if depth >= config.max_bisections || window.end - window.start < 2 {
        return Err(BsdeError::Picard {
            start: window.start,
            end: window.end,
            reason: "iteration does not contract and the window cannot be split further".into(),
            trace: Box::new(trace),
        });
    }
    trace.bisected = true;
    traces.push(trace);
    let mid = (window.start + window.end) / 2;
    let later = solve_recursive(
        driver,
        terminal,
        Window { start: mid, end: window.end },
        ens,
        basis,
        spec,
        config,
        depth + 1,
        traces,
    )?;
    let handoff = later.y.slice(mid);
    let earlier = solve_recursive(
        driver,
        &handoff,
        Window { start: window.start, end: mid },
        ens,
        basis,
        spec,
        config,
        depth + 1,
        traces,
    )?;
    stitch(ens, earlier, later)
}

/// Semilinear solution with its window history.
#[derive(Debug, Clone)]
pub struct SemilinearSolution {
    pub solution: TranspositionSolution,
    pub windows: Vec<Window>,
    pub traces: Vec<PicardTrace>,
    pub lipschitz_observed: f64,
    /// Largest deviation from `y_j = y_T − Σ_{j'≥j} f Δt + M_j − M_T`.
    pub corrected_form_residual: f64,
}

/// Seed of the random argument pairs used for the Lipschitz audit.
pub const AUDIT_SEED: u64 = 0x5eed_a0d1;

/// Solve `dy = f(t, y, Y) dt + Y dw`, `y(T) = y_T` on the whole horizon.
pub fn solve_semilinear(
    driver: &dyn Driver,
    terminal: &PathValues,
    ens: &PathEnsemble,
    basis: &GalerkinBasis,
    spec: &LinearSpec,
    config: &PicardConfig,
) -> Result<SemilinearSolution> {
    config.validate()?;
    if terminal.ensemble() != ens.id() {
        return Err(BsdeError::EnsembleMismatch);
    }
    let lipschitz_observed = audit_lipschitz(driver, ens, terminal.dim(), AUDIT_SEED)?;
    let grid = ens.grid();
    let windows = match config.window_count {
        Some(n) => equal_windows(grid.steps(), n),
        None => windows_on_grid(grid, &plan_windows(grid.horizon(), driver.lipschitz(), config.theta)?),
    };
    let mut traces = Vec::new();
    let mut handoff = terminal.at_later_knot(grid.steps())?;
    let mut stitched: Option<TranspositionSolution> = None;
    for w in windows.iter().rev() {
        let (sol, t) = picard_window(driver, &handoff, *w, ens, basis, spec, config)?;
        traces.extend(t);
        handoff = sol.y.slice(w.start);
        stitched = Some(match stitched {
            None => sol,
            Some(later) => stitch(ens, sol, later)?,
        });
    }
    let mut solution = stitched.expect("at least one window");
    // Driver along the converged solution, then M from it.
    let f = driver_process(driver, ens, &solution.y, &solution.big_y, 0, grid.steps())?;
    solution.m = martingale_part(ens, &solution.y, &f, 0, grid.steps())?;
    solution.f = f;
    let corrected_form_residual = solution.corrected_form_residual(ens);
    Ok(SemilinearSolution {
        solution,
        windows,
        traces,
        lipschitz_observed,
        corrected_form_residual,
    })
}
