//! Linear equation `dy = f dt + Y dw`, `y(T) = y_T`, with a given adapted `f`.
//!
//! `y` comes from regression of `y_T − ∫_t^T f ds` on the knot-`t` state; `Y`
//! is the Galerkin projection defined by the duality against `z = ∫ v dw`,
//! `v ∈ H_m`; `M = y − ∫_0^· f ds` is the martingale part.

use serde::{Deserialize, Serialize};

use crate::basis::{assemble_gram, assemble_rhs, assemble_rhs_one_step, solve_coefficients, GalerkinBasis, GalerkinDiagnostics, GramRidge};
use crate::condexp::{RegressionSpec, SliceDiagnostics, SliceRegression};
use crate::ensemble::PathEnsemble;
use crate::error::{BsdeError, Result};
use crate::forward::Ratio;
use crate::process::{l2_l1_norm_window, l2_l2_norm_window, sup_l2_norm_window, AdaptedProcess, PathValues};
use crate::stats;

/// `f` (non-homogeneous term) and `y_T`.
#[derive(Debug, Clone)]
pub struct LinearBsdeProblem {
    pub f: AdaptedProcess,
    pub terminal: PathValues,
}

impl LinearBsdeProblem {
    pub fn new(f: AdaptedProcess, terminal: PathValues) -> Self {
        Self { f, terminal }
    }

    /// Pure terminal-value problem, `f = 0`.
    pub fn terminal_only(ens: &PathEnsemble, terminal: PathValues) -> Self {
        let f = AdaptedProcess::zeros(ens, terminal.dim());
        Self { f, terminal }
    }

    pub fn dim(&self) -> usize {
        self.terminal.dim()
    }

    pub fn validate(&self, ens: &PathEnsemble) -> Result<()> {
        self.f.check_on(ens)?;
        if self.terminal.ensemble() != ens.id() {
            return Err(BsdeError::EnsembleMismatch);
        }
        if self.f.dim() != self.terminal.dim() {
            return Err(BsdeError::Dimension(format!(
                "f has dimension {}, y_T {}",
                self.f.dim(),
                self.terminal.dim()
            )));
        }
        if self.terminal.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(BsdeError::Config("terminal condition has non-finite values".into()));
        }
        Ok(())
    }

    /// Sum of two problems on the same ensemble.
    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            f: self.f.add(&other.f)?,
            terminal: self.terminal.zip_with(&other.terminal, |a, b| a + b)?,
        })
    }
}

/// Numerical settings shared by every linear solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearSpec {
    pub regression: RegressionSpec,
    pub gram_ridge: GramRidge,
    /// Re-run the `y` regression with `Σ Y Δw` subtracted from the target.
    pub martingale_control: bool,
    pub galerkin_target: GalerkinTarget,
}

/// What the Galerkin right-hand side pairs with `e_k(j) Δw_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GalerkinTarget {
    /// `y_end − Σ_{j' > j} f Δt − y_j − f_j Δt`: exact in expectation, but
    /// carries every later Brownian increment as noise.
    Terminal,
    /// `y_{j+1} − y_j − f_j Δt` from the regression estimate of `y`.
    #[default]
    NextKnot,
}

impl Default for LinearSpec {
    fn default() -> Self {
        Self {
            regression: RegressionSpec::default(),
            gram_ridge: GramRidge::default(),
            martingale_control: true,
            galerkin_target: GalerkinTarget::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDiagnostics {
    pub galerkin: GalerkinDiagnostics,
    pub regression: Vec<SliceDiagnostics>,
    /// Per-knot `‖E(M_{j+1} − M_j | F_j)‖`, measured with the knot-`j` design.
    pub martingale_defects: Vec<f64>,
    /// Largest martingale defect.
    pub regression_residual: f64,
    pub y_sup_l2: f64,
    pub big_y_l2_l2: f64,
}

/// Transposition solution `(y, Y)` on knots `[start, end]`, with the
/// martingale `M` and the driver values `f` it was solved against.
#[derive(Debug, Clone)]
pub struct TranspositionSolution {
    pub start: usize,
    pub end: usize,
    pub y: AdaptedProcess,
    pub big_y: AdaptedProcess,
    pub m: AdaptedProcess,
    pub f: AdaptedProcess,
    pub diagnostics: SolutionDiagnostics,
}

impl TranspositionSolution {
    pub fn dim(&self) -> usize {
        self.y.dim()
    }

    /// Largest absolute deviation from the corrected-form identity
    /// `y_j = y_T − Σ_{j' ≥ j} f Δt + M_j − M_T`.
    pub fn corrected_form_residual(&self, ens: &PathEnsemble) -> f64 {
        let grid = ens.grid();
        let dim = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..self.y.n_paths() {
            for c in 0..dim {
                let y_end = self.y.at(i, self.end, c);
                let m_end = self.m.at(i, self.end, c);
                let mut tail = 0.0;
                for j in (self.start..=self.end).rev() {
                    if j < self.end {
                        tail += self.f.at(i, j, c) * grid.dt(j);
                    }
                    let rebuilt = y_end - tail + self.m.at(i, j, c) - m_end;
                    worst = worst.max((rebuilt - self.y.at(i, j, c)).abs());
                }
            }
        }
        worst
    }
}

/// `M_j = y_j − Σ_{start ≤ j' < j} f_{j'} Δt_{j'}` on `[start, end]`.
pub fn martingale_part(ens: &PathEnsemble, y: &AdaptedProcess, f: &AdaptedProcess, start: usize, end: usize) -> Result<AdaptedProcess> {
    y.check_compatible(f)?;
    let dim = y.dim();
    let grid = ens.grid();
    let mut m = AdaptedProcess::zeros(ens, dim);
    for (i, row) in m.paths_mut().enumerate() {
        let mut acc = vec![0.0; dim];
        for j in start..=end {
            for c in 0..dim {
                row[j * dim + c] = y.at(i, j, c) - acc[c];
            }
            if j < end {
                for c in 0..dim {
                    acc[c] += f.at(i, j, c) * grid.dt(j);
                }
            }
        }
    }
    Ok(m)
}

/// `y_j = E(y_end − Σ_{j ≤ j' < end} f Δt | F_j)` on `[start, end]`, plus the
/// per-knot martingale defects of the resulting `M`.
///
/// With `control = Y` the regressed target is `y_end − Σ (f Δt + Y Δw)`. Each
/// `Y_{j'} Δw_{j'}` with `j' ≥ j` has zero conditional mean given `F_j`, so
/// the regression function is unchanged while the representable part of the
/// noise is removed.
fn regress_y(
    ens: &PathEnsemble,
    f: &AdaptedProcess,
    terminal: &PathValues,
    control: Option<&AdaptedProcess>,
    start: usize,
    end: usize,
    spec: &RegressionSpec,
) -> Result<(AdaptedProcess, Vec<SliceDiagnostics>, Vec<f64>)> {
    let dim = terminal.dim();
    let grid = ens.grid();
    let terminal = terminal.at_later_knot(end.max(terminal.knot()))?;
    let mut y = AdaptedProcess::zeros(ens, dim);
    y.set_slice(end, &terminal);
    let mut target = terminal.clone();
    let mut diags = Vec::with_capacity(end - start);
    let mut defects = vec![0.0; end - start];
    for j in (start..end).rev() {
        let dt = grid.dt(j);
        let step = f.slice(j);
        // y_{j+1} − f_j Δt: its regression minus y_j is the martingale defect at j.
        let next = y.slice(j + 1).zip_with(&step, |a, b| a - b * dt)?;
        target = target.zip_with(&step, |a, b| a - b * dt)?;
        if let Some(z) = control {
            target = target.zip_with(&stochastic_step(ens, z, j), |a, b| a - b)?;
        }
        let reg = SliceRegression::new(ens, j, spec)?;
        let fit = reg.fit(&target)?;
        let drift = reg.fit(&next)?;
        let defect = drift.fitted.zip_with(&fit.fitted, |a, b| a - b)?;
        defects[j - start] = defect.rms();
        y.set_slice(j, &fit.fitted);
        diags.push(fit.diagnostics);
    }
    diags.reverse();
    Ok((y, diags, defects))
}

/// `Y_j Δw_j`, known at knot `j + 1`.
fn stochastic_step(ens: &PathEnsemble, z: &AdaptedProcess, j: usize) -> PathValues {
    let dim = z.dim();
    let data = (0..ens.n_paths())
        .flat_map(|i| {
            let dw = ens.dw(i, j);
            z.value(i, j).iter().map(move |v| v * dw)
        })
        .collect::<Vec<_>>();
    debug_assert_eq!(data.len(), ens.n_paths() * dim);
    PathValues::from_raw(ens.id(), j + 1, dim, data)
}

/// `y` by regression on the whole grid.
pub fn solve_y_regression(problem: &LinearBsdeProblem, ens: &PathEnsemble, spec: &RegressionSpec) -> Result<AdaptedProcess> {
    problem.validate(ens)?;
    regress_y(ens, &problem.f, &problem.terminal, None, 0, ens.steps(), spec).map(|(y, _, _)| y)
}

/// `Y` by Galerkin projection onto `basis` with the given ridge rule.
/// `baseline` is an optional estimate of `y` used as a control variate.
pub fn solve_big_y_galerkin(
    basis: &GalerkinBasis,
    problem: &LinearBsdeProblem,
    baseline: Option<&AdaptedProcess>,
    ens: &PathEnsemble,
    ridge: GramRidge,
) -> Result<(AdaptedProcess, GalerkinDiagnostics)> {
    problem.validate(ens)?;
    let gram = assemble_gram(basis, ens);
    let rhs = assemble_rhs(basis, &problem.f, &problem.terminal, baseline, ens)?;
    let (coef, diag) = solve_coefficients(&gram, &rhs, ridge)?;
    Ok((basis.combine(ens, &coef), diag))
}

/// Solve on `[start, end]` given `f` on `[start, end)` and `y_end`.
/// `basis` must span exactly `[start, end)`.
pub fn solve_linear_window(
    ens: &PathEnsemble,
    f: &AdaptedProcess,
    terminal: &PathValues,
    start: usize,
    end: usize,
    basis: &GalerkinBasis,
    spec: &LinearSpec,
) -> Result<TranspositionSolution> {
    f.check_on(ens)?;
    if terminal.ensemble() != ens.id() {
        return Err(BsdeError::EnsembleMismatch);
    }
    ens.grid().check_knot(end)?;
    if start >= end {
        return Err(BsdeError::Config(format!("empty window {start}..={end}")));
    }
    if terminal.knot() > end {
        return Err(BsdeError::Anticipating(format!(
            "terminal known at knot {} imposed at knot {end}",
            terminal.knot()
        )));
    }
    if basis.span() != (start..end) {
        return Err(BsdeError::Config(format!(
            "basis spans {:?} but the window is {start}..{end}",
            basis.span()
        )));
    }
    let f = f.restrict(start, end - 1);
    let (mut y, mut regression, mut defects) = regress_y(ens, &f, terminal, None, start, end, &spec.regression)?;
    let gram = assemble_gram(basis, ens);
    let project = |y: &AdaptedProcess| -> Result<(AdaptedProcess, GalerkinDiagnostics)> {
        let rhs = match spec.galerkin_target {
            GalerkinTarget::Terminal => assemble_rhs(basis, &f, &terminal.at_later_knot(end)?, Some(y), ens)?,
            GalerkinTarget::NextKnot => assemble_rhs_one_step(basis, &f, y, ens)?,
        };
        let (coef, diag) = solve_coefficients(&gram, &rhs, spec.gram_ridge)?;
        Ok((basis.combine(ens, &coef), diag))
    };
    let (mut big_y, mut galerkin) = project(&y)?;
    if spec.martingale_control {
        (y, regression, defects) = regress_y(ens, &f, terminal, Some(&big_y), start, end, &spec.regression)?;
        if spec.galerkin_target == GalerkinTarget::NextKnot {
            (big_y, galerkin) = project(&y)?;
            (y, regression, defects) = regress_y(ens, &f, terminal, Some(&big_y), start, end, &spec.regression)?;
        }
    }
    let m = martingale_part(ens, &y, &f, start, end)?;
    let diagnostics = SolutionDiagnostics {
        galerkin,
        regression,
        regression_residual: defects.iter().copied().fold(0.0, f64::max),
        martingale_defects: defects,
        y_sup_l2: sup_l2_norm_window(&y, start, end),
        big_y_l2_l2: l2_l2_norm_window(ens, &big_y, start, end),
    };
    Ok(TranspositionSolution {
        start,
        end,
        y,
        big_y,
        m,
        f,
        diagnostics,
    })
}

/// Solve the linear problem on the whole horizon.
pub fn solve_linear(problem: &LinearBsdeProblem, ens: &PathEnsemble, basis: &GalerkinBasis, spec: &LinearSpec) -> Result<TranspositionSolution> {
    problem.validate(ens)?;
    solve_linear_window(ens, &problem.f, &problem.terminal, 0, ens.steps(), basis, spec)
}

/// Solve the problem restricted to knots `[start, J]` with the same terminal.
pub fn solve_linear_from(
    problem: &LinearBsdeProblem,
    ens: &PathEnsemble,
    basis: &GalerkinBasis,
    spec: &LinearSpec,
    start: usize,
) -> Result<TranspositionSolution> {
    problem.validate(ens)?;
    let end = ens.steps();
    let restricted = basis.restrict(start, end)?;
    solve_linear_window(ens, &problem.f, &problem.terminal, start, end, &restricted, spec)
}

/// `(‖y‖_{sup-L²} + ‖Y‖_{L²L²}) / (‖f‖_{L²L¹} + rms(y_T))`.
pub fn apriori_ratio(sol: &TranspositionSolution, problem: &LinearBsdeProblem, ens: &PathEnsemble) -> Ratio {
    let (s, e) = (sol.start, sol.end);
    let num = sup_l2_norm_window(&sol.y, s, e) + l2_l2_norm_window(ens, &sol.big_y, s, e);
    let den = l2_l1_norm_window(ens, &problem.f, s, e) + problem.terminal.rms();
    Ratio::new(num, den)
}

/// Mean of `y` at `knot`, per component.
pub fn mean_at(x: &AdaptedProcess, knot: usize) -> Vec<f64> {
    (0..x.dim()).map(|c| stats::mean(&x.column(knot, c))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::FiltrationModel;
    use crate::grid::TimeGrid;

    fn setup(n: usize, seed: u64) -> (PathEnsemble, GalerkinBasis) {
        let ens = PathEnsemble::simulate(&TimeGrid::uniform(1.0, 16).unwrap(), FiltrationModel::Natural, n, seed).unwrap();
        let basis = GalerkinBasis::uniform(&ens, 4, 2).unwrap();
        (ens, basis)
    }

    fn terminal(ens: &PathEnsemble, f: impl Fn(f64) -> f64 + Sync) -> PathValues {
        PathValues::from_state(ens, ens.steps(), 1, |v, o| {
            o[0] = f(v.w());
            Ok(())
        })
        .unwrap()
    }

    fn rms_error(x: &AdaptedProcess, ens: &PathEnsemble, exact: impl Fn(f64, f64) -> f64, knots: std::ops::Range<usize>) -> f64 {
        let mut worst: f64 = 0.0;
        for j in knots {
            let t = ens.grid().time(j);
            let d: Vec<f64> = (0..ens.n_paths()).map(|i| x.at(i, j, 0) - exact(t, ens.w(i, j))).collect();
            worst = worst.max(stats::rms(&d));
        }
        worst
    }

    #[test]
    fn brownian_terminal_oracle() {
        let (ens, basis) = setup(20_000, 11);
        let problem = LinearBsdeProblem::terminal_only(&ens, terminal(&ens, |w| w));
        let sol = solve_linear(&problem, &ens, &basis, &LinearSpec::default()).unwrap();
        assert!(rms_error(&sol.y, &ens, |_, w| w, 0..17) < 0.02);
        assert!(rms_error(&sol.big_y, &ens, |_, _| 1.0, 0..16) < 0.05);
        assert!(rms_error(&sol.m, &ens, |_, w| w, 0..17) < 0.02);
        assert!(sol.corrected_form_residual(&ens) < 1e-12);
    }

    #[test]
    fn square_terminal_with_unit_driver_oracle() {
        let (ens, basis) = setup(20_000, 12);
        let f = AdaptedProcess::constant(&ens, &[1.0]);
        let problem = LinearBsdeProblem::new(f, terminal(&ens, |w| w * w));
        let sol = solve_linear(&problem, &ens, &basis, &LinearSpec::default()).unwrap();
        let e = rms_error(&sol.y, &ens, |_, w| w * w, 0..17);
        assert!(e < 0.06, "{e}");
        assert!(rms_error(&sol.big_y, &ens, |_, w| 2.0 * w, 0..16) < 0.15);
        assert!(sol.corrected_form_residual(&ens) < 1e-12);
    }

    #[test]
    fn big_y_noise_shrinks_with_the_grid() {
        let fine = PathEnsemble::simulate(&TimeGrid::uniform(1.0, 64).unwrap(), FiltrationModel::Natural, 20_000, 21).unwrap();
        let errors: Vec<f64> = [4, 1]
            .into_iter()
            .map(|factor| {
                let ens = fine.coarsen(factor).unwrap();
                let basis = GalerkinBasis::uniform(&ens, ens.steps() / 4, 1).unwrap();
                let problem = LinearBsdeProblem::terminal_only(&ens, terminal(&ens, |w| w));
                let sol = solve_linear(&problem, &ens, &basis, &LinearSpec::default()).unwrap();
                rms_error(&sol.big_y, &ens, |_, _| 1.0, 0..ens.steps())
            })
            .collect();
        assert!(errors[0] < 0.05, "{errors:?}");
        assert!(errors[1] < 0.75 * errors[0], "{errors:?}");
    }

    #[test]
    fn spec_reads_target_names() {
        let spec: LinearSpec = serde_json::from_str(r#"{"galerkin_target": "terminal"}"#).unwrap();
        assert_eq!(spec.galerkin_target, GalerkinTarget::Terminal);
        assert!(spec.martingale_control);
        assert!(serde_json::from_str::<LinearSpec>(r#"{"target": "terminal"}"#).is_err());
    }

    #[test]
    fn constant_terminal_is_exact() {
        let (ens, basis) = setup(500, 13);
        let c = 1.75;
        let problem = LinearBsdeProblem::terminal_only(&ens, PathValues::constant(&ens, 16, &[c]).unwrap());
        let sol = solve_linear(&problem, &ens, &basis, &LinearSpec::default()).unwrap();
        for j in 0..=16 {
            for i in 0..ens.n_paths() {
                assert!((sol.y.at(i, j, 0) - c).abs() < 1e-9);
                assert!((sol.m.at(i, j, 0) - c).abs() < 1e-9);
                if j < 16 {
                    assert!(sol.big_y.at(i, j, 0).abs() < 1e-9);
                }
            }
        }
        let r = apriori_ratio(&sol, &problem, &ens).value().unwrap();
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_problem_ratio_is_undefined() {
        let (ens, basis) = setup(200, 14);
        let problem = LinearBsdeProblem::terminal_only(&ens, PathValues::constant(&ens, 16, &[0.0]).unwrap());
        let sol = solve_linear(&problem, &ens, &basis, &LinearSpec::default()).unwrap();
        assert_eq!(apriori_ratio(&sol, &problem, &ens), Ratio::Undefined { numerator: 0.0 });
    }

    #[test]
    fn restricted_solve_matches_full_solve() {
        let (ens, basis) = setup(5_000, 15);
        let problem = LinearBsdeProblem::terminal_only(&ens, terminal(&ens, |w| w.sin()));
        let spec = LinearSpec::default();
        let full = solve_linear(&problem, &ens, &basis, &spec).unwrap();
        let tail = solve_linear_from(&problem, &ens, &basis, &spec, 8).unwrap();
        for j in 8..=16 {
            for i in 0..ens.n_paths() {
                assert!((full.y.at(i, j, 0) - tail.y.at(i, j, 0)).abs() < 1e-9);
            }
        }
        for j in 8..16 {
            for i in 0..ens.n_paths() {
                assert!((full.big_y.at(i, j, 0) - tail.big_y.at(i, j, 0)).abs() < 1e-6);
            }
        }
        assert!(solve_linear_from(&problem, &ens, &basis, &spec, 16).is_err());
    }

    #[test]
    fn basis_must_cover_window() {
        let (ens, basis) = setup(100, 16);
        let problem = LinearBsdeProblem::terminal_only(&ens, terminal(&ens, |w| w));
        let err = solve_linear_window(&ens, &problem.f, &problem.terminal, 4, 16, &basis, &LinearSpec::default());
        assert!(matches!(err, Err(BsdeError::Config(_))));
    }
}
