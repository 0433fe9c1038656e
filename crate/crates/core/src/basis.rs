//! Finite adapted subspaces `H_m` onto which `Y` is projected.
//!
//! A tensor basis pairs time cells with monomials of the information state:
//! `e_{(c,p)}[i][j] = 1{j ∈ c} · ψ_p(state on path i at the family's anchor knot)`.
//! The family decides the anchor and is chosen by name at run time.

use std::fmt::Debug;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::PathEnsemble;
use crate::error::{BsdeError, Result};
use crate::process::{AdaptedProcess, PathValues};
use crate::registry::Registry;
use crate::state::{feature_names, KnotView, Monomials};
use crate::stats;

/// Where a tensor element reads the information state.
pub trait BasisFamily: Send + Sync + Debug {
    fn name(&self) -> &str;

    /// Knot whose state feeds the monomials at knot `j` of `cell`; never after `j`.
    fn anchor(&self, cell: &Range<usize>, j: usize) -> usize;
}

/// Monomials frozen at the start of each cell (piecewise constant in time).
#[derive(Debug, Clone, Copy, Default)]
pub struct CellStart;

impl BasisFamily for CellStart {
    fn name(&self) -> &str {
        "cell-start"
    }
    fn anchor(&self, cell: &Range<usize>, _j: usize) -> usize {
        cell.start
    }
}

/// Monomials of the current state, switched per cell.
#[derive(Debug, Clone, Copy, Default)]
pub struct CurrentState;

impl BasisFamily for CurrentState {
    fn name(&self) -> &str {
        "current-state"
    }
    fn anchor(&self, _cell: &Range<usize>, j: usize) -> usize {
        j
    }
}

pub type BasisFamilyRegistry = Registry<dyn BasisFamily>;

pub fn standard_basis_families() -> BasisFamilyRegistry {
    let mut r = BasisFamilyRegistry::new("basis family");
    r.register("current-state", &[], "cell indicator x monomials of the current state", |_| {
        Ok(Box::new(CurrentState))
    });
    r.register("cell-start", &[], "cell indicator x monomials of the state at cell start", |_| {
        Ok(Box::new(CellStart))
    });
    r
}

/// Consecutive cells of `size` knots covering `[0, steps)`; the last may be shorter.
pub fn uniform_cells(steps: usize, size: usize) -> Vec<Range<usize>> {
    let size = size.max(1);
    (0..steps).step_by(size).map(|a| a..(a + size).min(steps)).collect()
}

#[derive(Debug, Clone)]
enum Elements {
    Tensor {
        family: Arc<dyn BasisFamily>,
        cells: Vec<Range<usize>>,
        monomials: Monomials,
    },
    Explicit(Vec<AdaptedProcess>),
}

/// Basis `e_1, …, e_m` of an adapted subspace.
#[derive(Debug, Clone)]
pub struct GalerkinBasis {
    elements: Elements,
    span: Range<usize>,
}

impl GalerkinBasis {
    /// Tensor basis; `cells` must partition `[0, J)`.
    pub fn tensor(
        ens: &PathEnsemble,
        cells: Vec<Range<usize>>,
        state_degree: usize,
        family: Arc<dyn BasisFamily>,
    ) -> Result<Self> {
        let span = check_cells(&cells)?;
        if span != (0..ens.steps()) {
            return Err(BsdeError::Config(format!(
                "basis cells cover {span:?}, expected 0..{}",
                ens.steps()
            )));
        }
        Ok(Self {
            elements: Elements::Tensor {
                family,
                cells,
                monomials: Monomials::new(ens.model().n_state_features(), state_degree, true),
            },
            span,
        })
    }

    /// Tensor basis with cells of `cell_size` knots and the current-state family.
    pub fn uniform(ens: &PathEnsemble, cell_size: usize, state_degree: usize) -> Result<Self> {
        if cell_size == 0 {
            return Err(BsdeError::Config("cell size must be positive".into()));
        }
        Self::tensor(ens, uniform_cells(ens.steps(), cell_size), state_degree, Arc::new(CurrentState))
    }

    /// Arbitrary adapted processes as elements.
    pub fn from_processes(ens: &PathEnsemble, elements: Vec<AdaptedProcess>) -> Result<Self> {
        if elements.is_empty() {
            return Err(BsdeError::Config("basis needs at least one element".into()));
        }
        for e in &elements {
            e.check_on(ens)?;
            if e.dim() != 1 {
                return Err(BsdeError::Dimension("basis elements must be scalar".into()));
            }
        }
        Ok(Self {
            elements: Elements::Explicit(elements),
            span: 0..ens.steps(),
        })
    }

    /// Number of elements `m`.
    pub fn len(&self) -> usize {
        match &self.elements {
            Elements::Tensor { cells, monomials, .. } => cells.len() * monomials.len(),
            Elements::Explicit(e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Knot range `[first, end)` on which the basis lives.
    pub fn span(&self) -> Range<usize> {
        self.span.clone()
    }

    pub fn cells(&self) -> Option<&[Range<usize>]> {
        match &self.elements {
            Elements::Tensor { cells, .. } => Some(cells),
            Elements::Explicit(_) => None,
        }
    }

    pub fn family_name(&self) -> &str {
        match &self.elements {
            Elements::Tensor { family, .. } => family.name(),
            Elements::Explicit(_) => "explicit",
        }
    }

    pub fn state_degree(&self) -> Option<usize> {
        match &self.elements {
            Elements::Tensor { monomials, .. } => Some(monomials.degree()),
            Elements::Explicit(_) => None,
        }
    }

    /// The basis seen on `[from, to)` only: cells are clipped, explicit
    /// elements are zeroed outside the window.
    pub fn restrict(&self, from: usize, to: usize) -> Result<Self> {
        if from >= to || from < self.span.start || to > self.span.end {
            return Err(BsdeError::Config(format!(
                "window {from}..{to} is not inside the basis span {:?}",
                self.span
            )));
        }
        let elements = match &self.elements {
            Elements::Tensor { family, cells, monomials } => Elements::Tensor {
                family: family.clone(),
                cells: cells
                    .iter()
                    .filter_map(|c| {
                        let r = c.start.max(from)..c.end.min(to);
                        (!r.is_empty()).then_some(r)
                    })
                    .collect(),
                monomials: monomials.clone(),
            },
            Elements::Explicit(es) => Elements::Explicit(es.iter().map(|e| e.restrict(from, to - 1)).collect()),
        };
        Ok(Self { elements, span: from..to })
    }

    fn cell_of(cells: &[Range<usize>], j: usize) -> Option<usize> {
        let k = cells.partition_point(|c| c.end <= j);
        (k < cells.len() && cells[k].contains(&j)).then_some(k)
    }

    /// Nonzero-able elements at `(path, knot)`: writes their indices and values.
    pub(crate) fn active(&self, ens: &PathEnsemble, path: usize, j: usize, idx: &mut Vec<usize>, vals: &mut Vec<f64>, feats: &mut Vec<f64>) {
        idx.clear();
        vals.clear();
        if !self.span.contains(&j) {
            return;
        }
        match &self.elements {
            Elements::Tensor { family, cells, monomials } => {
                let Some(c) = Self::cell_of(cells, j) else { return };
                let anchor = family.anchor(&cells[c], j);
                debug_assert!(anchor <= j);
                KnotView::new(ens, path, anchor).features(feats);
                let p = monomials.len();
                vals.resize(p, 0.0);
                monomials.eval(feats, vals);
                idx.extend(c * p..(c + 1) * p);
            }
            Elements::Explicit(es) => {
                for (k, e) in es.iter().enumerate() {
                    idx.push(k);
                    vals.push(e.at(path, j, 0));
                }
            }
        }
    }

    /// Element `k` as a process.
    pub fn element(&self, ens: &PathEnsemble, k: usize) -> Result<AdaptedProcess> {
        if k >= self.len() {
            return Err(BsdeError::Config(format!("basis has {} elements, asked for {k}", self.len())));
        }
        Ok(AdaptedProcess::from_state(ens, 1, |v, out| {
            let (mut idx, mut vals, mut feats) = (Vec::new(), Vec::new(), Vec::new());
            self.active(ens, v.path(), v.knot(), &mut idx, &mut vals, &mut feats);
            out[0] = idx.iter().position(|&i| i == k).map_or(0.0, |p| vals[p]);
        }))
    }

    pub fn labels(&self, ens: &PathEnsemble) -> Vec<String> {
        match &self.elements {
            Elements::Tensor { cells, monomials, .. } => {
                let names = feature_names(ens);
                cells
                    .iter()
                    .flat_map(|c| (0..monomials.len()).map(move |p| (c.clone(), p)))
                    .map(|(c, p)| format!("[{},{})·{}", c.start, c.end, monomials.label(p, &names)))
                    .collect()
            }
            Elements::Explicit(es) => (0..es.len()).map(|k| format!("e{k}")).collect(),
        }
    }

    /// `Σ_k coef[k, c] e_k` for each component `c`, on the basis span.
    pub fn combine(&self, ens: &PathEnsemble, coef: &DMatrix<f64>) -> AdaptedProcess {
        let dim = coef.ncols();
        let mut out = AdaptedProcess::zeros(ens, dim);
        out.par_paths_mut().enumerate().for_each(|(i, row)| {
            let (mut idx, mut vals, mut feats) = (Vec::new(), Vec::new(), Vec::new());
            for j in self.span.clone() {
                self.active(ens, i, j, &mut idx, &mut vals, &mut feats);
                for c in 0..dim {
                    row[j * dim + c] = idx.iter().zip(&vals).map(|(&k, v)| coef[(k, c)] * v).sum();
                }
            }
        });
        out
    }
}

fn check_cells(cells: &[Range<usize>]) -> Result<Range<usize>> {
    if cells.is_empty() {
        return Err(BsdeError::Config("basis needs at least one cell".into()));
    }
    for (k, c) in cells.iter().enumerate() {
        if c.is_empty() {
            return Err(BsdeError::Config(format!("basis cell {k} ({c:?}) is empty")));
        }
        if k > 0 && cells[k - 1].end != c.start {
            return Err(BsdeError::Config(format!(
                "basis cells {:?} and {c:?} are not contiguous",
                cells[k - 1]
            )));
        }
    }
    Ok(cells[0].start..cells[cells.len() - 1].end)
}

/// Gram matrix `G_kl = (1/N) Σ_i Σ_j e_k e_l Δt_j` with its conditioning.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub matrix: DMatrix<f64>,
    /// Elements that do not vanish identically.
    pub active: Vec<bool>,
    /// Condition number of the active block (infinite when singular).
    pub condition: f64,
    pub warnings: Vec<String>,
}

/// Condition number above which the Gram system is reported as singular.
pub const GRAM_WARN_CONDITION: f64 = 1e10;

pub fn assemble_gram(basis: &GalerkinBasis, ens: &PathEnsemble) -> GramMatrix {
    let m = basis.len();
    let grid = ens.grid();
    let sums = stats::blocked_sum(ens.n_paths(), m * m, |i, acc| {
        let (mut idx, mut vals, mut feats) = (Vec::new(), Vec::new(), Vec::new());
        for j in basis.span() {
            basis.active(ens, i, j, &mut idx, &mut vals, &mut feats);
            let dt = grid.dt(j);
            for (a, &ka) in idx.iter().enumerate() {
                let va = vals[a] * dt;
                for (b, &kb) in idx.iter().enumerate().skip(a) {
                    acc[ka * m + kb] += va * vals[b];
                }
            }
        }
    });
    let n = ens.n_paths() as f64;
    let matrix = DMatrix::from_fn(m, m, |a, b| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        sums[lo * m + hi] / n
    });
    let scale = (0..m).map(|k| matrix[(k, k)]).fold(0.0, f64::max);
    let active: Vec<bool> = (0..m).map(|k| matrix[(k, k)] > 1e-14 * scale).collect();
    let mut warnings = Vec::new();
    let labels = basis.labels(ens);
    for (k, a) in active.iter().enumerate() {
        if !a {
            warnings.push(format!("basis element {} vanishes on the ensemble and is dropped", labels[k]));
        }
    }
    let sub = active_block(&matrix, &active);
    let condition = condition_number(&sub);
    if !(condition <= GRAM_WARN_CONDITION) {
        warnings.push(format!(
            "Gram matrix is numerically singular (condition {condition:e}); elements are collinear"
        ));
    }
    GramMatrix {
        matrix,
        active,
        condition,
        warnings,
    }
}

fn active_block(g: &DMatrix<f64>, active: &[bool]) -> DMatrix<f64> {
    let keep: Vec<usize> = (0..active.len()).filter(|&k| active[k]).collect();
    DMatrix::from_fn(keep.len(), keep.len(), |a, b| g[(keep[a], keep[b])])
}

fn condition_number(g: &DMatrix<f64>) -> f64 {
    if g.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(g.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 || hi <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Right-hand side `r_k = Ê[Z_k(end)·y_end − Σ_j Z_k(j) f_j Δt_j]` with
/// `Z_k` the running Itô integral of `e_k` from the basis span start.
///
/// Uses `Σ_j Z_k(j) f_j Δt_j = Σ_j e_k(j) Δw_j Σ_{j'>j} f_{j'} Δt_{j'}`, so each
/// path costs one pass over its knots.
///
/// A `baseline` `b` replaces the summand `e_k(j) Δw_j · target_{j+1}` by
/// `e_k(j) Δw_j · (target_{j+1} − b_j − f_j Δt_j)`. The subtracted term is known
/// at knot `j`, so the expectation is unchanged; with `b ≈ y` it is close to
/// `E(target_{j+1} | F_j)` and most of the sampling noise cancels.
pub fn assemble_rhs(
    basis: &GalerkinBasis,
    f: &AdaptedProcess,
    terminal: &PathValues,
    baseline: Option<&AdaptedProcess>,
    ens: &PathEnsemble,
) -> Result<DMatrix<f64>> {
    f.check_on(ens)?;
    if let Some(b) = baseline {
        b.check_compatible(f)?;
    }
    if terminal.ensemble() != ens.id() {
        return Err(BsdeError::EnsembleMismatch);
    }
    if terminal.dim() != f.dim() {
        return Err(BsdeError::Dimension(format!(
            "terminal dimension {} vs driver term {}",
            terminal.dim(),
            f.dim()
        )));
    }
    let span = basis.span();
    if terminal.knot() > span.end {
        return Err(BsdeError::Anticipating(format!(
            "terminal known at knot {} used at knot {}",
            terminal.knot(),
            span.end
        )));
    }
    let (m, dim) = (basis.len(), f.dim());
    let grid = ens.grid();
    let sums = stats::blocked_sum(ens.n_paths(), m * dim, |i, acc| {
        let (mut idx, mut vals, mut feats) = (Vec::new(), Vec::new(), Vec::new());
        // target = y_end − Σ_{j' ≥ j+1} f Δt, built backwards.
        let mut target = terminal.get(i).to_vec();
        for j in span.clone().rev() {
            basis.active(ens, i, j, &mut idx, &mut vals, &mut feats);
            let dw = ens.dw(i, j);
            let base = baseline.map(|b| b.value(i, j));
            let dt = grid.dt(j);
            let fj = f.value(i, j);
            for (&k, v) in idx.iter().zip(&vals) {
                for c in 0..dim {
                    let centred = target[c] - base.map_or(0.0, |b| b[c] + fj[c] * dt);
                    acc[k * dim + c] += v * dw * centred;
                }
            }
            for (t, fv) in target.iter_mut().zip(fj) {
                *t -= fv * dt;
            }
        }
    });
    let n = ens.n_paths() as f64;
    Ok(DMatrix::from_fn(m, dim, |k, c| sums[k * dim + c] / n))
}

/// One-step right-hand side `r_k = Ê Σ_j e_k(j) Δw_j (y_{j+1} − y_j − f_j Δt_j)`
/// for an estimate `y` of the solution on the basis span (and its end knot).
///
/// Replacing `y_end − Σ_{j' > j} f Δt` by `y_{j+1}` changes the expectation
/// only through the regression error of `y_{j+1}`, and removes the
/// Brownian increments after `j + 1` from every summand.
pub fn assemble_rhs_one_step(basis: &GalerkinBasis, f: &AdaptedProcess, y: &AdaptedProcess, ens: &PathEnsemble) -> Result<DMatrix<f64>> {
    f.check_on(ens)?;
    y.check_compatible(f)?;
    let (m, dim) = (basis.len(), f.dim());
    let grid = ens.grid();
    let sums = stats::blocked_sum(ens.n_paths(), m * dim, |i, acc| {
        let (mut idx, mut vals, mut feats) = (Vec::new(), Vec::new(), Vec::new());
        for j in basis.span() {
            basis.active(ens, i, j, &mut idx, &mut vals, &mut feats);
            let dw = ens.dw(i, j);
            let dt = grid.dt(j);
            let (now, next, fj) = (y.value(i, j), y.value(i, j + 1), f.value(i, j));
            for (&k, v) in idx.iter().zip(&vals) {
                for c in 0..dim {
                    acc[k * dim + c] += v * dw * (next[c] - now[c] - fj[c] * dt);
                }
            }
        }
    });
    let n = ens.n_paths() as f64;
    Ok(DMatrix::from_fn(m, dim, |k, c| sums[k * dim + c] / n))
}

/// How the Gram system is regularised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GramRidge {
    Fixed(f64),
    /// `factor × trace(G) / m` over active elements.
    Relative { relative: f64 },
}

impl Default for GramRidge {
    fn default() -> Self {
        GramRidge::Relative { relative: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalerkinDiagnostics {
    pub elements: usize,
    pub active_elements: usize,
    pub condition: f64,
    pub ridge: f64,
    /// `‖G c − r‖ / ‖r‖` for the unregularised system (zero when `r = 0`).
    pub solve_residual: f64,
    pub warnings: Vec<String>,
}

/// Solve `(G + ridge·I) c = r` on the active elements.
pub fn solve_coefficients(gram: &GramMatrix, rhs: &DMatrix<f64>, ridge: GramRidge) -> Result<(DMatrix<f64>, GalerkinDiagnostics)> {
    let keep: Vec<usize> = (0..gram.active.len()).filter(|&k| gram.active[k]).collect();
    let sub = active_block(&gram.matrix, &gram.active);
    let ma = keep.len();
    let ridge_value = match ridge {
        GramRidge::Fixed(r) => r,
        GramRidge::Relative { relative } => {
            if ma == 0 {
                0.0
            } else {
                relative * sub.trace() / ma as f64
            }
        }
    };
    if !(ridge_value >= 0.0 && ridge_value.is_finite()) {
        return Err(BsdeError::Config(format!("Gram ridge must be non-negative, got {ridge_value}")));
    }
    if ridge_value == 0.0 && !(gram.condition <= crate::condexp::MAX_CONDITION) {
        return Err(BsdeError::Conditioning {
            context: "Galerkin Gram system".into(),
            condition: gram.condition,
        });
    }
    let dim = rhs.ncols();
    let r_sub = DMatrix::from_fn(ma, dim, |a, c| rhs[(keep[a], c)]);
    let mut a = sub.clone();
    for k in 0..ma {
        a[(k, k)] += ridge_value;
    }
    let sol = a
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&r_sub))
        .or_else(|| a.lu().solve(&r_sub))
        .ok_or_else(|| BsdeError::Conditioning {
            context: "Galerkin Gram system".into(),
            condition: gram.condition,
        })?;
    let resid = (&sub * &sol - &r_sub).norm();
    let rnorm = r_sub.norm();
    let solve_residual = if rnorm > 0.0 { resid / rnorm } else { resid };
    let mut coef = DMatrix::zeros(gram.active.len(), dim);
    for (a, &k) in keep.iter().enumerate() {
        for c in 0..dim {
            coef[(k, c)] = sol[(a, c)];
        }
    }
    Ok((
        coef,
        GalerkinDiagnostics {
            elements: gram.active.len(),
            active_elements: ma,
            condition: gram.condition,
            ridge: ridge_value,
            solve_residual,
            warnings: gram.warnings.clone(),
        },
    ))
}
