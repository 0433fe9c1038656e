//! Least-squares conditional expectation `E(· | F_{t_j})`.
//!
//! At each knot the target is regressed on monomials of the state features
//! visible at that knot. The fitted values are therefore knot-`j` measurable
//! by construction.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::ensemble::PathEnsemble;
use crate::error::{BsdeError, Result};
use crate::process::{AdaptedProcess, PathValues};
use crate::state::{KnotView, Monomials};
use crate::stats;

/// How the ridge parameter is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Ridge {
    /// Fixed `λ` added to the per-path normalised normal matrix.
    Fixed(f64),
    /// `λ = factor × λ_max(XᵀX / N)`.
    Relative { relative: f64 },
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative { relative: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSpec {
    pub degree: usize,
    pub ridge: Ridge,
    pub standardize: bool,
    pub interactions: bool,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        Self {
            degree: 3,
            ridge: Ridge::default(),
            standardize: true,
            interactions: true,
        }
    }
}

impl RegressionSpec {
    pub fn with_degree(degree: usize) -> Self {
        Self {
            degree,
            ..Self::default()
        }
    }

    /// Plain least squares: no ridge.
    pub fn unregularized(degree: usize) -> Self {
        Self {
            degree,
            ridge: Ridge::Fixed(0.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.ridge {
            Ridge::Fixed(l) => l.is_finite() && l >= 0.0,
            Ridge::Relative { relative } => relative.is_finite() && relative >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(BsdeError::Config(format!("ridge must be non-negative, got {:?}", self.ridge)))
        }
    }

    fn is_unregularized(&self) -> bool {
        matches!(self.ridge, Ridge::Fixed(l) if l == 0.0)
            || matches!(self.ridge, Ridge::Relative { relative } if relative == 0.0)
    }
}

/// Condition number above which an unregularised fit is refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Diagnostics of one slice fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceDiagnostics {
    pub knot: usize,
    /// Columns kept after dropping degenerate ones (intercept included).
    pub columns: usize,
    pub ridge: f64,
    pub condition: f64,
    /// RMS of `target − fitted`.
    pub residual_rms: f64,
}

#[derive(Debug, Clone)]
pub struct SliceFit {
    pub fitted: PathValues,
    pub diagnostics: SliceDiagnostics,
}

/// Design matrix of one knot, with column standardisation folded in.
struct Design {
    knot: usize,
    n_paths: usize,
    /// Row-major `n_paths × cols`.
    rows: Vec<f64>,
    cols: usize,
}

impl Design {
    fn build(ens: &PathEnsemble, knot: usize, spec: &RegressionSpec) -> Self {
        let n = ens.n_paths();
        let monos = Monomials::new(ens.model().n_state_features(), spec.degree, spec.interactions);
        let p = monos.len();
        let mut raw = vec![0.0; n * p];
        let mut feats = Vec::new();
        for (i, row) in raw.chunks_mut(p).enumerate() {
            KnotView::new(ens, i, knot).features(&mut feats);
            monos.eval(&feats, row);
        }
        if !spec.standardize {
            return Self {
                knot,
                n_paths: n,
                rows: raw,
                cols: p,
            };
        }
        // Column 0 is the constant monomial.
        let mut keep = vec![0usize];
        let mut shift = vec![0.0];
        let mut scale = vec![1.0];
        for c in 1..p {
            let col: Vec<f64> = raw.iter().skip(c).step_by(p).copied().collect();
            let m = stats::mean(&col);
            let sd = if n > 1 {
                let sq: Vec<f64> = col.iter().map(|v| (v - m) * (v - m)).collect();
                (stats::pairwise_sum(&sq) / n as f64).sqrt()
            } else {
                0.0
            };
            if sd > 1e-12 * m.abs().max(1.0) {
                keep.push(c);
                shift.push(m);
                scale.push(sd);
            }
        }
        let cols = keep.len();
        let mut rows = vec![0.0; n * cols];
        for (src, dst) in raw.chunks(p).zip(rows.chunks_mut(cols)) {
            for (k, &c) in keep.iter().enumerate() {
                dst[k] = if c == 0 { 1.0 } else { (src[c] - shift[k]) / scale[k] };
            }
        }
        Self {
            knot,
            n_paths: n,
            rows,
            cols,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.cols..(i + 1) * self.cols]
    }

    /// Normal matrix `XᵀX / N`.
    fn gram(&self) -> DMatrix<f64> {
        let p = self.cols;
        let sums = stats::blocked_sum(self.n_paths, p * p, |i, acc| {
            let r = self.row(i);
            for a in 0..p {
                for b in a..p {
                    acc[a * p + b] += r[a] * r[b];
                }
            }
        });
        let n = self.n_paths as f64;
        DMatrix::from_fn(p, p, |a, b| {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            sums[lo * p + hi] / n
        })
    }

    /// `Xᵀy / N` for every component of the target.
    fn moments(&self, target: &PathValues) -> DMatrix<f64> {
        let p = self.cols;
        let dim = target.dim();
        let sums = stats::blocked_sum(self.n_paths, p * dim, |i, acc| {
            let r = self.row(i);
            let y = target.get(i);
            for k in 0..dim {
                for a in 0..p {
                    acc[k * p + a] += r[a] * y[k];
                }
            }
        });
        let n = self.n_paths as f64;
        DMatrix::from_fn(p, dim, |a, k| sums[k * p + a] / n)
    }
}

/// A factorised regression at one knot, reusable for several targets.
pub struct SliceRegression {
    design: Design,
    coefficients_solver: DMatrix<f64>,
    ridge: f64,
    condition: f64,
}

impl SliceRegression {
    pub fn new(ens: &PathEnsemble, knot: usize, spec: &RegressionSpec) -> Result<Self> {
        spec.validate()?;
        ens.grid().check_knot(knot)?;
        let design = Design::build(ens, knot, spec);
        let gram = design.gram();
        let eig = SymmetricEigen::new(gram.clone());
        let lmax = eig.eigenvalues.max().max(0.0);
        let lmin = eig.eigenvalues.min().max(0.0);
        let ridge = match spec.ridge {
            Ridge::Fixed(l) => l,
            Ridge::Relative { relative } => relative * lmax,
        };
        let condition = if lmin + ridge > 0.0 {
            (lmax + ridge) / (lmin + ridge)
        } else {
            f64::INFINITY
        };
        if spec.is_unregularized() && !(condition <= MAX_CONDITION) {
            return Err(BsdeError::Conditioning {
                context: format!("regression design at knot {knot}"),
                condition,
            });
        }
        let mut a = gram;
        for k in 1..a.nrows() {
            a[(k, k)] += ridge;
        }
        let inverse = a
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .or_else(|| a.try_inverse())
            .ok_or_else(|| BsdeError::Conditioning {
                context: format!("regression design at knot {knot}"),
                condition,
            })?;
        Ok(Self {
            design,
            coefficients_solver: inverse,
            ridge,
            condition,
        })
    }

    pub fn n_columns(&self) -> usize {
        self.design.cols
    }

    /// Coefficients (columns per target component) in the standardised basis.
    pub fn coefficients(&self, target: &PathValues) -> Result<DMatrix<f64>> {
        if target.n_paths() != self.design.n_paths {
            return Err(BsdeError::Dimension(format!(
                "target has {} paths, design {}",
                target.n_paths(),
                self.design.n_paths
            )));
        }
        if target.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(BsdeError::Config("regression target contains non-finite values".into()));
        }
        Ok(&self.coefficients_solver * self.design.moments(target))
    }

    pub fn fit(&self, target: &PathValues) -> Result<SliceFit> {
        let coef = self.coefficients(target)?;
        let dim = target.dim();
        let mut fitted = vec![0.0; self.design.n_paths * dim];
        for (i, out) in fitted.chunks_mut(dim).enumerate() {
            let r = DVector::from_column_slice(self.design.row(i));
            for (k, o) in out.iter_mut().enumerate() {
                *o = r.dot(&coef.column(k));
            }
        }
        let resid: Vec<f64> = fitted
            .chunks(dim)
            .enumerate()
            .map(|(i, f)| f.iter().zip(target.get(i)).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        let fitted = PathValues::from_raw(target.ensemble(), self.design.knot, dim, fitted);
        Ok(SliceFit {
            fitted,
            diagnostics: SliceDiagnostics {
                knot: self.design.knot,
                columns: self.design.cols,
                ridge: self.ridge,
                condition: self.condition,
                residual_rms: stats::mean(&resid).sqrt(),
            },
        })
    }

    /// Design column `c` across paths (column 0 is the intercept).
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.design.n_paths).map(|i| self.design.row(i)[c]).collect()
    }
}

/// Regression estimate of `E(target | F_{t_j})`.
pub fn condexp_slice(target: &PathValues, knot: usize, ens: &PathEnsemble, spec: &RegressionSpec) -> Result<SliceFit> {
    if target.ensemble() != ens.id() {
        return Err(BsdeError::EnsembleMismatch);
    }
    SliceRegression::new(ens, knot, spec)?.fit(target)
}

/// `E(target | F_{t_j})` at every knot `j ≤ last`, with the target itself at `last`.
///
/// `target` must be known at `last`.
pub fn condexp_process_window(
    target: &PathValues,
    first: usize,
    last: usize,
    ens: &PathEnsemble,
    spec: &RegressionSpec,
) -> Result<(AdaptedProcess, Vec<SliceDiagnostics>)> {
    if target.ensemble() != ens.id() {
        return Err(BsdeError::EnsembleMismatch);
    }
    ens.grid().check_knot(last)?;
    if target.knot() > last {
        return Err(BsdeError::Anticipating(format!(
            "target known at knot {} pinned at knot {last}",
            target.knot()
        )));
    }
    let mut out = AdaptedProcess::zeros(ens, target.dim());
    let mut diags = Vec::with_capacity(last - first);
    for j in first..last {
        let fit = condexp_slice(target, j, ens, spec)?;
        out.set_slice(j, &fit.fitted);
        diags.push(fit.diagnostics);
    }
    out.set_slice(last, target);
    Ok((out, diags))
}

/// `E(target | F_{t_j})` on the whole grid; the target must be `F_T`-measurable.
pub fn condexp_process(target: &PathValues, ens: &PathEnsemble, spec: &RegressionSpec) -> Result<AdaptedProcess> {
    condexp_process_window(target, 0, ens.steps(), ens, spec).map(|(p, _)| p)
}

/// Per-knot martingale defects `‖E(X_{j+1} − X_j | F_j)‖_{L²}` for `j < J`.
///
/// The increment is regressed rather than `X_{j+1}` itself; the two agree
/// because `X_j` is already known at knot `j`, and the increment stays inside
/// the Markov feature span even when `X` carries path history.
pub fn martingale_residuals(x: &AdaptedProcess, ens: &PathEnsemble, spec: &RegressionSpec) -> Result<Vec<f64>> {
    x.check_on(ens)?;
    (0..ens.steps())
        .map(|j| {
            let next = x.slice(j + 1);
            let inc = next.zip_with(&x.slice(j), |a, b| a - b)?;
            let fit = condexp_slice(&inc, j, ens, spec)?;
            Ok(fit.fitted.rms())
        })
        .collect()
}

/// Largest per-knot martingale defect; near zero iff `X` is a discrete martingale.
pub fn martingale_residual(x: &AdaptedProcess, ens: &PathEnsemble, spec: &RegressionSpec) -> Result<f64> {
    Ok(martingale_residuals(x, ens, spec)?.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{FiltrationModel, XiLaw};
    use crate::grid::TimeGrid;

    fn natural(n: usize, j: usize, seed: u64) -> PathEnsemble {
        PathEnsemble::simulate(&TimeGrid::uniform(1.0, j).unwrap(), FiltrationModel::Natural, n, seed).unwrap()
    }

    fn terminal(ens: &PathEnsemble, f: impl Fn(&KnotView) -> f64 + Sync) -> PathValues {
        PathValues::from_state(ens, ens.steps(), 1, |v, o| {
            o[0] = f(v);
            Ok(())
        })
        .unwrap()
    }

    #[test]
    fn constant_target_is_reproduced() {
        let e = natural(500, 4, 1);
        let t = PathValues::constant(&e, 4, &[2.5]).unwrap();
        for j in 0..=4 {
            let fit = condexp_slice(&t, j, &e, &RegressionSpec::unregularized(3)).unwrap();
            assert!(fit.fitted.as_slice().iter().all(|v| (v - 2.5).abs() < 1e-10));
        }
    }

    #[test]
    fn terminal_slice_interpolates_square() {
        let e = natural(300, 4, 2);
        let t = terminal(&e, |v| v.w() * v.w());
        let fit = condexp_slice(&t, 4, &e, &RegressionSpec::unregularized(2)).unwrap();
        for (a, b) in fit.fitted.as_slice().iter().zip(t.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn brownian_martingale_oracle() {
        let e = natural(20_000, 8, 3);
        let t = terminal(&e, |v| v.w());
        let p = condexp_process(&t, &e, &RegressionSpec::with_degree(1)).unwrap();
        let w = AdaptedProcess::brownian(&e);
        let err = crate::process::sup_l2_norm(&p.sub(&w).unwrap());
        assert!(err < 0.03, "sup-l2 error {err}");
    }

    #[test]
    fn rank_deficiency_without_ridge_is_reported() {
        let e = natural(3, 4, 4);
        let t = terminal(&e, |v| v.w());
        let err = condexp_slice(&t, 2, &e, &RegressionSpec::unregularized(4)).unwrap_err();
        assert!(matches!(err, BsdeError::Conditioning { .. }));
        assert!(err.to_string().contains("ridge"));
        // Same design with the default ridge goes through.
        assert!(condexp_slice(&t, 2, &e, &RegressionSpec::with_degree(4)).is_ok());
        let raw = RegressionSpec {
            standardize: false,
            ..RegressionSpec::unregularized(1)
        };
        // w(0) = 0 on every path: the raw design is singular at knot 0.
        assert!(condexp_slice(&t, 0, &e, &raw).is_err());
    }

    #[test]
    fn revealed_variable_is_known_at_time_zero() {
        let model = FiltrationModel::InitialEnlargement {
            xi: XiLaw::Normal { mean: 0.5, std: 1.0 },
        };
        let e = PathEnsemble::simulate(&TimeGrid::uniform(1.0, 4).unwrap(), model, 2_000, 5).unwrap();
        let t = terminal(&e, |v| v.xi().unwrap());
        let p = condexp_process(&t, &e, &RegressionSpec::default()).unwrap();
        for j in 0..=4 {
            for i in 0..2_000 {
                assert!((p.at(i, j, 0) - e.xi(i).unwrap()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn martingale_residual_examples() {
        let e = natural(50_000, 8, 6);
        let spec = RegressionSpec::default();
        let w = AdaptedProcess::brownian(&e);
        assert!(martingale_residual(&w, &e, &spec).unwrap() < 0.01);
        let t = AdaptedProcess::time(&e);
        let res = martingale_residuals(&t, &e, &spec).unwrap();
        for r in res {
            assert!((r - 0.125).abs() < 1e-9, "{r}");
        }
        let comp = AdaptedProcess::scalar(&e, |v| v.w() * v.w() - v.time());
        let r = martingale_residuals(&comp, &e, &spec).unwrap();
        assert!(r.iter().all(|v| *v < 0.02), "{r:?}");
    }

    #[test]
    fn ensemble_mismatch_is_refused() {
        let a = natural(10, 4, 1);
        let b = natural(10, 4, 2);
        let t = terminal(&b, |v| v.w());
        assert!(matches!(
            condexp_slice(&t, 1, &a, &RegressionSpec::default()),
            Err(BsdeError::EnsembleMismatch)
        ));
    }
}
