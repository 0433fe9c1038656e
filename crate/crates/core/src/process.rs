//! Adapted processes on an ensemble, together with stochastic and time
//! integrals and the two canonical norms.

use rayon::prelude::*;

use crate::ensemble::{EnsembleId, PathEnsemble};
use crate::error::{BsdeError, Result};
use crate::state::KnotView;
use crate::stats;

/// Per-path values in `R^n` that are measurable at one knot.
#[derive(Debug, Clone, PartialEq)]
pub struct PathValues {
    ensemble: EnsembleId,
    knot: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PathValues {
    /// Build from the information state at `knot`; the closure cannot see later knots.
    pub fn from_state<F>(ens: &PathEnsemble, knot: usize, dim: usize, f: F) -> Result<Self>
    where
        F: Fn(&KnotView, &mut [f64]) -> Result<()> + Sync,
    {
        ens.grid().check_knot(knot)?;
        if dim == 0 {
            return Err(BsdeError::Dimension("dimension must be at least 1".into()));
        }
        let mut data = vec![0.0; ens.n_paths() * dim];
        data.par_chunks_mut(dim)
            .enumerate()
            .try_for_each(|(i, out)| f(&KnotView::new(ens, i, knot), out))?;
        Ok(Self {
            ensemble: ens.id(),
            knot,
            dim,
            data,
        })
    }

    pub fn constant(ens: &PathEnsemble, knot: usize, value: &[f64]) -> Result<Self> {
        Self::from_state(ens, knot, value.len(), |_, out| {
            out.copy_from_slice(value);
            Ok(())
        })
    }

    pub(crate) fn from_raw(ensemble: EnsembleId, knot: usize, dim: usize, data: Vec<f64>) -> Self {
        debug_assert!(dim > 0 && data.len().is_multiple_of(dim));
        Self {
            ensemble,
            knot,
            dim,
            data,
        }
    }

    pub fn ensemble(&self) -> EnsembleId {
        self.ensemble
    }
    /// Knot at which these values are known.
    pub fn knot(&self) -> usize {
        self.knot
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_paths(&self) -> usize {
        self.data.len() / self.dim
    }
    pub fn get(&self, path: usize) -> &[f64] {
        &self.data[path * self.dim..(path + 1) * self.dim]
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Component `k` across paths.
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.data.iter().skip(k).step_by(self.dim).copied().collect()
    }

    /// Values known at `knot` are known at every later knot.
    pub fn at_later_knot(&self, knot: usize) -> Result<Self> {
        if knot < self.knot {
            return Err(BsdeError::Anticipating(format!(
                "values measurable at knot {} used at earlier knot {knot}",
                self.knot
            )));
        }
        Ok(Self {
            knot,
            ..self.clone()
        })
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.ensemble != other.ensemble {
            return Err(BsdeError::EnsembleMismatch);
        }
        if self.dim != other.dim {
            return Err(BsdeError::Dimension(format!("{} vs {}", self.dim, other.dim)));
        }
        Ok(Self {
            ensemble: self.ensemble,
            knot: self.knot.max(other.knot),
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|v| f(*v)).collect(),
            ..self.clone()
        }
    }

    /// Root mean square of the Euclidean norm across paths.
    pub fn rms(&self) -> f64 {
        let sq: Vec<f64> = self.data.chunks(self.dim).map(|v| dot(v, v)).collect();
        stats::mean(&sq).sqrt()
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim).map(|k| stats::mean(&self.component(k))).collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Values `X[i][j] ∈ R^n` on every knot of an ensemble.
///
/// Public constructors only hand the builder a [`KnotView`], so a process
/// built here can depend at knot `j` on information up to `j` alone.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    ensemble: EnsembleId,
    n_paths: usize,
    n_knots: usize,
    dim: usize,
    data: Vec<f64>,
}

impl AdaptedProcess {
    /// Build from a fallible state function. Requests for future information
    /// surface as [`BsdeError::Anticipating`].
    pub fn try_from_state<F>(ens: &PathEnsemble, dim: usize, f: F) -> Result<Self>
    where
        F: Fn(&KnotView, &mut [f64]) -> Result<()> + Sync,
    {
        if dim == 0 {
            return Err(BsdeError::Dimension("dimension must be at least 1".into()));
        }
        let n_knots = ens.n_knots();
        let mut data = vec![0.0; ens.n_paths() * n_knots * dim];
        data.par_chunks_mut(n_knots * dim)
            .enumerate()
            .try_for_each(|(i, row)| {
                for (j, out) in row.chunks_mut(dim).enumerate() {
                    f(&KnotView::new(ens, i, j), out)?;
                }
                Ok::<_, BsdeError>(())
            })?;
        Ok(Self {
            ensemble: ens.id(),
            n_paths: ens.n_paths(),
            n_knots,
            dim,
            data,
        })
    }

    /// Build from a state function that only reads current values.
    pub fn from_state<F>(ens: &PathEnsemble, dim: usize, f: F) -> Self
    where
        F: Fn(&KnotView, &mut [f64]) + Sync,
    {
        Self::try_from_state(ens, dim, |v, out| {
            f(v, out);
            Ok(())
        })
        .expect("dimension is positive")
    }

    /// Scalar process from a state function.
    pub fn scalar<F>(ens: &PathEnsemble, f: F) -> Self
    where
        F: Fn(&KnotView) -> f64 + Sync,
    {
        Self::from_state(ens, 1, |v, out| out[0] = f(v))
    }

    pub fn zeros(ens: &PathEnsemble, dim: usize) -> Self {
        Self::from_state(ens, dim, |_, _| {})
    }

    pub fn constant(ens: &PathEnsemble, value: &[f64]) -> Self {
        Self::from_state(ens, value.len(), |_, out| out.copy_from_slice(value))
    }

    /// The driving Brownian motion `w(t_j)`.
    pub fn brownian(ens: &PathEnsemble) -> Self {
        Self::scalar(ens, |v| v.w())
    }

    /// Deterministic clock `t_j`.
    pub fn time(ens: &PathEnsemble) -> Self {
        Self::scalar(ens, |v| v.time())
    }

    pub fn ensemble(&self) -> EnsembleId {
        self.ensemble
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }
    pub fn n_knots(&self) -> usize {
        self.n_knots
    }

    #[inline]
    pub fn value(&self, path: usize, knot: usize) -> &[f64] {
        let o = (path * self.n_knots + knot) * self.dim;
        &self.data[o..o + self.dim]
    }

    #[inline]
    pub(crate) fn value_mut(&mut self, path: usize, knot: usize) -> &mut [f64] {
        let o = (path * self.n_knots + knot) * self.dim;
        &mut self.data[o..o + self.dim]
    }

    #[inline]
    pub fn at(&self, path: usize, knot: usize, k: usize) -> f64 {
        self.data[(path * self.n_knots + knot) * self.dim + k]
    }

    /// All knots of one path, `n_knots * dim` values.
    pub fn path(&self, path: usize) -> &[f64] {
        let w = self.n_knots * self.dim;
        &self.data[path * w..(path + 1) * w]
    }

    pub(crate) fn paths_mut(&mut self) -> std::slice::ChunksMut<'_, f64> {
        let w = self.n_knots * self.dim;
        self.data.chunks_mut(w)
    }

    pub(crate) fn par_paths_mut(&mut self) -> rayon::slice::ChunksMut<'_, f64> {
        let w = self.n_knots * self.dim;
        self.data.par_chunks_mut(w)
    }

    /// Values at knot `j` as knot-`j`-measurable path values.
    pub fn slice(&self, knot: usize) -> PathValues {
        let mut data = Vec::with_capacity(self.n_paths * self.dim);
        for i in 0..self.n_paths {
            data.extend_from_slice(self.value(i, knot));
        }
        PathValues::from_raw(self.ensemble, knot, self.dim, data)
    }

    /// Component `k` at knot `j` across paths.
    pub fn column(&self, knot: usize, k: usize) -> Vec<f64> {
        (0..self.n_paths).map(|i| self.at(i, knot, k)).collect()
    }

    pub(crate) fn set_slice(&mut self, knot: usize, values: &PathValues) {
        debug_assert_eq!(values.dim(), self.dim);
        for i in 0..self.n_paths {
            self.value_mut(i, knot).copy_from_slice(values.get(i));
        }
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.ensemble != other.ensemble {
            return Err(BsdeError::EnsembleMismatch);
        }
        if self.dim != other.dim {
            return Err(BsdeError::Dimension(format!(
                "process dimensions {} and {}",
                self.dim, other.dim
            )));
        }
        Ok(())
    }

    pub fn check_on(&self, ens: &PathEnsemble) -> Result<()> {
        if self.ensemble != ens.id() {
            return Err(BsdeError::EnsembleMismatch);
        }
        Ok(())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
            ..self.clone()
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn add_scalar(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    /// Pointwise map; stays adapted.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|v| f(*v)).collect(),
            ..self.clone()
        }
    }

    /// Zero every knot outside `from..=to`.
    pub fn restrict(&self, from: usize, to: usize) -> Self {
        let mut out = self.clone();
        let dim = self.dim;
        for row in out.paths_mut() {
            for (j, v) in row.chunks_mut(dim).enumerate() {
                if j < from || j > to {
                    v.fill(0.0);
                }
            }
        }
        out
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

fn check_dims(ens: &PathEnsemble, x: &AdaptedProcess) -> Result<()> {
    if x.n_paths != ens.n_paths() || x.n_knots != ens.n_knots() {
        return Err(BsdeError::Dimension(format!(
            "process has {}x{} values, ensemble {}x{}",
            x.n_paths,
            x.n_knots,
            ens.n_paths(),
            ens.n_knots()
        )));
    }
    x.check_on(ens)
}

/// `Σ_{from ≤ j' < upto} v[i][j'] Δw[i][j']` per path (left-endpoint Itô sum).
pub fn ito_integral_from(ens: &PathEnsemble, v: &AdaptedProcess, from: usize, upto: usize) -> Result<PathValues> {
    check_dims(ens, v)?;
    ens.grid().check_knot(upto)?;
    if from > upto {
        return Err(BsdeError::KnotRange {
            index: from,
            last: upto,
        });
    }
    let dim = v.dim();
    let mut data = vec![0.0; ens.n_paths() * dim];
    data.par_chunks_mut(dim).enumerate().for_each(|(i, out)| {
        for j in from..upto {
            let dw = ens.dw(i, j);
            for (o, x) in out.iter_mut().zip(v.value(i, j)) {
                *o += x * dw;
            }
        }
    });
    Ok(PathValues::from_raw(ens.id(), upto, dim, data))
}

/// Itô integral of `v` from knot 0 up to knot `upto`.
pub fn ito_integral(ens: &PathEnsemble, v: &AdaptedProcess, upto: usize) -> Result<PathValues> {
    ito_integral_from(ens, v, 0, upto)
}

/// Running integral `Z[j] = Σ_{from ≤ j' < j} v Δw` (zero up to `from`).
pub fn running_ito(ens: &PathEnsemble, v: &AdaptedProcess, from: usize) -> Result<AdaptedProcess> {
    check_dims(ens, v)?;
    ens.grid().check_knot(from)?;
    let dim = v.dim();
    let mut out = AdaptedProcess::zeros(ens, dim);
    let steps = ens.steps();
    out.par_paths_mut().enumerate().for_each(|(i, row)| {
        let mut acc = vec![0.0; dim];
        for j in from..steps {
            let dw = ens.dw(i, j);
            for (a, x) in acc.iter_mut().zip(v.value(i, j)) {
                *a += x * dw;
            }
            row[(j + 1) * dim..(j + 2) * dim].copy_from_slice(&acc);
        }
    });
    Ok(out)
}

/// Left-endpoint quadrature `Σ_{j0 ≤ j < j1} u[i][j] Δt_j` per path.
pub fn time_integral(ens: &PathEnsemble, u: &AdaptedProcess, j0: usize, j1: usize) -> Result<PathValues> {
    check_dims(ens, u)?;
    ens.grid().check_knot(j1)?;
    if j0 > j1 {
        return Err(BsdeError::KnotRange { index: j0, last: j1 });
    }
    let grid = ens.grid();
    let dim = u.dim();
    let mut data = vec![0.0; ens.n_paths() * dim];
    data.par_chunks_mut(dim).enumerate().for_each(|(i, out)| {
        for j in j0..j1 {
            let dt = grid.dt(j);
            for (o, x) in out.iter_mut().zip(u.value(i, j)) {
                *o += x * dt;
            }
        }
    });
    Ok(PathValues::from_raw(ens.id(), j1, dim, data))
}

/// `sqrt((1/N) Σ_i max_{j0 ≤ j ≤ j1} |x[i][j]|²)`.
pub fn sup_l2_norm_window(x: &AdaptedProcess, j0: usize, j1: usize) -> f64 {
    let per_path: Vec<f64> = (0..x.n_paths())
        .into_par_iter()
        .map(|i| (j0..=j1).map(|j| dot(x.value(i, j), x.value(i, j))).fold(0.0, f64::max))
        .collect();
    stats::mean(&per_path).sqrt()
}

/// Norm of `L²(Ω; D([0,T]))`: `sqrt((1/N) Σ_i max_j |x[i][j]|²)`.
pub fn sup_l2_norm(x: &AdaptedProcess) -> f64 {
    sup_l2_norm_window(x, 0, x.n_knots() - 1)
}

/// `sqrt((1/N) Σ_i Σ_{j0 ≤ j < j1} |x[i][j]|² Δt_j)`.
pub fn l2_l2_norm_window(ens: &PathEnsemble, x: &AdaptedProcess, j0: usize, j1: usize) -> f64 {
    let grid = ens.grid();
    let per_path: Vec<f64> = (0..x.n_paths())
        .into_par_iter()
        .map(|i| {
            let terms: Vec<f64> = (j0..j1)
                .map(|j| dot(x.value(i, j), x.value(i, j)) * grid.dt(j))
                .collect();
            stats::pairwise_sum(&terms)
        })
        .collect();
    stats::mean(&per_path).sqrt()
}

/// Norm of `L²(Ω; L²(0,T))`: `sqrt((1/N) Σ_i Σ_j |x[i][j]|² Δt_j)`.
pub fn l2_l2_norm(ens: &PathEnsemble, x: &AdaptedProcess) -> f64 {
    l2_l2_norm_window(ens, x, 0, ens.steps())
}

/// Norm of `L²(Ω; L¹(0,T))`: `sqrt((1/N) Σ_i (Σ_j |x[i][j]| Δt_j)²)`.
pub fn l2_l1_norm_window(ens: &PathEnsemble, x: &AdaptedProcess, j0: usize, j1: usize) -> f64 {
    let grid = ens.grid();
    let per_path: Vec<f64> = (0..x.n_paths())
        .map(|i| {
            let s: f64 = (j0..j1)
                .map(|j| dot(x.value(i, j), x.value(i, j)).sqrt() * grid.dt(j))
                .sum();
            s * s
        })
        .collect();
    stats::mean(&per_path).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::FiltrationModel;
    use crate::grid::TimeGrid;

    fn ens(n: usize, j: usize) -> PathEnsemble {
        PathEnsemble::simulate(&TimeGrid::uniform(1.0, j).unwrap(), FiltrationModel::Natural, n, 42).unwrap()
    }

    #[test]
    fn ito_of_one_is_terminal_level() {
        let e = ens(10, 8);
        let one = AdaptedProcess::constant(&e, &[1.0]);
        let r = ito_integral(&e, &one, 8).unwrap();
        for i in 0..10 {
            assert!((r.get(i)[0] - e.w(i, 8)).abs() < 1e-13);
        }
        let zero = AdaptedProcess::zeros(&e, 1);
        assert!(ito_integral(&e, &zero, 8).unwrap().as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn time_integral_examples() {
        let e = ens(3, 4);
        let one = AdaptedProcess::constant(&e, &[1.0]);
        let r = time_integral(&e, &one, 0, 4).unwrap();
        assert!(r.as_slice().iter().all(|v| (*v - 1.0).abs() < 1e-15));
        let t = AdaptedProcess::time(&e);
        let r = time_integral(&e, &t, 0, 4).unwrap();
        assert!(r.as_slice().iter().all(|v| (*v - 0.375).abs() < 1e-15));
        assert!(time_integral(&e, &t, 3, 2).is_err());
        assert!(time_integral(&e, &t, 0, 5).is_err());
    }

    #[test]
    fn norms_of_constants() {
        let e = PathEnsemble::simulate(&TimeGrid::uniform(2.0, 5).unwrap(), FiltrationModel::Natural, 4, 1).unwrap();
        let c = AdaptedProcess::constant(&e, &[-3.0]);
        assert!((sup_l2_norm(&c) - 3.0).abs() < 1e-14);
        assert!((l2_l2_norm(&e, &c) - 3.0 * 2f64.sqrt()).abs() < 1e-14);
        let z = AdaptedProcess::zeros(&e, 2);
        assert_eq!(sup_l2_norm(&z), 0.0);
        assert_eq!(l2_l2_norm(&e, &z), 0.0);
    }

    #[test]
    fn anticipating_builder_is_rejected() {
        let e = ens(4, 4);
        let peek = AdaptedProcess::try_from_state(&e, 1, |v, out| {
            out[0] = v.w_at(e.steps())?;
            Ok(())
        });
        assert!(matches!(peek, Err(BsdeError::Anticipating(_))));
        let past = AdaptedProcess::try_from_state(&e, 1, |v, out| {
            out[0] = v.w_at(v.knot() / 2)?;
            Ok(())
        });
        assert!(past.is_ok());
    }

    #[test]
    fn processes_from_other_ensembles_are_refused() {
        let a = ens(4, 4);
        let b = PathEnsemble::simulate(a.grid(), FiltrationModel::Natural, 4, 43).unwrap();
        let x = AdaptedProcess::brownian(&b);
        assert!(matches!(ito_integral(&a, &x, 4), Err(BsdeError::EnsembleMismatch)));
        let c = ens(5, 4);
        let y = AdaptedProcess::brownian(&c);
        assert!(matches!(ito_integral(&a, &y, 4), Err(BsdeError::Dimension(_))));
    }

    #[test]
    fn running_integral_matches_pointwise() {
        let e = ens(5, 6);
        let w = AdaptedProcess::brownian(&e);
        let z = running_ito(&e, &w, 2).unwrap();
        for j in 0..=6 {
            let direct = ito_integral_from(&e, &w, 2.min(j), j).unwrap();
            for i in 0..5 {
                let expect = if j < 2 { 0.0 } else { direct.get(i)[0] };
                assert!((z.at(i, j, 0) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn path_values_cannot_move_backwards() {
        let e = ens(3, 4);
        let p = PathValues::from_state(&e, 3, 1, |v, o| {
            o[0] = v.w();
            Ok(())
        })
        .unwrap();
        assert!(p.at_later_knot(4).is_ok());
        assert!(matches!(p.at_later_knot(2), Err(BsdeError::Anticipating(_))));
    }
}
