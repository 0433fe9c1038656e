//! The discrete information state: what a path has revealed by a given knot.

use serde::{Deserialize, Serialize};

use crate::ensemble::PathEnsemble;
use crate::error::{BsdeError, Result};

/// Read-only view of one path at one knot.
///
/// Current values are always available. Anything from a later knot is refused
/// with [`BsdeError::Anticipating`], which is how builders enforce adaptedness.
#[derive(Clone, Copy)]
pub struct KnotView<'a> {
    ens: &'a PathEnsemble,
    path: usize,
    knot: usize,
}

impl<'a> KnotView<'a> {
    pub fn new(ens: &'a PathEnsemble, path: usize, knot: usize) -> Self {
        debug_assert!(path < ens.n_paths() && knot < ens.n_knots());
        Self { ens, path, knot }
    }

    pub fn ensemble(&self) -> &'a PathEnsemble {
        self.ens
    }
    pub fn path(&self) -> usize {
        self.path
    }
    pub fn knot(&self) -> usize {
        self.knot
    }
    pub fn time(&self) -> f64 {
        self.ens.grid().time(self.knot)
    }

    /// `w(t_j)` on this path.
    pub fn w(&self) -> f64 {
        self.ens.w(self.path, self.knot)
    }

    /// `w'(t_j)` when the filtration carries a second Brownian motion.
    pub fn w_aux(&self) -> Option<f64> {
        self.ens.aux_w(self.path, self.knot)
    }

    /// The initially revealed variable, when present.
    pub fn xi(&self) -> Option<f64> {
        self.ens.xi(self.path)
    }

    fn guard(&self, k: usize, what: &str) -> Result<()> {
        if k > self.knot {
            Err(BsdeError::Anticipating(format!(
                "{what} at knot {k} requested while building knot {}",
                self.knot
            )))
        } else {
            Ok(())
        }
    }

    /// Past level `w(t_k)`, `k <= j`.
    pub fn w_at(&self, k: usize) -> Result<f64> {
        self.guard(k, "w")?;
        Ok(self.ens.w(self.path, k))
    }

    /// Past level `w'(t_k)`, `k <= j`.
    pub fn w_aux_at(&self, k: usize) -> Result<Option<f64>> {
        self.guard(k, "w'")?;
        Ok(self.ens.aux_w(self.path, k))
    }

    /// Increment `w(t_{k+1}) - w(t_k)`, known once `k + 1 <= j`.
    pub fn dw(&self, k: usize) -> Result<f64> {
        self.guard(k + 1, "increment of w")?;
        Ok(self.ens.dw(self.path, k))
    }

    /// Increment of `w'` over step `k`, known once `k + 1 <= j`.
    pub fn aux_dw(&self, k: usize) -> Result<Option<f64>> {
        self.guard(k + 1, "increment of w'")?;
        Ok(self.ens.aux_dw(self.path, k))
    }

    /// State features at this knot: `w`, then `w'` or `xi` when the model has one.
    pub fn features(&self, out: &mut Vec<f64>) {
        out.clear();
        out.push(self.w());
        if let Some(a) = self.w_aux() {
            out.push(a);
        }
        if let Some(x) = self.xi() {
            out.push(x);
        }
    }
}

/// Monomials in the state features up to a total degree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Monomials {
    n_vars: usize,
    degree: usize,
    interactions: bool,
    /// Exponent tuples, graded by total degree; the first entry is the constant.
    exponents: Vec<Vec<u8>>,
}

impl Monomials {
    pub fn new(n_vars: usize, degree: usize, interactions: bool) -> Self {
        let mut exponents = Vec::new();
        for total in 0..=degree {
            let mut current = vec![0u8; n_vars];
            collect(&mut exponents, &mut current, 0, total, interactions);
        }
        Self {
            n_vars,
            degree,
            interactions,
            exponents,
        }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn exponents(&self) -> &[Vec<u8>] {
        &self.exponents
    }

    /// Evaluate every monomial at `x` into `out`.
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_vars);
        for (o, e) in out.iter_mut().zip(&self.exponents) {
            let mut v = 1.0;
            for (xi, &p) in x.iter().zip(e) {
                if p > 0 {
                    v *= xi.powi(p as i32);
                }
            }
            *o = v;
        }
    }

    /// Human-readable label, e.g. `w^2*w'`.
    pub fn label(&self, k: usize, names: &[&str]) -> String {
        let parts: Vec<String> = self.exponents[k]
            .iter()
            .zip(names)
            .filter(|(p, _)| **p > 0)
            .map(|(p, n)| if *p == 1 { n.to_string() } else { format!("{n}^{p}") })
            .collect();
        if parts.is_empty() {
            "1".into()
        } else {
            parts.join("*")
        }
    }
}

fn collect(out: &mut Vec<Vec<u8>>, current: &mut [u8], var: usize, remaining: usize, interactions: bool) {
    if var == current.len() {
        if remaining == 0 {
            out.push(current.to_vec());
        }
        return;
    }
    for p in (0..=remaining).rev() {
        if !interactions && p > 0 && current[..var].iter().any(|&q| q > 0) {
            continue;
        }
        current[var] = p as u8;
        collect(out, current, var + 1, remaining - p, interactions);
        current[var] = 0;
    }
}

/// Names of the state features for a model, in [`KnotView::features`] order.
pub fn feature_names(ens: &PathEnsemble) -> Vec<&'static str> {
    let mut names = vec!["w"];
    if ens.model().has_aux_noise() {
        names.push("w'");
    }
    if ens.model().has_initial_variable() {
        names.push("xi");
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::FiltrationModel;
    use crate::grid::TimeGrid;

    #[test]
    fn monomial_counts() {
        assert_eq!(Monomials::new(1, 3, true).len(), 4);
        assert_eq!(Monomials::new(2, 3, true).len(), 10);
        assert_eq!(Monomials::new(3, 3, true).len(), 20);
        assert_eq!(Monomials::new(2, 3, false).len(), 7);
        assert_eq!(Monomials::new(2, 0, true).len(), 1);
    }

    #[test]
    fn monomials_are_graded_and_start_with_constant() {
        let m = Monomials::new(2, 2, true);
        assert_eq!(m.exponents()[0], vec![0, 0]);
        let degrees: Vec<u8> = m.exponents().iter().map(|e| e.iter().sum()).collect();
        assert!(degrees.windows(2).all(|d| d[0] <= d[1]));
        let mut out = vec![0.0; m.len()];
        m.eval(&[2.0, 3.0], &mut out);
        assert_eq!(out, vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
        assert_eq!(m.label(4, &["w", "w'"]), "w*w'");
    }

    #[test]
    fn future_information_is_refused() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        let e = PathEnsemble::simulate(&g, FiltrationModel::EnlargedBrownian, 2, 0).unwrap();
        let v = KnotView::new(&e, 1, 2);
        assert!(v.w_at(2).is_ok());
        assert!(matches!(v.w_at(3), Err(BsdeError::Anticipating(_))));
        assert!(v.dw(1).is_ok());
        assert!(v.dw(2).is_err());
        assert!(v.aux_dw(2).is_err());
        let mut f = Vec::new();
        v.features(&mut f);
        assert_eq!(f, vec![e.w(1, 2), e.aux_w(1, 2).unwrap()]);
    }
}
