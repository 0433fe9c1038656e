//! Terminal conditions `y_T`, evaluated from the information state at `T`.

use std::fmt::Debug;

use crate::ensemble::PathEnsemble;
use crate::error::{BsdeError, Result};
use crate::process::PathValues;
use crate::registry::{param, Params, Registry};
use crate::state::KnotView;

pub trait TerminalCondition: Send + Sync + Debug {
    fn name(&self) -> &str;

    fn dim(&self) -> usize {
        1
    }

    /// Value at the final knot. Only information up to `T` is reachable through `at`.
    fn eval(&self, at: &KnotView, out: &mut [f64]) -> Result<()>;

    /// Reject ensembles that lack the noise this terminal reads.
    fn check_model(&self, _ens: &PathEnsemble) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl TerminalCondition for Constant {
    fn name(&self) -> &str {
        "constant"
    }
    fn eval(&self, _: &KnotView, out: &mut [f64]) -> Result<()> {
        out[0] = self.0;
        Ok(())
    }
}

/// `scale · w(T) + shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrownianLevel {
    pub scale: f64,
    pub shift: f64,
}

impl TerminalCondition for BrownianLevel {
    fn name(&self) -> &str {
        "w(T)"
    }
    fn eval(&self, at: &KnotView, out: &mut [f64]) -> Result<()> {
        out[0] = self.scale * at.w() + self.shift;
        Ok(())
    }
}

/// `scale · w(T)² + shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrownianSquare {
    pub scale: f64,
    pub shift: f64,
}

impl TerminalCondition for BrownianSquare {
    fn name(&self) -> &str {
        "w(T)^2"
    }
    fn eval(&self, at: &KnotView, out: &mut [f64]) -> Result<()> {
        out[0] = self.scale * at.w() * at.w() + self.shift;
        Ok(())
    }
}

fn need_aux(ens: &PathEnsemble, name: &str) -> Result<()> {
    if ens.model().has_aux_noise() {
        Ok(())
    } else {
        Err(BsdeError::Config(format!(
            "terminal `{name}` needs the enlarged-brownian filtration, ensemble is {}",
            ens.model().name()
        )))
    }
}

/// `scale · w'(T) + shift` for the auxiliary Brownian motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxLevel {
    pub scale: f64,
    pub shift: f64,
}

impl TerminalCondition for AuxLevel {
    fn name(&self) -> &str {
        "w'(T)"
    }
    fn eval(&self, at: &KnotView, out: &mut [f64]) -> Result<()> {
        let a = at
            .w_aux()
            .ok_or_else(|| BsdeError::Config("w'(T) needs an auxiliary noise".into()))?;
        out[0] = self.scale * a + self.shift;
        Ok(())
    }
    fn check_model(&self, ens: &PathEnsemble) -> Result<()> {
        need_aux(ens, self.name())
    }
}

/// Discrete integral `Σ_j g(t_j) Δw'_j` with `g(t) = g0 + g1·t`, plus `shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxIntegral {
    pub g0: f64,
    pub g1: f64,
    pub shift: f64,
}

impl TerminalCondition for AuxIntegral {
    fn name(&self) -> &str {
        "integral-of-g-dw'"
    }
    fn eval(&self, at: &KnotView, out: &mut [f64]) -> Result<()> {
        let grid = at.ensemble().grid();
        let mut acc = 0.0;
        for k in 0..at.knot() {
            let dw = at
                .aux_dw(k)?
                .ok_or_else(|| BsdeError::Config("integral of g dw' needs an auxiliary noise".into()))?;
            acc += (self.g0 + self.g1 * grid.time(k)) * dw;
        }
        out[0] = acc + self.shift;
        Ok(())
    }
    fn check_model(&self, ens: &PathEnsemble) -> Result<()> {
        need_aux(ens, self.name())
    }
}

pub type TerminalRegistry = Registry<dyn TerminalCondition>;

pub fn standard_terminals() -> TerminalRegistry {
    let mut r = TerminalRegistry::new("terminal condition");
    r.register("constant", &["value"], "y_T = value", |p: &Params| {
        Ok(Box::new(Constant(param(p, "value", 0.0))))
    });
    r.register("w(T)", &["scale", "shift"], "y_T = scale*w(T) + shift", |p: &Params| {
        Ok(Box::new(BrownianLevel {
            scale: param(p, "scale", 1.0),
            shift: param(p, "shift", 0.0),
        }))
    });
    r.register("w(T)^2", &["scale", "shift"], "y_T = scale*w(T)^2 + shift", |p: &Params| {
        Ok(Box::new(BrownianSquare {
            scale: param(p, "scale", 1.0),
            shift: param(p, "shift", 0.0),
        }))
    });
    r.register("w'(T)", &["scale", "shift"], "y_T = scale*w'(T) + shift", |p: &Params| {
        Ok(Box::new(AuxLevel {
            scale: param(p, "scale", 1.0),
            shift: param(p, "shift", 0.0),
        }))
    });
    r.register(
        "integral-of-g-dw'",
        &["g0", "g1", "shift"],
        "y_T = sum_j (g0 + g1*t_j) dw'_j + shift",
        |p: &Params| {
            Ok(Box::new(AuxIntegral {
                g0: param(p, "g0", 1.0),
                g1: param(p, "g1", 0.0),
                shift: param(p, "shift", 0.0),
            }))
        },
    );
    r
}

/// Evaluate `y_T` on every path.
pub fn terminal_values(term: &dyn TerminalCondition, ens: &PathEnsemble) -> Result<PathValues> {
    term.check_model(ens)?;
    PathValues::from_state(ens, ens.steps(), term.dim(), |v, out| term.eval(v, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::FiltrationModel;
    use crate::grid::TimeGrid;
    use crate::registry::params;

    #[test]
    fn registry_terminals_evaluate() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        let e = PathEnsemble::simulate(&g, FiltrationModel::EnlargedBrownian, 5, 2).unwrap();
        let r = standard_terminals();
        let sq = terminal_values(r.build("w(T)^2", &params([("shift", 1.0)])).unwrap().as_ref(), &e).unwrap();
        let aux = terminal_values(r.build("w'(T)", &Params::new()).unwrap().as_ref(), &e).unwrap();
        let int = terminal_values(r.build("integral-of-g-dw'", &Params::new()).unwrap().as_ref(), &e).unwrap();
        for i in 0..5 {
            assert!((sq.get(i)[0] - e.w(i, 4).powi(2) - 1.0).abs() < 1e-14);
            assert_eq!(aux.get(i)[0], e.aux_w(i, 4).unwrap());
            assert!((int.get(i)[0] - e.aux_w(i, 4).unwrap()).abs() < 1e-13);
        }
        assert_eq!(sq.knot(), 4);
    }

    #[test]
    fn auxiliary_terminal_needs_enlarged_model() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        let e = PathEnsemble::simulate(&g, FiltrationModel::Natural, 5, 2).unwrap();
        let r = standard_terminals();
        assert!(terminal_values(r.build("w'(T)", &Params::new()).unwrap().as_ref(), &e).is_err());
        assert!(matches!(r.build("w(T)^3", &Params::new()), Err(BsdeError::UnknownName { .. })));
    }
}
