//! The forward test dynamic `dz = u dτ + v dw`, `z(t) = η`, used as the
//! probe family of the duality that defines transposition solutions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::PathEnsemble;
use crate::error::{BsdeError, Result};
use crate::process::{l2_l2_norm_window, sup_l2_norm_window, AdaptedProcess, PathValues};

/// Data of one forward test process started at knot `start`.
#[derive(Debug, Clone)]
pub struct TestProcessInput {
    pub start: usize,
    /// Initial value; must be measurable at `start`.
    pub eta: PathValues,
    /// Drift, used on knots `start..J`.
    pub u: AdaptedProcess,
    /// Diffusion, used on knots `start..J`.
    pub v: AdaptedProcess,
}

impl TestProcessInput {
    pub fn dim(&self) -> usize {
        self.eta.dim()
    }

    pub fn validate(&self, ens: &PathEnsemble) -> Result<()> {
        ens.grid().check_knot(self.start)?;
        if self.eta.ensemble() != ens.id() {
            return Err(BsdeError::EnsembleMismatch);
        }
        if self.eta.knot() > self.start {
            return Err(BsdeError::Anticipating(format!(
                "initial value is known only at knot {}, process starts at knot {}",
                self.eta.knot(),
                self.start
            )));
        }
        self.u.check_on(ens)?;
        self.v.check_on(ens)?;
        if self.u.dim() != self.dim() || self.v.dim() != self.dim() {
            return Err(BsdeError::Dimension(format!(
                "eta has dimension {}, u {}, v {}",
                self.dim(),
                self.u.dim(),
                self.v.dim()
            )));
        }
        Ok(())
    }
}

/// Euler scheme `z_{j+1} = z_j + u_j Δt_j + v_j Δw_j` from `z_{start} = η`.
/// Knots before `start` hold zero.
pub fn simulate_test_process(ens: &PathEnsemble, input: &TestProcessInput) -> Result<AdaptedProcess> {
    input.validate(ens)?;
    let dim = input.dim();
    let grid = ens.grid();
    let mut z = AdaptedProcess::zeros(ens, dim);
    let start = input.start;
    z.par_paths_mut().enumerate().for_each(|(i, row)| {
        row[start * dim..(start + 1) * dim].copy_from_slice(input.eta.get(i));
        for j in start..grid.steps() {
            let dt = grid.dt(j);
            let dw = ens.dw(i, j);
            let (u, v) = (input.u.value(i, j), input.v.value(i, j));
            for k in 0..dim {
                row[(j + 1) * dim + k] = row[j * dim + k] + u[k] * dt + v[k] * dw;
            }
        }
    });
    Ok(z)
}

/// A ratio that may be undefined (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ratio {
    Defined(f64),
    /// `0/0` or `x/0`; `numerator` tells the two apart.
    Undefined { numerator: f64 },
}

impl Ratio {
    pub fn new(numerator: f64, denominator: f64) -> Self {
        if denominator > 0.0 {
            Ratio::Defined(numerator / denominator)
        } else {
            Ratio::Undefined { numerator }
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Ratio::Defined(v) => Some(*v),
            Ratio::Undefined { .. } => None,
        }
    }
}

/// `‖z‖_{sup-L²} / (‖u‖ + ‖v‖ + rms(η))` over `[start, T]`.
pub fn test_process_bound_ratio(ens: &PathEnsemble, z: &AdaptedProcess, input: &TestProcessInput) -> Result<Ratio> {
    input.validate(ens)?;
    z.check_on(ens)?;
    let (s, end) = (input.start, ens.steps());
    let num = sup_l2_norm_window(z, s, end);
    let den = l2_l2_norm_window(ens, &input.u, s, end) + l2_l2_norm_window(ens, &input.v, s, end) + input.eta.rms();
    Ok(Ratio::new(num, den))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::FiltrationModel;
    use crate::grid::TimeGrid;

    fn ens() -> PathEnsemble {
        PathEnsemble::simulate(&TimeGrid::uniform(1.0, 8).unwrap(), FiltrationModel::Natural, 16, 9).unwrap()
    }

    fn input(e: &PathEnsemble, start: usize, eta: f64, u: f64, v: f64) -> TestProcessInput {
        TestProcessInput {
            start,
            eta: PathValues::constant(e, start, &[eta]).unwrap(),
            u: AdaptedProcess::constant(e, &[u]),
            v: AdaptedProcess::constant(e, &[v]),
        }
    }

    #[test]
    fn closed_form_examples() {
        let e = ens();
        let z = simulate_test_process(&e, &input(&e, 0, 1.0, 0.0, 0.0)).unwrap();
        assert!(z.as_slice().iter().all(|v| *v == 1.0));
        let z = simulate_test_process(&e, &input(&e, 0, 0.0, 1.0, 0.0)).unwrap();
        for i in 0..16 {
            for j in 0..=8 {
                assert!((z.at(i, j, 0) - e.grid().time(j)).abs() < 1e-14);
            }
        }
        let z = simulate_test_process(&e, &input(&e, 0, 0.0, 0.0, 1.0)).unwrap();
        for i in 0..16 {
            for j in 0..=8 {
                assert!((z.at(i, j, 0) - e.w(i, j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn ratio_examples() {
        let e = ens();
        let inp = input(&e, 0, 1.0, 0.0, 0.0);
        let z = simulate_test_process(&e, &inp).unwrap();
        assert_eq!(test_process_bound_ratio(&e, &z, &inp).unwrap(), Ratio::Defined(1.0));
        let inp = input(&e, 3, 0.0, 0.0, 0.0);
        let z = simulate_test_process(&e, &inp).unwrap();
        assert_eq!(
            test_process_bound_ratio(&e, &z, &inp).unwrap(),
            Ratio::Undefined { numerator: 0.0 }
        );
    }

    #[test]
    fn anticipating_initial_value_is_rejected() {
        let e = ens();
        let mut inp = input(&e, 2, 0.0, 0.0, 0.0);
        inp.eta = PathValues::from_state(&e, 5, 1, |v, o| {
            o[0] = v.w();
            Ok(())
        })
        .unwrap();
        assert!(matches!(simulate_test_process(&e, &inp), Err(BsdeError::Anticipating(_))));
    }
}
