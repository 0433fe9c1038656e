use serde::{Deserialize, Serialize};

use crate::error::{BsdeError, Result};

/// Partition `0 = t_0 < t_1 < ... < t_J = T` of the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    /// `steps + 1` equally spaced knots on `[0, horizon]`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(BsdeError::Config(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(BsdeError::Config("grid needs at least one step".into()));
        }
        let mut knots: Vec<f64> = (0..=steps)
            .map(|j| horizon * j as f64 / steps as f64)
            .collect();
        knots[steps] = horizon;
        Ok(Self { knots })
    }

    /// Arbitrary knots; must start at zero and increase strictly.
    pub fn from_knots(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(BsdeError::Config("grid needs at least two knots".into()));
        }
        if knots[0] != 0.0 {
            return Err(BsdeError::Config("first knot must be 0".into()));
        }
        if knots.iter().any(|t| !t.is_finite()) || knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(BsdeError::Config(
                "knots must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { knots })
    }

    pub fn horizon(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Number of steps `J`.
    pub fn steps(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn n_knots(&self) -> usize {
        self.knots.len()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn time(&self, j: usize) -> f64 {
        self.knots[j]
    }

    /// `Δt_j = t_{j+1} - t_j`, defined for `j < J`.
    pub fn dt(&self, j: usize) -> f64 {
        self.knots[j + 1] - self.knots[j]
    }

    pub fn max_dt(&self) -> f64 {
        (0..self.steps()).map(|j| self.dt(j)).fold(0.0, f64::max)
    }

    pub fn check_knot(&self, j: usize) -> Result<()> {
        if j > self.steps() {
            Err(BsdeError::KnotRange {
                index: j,
                last: self.steps(),
            })
        } else {
            Ok(())
        }
    }

    /// Index of the first knot at or after `t` (within a relative slack).
    pub fn knot_at_or_after(&self, t: f64) -> usize {
        let slack = 1e-9 * self.horizon();
        self.knots
            .iter()
            .position(|&k| k >= t - slack)
            .unwrap_or(self.steps())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_quarter_grid() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        assert_eq!(g.knots(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.steps(), 4);
    }

    #[test]
    fn single_step_grid() {
        let g = TimeGrid::uniform(2.0, 1).unwrap();
        assert_eq!(g.knots(), &[0.0, 2.0]);
        assert_eq!(g.dt(0), 2.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(TimeGrid::uniform(1.0, 0), Err(BsdeError::Config(_))));
        assert!(matches!(TimeGrid::uniform(0.0, 4), Err(BsdeError::Config(_))));
        assert!(matches!(TimeGrid::uniform(-1.0, 4), Err(BsdeError::Config(_))));
        assert!(TimeGrid::from_knots(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeGrid::from_knots(vec![0.1, 0.5]).is_err());
    }

    #[test]
    fn last_knot_is_exact_horizon() {
        let g = TimeGrid::uniform(0.7, 3).unwrap();
        assert_eq!(g.horizon(), 0.7);
        assert!(g.knots().windows(2).all(|w| w[1] > w[0]));
    }
}
