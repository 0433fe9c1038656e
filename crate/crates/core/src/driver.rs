//! Drivers `f(t, y, Y)` of the semilinear equation `dy = f dt + Y dw`.

use std::fmt::Debug;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ensemble::PathEnsemble;
use crate::error::{BsdeError, Result};
use crate::registry::{param, Params, Registry};
use crate::state::KnotView;

/// A driver with a declared Lipschitz constant `K`:
/// `|f(t,p₁,q₁) − f(t,p₂,q₂)| ≤ K(|p₁−p₂| + |q₁−q₂|)`.
pub trait Driver: Send + Sync + Debug {
    fn name(&self) -> &str;

    fn lipschitz(&self) -> f64;

    /// Evaluate at the information state `at`, solution value `y` and `Y` value `z`.
    fn eval(&self, at: &KnotView, y: &[f64], z: &[f64], out: &mut [f64]);

    /// True when the driver ignores `(y, Y)`; such drivers reduce to one linear solve.
    fn is_state_free(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDriver;

impl Driver for ZeroDriver {
    fn name(&self) -> &str {
        "zero"
    }
    fn lipschitz(&self) -> f64 {
        0.0
    }
    fn eval(&self, _: &KnotView, _: &[f64], _: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn is_state_free(&self) -> bool {
        true
    }
}

/// `f = a·y + b·Y + c`, componentwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineDriver {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Driver for AffineDriver {
    fn name(&self) -> &str {
        "affine"
    }
    fn lipschitz(&self) -> f64 {
        self.a.abs().max(self.b.abs())
    }
    fn eval(&self, _: &KnotView, y: &[f64], z: &[f64], out: &mut [f64]) {
        for ((o, y), z) in out.iter_mut().zip(y).zip(z) {
            *o = self.a * y + self.b * z + self.c;
        }
    }
    fn is_state_free(&self) -> bool {
        self.a == 0.0 && self.b == 0.0
    }
}

/// `f = κ·sin(y) + c`, componentwise, with `K = |κ|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzSinDriver {
    pub kappa: f64,
    pub offset: f64,
}

impl Driver for LipschitzSinDriver {
    fn name(&self) -> &str {
        "lipschitz-sin"
    }
    fn lipschitz(&self) -> f64 {
        self.kappa.abs()
    }
    fn eval(&self, _: &KnotView, y: &[f64], _: &[f64], out: &mut [f64]) {
        for (o, y) in out.iter_mut().zip(y) {
            *o = self.kappa * y.sin() + self.offset;
        }
    }
    fn is_state_free(&self) -> bool {
        self.kappa == 0.0
    }
}

pub type DriverRegistry = Registry<dyn Driver>;

/// Registry with `zero`, `affine` and `lipschitz-sin`.
pub fn standard_drivers() -> DriverRegistry {
    let mut r = DriverRegistry::new("driver");
    r.register("zero", &[], "f = 0", |_| Ok(Box::new(ZeroDriver)));
    r.register("affine", &["a", "b", "c"], "f = a*y + b*Y + c", |p: &Params| {
        Ok(Box::new(AffineDriver {
            a: param(p, "a", 0.0),
            b: param(p, "b", 0.0),
            c: param(p, "c", 0.0),
        }))
    });
    r.register(
        "lipschitz-sin",
        &["kappa", "c"],
        "f = kappa*sin(y) + c, K = |kappa|",
        |p: &Params| {
            Ok(Box::new(LipschitzSinDriver {
                kappa: param(p, "kappa", 1.0),
                offset: param(p, "c", 0.0),
            }))
        },
    );
    r
}

/// Evaluate the driver along `(y, Y)` at every knot of `[start, end)`.
pub fn driver_process(
    driver: &dyn Driver,
    ens: &PathEnsemble,
    y: &crate::process::AdaptedProcess,
    z: &crate::process::AdaptedProcess,
    start: usize,
    end: usize,
) -> Result<crate::process::AdaptedProcess> {
    y.check_compatible(z)?;
    y.check_on(ens)?;
    let dim = y.dim();
    let mut out = crate::process::AdaptedProcess::zeros(ens, dim);
    use rayon::prelude::*;
    out.par_paths_mut().enumerate().for_each(|(i, row)| {
        for j in start..end {
            let view = KnotView::new(ens, i, j);
            driver.eval(&view, y.value(i, j), z.value(i, j), &mut row[j * dim..(j + 1) * dim]);
        }
    });
    Ok(out)
}

/// Number of random argument pairs drawn by [`audit_lipschitz`].
pub const AUDIT_PAIRS: usize = 1_000;

/// Spot-check the declared Lipschitz constant on random argument pairs.
/// Returns the largest observed ratio `|Δf| / (|Δp| + |Δq|)`.
pub fn audit_lipschitz(driver: &dyn Driver, ens: &PathEnsemble, dim: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let (mut f1, mut f2) = (vec![0.0; dim], vec![0.0; dim]);
    let draw = |rng: &mut ChaCha8Rng, scale: f64| -> Vec<f64> {
        (0..dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    for _ in 0..AUDIT_PAIRS {
        let i = rng.random_range(0..ens.n_paths());
        let j = rng.random_range(0..ens.steps());
        let view = KnotView::new(ens, i, j);
        let scale = 10f64.powf(rng.random_range(-2.0..1.0));
        let (p1, q1) = (draw(&mut rng, 3.0), draw(&mut rng, 3.0));
        let (p2, q2): (Vec<f64>, Vec<f64>) = (
            p1.iter().zip(draw(&mut rng, scale)).map(|(a, b)| a + b).collect(),
            q1.iter().zip(draw(&mut rng, scale)).map(|(a, b)| a + b).collect(),
        );
        driver.eval(&view, &p1, &q1, &mut f1);
        driver.eval(&view, &p2, &q2, &mut f2);
        let df = norm_diff(&f1, &f2);
        let dx = norm_diff(&p1, &p2) + norm_diff(&q1, &q2);
        if dx > 0.0 {
            worst = worst.max(df / dx);
        }
    }
    let declared = driver.lipschitz();
    if worst > declared * (1.0 + 1e-9) + 1e-12 {
        return Err(BsdeError::Lipschitz {
            name: driver.name().to_string(),
            declared,
            observed: worst,
        });
    }
    Ok(worst)
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::FiltrationModel;
    use crate::grid::TimeGrid;
    use crate::registry::params;

    fn ens() -> PathEnsemble {
        PathEnsemble::simulate(&TimeGrid::uniform(1.0, 4).unwrap(), FiltrationModel::Natural, 8, 1).unwrap()
    }

    #[test]
    fn registry_builds_named_drivers() {
        let r = standard_drivers();
        assert_eq!(r.names().collect::<Vec<_>>(), vec!["affine", "lipschitz-sin", "zero"]);
        let d = r.build("affine", &params([("a", 0.5), ("b", -2.0)])).unwrap();
        assert_eq!(d.lipschitz(), 2.0);
        let e = ens();
        let mut out = [0.0];
        d.eval(&KnotView::new(&e, 0, 0), &[2.0], &[1.0], &mut out);
        assert_eq!(out[0], -1.0);
        assert!(matches!(r.build("quadratic", &Params::new()), Err(BsdeError::UnknownName { .. })));
        assert!(r.build("affine", &params([("d", 1.0)])).is_err());
    }

    #[test]
    fn registry_drivers_pass_their_audit() {
        let e = ens();
        let r = standard_drivers();
        for (name, p) in [
            ("zero", Params::new()),
            ("affine", params([("a", 0.3), ("b", 0.2), ("c", 1.0)])),
            ("lipschitz-sin", params([("kappa", 2.0)])),
        ] {
            let d = r.build(name, &p).unwrap();
            let observed = audit_lipschitz(d.as_ref(), &e, 2, 7).unwrap();
            assert!(observed <= d.lipschitz() + 1e-12);
        }
    }

    #[derive(Debug)]
    struct Understated;
    impl Driver for Understated {
        fn name(&self) -> &str {
            "understated"
        }
        fn lipschitz(&self) -> f64 {
            0.1
        }
        fn eval(&self, _: &KnotView, y: &[f64], _: &[f64], out: &mut [f64]) {
            out[0] = 5.0 * y[0];
        }
    }

    #[test]
    fn audit_catches_understated_constant() {
        let err = audit_lipschitz(&Understated, &ens(), 1, 3).unwrap_err();
        assert!(matches!(err, BsdeError::Lipschitz { .. }));
    }
}
