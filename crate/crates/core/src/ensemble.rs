//! Seeded Brownian scenario sets for the supported filtration models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BsdeError, Result};
use crate::grid::TimeGrid;

/// Law of the variable revealed at time zero under [`FiltrationModel::InitialEnlargement`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum XiLaw {
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
}

impl XiLaw {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            XiLaw::Normal { mean, std } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + std * z
            }
            XiLaw::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            XiLaw::Normal { mean, std } => mean.is_finite() && std.is_finite() && std >= 0.0,
            XiLaw::Uniform { low, high } => low.is_finite() && high.is_finite() && high >= low,
        };
        if ok {
            Ok(())
        } else {
            Err(BsdeError::Config(format!("invalid initial-variable law {self:?}")))
        }
    }
}

/// Which information the filtration carries beyond the driving Brownian motion `w`.
///
/// * `Natural`: generated by `w` alone.
/// * `EnlargedBrownian`: generated by `w` and an independent Brownian motion `w'`.
/// * `InitialEnlargement`: generated by `w` and a variable `xi` known at time zero,
///   independent of `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FiltrationModel {
    Natural,
    EnlargedBrownian,
    InitialEnlargement { xi: XiLaw },
}

impl FiltrationModel {
    pub fn tag(&self) -> u8 {
        match self {
            FiltrationModel::Natural => 0,
            FiltrationModel::EnlargedBrownian => 1,
            FiltrationModel::InitialEnlargement { .. } => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FiltrationModel::Natural => "natural",
            FiltrationModel::EnlargedBrownian => "enlarged-brownian",
            FiltrationModel::InitialEnlargement { .. } => "initial-enlargement",
        }
    }

    pub fn has_aux_noise(&self) -> bool {
        matches!(self, FiltrationModel::EnlargedBrownian)
    }

    pub fn has_initial_variable(&self) -> bool {
        matches!(self, FiltrationModel::InitialEnlargement { .. })
    }

    /// Number of state features exposed at each knot (`w`, then `w'` or `xi`).
    pub fn n_state_features(&self) -> usize {
        match self {
            FiltrationModel::Natural => 1,
            _ => 2,
        }
    }
}

/// Noise channels; each (path, channel) pair owns its own generator stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Primary = 0,
    Auxiliary = 1,
    Initial = 2,
}

/// Generator for one (path, channel) pair, derived from the master seed only.
pub fn stream_rng(seed: u64, path: usize, channel: Channel) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((path as u64) << 2) | channel as u64);
    rng
}

/// Identity of an ensemble, used to refuse mixing processes from different scenario sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnsembleId(pub u64);

fn fingerprint(grid: &TimeGrid, model: &FiltrationModel, n_paths: usize, seed: u64) -> EnsembleId {
    // FNV-1a over the defining parameters.
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(&seed.to_le_bytes());
    eat(&(n_paths as u64).to_le_bytes());
    eat(&[model.tag()]);
    if let FiltrationModel::InitialEnlargement { xi } = model {
        let (a, b) = match *xi {
            XiLaw::Normal { mean, std } => (mean, std),
            XiLaw::Uniform { low, high } => (low, high),
        };
        eat(&a.to_bits().to_le_bytes());
        eat(&b.to_bits().to_le_bytes());
    }
    for t in grid.knots() {
        eat(&t.to_bits().to_le_bytes());
    }
    EnsembleId(h)
}

/// An immutable scenario set: `N` paths of Brownian increments on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: TimeGrid,
    model: FiltrationModel,
    n_paths: usize,
    seed: u64,
    id: EnsembleId,
    /// `dw[i * J + j]`
    dw: Vec<f64>,
    /// `w[i * (J + 1) + j]`
    w: Vec<f64>,
    aux_dw: Option<Vec<f64>>,
    aux_w: Option<Vec<f64>>,
    xi: Option<Vec<f64>>,
}

fn levels(dw: &[f64], steps: usize) -> Vec<f64> {
    let n_paths = dw.len() / steps;
    let mut w = vec![0.0; n_paths * (steps + 1)];
    for (inc, lvl) in dw.chunks(steps).zip(w.chunks_mut(steps + 1)) {
        let mut acc = 0.0;
        for j in 0..steps {
            acc += inc[j];
            lvl[j + 1] = acc;
        }
    }
    w
}

impl PathEnsemble {
    /// Simulate `n_paths` scenarios. Deterministic in `(grid, model, n_paths, seed)`.
    pub fn simulate(grid: &TimeGrid, model: FiltrationModel, n_paths: usize, seed: u64) -> Result<Self> {
        if n_paths == 0 {
            return Err(BsdeError::Config("ensemble needs at least one path".into()));
        }
        if let FiltrationModel::InitialEnlargement { xi } = &model {
            xi.validate()?;
        }
        let steps = grid.steps();
        let sqrt_dt: Vec<f64> = (0..steps).map(|j| grid.dt(j).sqrt()).collect();
        let draw = |channel: Channel| -> Vec<f64> {
            let mut dw = vec![0.0; n_paths * steps];
            dw.par_chunks_mut(steps).enumerate().for_each(|(i, row)| {
                let mut rng = stream_rng(seed, i, channel);
                for (x, s) in row.iter_mut().zip(&sqrt_dt) {
                    let z: f64 = rng.sample(StandardNormal);
                    *x = s * z;
                }
            });
            dw
        };
        let dw = draw(Channel::Primary);
        let aux_dw = model.has_aux_noise().then(|| draw(Channel::Auxiliary));
        let xi = match &model {
            FiltrationModel::InitialEnlargement { xi } => Some(
                (0..n_paths)
                    .map(|i| xi.sample(&mut stream_rng(seed, i, Channel::Initial)))
                    .collect(),
            ),
            _ => None,
        };
        Self::from_parts(grid.clone(), model, n_paths, seed, dw, aux_dw, xi)
    }

    /// Assemble an ensemble from stored noise (used by the cache reader and by coarsening).
    pub fn from_parts(
        grid: TimeGrid,
        model: FiltrationModel,
        n_paths: usize,
        seed: u64,
        dw: Vec<f64>,
        aux_dw: Option<Vec<f64>>,
        xi: Option<Vec<f64>>,
    ) -> Result<Self> {
        let steps = grid.steps();
        if n_paths == 0 || dw.len() != n_paths * steps {
            return Err(BsdeError::Dimension(format!(
                "expected {} primary increments, got {}",
                n_paths * steps,
                dw.len()
            )));
        }
        if model.has_aux_noise() != aux_dw.is_some()
            || aux_dw.as_ref().is_some_and(|a| a.len() != n_paths * steps)
        {
            return Err(BsdeError::Dimension(
                "auxiliary increments do not match the filtration model".into(),
            ));
        }
        if model.has_initial_variable() != xi.is_some()
            || xi.as_ref().is_some_and(|x| x.len() != n_paths)
        {
            return Err(BsdeError::Dimension(
                "initial variables do not match the filtration model".into(),
            ));
        }
        let w = levels(&dw, steps);
        let aux_w = aux_dw.as_ref().map(|a| levels(a, steps));
        let id = fingerprint(&grid, &model, n_paths, seed);
        Ok(Self {
            grid,
            model,
            n_paths,
            seed,
            id,
            dw,
            w,
            aux_dw,
            aux_w,
            xi,
        })
    }

    /// Same paths observed on a grid with every `factor` consecutive steps merged.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let steps = self.steps();
        if factor == 0 || !steps.is_multiple_of(factor) {
            return Err(BsdeError::Config(format!(
                "coarsening factor {factor} does not divide {steps} steps"
            )));
        }
        let coarse_steps = steps / factor;
        let knots: Vec<f64> = (0..=coarse_steps).map(|j| self.grid.time(j * factor)).collect();
        let grid = TimeGrid::from_knots(knots)?;
        let merge = |inc: &[f64]| -> Vec<f64> {
            inc.chunks(steps)
                .flat_map(|row| row.chunks(factor).map(|c| c.iter().sum::<f64>()))
                .collect()
        };
        let mut out = Self::from_parts(
            grid,
            self.model,
            self.n_paths,
            self.seed,
            merge(&self.dw),
            self.aux_dw.as_deref().map(merge),
            self.xi.clone(),
        )?;
        if factor > 1 {
            let mut h = self.id.0 ^ 0x9e37_79b9_7f4a_7c15;
            h = h.wrapping_mul(0x0100_0000_01b3) ^ factor as u64;
            out.id = EnsembleId(h.wrapping_mul(0x0100_0000_01b3));
        }
        Ok(out)
    }

    /// The first `n` paths. Streams are per path, so this equals simulating `n` paths directly.
    pub fn leading_paths(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n_paths {
            return Err(BsdeError::Config(format!(
                "cannot take {n} paths from an ensemble of {}",
                self.n_paths
            )));
        }
        if n == self.n_paths {
            return Ok(self.clone());
        }
        let steps = self.steps();
        let mut out = Self::from_parts(
            self.grid.clone(),
            self.model,
            n,
            self.seed,
            self.dw[..n * steps].to_vec(),
            self.aux_dw.as_ref().map(|a| a[..n * steps].to_vec()),
            self.xi.as_ref().map(|x| x[..n].to_vec()),
        )?;
        if self.id != fingerprint(&self.grid, &self.model, self.n_paths, self.seed) {
            let mut h = self.id.0 ^ 0x5151_5151;
            h = h.wrapping_mul(0x0100_0000_01b3) ^ n as u64;
            out.id = EnsembleId(h.wrapping_mul(0x0100_0000_01b3));
        }
        Ok(out)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn model(&self) -> &FiltrationModel {
        &self.model
    }
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn id(&self) -> EnsembleId {
        self.id
    }
    pub fn steps(&self) -> usize {
        self.grid.steps()
    }
    pub fn n_knots(&self) -> usize {
        self.grid.n_knots()
    }

    pub fn dw(&self, path: usize, j: usize) -> f64 {
        self.dw[path * self.steps() + j]
    }

    pub fn w(&self, path: usize, j: usize) -> f64 {
        self.w[path * self.n_knots() + j]
    }

    pub fn aux_dw(&self, path: usize, j: usize) -> Option<f64> {
        let steps = self.steps();
        self.aux_dw.as_ref().map(|a| a[path * steps + j])
    }

    pub fn aux_w(&self, path: usize, j: usize) -> Option<f64> {
        let k = self.n_knots();
        self.aux_w.as_ref().map(|a| a[path * k + j])
    }

    pub fn xi(&self, path: usize) -> Option<f64> {
        self.xi.as_ref().map(|x| x[path])
    }

    /// Raw primary increments, path-major.
    pub fn increments(&self) -> &[f64] {
        &self.dw
    }
    pub fn aux_increments(&self) -> Option<&[f64]> {
        self.aux_dw.as_deref()
    }
    pub fn initial_variables(&self) -> Option<&[f64]> {
        self.xi.as_deref()
    }

    /// Primary increments at step `j` across paths.
    pub fn increment_column(&self, j: usize) -> Vec<f64> {
        (0..self.n_paths).map(|i| self.dw(i, j)).collect()
    }

    pub fn aux_increment_column(&self, j: usize) -> Option<Vec<f64>> {
        self.aux_dw
            .as_ref()
            .map(|_| (0..self.n_paths).map(|i| self.aux_dw(i, j).unwrap()).collect())
    }
}
