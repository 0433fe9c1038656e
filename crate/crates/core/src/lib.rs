//! Numerical transposition solutions of backward stochastic differential
//! equations `dy = f(t, y, Y) dt + Y dw`, `y(T) = y_T`, under filtrations that
//! may be strictly larger than the one generated by `w`.
//!
//! * [`ensemble`], [`state`], [`process`]: scenario sets, information
//!   states, adapted processes, Itô and time integrals, norms.
//! * [`forward`]: the forward test processes `dz = u dτ + v dw`.
//! * [`condexp`]: regression estimates of `E(· | F_t)`.
//! * [`basis`], [`linear`]: Galerkin projection for `Y` and the linear solver.
//! * [`driver`], [`terminal`], [`picard`]: registries and the windowed Picard solver.
//! * [`verification`]: duality residuals, orthogonal decomposition,
//!   comparison, time consistency and refinement studies.
//! * [`cache`]: bit-exact ensemble persistence.

pub mod basis;
pub mod cache;
pub mod condexp;
pub mod driver;
pub mod ensemble;
pub mod error;
pub mod forward;
pub mod grid;
pub mod linear;
pub mod picard;
pub mod process;
pub mod registry;
pub mod state;
pub mod stats;
pub mod terminal;
pub mod verification;

pub use basis::{GalerkinBasis, GramRidge};
pub use condexp::{RegressionSpec, Ridge};
pub use driver::Driver;
pub use ensemble::{FiltrationModel, PathEnsemble, XiLaw};
pub use error::{BsdeError, Result};
pub use grid::TimeGrid;
pub use linear::{GalerkinTarget, LinearBsdeProblem, LinearSpec, TranspositionSolution};
pub use picard::PicardConfig;
pub use process::{AdaptedProcess, PathValues};
pub use terminal::TerminalCondition;
