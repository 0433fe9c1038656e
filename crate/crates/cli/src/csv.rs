//! Per-knot summary of a solution as plot-ready CSV.
//!
//! Columns: `t, y_mean, y_std, y_q05, y_q95, big_y_l2`. One header row, then
//! one row per knot `0..=J`. Numbers are written as `{:.16e}`, i.e. 17
//! significant digits, which round-trips every `f64`.

use std::fmt::Write as _;
use std::path::Path;

use bsde_core::stats;
use bsde_core::{PathEnsemble, TranspositionSolution};

use crate::error::CliError;

pub const HEADER: &str = "t,y_mean,y_std,y_q05,y_q95,big_y_l2";

/// Render the rows for the first component of `y` and the Euclidean norm of `Y`.
pub fn render_csv(sol: &TranspositionSolution, ens: &PathEnsemble) -> String {
    let mut out = String::with_capacity(64 * (ens.n_knots() + 1));
    out.push_str(HEADER);
    out.push('\n');
    for j in 0..ens.n_knots() {
        let y = sol.y.column(j, 0);
        let big_y_sq: Vec<f64> = (0..ens.n_paths())
            .map(|i| sol.big_y.value(i, j).iter().map(|v| v * v).sum())
            .collect();
        let row = [
            ens.grid().time(j),
            stats::mean(&y),
            stats::std_dev(&y),
            stats::quantile(&y, 0.05),
            stats::quantile(&y, 0.95),
            stats::mean(&big_y_sq).sqrt(),
        ];
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            write!(out, "{v:.16e}").expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    out
}

pub fn export_csv(sol: &TranspositionSolution, ens: &PathEnsemble, path: &Path) -> Result<(), CliError> {
    std::fs::write(path, render_csv(sol, ens)).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
