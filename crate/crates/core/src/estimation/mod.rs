//! Estimation kernels: Gauss–Newton WLS, the largest normalized residual
//! test, and weighted least absolute value estimation as a linear program.

mod lnr;
mod lp;
mod wlav;
mod wls;

use std::time::Duration;

use nalgebra::DVector;

use crate::powerflow::SystemState;

pub use lnr::{lnr_test, lnr_test_among, normalized_residuals, wls_with_lnr, BadDataReport, LnrOptions};
pub use lp::{lp_solve, LpProblem, LpSolution, VarTag};
pub use wlav::{
    build_regional_wlav_lp, build_wlav_lp, converter_p_row, side_in, solve_wlav, solve_wlav_about, solve_wlav_region, weighted_median,
    BoundaryTerm, RegionBoundary, WlavSolution,
};
pub use wls::{
    solve_wls, wls_weights, LinearMeasurementModel, MeasurementModel, NonlinearModel, RowFn,
    WlsOptions, WlsResult, VIRTUAL_SIGMA,
};

/// Outcome of one estimation over a region or the whole system.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimationResult {
    /// Estimated state; nodes outside the estimated scope keep their flat
    /// values.
    pub state: SystemState,
    /// Estimator coordinates (`U = V²` on AC magnitudes for the linear model).
    pub x: DVector<f64>,
    /// `z − h(x̂)` per measurement, in the estimator's coordinates.
    pub residuals: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time: Duration,
}
