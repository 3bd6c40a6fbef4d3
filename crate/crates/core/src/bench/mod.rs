//! Metrics, scenarios and the Monte-Carlo harness.
//!
//! [`estimate_with`] is the one place where a method name turns into an
//! estimator call with the right injection rows; the CLI and the harness
//! both go through it.

mod harness;
mod metrics;
mod scenario;

use serde::{Deserialize, Serialize};

use crate::coordination::{run_cwls, run_drse, run_dwls, CoordinationParams, CwlsOptions, Method, SystemEstimate};
use crate::error::{Error, Result};
use crate::estimation::{LnrOptions, WlsOptions};
use crate::grid::GridModel;
use crate::injection::InjectionModel;
use crate::telemetry::{eval_h_nonlinear, Measurement, MeasurementSet, Source};

pub use harness::{
    prepare, read_runs_csv, recompute_aggregate, run_montecarlo, run_prepared, write_aggregate_csv,
    write_node_errors_csv, write_runs_csv, write_timing_csv, write_trace_csv, AggregateRow, MetricsTable, Prepared,
    RunRecord,
};
pub use metrics::{aae_mae, compute_metrics, node_errors, ErrorStats, Metrics};
pub use scenario::{
    bench_coordination, BadDataSpec, InjectionSource, MethodSpec, PlacementKind, ProfileSource, Scenario,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateOptions {
    pub coordination: CoordinationParams,
    pub wls: WlsOptions,
    /// Residual test in the WLS methods; `None` keeps every row.
    pub lnr: Option<LnrOptions>,
    /// Uncertainty of pseudo rows when the method does not name one (%).
    pub pseudo_pct: f64,
    /// Sigma floor of pseudo rows (p.u.).
    pub sigma_floor: f64,
    /// Weighted residual above which a network input counts as suspect in
    /// the screening pass.
    pub screen_threshold: f64,
    /// Timestamp of generated rows.
    pub time: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            coordination: bench_coordination(),
            wls: WlsOptions::default(),
            lnr: Some(LnrOptions::default()),
            pseudo_pct: 30.0,
            sigma_floor: 1e-4,
            screen_threshold: 10.0,
            time: 900.0,
        }
    }
}

/// The estimator alone, on exactly the rows of `set`.
pub fn run_method(grid: &GridModel, set: &MeasurementSet, method: Method, opts: &EstimateOptions) -> Result<SystemEstimate> {
    match method {
        Method::Cwls => run_cwls(
            grid,
            set,
            &CwlsOptions {
                wls: opts.wls,
                lnr: opts.lnr,
            },
        ),
        Method::Dwls => run_dwls(grid, set, &opts.coordination, opts.lnr.as_ref()),
        Method::Drse => run_drse(grid, set, &opts.coordination),
    }
}

/// `set` plus the generated rows for injections it does not already measure.
fn with_rows(set: &MeasurementSet, rows: Vec<Measurement>) -> MeasurementSet {
    let mut out = set.clone();
    for m in rows {
        if set.find(&m.kind).is_none() {
            out.push(m);
        }
    }
    out
}

/// Injection rows for `spec` on top of `set`.
///
/// Pseudo rows are the mixture means. Network rows need clean inputs, so a
/// screening pass first runs the same estimator with pseudo rows; SCADA
/// inputs left with a weighted residual above `screen_threshold` are
/// replaced by their estimated values before inference.
pub fn injection_rows(
    grid: &GridModel,
    set: &MeasurementSet,
    spec: MethodSpec,
    model: Option<&InjectionModel>,
    opts: &EstimateOptions,
) -> Result<MeasurementSet> {
    let need = || Error::Validation(format!("method {spec} needs an injection model"));
    match spec.injections {
        InjectionSource::Telemetry => Ok(set.clone()),
        InjectionSource::Pseudo(pct) => {
            let model = model.ok_or_else(need)?;
            let rows = model.pseudo_measurements(grid, pct.unwrap_or(opts.pseudo_pct), opts.sigma_floor, opts.time);
            Ok(with_rows(set, rows))
        }
        InjectionSource::Dnn => {
            let model = model.ok_or_else(need)?;
            let pseudo = model.pseudo_measurements(grid, opts.pseudo_pct, opts.sigma_floor, opts.time);
            let screen = run_method(grid, &with_rows(set, pseudo), spec.estimator, opts)?;
            let suspect = |k: usize| screen.weighted_residuals[k] > opts.screen_threshold;
            let z = model
                .inputs
                .iter()
                .map(|kind| {
                    let k = set
                        .iter()
                        .position(|m| m.kind == *kind && m.source == Source::Scada)
                        .ok_or_else(|| Error::Validation(format!("SCADA input {kind} missing")))?;
                    if suspect(k) {
                        eval_h_nonlinear(kind, &screen.state, grid)
                    } else {
                        Ok(set.measurements[k].value)
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            let y = model.infer(&z)?;
            Ok(with_rows(set, model.measurements(grid, &y, opts.time)?))
        }
    }
}

/// Estimate with the injection rows `spec` asks for. The returned wall
/// time covers the final estimator pass only.
pub fn estimate_with(
    grid: &GridModel,
    set: &MeasurementSet,
    spec: MethodSpec,
    model: Option<&InjectionModel>,
    opts: &EstimateOptions,
) -> Result<SystemEstimate> {
    let full = injection_rows(grid, set, spec, model, opts)?;
    run_method(grid, &full, spec.estimator, opts)
}
