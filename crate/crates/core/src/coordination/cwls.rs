//! Centralized WLS baseline.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{IterationTiming, Method, SystemEstimate};
use crate::error::Result;
use crate::estimation::{solve_wls, wls_with_lnr, EstimationResult, LnrOptions, NonlinearModel, RowFn, WlsOptions};
use crate::grid::GridModel;
use crate::powerflow::SystemState;
use crate::telemetry::{MeasurementSet, StateLayout};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CwlsOptions {
    pub wls: WlsOptions,
    /// Residual test; `None` keeps every row.
    pub lnr: Option<LnrOptions>,
}

/// Whole-system nonlinear WLS. Each converter adds an exact virtual row
/// `P_VSC + P_loss(P_VSC, Q_VSC, V_c) − P_DC = 0` weighted like a zero
/// injection.
pub fn run_cwls(grid: &GridModel, set: &MeasurementSet, opts: &CwlsOptions) -> Result<SystemEstimate> {
    let start = Instant::now();
    set.validate(grid)?;
    let layout = StateLayout::system(grid);
    let nm = set.len();
    let mut rows: Vec<RowFn> = set.iter().map(|m| RowFn::Measurement(m.kind)).collect();
    let mut z: Vec<f64> = set.iter().map(|m| m.value).collect();
    let mut s: Vec<f64> = set.iter().map(|m| m.sigma).collect();
    for ci in 0..grid.converters().len() {
        rows.push(RowFn::ConverterBalance(ci));
        z.push(0.0);
        s.push(0.0);
    }
    let model = NonlinearModel::new(grid, layout.clone(), rows);
    let z = DVector::from_vec(z);
    let s = DVector::from_vec(s);
    let active = vec![true; z.len()];
    let x0 = layout.extract(grid, &SystemState::flat(grid), false);
    let wls = opts.wls;
    let t = Instant::now();
    let (res, removed, first_residuals) = match opts.lnr {
        None => (solve_wls(&model, &z, &s, &active, &x0, &wls)?, Vec::new(), None),
        Some(l) => {
            let first = solve_wls(&model, &z, &s, &active, &x0, &wls)?;
            let mut eligible: Vec<bool> = set.iter().map(|m| m.source.is_metered()).collect();
            eligible.resize(z.len(), false);
            let (res, report, _) = wls_with_lnr(&model, &z, &s, &active, &eligible, &first.x, &wls, &l)?;
            (res, report.flagged, Some(first.residuals))
        }
    };
    let elapsed = t.elapsed();
    let state = model.state(&res.x)?;
    let mut weighted: Vec<f64> = (0..nm)
        .map(|i| if s[i] > 0.0 { res.residuals[i].abs() / s[i] } else { 0.0 })
        .collect();
    if let Some(first) = first_residuals {
        for &k in &removed {
            weighted[k] = first[k].abs() / s[k];
        }
    }
    let mut removed: Vec<usize> = removed.into_iter().filter(|&k| k < nm).collect();
    removed.sort_unstable();
    let objective = (0..nm).map(|i| res.weights[i] * res.residuals[i] * res.residuals[i]).sum();
    let result = EstimationResult {
        state: state.clone(),
        x: res.x.clone(),
        residuals: res.residuals.rows(0, nm).into_owned(),
        objective,
        iterations: res.iterations,
        converged: res.converged,
        wall_time: elapsed,
    };
    Ok(SystemEstimate {
        method: Method::Cwls,
        state,
        regions: vec![result],
        weighted_residuals: weighted,
        removed,
        trace: Vec::new(),
        packets: Vec::new(),
        lambda: Vec::new(),
        iterations: res.iterations,
        converged: res.converged,
        timings: vec![IterationTiming {
            iteration: 1,
            regions: vec![elapsed.as_secs_f64()],
            ac_phase: elapsed.as_secs_f64(),
            dc_phase: 0.0,
            algebra: 0.0,
            total: elapsed.as_secs_f64(),
        }],
        wall_time: start.elapsed(),
    })
}
