//! Distributed WLS baseline under the same partition.

use std::time::Instant;

use nalgebra::DVector;

use super::{
    assemble, boundary_target, coordinate, split_by_region, BoundaryPacket, CoordinationParams,
    Method, RegionOutcome, RegionSolver, SystemEstimate,
};
use crate::error::Result;
use crate::estimation::{
    side_in, solve_wls, wls_with_lnr, EstimationResult, LnrOptions, NonlinearModel, RowFn, WlsOptions,
};
use crate::grid::GridModel;
use crate::physics::converter_loss;
use crate::powerflow::SystemState;
use crate::telemetry::{nonlinear_partials, ConverterSide, Measurement, MeasurementKind, MeasurementSet, StateLayout};

/// Regional Gauss–Newton WLS with a quadratic boundary penalty
/// `λ (P_VSC − P′)²`, entered as a pseudo-measurement of weight `λ`.
#[derive(Clone, Debug)]
pub struct WlsRegion<'a> {
    grid: &'a GridModel,
    region: usize,
    measurements: Vec<Measurement>,
    /// Rows still in use (residual-test removals are `false`).
    active: Vec<bool>,
    layout: StateLayout,
    converters: Vec<(usize, ConverterSide)>,
    opts: WlsOptions,
}

impl<'a> WlsRegion<'a> {
    pub fn new(grid: &'a GridModel, region: usize, measurements: Vec<Measurement>) -> Result<Self> {
        for m in &measurements {
            m.validate()?;
        }
        let converters = grid
            .region_converters(region)
            .into_iter()
            .map(|ci| Ok((ci, side_in(grid, ci, region)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            region,
            active: vec![true; measurements.len()],
            measurements,
            layout: StateLayout::region(grid, region),
            converters,
            opts: WlsOptions::default(),
        })
    }

    /// Marks own rows as removed.
    pub fn remove(&mut self, rows: &[usize]) {
        for &k in rows {
            self.active[k] = false;
        }
    }

    fn own_rows(&self) -> (Vec<RowFn>, Vec<f64>, Vec<f64>) {
        let rows = self.measurements.iter().map(|m| RowFn::Measurement(m.kind)).collect();
        let z = self.measurements.iter().map(|m| m.value).collect();
        let s = self.measurements.iter().map(|m| m.sigma).collect();
        (rows, z, s)
    }

    fn x0(&self, warm: Option<&DVector<f64>>) -> DVector<f64> {
        warm.cloned()
            .unwrap_or_else(|| self.layout.extract(self.grid, &SystemState::flat(self.grid), false))
    }

    /// Residual test on the region's own measurements (no boundary rows).
    /// Returns the own-row indices removed.
    pub fn detect_bad_data(&self, warm: Option<&DVector<f64>>, lnr: &LnrOptions) -> Result<Vec<usize>> {
        let (rows, z, s) = self.own_rows();
        let model = NonlinearModel::new(self.grid, self.layout.clone(), rows);
        let (_, report, _) = wls_with_lnr(
            &model,
            &DVector::from_vec(z),
            &DVector::from_vec(s),
            &self.active,
            &self.measurements.iter().map(|m| m.source.is_metered()).collect::<Vec<_>>(),
            &self.x0(warm),
            &self.opts,
            lnr,
        )?;
        Ok(report.flagged)
    }
}

impl RegionSolver for WlsRegion<'_> {
    fn region(&self) -> usize {
        self.region
    }

    fn solve(
        &self,
        inbox: &[Option<BoundaryPacket>],
        lambda: &[f64],
        iteration: usize,
        warm: Option<&DVector<f64>>,
    ) -> Result<RegionOutcome> {
        let start = Instant::now();
        let g = self.grid;
        let (mut rows, mut z, mut s) = self.own_rows();
        let mut active = self.active.clone();
        for (k, &(ci, side)) in self.converters.iter().enumerate() {
            let id = g.converters()[ci].id;
            rows.push(RowFn::Measurement(MeasurementKind::ConvP { converter: id, side }));
            z.push(boundary_target(side, inbox[k].as_ref(), id, &self.measurements));
            let on = lambda[k] > 0.0;
            s.push(if on { 1.0 / lambda[k].sqrt() } else { 1.0 });
            active.push(on);
        }
        let model = NonlinearModel::new(g, self.layout.clone(), rows);
        let z = DVector::from_vec(z);
        let s = DVector::from_vec(s);
        let res = solve_wls(&model, &z, &s, &active, &self.x0(warm), &self.opts)?;
        let state = model.state(&res.x)?;
        let mut packets = Vec::new();
        for (k, &(ci, side)) in self.converters.iter().enumerate() {
            let conv = &g.converters()[ci];
            let (aux, _, j) = g.converter_nodes(ci);
            let (p, _) = nonlinear_partials(&MeasurementKind::ConvP { converter: conv.id, side }, &state, g)?;
            let sender = g.regions()[self.region].id;
            packets.push(match side {
                ConverterSide::Ac => {
                    let (q, _) = nonlinear_partials(&MeasurementKind::ConvQ { converter: conv.id }, &state, g)?;
                    let (loss, _) = converter_loss(p, q, state.v[aux], conv.loss_coeffs());
                    BoundaryPacket { iteration, converter: conv.id, sender, side, p_vsc: p, q_vsc: q, p_loss: loss, v_pcc: state.v[aux] }
                }
                ConverterSide::Dc => {
                    let echoed = inbox[k].map(|pk| pk.p_loss).unwrap_or(0.0);
                    BoundaryPacket {
                        iteration,
                        converter: conv.id,
                        sender,
                        side,
                        p_vsc: p - echoed,
                        q_vsc: inbox[k].map(|pk| pk.q_vsc).unwrap_or(0.0),
                        p_loss: echoed,
                        v_pcc: state.v[j],
                    }
                }
            });
        }
        let nm = self.measurements.len();
        let weighted_residuals = (0..nm)
            .map(|i| if self.measurements[i].sigma > 0.0 { res.residuals[i].abs() / self.measurements[i].sigma } else { 0.0 })
            .collect();
        let objective = (0..nm).map(|i| res.weights[i] * res.residuals[i] * res.residuals[i]).sum();
        Ok(RegionOutcome {
            result: EstimationResult {
                state,
                x: res.x.clone(),
                residuals: res.residuals.rows(0, nm).into_owned(),
                objective,
                iterations: res.iterations,
                converged: res.converged,
                wall_time: start.elapsed(),
            },
            packets,
            weighted_residuals,
        })
    }
}

/// Distributed WLS: regional nonlinear WLS with a quadratic boundary
/// penalty. After the loop the residual test runs per region; if it removes
/// anything the whole loop runs once more without the removed rows.
pub fn run_dwls(
    grid: &GridModel,
    set: &MeasurementSet,
    params: &CoordinationParams,
    lnr: Option<&LnrOptions>,
) -> Result<SystemEstimate> {
    let start = Instant::now();
    let split = split_by_region(grid, set)?;
    let mut solvers = split
        .iter()
        .enumerate()
        .map(|(r, (_, ms))| WlsRegion::new(grid, r, ms.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut lo = coordinate(grid, &solvers, params)?;
    let mut removed = Vec::new();
    if let Some(lnr) = lnr {
        let mut flagged = Vec::new();
        for (r, solver) in solvers.iter().enumerate() {
            let hits = solver.detect_bad_data(Some(&lo.outcomes[r].result.x), lnr)?;
            flagged.push(hits);
        }
        if flagged.iter().any(|f| !f.is_empty()) {
            for (r, hits) in flagged.iter().enumerate() {
                solvers[r].remove(hits);
                removed.extend(hits.iter().map(|&k| split[r].0[k]));
            }
            let prev = lo;
            lo = coordinate(grid, &solvers, params)?;
            // keep the removed rows' residuals from the pass that flagged them
            let mut lo2 = lo;
            for (r, hits) in flagged.iter().enumerate() {
                for &k in hits {
                    lo2.outcomes[r].weighted_residuals[k] = prev.outcomes[r].weighted_residuals[k];
                }
            }
            let mut all_timings = prev.timings;
            all_timings.extend(lo2.timings);
            lo2.timings = all_timings;
            lo = lo2;
        }
    }
    removed.sort_unstable();
    Ok(assemble(Method::Dwls, grid, set.len(), &split, lo, removed, start))
}
