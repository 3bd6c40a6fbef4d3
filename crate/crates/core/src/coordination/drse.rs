//! Distributed robust estimation: regional WLAV linear programs.

use std::time::Instant;

use nalgebra::DVector;

use super::{
    assemble, boundary_target, coordinate, split_by_region, BoundaryPacket, CoordinationParams,
    Method, RegionOutcome, RegionSolver, SystemEstimate,
};
use crate::error::{Error, Result};
use crate::estimation::{solve_wlav_about, BoundaryTerm, EstimationResult};
use crate::estimation::{converter_p_row, side_in};
use crate::grid::GridModel;
use crate::physics::converter_loss;
use crate::powerflow::SystemState;
use crate::telemetry::{
    build_region_h, linear_row, ConverterSide, LinearModel, Measurement, MeasurementKind, MeasurementSet,
};

/// Regional WLAV estimator over the linear model.
#[derive(Clone, Debug)]
pub struct WlavRegion<'a> {
    grid: &'a GridModel,
    region: usize,
    measurements: Vec<Measurement>,
    model: LinearModel,
    /// Flat state in model coordinates; the LP is posed about it.
    origin: DVector<f64>,
    /// Per boundary converter: side, P row, Q row (AC only).
    converters: Vec<(usize, ConverterSide, DVector<f64>, Option<DVector<f64>>)>,
}

impl<'a> WlavRegion<'a> {
    /// Builds the regional model and checks observability (full column rank).
    pub fn new(grid: &'a GridModel, region: usize, measurements: Vec<Measurement>) -> Result<Self> {
        let model = build_region_h(grid, region, &measurements)?;
        let n = model.layout.len();
        let rank = if model.h.nrows() < n {
            model.h.nrows()
        } else {
            // column-pivoted QR puts the diagonal of R in decreasing order
            let r = model.h.clone().col_piv_qr().r();
            let d = r.diagonal();
            let tol = 1e-10 * d[0].abs().max(1e-300);
            d.iter().take_while(|x| x.abs() > tol).count()
        };
        if rank < n {
            return Err(Error::Unobservable(format!(
                "region {}: linear model has rank {rank} of {n}",
                grid.regions()[region].id
            )));
        }
        let mut converters = Vec::new();
        for ci in grid.region_converters(region) {
            let side = side_in(grid, ci, region)?;
            let p = converter_p_row(grid, &model.layout, ci, side)?;
            let q = if side == ConverterSide::Ac {
                let kind = MeasurementKind::ConvQ { converter: grid.converters()[ci].id };
                let (row, _) = linear_row(&kind, grid)?;
                let mut out = DVector::zeros(n);
                for (node, var, c) in row {
                    if let Some(col) = model.layout.col(node, var) {
                        out[col] += c;
                    }
                }
                Some(out)
            } else {
                None
            };
            converters.push((ci, side, p, q));
        }
        Ok(Self {
            grid,
            region,
            measurements,
            origin: model.layout.extract(grid, &SystemState::flat(grid), true),
            model,
            converters,
        })
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }
}

impl RegionSolver for WlavRegion<'_> {
    fn region(&self) -> usize {
        self.region
    }

    fn solve(
        &self,
        inbox: &[Option<BoundaryPacket>],
        lambda: &[f64],
        iteration: usize,
        _warm: Option<&DVector<f64>>,
    ) -> Result<RegionOutcome> {
        let start = Instant::now();
        let g = self.grid;
        let terms: Vec<BoundaryTerm> = self
            .converters
            .iter()
            .enumerate()
            .map(|(k, (ci, side, row, _))| BoundaryTerm {
                row: row.clone(),
                target: boundary_target(*side, inbox[k].as_ref(), g.converters()[*ci].id, &self.measurements),
                lambda: lambda[k],
            })
            .collect();
        let m = &self.model;
        let sol = solve_wlav_about(&m.h, &m.z, &m.sigma, &m.exact, &terms, &self.origin)?;
        let mut state = SystemState::flat(g);
        m.layout.apply(g, &sol.x, &mut state, true)?;
        let packets = self
            .converters
            .iter()
            .enumerate()
            .map(|(k, (ci, side, prow, qrow))| {
                let conv = &g.converters()[*ci];
                let (aux, _, j) = g.converter_nodes(*ci);
                let p = prow.dot(&sol.x);
                match side {
                    ConverterSide::Ac => {
                        let q = qrow.as_ref().expect("AC side has a Q row").dot(&sol.x);
                        let v_c = state.v[aux];
                        let (loss, _) = converter_loss(p, q, v_c, conv.loss_coeffs());
                        BoundaryPacket {
                            iteration,
                            converter: conv.id,
                            sender: g.regions()[self.region].id,
                            side: *side,
                            p_vsc: p,
                            q_vsc: q,
                            p_loss: loss,
                            v_pcc: v_c,
                        }
                    }
                    ConverterSide::Dc => {
                        let echoed = inbox[k].map(|pk| pk.p_loss).unwrap_or(0.0);
                        BoundaryPacket {
                            iteration,
                            converter: conv.id,
                            sender: g.regions()[self.region].id,
                            side: *side,
                            p_vsc: p - echoed,
                            q_vsc: inbox[k].map(|pk| pk.q_vsc).unwrap_or(0.0),
                            p_loss: echoed,
                            v_pcc: state.v[j],
                        }
                    }
                }
            })
            .collect();
        let weighted_residuals = (0..m.z.len())
            .map(|i| if m.exact[i] { 0.0 } else { sol.residuals[i].abs() / m.sigma[i] })
            .collect();
        Ok(RegionOutcome {
            result: EstimationResult {
                state,
                x: sol.x.clone(),
                residuals: sol.residuals.clone(),
                objective: sol.objective,
                iterations: sol.pivots,
                converged: true,
                wall_time: start.elapsed(),
            },
            packets,
            weighted_residuals,
        })
    }
}

/// Distributed robust state estimation: regional WLAV over the linear model
/// with an absolute boundary penalty per converter.
pub fn run_drse(grid: &GridModel, set: &MeasurementSet, params: &CoordinationParams) -> Result<SystemEstimate> {
    let start = Instant::now();
    let split = split_by_region(grid, set)?;
    let solvers = split
        .iter()
        .enumerate()
        .map(|(r, (_, ms))| WlavRegion::new(grid, r, ms.clone()))
        .collect::<Result<Vec<_>>>()?;
    let lo = coordinate(grid, &solvers, params)?;
    Ok(assemble(Method::Drse, grid, set.len(), &split, lo, Vec::new(), start))
}

