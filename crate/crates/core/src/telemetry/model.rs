//! Dense measurement models over a chosen set of state columns.

use nalgebra::{DMatrix, DVector};

use super::functions::{linear_row, nonlinear_partials, Var};
use super::{Measurement, MeasurementKind};
use crate::error::{Error, Result};
use crate::grid::{GridModel, NodeKind};
use crate::powerflow::SystemState;

/// Maps `(node, variable)` pairs of one or more regions to state columns.
///
/// Every covered node has a magnitude column; AC nodes other than their
/// region's angle reference also have an angle column. The reference angle
/// is fixed at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct StateLayout {
    columns: Vec<(usize, Var)>,
    mag: Vec<Option<usize>>,
    angle: Vec<Option<usize>>,
    covered: Vec<bool>,
}

impl StateLayout {
    pub fn for_regions(grid: &GridModel, regions: &[usize]) -> Self {
        let n = grid.node_count();
        let mut layout = StateLayout {
            columns: Vec::new(),
            mag: vec![None; n],
            angle: vec![None; n],
            covered: vec![false; n],
        };
        for &r in regions {
            let reference = grid.angle_reference(r);
            for &node in grid.region_nodes(r) {
                layout.covered[node] = true;
                layout.mag[node] = Some(layout.columns.len());
                layout.columns.push((node, Var::Mag));
                if grid.nodes()[node].kind == NodeKind::Ac && Some(node) != reference {
                    layout.angle[node] = Some(layout.columns.len());
                    layout.columns.push((node, Var::Angle));
                }
            }
        }
        layout
    }

    pub fn region(grid: &GridModel, region: usize) -> Self {
        Self::for_regions(grid, &[region])
    }

    pub fn system(grid: &GridModel) -> Self {
        let all: Vec<usize> = (0..grid.regions().len()).collect();
        Self::for_regions(grid, &all)
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn columns(&self) -> &[(usize, Var)] {
        &self.columns
    }

    pub fn col(&self, node: usize, var: Var) -> Option<usize> {
        match var {
            Var::Mag => self.mag[node],
            Var::Angle => self.angle[node],
        }
    }

    pub fn covers(&self, node: usize) -> bool {
        self.covered[node]
    }

    /// Column vector of `state`; with `linear`, AC magnitudes become `U = V²`.
    pub fn extract(&self, grid: &GridModel, state: &SystemState, linear: bool) -> DVector<f64> {
        DVector::from_iterator(
            self.columns.len(),
            self.columns.iter().map(|&(n, var)| match var {
                Var::Angle => state.theta[n],
                Var::Mag if linear && grid.nodes()[n].kind == NodeKind::Ac => {
                    state.v[n] * state.v[n]
                }
                Var::Mag => state.v[n],
            }),
        )
    }

    /// Writes `x` into the covered entries of `state`. Covered reference
    /// angles are set to zero. With `linear`, AC magnitudes are `sqrt(U)`.
    pub fn apply(
        &self,
        grid: &GridModel,
        x: &DVector<f64>,
        state: &mut SystemState,
        linear: bool,
    ) -> Result<()> {
        for (n, &c) in self.covered.iter().enumerate() {
            if c && grid.nodes()[n].kind == NodeKind::Ac && self.angle[n].is_none() {
                state.theta[n] = 0.0;
            }
        }
        for (k, &(n, var)) in self.columns.iter().enumerate() {
            match var {
                Var::Angle => state.theta[n] = x[k],
                Var::Mag if linear && grid.nodes()[n].kind == NodeKind::Ac => {
                    if !(x[k] > 0.0) {
                        return Err(Error::Numerical(format!(
                            "non-positive squared voltage {} at node {}",
                            x[k],
                            grid.nodes()[n].id
                        )));
                    }
                    state.v[n] = x[k].sqrt();
                }
                Var::Mag => state.v[n] = x[k],
            }
        }
        Ok(())
    }
}

/// Linear measurement model `z = H x + c + e` with values and deviations
/// already mapped to the linear coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub layout: StateLayout,
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub z: DVector<f64>,
    pub sigma: DVector<f64>,
    /// Rows that must hold exactly (zero injections).
    pub exact: Vec<bool>,
}

/// Value and deviation of a measurement in linear coordinates: AC voltage
/// magnitudes are squared, with `σ_U = 2 V σ_V`.
pub fn linear_target(m: &Measurement) -> (f64, f64) {
    match m.kind {
        MeasurementKind::AcVMag(_) => (m.value * m.value, 2.0 * m.value.abs() * m.sigma),
        _ => (m.value, m.sigma),
    }
}

fn outside(kind: &MeasurementKind) -> Error {
    Error::Validation(format!("{kind} references a node outside the estimated regions"))
}

/// Builds the linear model of `measurements` over `layout`.
pub fn build_linear_model(
    grid: &GridModel,
    layout: &StateLayout,
    measurements: &[Measurement],
) -> Result<LinearModel> {
    let m = measurements.len();
    let mut h = DMatrix::zeros(m, layout.len());
    let mut z = DVector::zeros(m);
    let mut sigma = DVector::zeros(m);
    let mut exact = Vec::with_capacity(m);
    for (r, meas) in measurements.iter().enumerate() {
        meas.validate()?;
        let (row, _) = linear_row(&meas.kind, grid)?;
        for (n, var, coef) in row {
            if !layout.covers(n) {
                return Err(outside(&meas.kind));
            }
            if let Some(c) = layout.col(n, var) {
                h[(r, c)] += coef;
            }
        }
        let (zv, sv) = linear_target(meas);
        z[r] = zv;
        sigma[r] = sv;
        exact.push(meas.is_exact());
    }
    Ok(LinearModel {
        layout: layout.clone(),
        h,
        c: DVector::zeros(m),
        z,
        sigma,
        exact,
    })
}

/// Linear model of one region; every measurement must lie in the region.
pub fn build_region_h(
    grid: &GridModel,
    region: usize,
    measurements: &[Measurement],
) -> Result<LinearModel> {
    for m in measurements {
        if m.kind.region(grid)? != region {
            return Err(Error::Validation(format!(
                "{} lies outside region {}",
                m.kind,
                grid.regions()[region].id
            )));
        }
    }
    build_linear_model(grid, &StateLayout::region(grid, region), measurements)
}

/// Nonlinear `h(x)` and Jacobian (with respect to `V`, `θ`) over `layout`.
pub fn nonlinear_eval(
    grid: &GridModel,
    layout: &StateLayout,
    kinds: &[MeasurementKind],
    state: &SystemState,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mut hx = DVector::zeros(kinds.len());
    let mut jac = DMatrix::zeros(kinds.len(), layout.len());
    for (r, kind) in kinds.iter().enumerate() {
        let (value, grad) = nonlinear_partials(kind, state, grid)?;
        hx[r] = value;
        for (n, var, d) in grad {
            if !layout.covers(n) {
                return Err(outside(kind));
            }
            if let Some(c) = layout.col(n, var) {
                jac[(r, c)] += d;
            }
        }
    }
    Ok((hx, jac))
}
