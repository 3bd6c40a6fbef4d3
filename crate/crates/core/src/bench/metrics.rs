//! Average and maximum absolute errors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridModel, NodeKind};
use crate::powerflow::SystemState;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    /// Mean of `|x̂ − x|`.
    pub aae: f64,
    /// Max of `|x̂ − x|`.
    pub mae: f64,
}

/// AAE and MAE of a list of signed errors; zeros when empty.
pub fn aae_mae(errors: &[f64]) -> ErrorStats {
    if errors.is_empty() {
        return ErrorStats::default();
    }
    let abs = errors.iter().map(|e| e.abs());
    ErrorStats {
        aae: abs.clone().sum::<f64>() / errors.len() as f64,
        mae: abs.fold(0.0, f64::max),
    }
}

/// Errors of one estimate, per quantity class. Angles in degrees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub v_ac: ErrorStats,
    pub theta_ac_deg: ErrorStats,
    pub v_dc: ErrorStats,
}

fn check(grid: &GridModel, estimate: &SystemState, truth: &SystemState) -> Result<()> {
    let n = grid.node_count();
    if estimate.v.len() != n || estimate.theta.len() != n || truth.v.len() != n || truth.theta.len() != n {
        return Err(Error::Dimension(format!(
            "states cover {}/{} nodes, grid has {n}",
            estimate.v.len(),
            truth.v.len()
        )));
    }
    Ok(())
}

pub fn compute_metrics(grid: &GridModel, estimate: &SystemState, truth: &SystemState) -> Result<Metrics> {
    check(grid, estimate, truth)?;
    let mut v_ac = Vec::new();
    let mut th = Vec::new();
    let mut v_dc = Vec::new();
    for (i, n) in grid.nodes().iter().enumerate() {
        let dv = estimate.v[i] - truth.v[i];
        match n.kind {
            NodeKind::Ac => {
                v_ac.push(dv);
                th.push((estimate.theta[i] - truth.theta[i]).to_degrees());
            }
            NodeKind::Dc => v_dc.push(dv),
        }
    }
    Ok(Metrics {
        v_ac: aae_mae(&v_ac),
        theta_ac_deg: aae_mae(&th),
        v_dc: aae_mae(&v_dc),
    })
}

/// `(|ΔV|, |Δθ| in degrees)` per node index; the angle is zero on DC nodes.
pub fn node_errors(grid: &GridModel, estimate: &SystemState, truth: &SystemState) -> Result<Vec<(f64, f64)>> {
    check(grid, estimate, truth)?;
    Ok(grid
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let th = match n.kind {
                NodeKind::Ac => (estimate.theta[i] - truth.theta[i]).to_degrees().abs(),
                NodeKind::Dc => 0.0,
            };
            ((estimate.v[i] - truth.v[i]).abs(), th)
        })
        .collect())
}
