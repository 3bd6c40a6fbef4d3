use nalgebra::DMatrix;

use super::{GridModel, NodeKind};
use crate::error::{Error, Result};

/// Nodal admittance of one region, indexed by position in `nodes`.
#[derive(Clone, Debug, PartialEq)]
pub enum RegionAdmittance {
    Ac {
        nodes: Vec<usize>,
        g: DMatrix<f64>,
        b: DMatrix<f64>,
    },
    Dc {
        nodes: Vec<usize>,
        y: DMatrix<f64>,
    },
}

impl RegionAdmittance {
    pub fn nodes(&self) -> &[usize] {
        match self {
            RegionAdmittance::Ac { nodes, .. } | RegionAdmittance::Dc { nodes, .. } => nodes,
        }
    }
}

/// Series admittance `1/(r + jx)` as `(g, b)`.
pub fn series_admittance(r: f64, x: f64) -> (f64, f64) {
    let z2 = r * r + x * x;
    (r / z2, -x / z2)
}

/// Builds G and B (AC) or Y (DC) from the series branches of a region.
/// No shunt elements are modelled, so every row sums to zero.
pub fn build_admittance(grid: &GridModel, region: usize) -> Result<RegionAdmittance> {
    let nodes = grid.region_nodes(region).to_vec();
    if nodes.is_empty() {
        return Err(Error::Validation(format!("region index {region} is empty")));
    }
    let n = nodes.len();
    let local = |gi: usize| nodes.iter().position(|&x| x == gi).expect("node in region");
    match grid.region_kind(region) {
        NodeKind::Ac => {
            let branches = grid.region_ac_branches(region);
            if n >= 2 && branches.is_empty() {
                return Err(Error::Validation(format!(
                    "region index {region} has {n} nodes and no branches"
                )));
            }
            let mut g = DMatrix::zeros(n, n);
            let mut b = DMatrix::zeros(n, n);
            for &bi in branches {
                let br = grid.ac_branches()[bi];
                let (gs, bs) = series_admittance(br.r, br.x);
                let (i, j) = (local(br.from), local(br.to));
                g[(i, i)] += gs;
                g[(j, j)] += gs;
                g[(i, j)] -= gs;
                g[(j, i)] -= gs;
                b[(i, i)] += bs;
                b[(j, j)] += bs;
                b[(i, j)] -= bs;
                b[(j, i)] -= bs;
            }
            Ok(RegionAdmittance::Ac { nodes, g, b })
        }
        NodeKind::Dc => {
            let branches = grid.region_dc_branches(region);
            if n >= 2 && branches.is_empty() {
                return Err(Error::Validation(format!(
                    "region index {region} has {n} nodes and no branches"
                )));
            }
            let mut y = DMatrix::zeros(n, n);
            for &bi in branches {
                let br = grid.dc_branches()[bi];
                let (i, j) = (local(br.from), local(br.to));
                y[(i, i)] += br.g;
                y[(j, j)] += br.g;
                y[(i, j)] -= br.g;
                y[(j, i)] -= br.g;
            }
            Ok(RegionAdmittance::Dc { nodes, y })
        }
    }
}
