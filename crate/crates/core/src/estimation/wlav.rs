//! Weighted least absolute value estimation over the linear model.
//!
//! `min Σ w_i (u_i + l_i) + Σ λ_k (a_k + b_k)` subject to
//! `H x + u − l = z` for measured rows, `H x = z` for exact rows and
//! `p_k x − a_k + b_k = P′_k` for each boundary term, with `w_i = 1/σ_i`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::lp::{lp_solve, LpProblem, VarTag};
use super::EstimationResult;
use crate::error::{Error, Result};
use crate::grid::GridModel;
use crate::powerflow::SystemState;
use crate::telemetry::{build_region_h, linear_row, ConverterSide, LinearModel, Measurement, MeasurementKind, StateLayout};

/// A penalised linear expression `λ |p·x − target|`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryTerm {
    pub row: DVector<f64>,
    pub target: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WlavSolution {
    pub x: DVector<f64>,
    /// `z − H x̂`.
    pub residuals: DVector<f64>,
    /// `Σ w |r| + Σ λ |p·x̂ − target|`, recomputed from `x̂`.
    pub objective: f64,
    /// The optimum reported by the simplex.
    pub lp_objective: f64,
    /// `p·x̂ − target` per boundary term.
    pub boundary_mismatch: Vec<f64>,
    pub pivots: usize,
}

fn weight(sigma: f64) -> Result<f64> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(1.0 / sigma)
    } else {
        Err(Error::Validation(format!("WLAV row needs a positive sigma, got {sigma}")))
    }
}

/// LP of a WLAV problem with columns ordered `[x (free), (u, l) per
/// measured row, (a, b) per boundary term]`.
pub fn build_wlav_lp(
    h: &DMatrix<f64>,
    z: &DVector<f64>,
    sigma: &DVector<f64>,
    exact: &[bool],
    boundary: &[BoundaryTerm],
) -> Result<LpProblem> {
    let (m, n) = h.shape();
    if m == 0 {
        return Err(Error::Validation("region has no measurements".into()));
    }
    if z.len() != m || sigma.len() != m || exact.len() != m || boundary.iter().any(|b| b.row.len() != n) {
        return Err(Error::Dimension(format!(
            "H is {m}x{n}; got {} values, {} sigmas, {} exact flags and boundary rows of length {:?}",
            z.len(),
            sigma.len(),
            exact.len(),
            boundary.iter().map(|b| b.row.len()).collect::<Vec<_>>()
        )));
    }
    let inexact = exact.iter().filter(|e| !**e).count();
    let nv = n + 2 * inexact + 2 * boundary.len();
    let rows = m + boundary.len();
    let mut a = DMatrix::zeros(rows, nv);
    let mut b = vec![0.0; rows];
    let mut c = vec![0.0; nv];
    let mut free = vec![false; nv];
    let mut tags = vec![VarTag::Other; nv];
    for k in 0..n {
        free[k] = true;
        tags[k] = VarTag::State;
    }
    let mut col = n;
    for i in 0..m {
        a.view_mut((i, 0), (1, n)).copy_from(&h.row(i));
        b[i] = z[i];
        if !exact[i] {
            let w = weight(sigma[i])?;
            a[(i, col)] = 1.0;
            a[(i, col + 1)] = -1.0;
            c[col] = w;
            c[col + 1] = w;
            tags[col] = VarTag::U;
            tags[col + 1] = VarTag::L;
            col += 2;
        }
    }
    for (k, term) in boundary.iter().enumerate() {
        if !(term.lambda >= 0.0 && term.lambda.is_finite()) {
            return Err(Error::Validation(format!("boundary multiplier {} must be non-negative", term.lambda)));
        }
        let r = m + k;
        a.view_mut((r, 0), (1, n)).copy_from(&term.row.transpose());
        b[r] = term.target;
        a[(r, col)] = -1.0;
        a[(r, col + 1)] = 1.0;
        c[col] = term.lambda;
        c[col + 1] = term.lambda;
        tags[col] = VarTag::A;
        tags[col + 1] = VarTag::B;
        col += 2;
    }
    Ok(LpProblem { c, a, b, free, tags })
}

/// Solves the WLAV problem and recomputes residuals and objective from `x̂`.
pub fn solve_wlav(
    h: &DMatrix<f64>,
    z: &DVector<f64>,
    sigma: &DVector<f64>,
    exact: &[bool],
    boundary: &[BoundaryTerm],
) -> Result<WlavSolution> {
    solve_wlav_about(h, z, sigma, exact, boundary, &DVector::zeros(h.ncols()))
}

/// [`solve_wlav`] with the LP posed in deviations `δ = x − origin`.
///
/// Near-flat operating points make `H x` a difference of large nearly equal
/// terms; shifting to the flat state keeps residuals accurate to well below
/// the measurement scale.
pub fn solve_wlav_about(
    h: &DMatrix<f64>,
    z: &DVector<f64>,
    sigma: &DVector<f64>,
    exact: &[bool],
    boundary: &[BoundaryTerm],
    origin: &DVector<f64>,
) -> Result<WlavSolution> {
    if origin.len() != h.ncols() {
        return Err(Error::Dimension(format!("origin has {} entries for {} states", origin.len(), h.ncols())));
    }
    let zs = z - h * origin;
    let shifted: Vec<BoundaryTerm> = boundary
        .iter()
        .map(|t| BoundaryTerm { row: t.row.clone(), target: t.target - t.row.dot(origin), lambda: t.lambda })
        .collect();
    let lp = build_wlav_lp(h, &zs, sigma, exact, &shifted)?;
    let sol = lp_solve(&lp)?;
    let n = h.ncols();
    let delta = DVector::from_column_slice(&sol.x[..n]);
    let residuals = &zs - h * &delta;
    let mut objective = 0.0;
    for i in 0..z.len() {
        if !exact[i] {
            objective += residuals[i].abs() / sigma[i];
        }
    }
    let boundary_mismatch: Vec<f64> = shifted.iter().map(|t| t.row.dot(&delta) - t.target).collect();
    for (t, d) in boundary.iter().zip(&boundary_mismatch) {
        objective += t.lambda * d.abs();
    }
    Ok(WlavSolution {
        x: origin + delta,
        residuals,
        objective,
        lp_objective: sol.objective,
        boundary_mismatch,
        pivots: sol.iterations,
    })
}

/// Penalty on a converter's active power as seen from one region:
/// `λ |P_VSC(x) − target|`, where `P_VSC` is the AC-side converter power in
/// an AC region and the DC-side power in a DC region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionBoundary {
    /// Converter index.
    pub converter: usize,
    pub target: f64,
    pub lambda: f64,
}

/// Side of `converter` that lies in `region`.
pub fn side_in(grid: &GridModel, converter: usize, region: usize) -> Result<ConverterSide> {
    let (ac, dc) = grid.converter_regions(converter);
    if region == ac {
        Ok(ConverterSide::Ac)
    } else if region == dc {
        Ok(ConverterSide::Dc)
    } else {
        Err(Error::Validation(format!(
            "converter {} does not border region {}",
            grid.converters()[converter].id,
            grid.regions()[region].id
        )))
    }
}

/// Linear row of the converter active power over a region layout.
pub fn converter_p_row(grid: &GridModel, layout: &StateLayout, converter: usize, side: ConverterSide) -> Result<DVector<f64>> {
    let kind = MeasurementKind::ConvP { converter: grid.converters()[converter].id, side };
    let (row, _) = linear_row(&kind, grid)?;
    let mut out = DVector::zeros(layout.len());
    for (n, var, coef) in row {
        if let Some(c) = layout.col(n, var) {
            out[c] += coef;
        }
    }
    Ok(out)
}

/// WLAV LP of one region with its boundary terms.
pub fn build_regional_wlav_lp(
    grid: &GridModel,
    model: &LinearModel,
    region: usize,
    boundary: &[RegionBoundary],
) -> Result<LpProblem> {
    let terms = boundary_terms(grid, &model.layout, region, boundary)?;
    build_wlav_lp(&model.h, &model.z, &model.sigma, &model.exact, &terms)
}

fn boundary_terms(grid: &GridModel, layout: &StateLayout, region: usize, boundary: &[RegionBoundary]) -> Result<Vec<BoundaryTerm>> {
    boundary
        .iter()
        .map(|b| {
            let side = side_in(grid, b.converter, region)?;
            Ok(BoundaryTerm {
                row: converter_p_row(grid, layout, b.converter, side)?,
                target: b.target,
                lambda: b.lambda,
            })
        })
        .collect()
}

/// Regional WLAV estimate from the region's own measurements and boundary
/// terms. The returned state holds the region's nodes; other nodes stay flat.
pub fn solve_wlav_region(
    grid: &GridModel,
    region: usize,
    measurements: &[Measurement],
    boundary: &[RegionBoundary],
) -> Result<(EstimationResult, WlavSolution, LinearModel)> {
    let start = Instant::now();
    let model = build_region_h(grid, region, measurements)?;
    let terms = boundary_terms(grid, &model.layout, region, boundary)?;
    let origin = model.layout.extract(grid, &SystemState::flat(grid), true);
    let sol = solve_wlav_about(&model.h, &model.z, &model.sigma, &model.exact, &terms, &origin)?;
    let mut state = SystemState::flat(grid);
    model.layout.apply(grid, &sol.x, &mut state, true)?;
    let result = EstimationResult {
        state,
        x: sol.x.clone(),
        residuals: sol.residuals.clone(),
        objective: sol.objective,
        iterations: sol.pivots,
        converged: true,
        wall_time: start.elapsed(),
    };
    Ok((result, sol, model))
}

/// Minimiser of `Σ w_i |z_i − x|` and its objective. Any point of a tied
/// interval is optimal; the returned point is one of the `z_i`.
pub fn weighted_median(z: &[f64], w: &[f64]) -> (f64, f64) {
    let obj = |x: f64| z.iter().zip(w).map(|(z, w)| w * (z - x).abs()).sum::<f64>();
    z.iter()
        .map(|&x| (x, obj(x)))
        .fold((f64::NAN, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::cases;
    use crate::powerflow::{solve_powerflow, InjectionProfile, PowerFlowOptions};
    use crate::telemetry::{exact_measurements, inject_bad_data, BadDataCase, Placement, ScheduleConfig, TargetSelector};
    use proptest::prelude::*;

    fn scalar(z: &[f64], w: &[f64]) -> WlavSolution {
        let h = DMatrix::from_element(z.len(), 1, 1.0);
        let s = DVector::from_iterator(w.len(), w.iter().map(|w| 1.0 / w));
        solve_wlav(&h, &DVector::from_column_slice(z), &s, &vec![false; z.len()], &[]).unwrap()
    }

    #[test]
    fn minimal_shape() {
        let lp = build_wlav_lp(
            &DMatrix::from_element(1, 1, 1.0),
            &DVector::from_element(1, 0.5),
            &DVector::from_element(1, 1.0),
            &[false],
            &[],
        )
        .unwrap();
        assert_eq!((lp.num_vars(), lp.num_constraints()), (3, 1));
        assert_eq!(lp.tags, vec![VarTag::State, VarTag::U, VarTag::L]);
    }

    #[test]
    fn median_toys() {
        let s = scalar(&[1.0, 1.0, 2.0], &[1.0, 1.0, 1.0]);
        assert!((s.x[0] - 1.0).abs() < 1e-12);
        assert!((s.objective - 1.0).abs() < 1e-12);
        let s = scalar(&[1.0, 1.0, 2.0], &[1.0, 1.0, 5.0]);
        assert!((s.x[0] - 2.0).abs() < 1e-12);
        assert!((s.objective - 2.0).abs() < 1e-12);
        // tie: any point in [1, 2]
        let s = scalar(&[1.0, 2.0], &[1.0, 1.0]);
        assert!((s.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_measurements_rejected() {
        let err = build_wlav_lp(&DMatrix::zeros(0, 1), &DVector::zeros(0), &DVector::zeros(0), &[], &[]).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn zero_lambda_ignores_boundary() {
        let h = DMatrix::from_element(2, 1, 1.0);
        let z = DVector::from_vec(vec![1.0, 1.0]);
        let s = DVector::from_element(2, 0.1);
        let term = BoundaryTerm { row: DVector::from_element(1, 1.0), target: 5.0, lambda: 0.0 };
        let sol = solve_wlav(&h, &z, &s, &[false, false], &[term]).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert_eq!(sol.objective, 0.0);
        assert!((sol.boundary_mismatch[0] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn exact_rows_hold() {
        // x0 + x1 = 0 exactly; x0 measured 1, x1 measured 1 with heavier weight
        let h = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let z = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        let s = DVector::from_vec(vec![1.0, 0.5, 0.0]);
        let sol = solve_wlav(&h, &z, &s, &[false, false, true], &[]).unwrap();
        assert!((sol.x[0] + sol.x[1]).abs() < 1e-12);
        assert!((sol.x[1] - 1.0).abs() < 1e-12);
    }

    fn linear_case(g: &GridModel) -> (SystemState, Vec<Measurement>) {
        let sol = solve_powerflow(g, &InjectionProfile::nominal(g), &PowerFlowOptions::default()).unwrap();
        let set = exact_measurements(g, &sol.state, &Placement::full(g), &ScheduleConfig::default(), 0.0, true).unwrap();
        (sol.state, set.measurements)
    }

    #[test]
    fn exact_recovery_root_region() {
        let g = cases::toy3();
        let (truth, ms) = linear_case(&g);
        let (res, sol, _) = solve_wlav_region(&g, 0, &ms, &[]).unwrap();
        assert!(sol.objective < 1e-9, "{}", sol.objective);
        for i in 0..g.node_count() {
            assert!((res.state.v[i] - truth.v[i]).abs() < 1e-9);
            assert!((res.state.theta[i] - truth.theta[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn case1_rejected_with_redundancy() {
        let g = cases::toy3();
        let (_, ms) = linear_case(&g);
        let clean = solve_wlav_region(&g, 0, &ms, &[]).unwrap().1;
        let set = crate::telemetry::MeasurementSet::new(ms);
        let bad = inject_bad_data(&set, &g, BadDataCase::Case1, TargetSelector::LargestMagnitude, 1).unwrap();
        let k = bad.iter().position(|m| m.corrupted).unwrap();
        let sol = solve_wlav_region(&g, 0, &bad.measurements, &[]).unwrap().1;
        assert!((&sol.x - &clean.x).amax() < 1e-6);
        let gross = bad.measurements[k].value - set.measurements[k].value;
        assert!((sol.residuals[k] - gross).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn scalar_lav_is_weighted_median(
            pts in proptest::collection::vec((-5.0f64..5.0, 0.1f64..10.0), 1..12)
        ) {
            let z: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let w: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let (_, best) = weighted_median(&z, &w);
            let sol = scalar(&z, &w);
            prop_assert!((sol.objective - best).abs() <= 1e-12 * best.max(1.0));
        }
    }
}
