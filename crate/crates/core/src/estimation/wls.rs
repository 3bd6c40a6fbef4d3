//! Weighted least squares by Gauss–Newton.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::GridModel;
use crate::physics::converter_loss_partials;
use crate::powerflow::SystemState;
use crate::telemetry::{nonlinear_partials, ConverterSide, MeasurementKind, StateLayout};

/// Deviation given to exact rows in least squares.
pub const VIRTUAL_SIGMA: f64 = 1e-6;

/// A measurement function `h(x)` with its Jacobian.
pub trait MeasurementModel {
    fn num_states(&self) -> usize;
    fn num_rows(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>;
}

/// `h(x) = H x + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMeasurementModel {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl LinearMeasurementModel {
    pub fn new(h: DMatrix<f64>) -> Self {
        let c = DVector::zeros(h.nrows());
        Self { h, c }
    }
}

impl MeasurementModel for LinearMeasurementModel {
    fn num_states(&self) -> usize {
        self.h.ncols()
    }
    fn num_rows(&self) -> usize {
        self.h.nrows()
    }
    fn eval(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((&self.h * x + &self.c, self.h.clone()))
    }
}

/// One row of a nonlinear model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RowFn {
    Measurement(MeasurementKind),
    /// `P_VSC + P_loss(P_VSC, Q_VSC, V_c) − P_DC` of a converter (by index);
    /// zero for a physically consistent state.
    ConverterBalance(usize),
}

/// Exact measurement functions over the `(V, θ)` columns of a layout.
/// Nodes outside the layout stay at `base`.
#[derive(Clone, Debug)]
pub struct NonlinearModel<'a> {
    pub grid: &'a GridModel,
    pub layout: StateLayout,
    pub rows: Vec<RowFn>,
    pub base: SystemState,
}

impl<'a> NonlinearModel<'a> {
    pub fn new(grid: &'a GridModel, layout: StateLayout, rows: Vec<RowFn>) -> Self {
        Self {
            base: SystemState::flat(grid),
            grid,
            layout,
            rows,
        }
    }

    pub fn state(&self, x: &DVector<f64>) -> Result<SystemState> {
        let mut st = self.base.clone();
        self.layout.apply(self.grid, x, &mut st, false)?;
        Ok(st)
    }

    fn scatter(&self, jac: &mut DMatrix<f64>, r: usize, grad: &[(usize, crate::telemetry::Var, f64)], scale: f64) -> Result<()> {
        for &(n, var, d) in grad {
            if !self.layout.covers(n) {
                return Err(Error::Validation(format!(
                    "row {r} depends on node {} outside the estimated regions",
                    self.grid.nodes()[n].id
                )));
            }
            if let Some(c) = self.layout.col(n, var) {
                jac[(r, c)] += scale * d;
            }
        }
        Ok(())
    }
}

impl MeasurementModel for NonlinearModel<'_> {
    fn num_states(&self) -> usize {
        self.layout.len()
    }
    fn num_rows(&self) -> usize {
        self.rows.len()
    }
    fn eval(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let st = self.state(x)?;
        let mut hx = DVector::zeros(self.rows.len());
        let mut jac = DMatrix::zeros(self.rows.len(), self.layout.len());
        for (r, row) in self.rows.iter().enumerate() {
            match *row {
                RowFn::Measurement(kind) => {
                    let (v, grad) = nonlinear_partials(&kind, &st, self.grid)?;
                    hx[r] = v;
                    self.scatter(&mut jac, r, &grad, 1.0)?;
                }
                RowFn::ConverterBalance(ci) => {
                    let conv = &self.grid.converters()[ci];
                    let (c, _, _) = self.grid.converter_nodes(ci);
                    let pk = MeasurementKind::ConvP { converter: conv.id, side: ConverterSide::Ac };
                    let qk = MeasurementKind::ConvQ { converter: conv.id };
                    let dk = MeasurementKind::ConvP { converter: conv.id, side: ConverterSide::Dc };
                    let (p, gp) = nonlinear_partials(&pk, &st, self.grid)?;
                    let (q, gq) = nonlinear_partials(&qk, &st, self.grid)?;
                    let (pdc, gd) = nonlinear_partials(&dk, &st, self.grid)?;
                    let (loss, dlp, dlq, dlv) = converter_loss_partials(p, q, st.v[c], conv.loss_coeffs());
                    hx[r] = p + loss - pdc;
                    self.scatter(&mut jac, r, &gp, 1.0 + dlp)?;
                    self.scatter(&mut jac, r, &gq, dlq)?;
                    self.scatter(&mut jac, r, &gd, -1.0)?;
                    self.scatter(&mut jac, r, &[(c, crate::telemetry::Var::Mag, dlv)], 1.0)?;
                }
            }
        }
        Ok((hx, jac))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct WlsOptions {
    /// Stop when the largest state update is below this.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for WlsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 50,
            max_halvings: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WlsResult {
    pub x: DVector<f64>,
    /// `z − h(x̂)` for every row, active or not.
    pub residuals: DVector<f64>,
    /// `Σ w r²` over active rows.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Jacobian at the solution (all rows).
    pub jacobian: DMatrix<f64>,
    /// Weights used (zero on inactive rows).
    pub weights: DVector<f64>,
}

/// Weights `1/σ²`; exact rows (σ = 0) get [`VIRTUAL_SIGMA`], inactive rows 0.
pub fn wls_weights(sigma: &DVector<f64>, active: &[bool]) -> DVector<f64> {
    DVector::from_iterator(
        sigma.len(),
        sigma.iter().zip(active).map(|(&s, &a)| {
            if !a {
                0.0
            } else {
                let s = if s > 0.0 { s } else { VIRTUAL_SIGMA };
                1.0 / (s * s)
            }
        }),
    )
}

fn objective(r: &DVector<f64>, w: &DVector<f64>) -> f64 {
    r.iter().zip(w.iter()).map(|(r, w)| w * r * r).sum()
}

fn rank(m: &DMatrix<f64>) -> usize {
    let scale = m.amax().max(1e-300);
    m.clone().svd(false, false).rank(1e-12 * scale * m.nrows().max(1) as f64)
}

/// Cholesky solve of the gain system, or an unobservability error naming the
/// rank deficiency.
fn gain_solve(g: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let n = g.nrows();
    let scale = g.diagonal().amax();
    if let Some(ch) = g.clone().cholesky() {
        let dx = ch.solve(rhs);
        // a numerically singular gain can still factor; check the pivots
        let l = ch.l();
        let min_pivot = l.diagonal().iter().fold(f64::INFINITY, |m, &x| m.min(x * x));
        if min_pivot > 1e-13 * scale && dx.iter().all(|v| v.is_finite()) {
            return Ok(dx);
        }
    }
    let r = rank(g);
    Err(Error::Unobservable(format!("gain matrix has rank {r} of {n}")))
}

/// Minimises `Σ w_i (z_i − h_i(x))²` from `x0`.
///
/// Each Gauss–Newton step is halved (up to `max_halvings` times) while the
/// objective increases. A step that still increases it after all halvings
/// ends the solve with a divergence error.
pub fn solve_wls<M: MeasurementModel>(
    model: &M,
    z: &DVector<f64>,
    sigma: &DVector<f64>,
    active: &[bool],
    x0: &DVector<f64>,
    opts: &WlsOptions,
) -> Result<WlsResult> {
    let m = model.num_rows();
    if z.len() != m || sigma.len() != m || active.len() != m || x0.len() != model.num_states() {
        return Err(Error::Dimension(format!(
            "model has {m} rows and {} states; got {} values, {} sigmas, {} flags, {} initial states",
            model.num_states(),
            z.len(),
            sigma.len(),
            active.len(),
            x0.len()
        )));
    }
    let w = wls_weights(sigma, active);
    let mut x = x0.clone();
    let (mut hx, mut jac) = model.eval(&x)?;
    let mut r = z - &hx;
    let mut obj = objective(&r, &w);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let wj = DMatrix::from_fn(m, jac.ncols(), |i, k| w[i] * jac[(i, k)]);
        let gain = jac.transpose() * &wj;
        let rhs = wj.transpose() * &r;
        let dx = gain_solve(&gain, &rhs)?;
        iterations += 1;
        let step_max = dx.amax();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let xn = &x + &dx * t;
            if let Ok((hn, jn)) = model.eval(&xn) {
                let rn = z - &hn;
                let on = objective(&rn, &w);
                if on <= obj || step_max * t < opts.tol {
                    x = xn;
                    hx = hn;
                    jac = jn;
                    r = rn;
                    obj = on;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::Divergence {
                iterations,
                mismatch: step_max,
            });
        }
        if step_max * t < opts.tol {
            converged = true;
            break;
        }
    }
    let _ = hx;
    Ok(WlsResult {
        x,
        residuals: r,
        objective: obj,
        iterations,
        converged,
        jacobian: jac,
        weights: w,
    })
}
