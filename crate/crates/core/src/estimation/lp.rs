//! Dense two-phase tableau simplex.
//!
//! Problems are given as `min cᵀv  s.t.  A v = b` with each variable either
//! non-negative or free. A free variable and a non-negative pair with
//! opposite columns (`u − l`) each occupy a single tableau column whose two
//! sides are priced separately; basic free variables never leave. Pricing is Dantzig's rule; after a run
//! of degenerate pivots the solver switches permanently to Bland's rule,
//! which cannot cycle. The final basic solution is recomputed from the
//! original data with an LU solve to remove accumulated pivoting error.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Role of an LP column, kept for diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarTag {
    State,
    /// Positive part of a measurement residual.
    U,
    /// Negative part of a measurement residual.
    L,
    /// Positive part of a boundary mismatch.
    A,
    /// Negative part of a boundary mismatch.
    B,
    Other,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpProblem {
    pub c: Vec<f64>,
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
    /// `true` for unbounded variables, `false` for `v ≥ 0`.
    pub free: Vec<bool>,
    pub tags: Vec<VarTag>,
}

impl LpProblem {
    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.c.len();
        let m = self.b.len();
        if self.a.nrows() != m || self.a.ncols() != n || self.free.len() != n || self.tags.len() != n {
            return Err(Error::Dimension(format!(
                "LP with {n} costs, {m} right-hand sides, A {}x{}, {} bound flags, {} tags",
                self.a.nrows(),
                self.a.ncols(),
                self.free.len(),
                self.tags.len()
            )));
        }
        let finite = self.c.iter().chain(&self.b).chain(self.a.iter()).all(|x| x.is_finite());
        if !finite {
            return Err(Error::Dimension("LP data is not finite".into()));
        }
        Ok(())
    }

    pub fn objective(&self, v: &[f64]) -> f64 {
        self.c.iter().zip(v).map(|(c, x)| c * x).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

const PIVOT_TOL: f64 = 1e-9;
const DEGENERATE_STREAK: usize = 50;
const MAX_PIVOTS: usize = 100_000;

/// A stored tableau column. Its optional mirror is the variable whose
/// column is the negation (the negative part of a free variable, or the
/// second half of a `u − l` pair), so one column serves both.
#[derive(Clone, Copy, Debug)]
struct Col {
    /// Original variable of the plus side and its sign.
    plus: (usize, f64),
    minus: Option<(usize, f64)>,
    cp: f64,
    cm: f64,
}

impl Col {
    fn cost(&self, s: f64) -> f64 {
        if s > 0.0 {
            self.cp
        } else {
            self.cm
        }
    }
}

struct Tableau {
    /// `m + 1` rows of `ncols + 1` entries; the last row holds the reduced
    /// costs of the plus sides and the last column the right-hand side.
    t: Vec<Vec<f64>>,
    /// Basic column per row and the side in the basis.
    basis: Vec<(usize, f64)>,
    m: usize,
    ncols: usize,
    /// `cp + cm` of columns with a mirror side, from which the mirror's
    /// reduced cost follows as `cp + cm − d`.
    pair: Vec<Option<f64>>,
    /// Columns of free variables; once basic they never leave, so their
    /// rows take no part in the ratio test.
    free: Vec<bool>,
    pivots: usize,
    bland: bool,
    streak: usize,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.t[r][self.ncols]
    }

    /// Brings side `s` of column `e` into the basis at row `r`.
    fn pivot(&mut self, r: usize, e: usize, s: f64) {
        let p = s * self.t[r][e];
        let mut pivot_row = std::mem::take(&mut self.t[r]);
        for x in pivot_row.iter_mut() {
            *x /= p;
        }
        let m = self.m;
        let d_enter = |d: f64| if s > 0.0 { d } else { self.pair[e].expect("mirror side enters") - d };
        let d = d_enter(self.t[m][e]);
        for (k, row) in self.t.iter_mut().enumerate() {
            if k == r {
                continue;
            }
            let f = if k == m { d } else { s * row[e] };
            if f != 0.0 {
                for (x, y) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * y;
                }
            }
        }
        self.t[r] = pivot_row;
        self.basis[r] = (e, s);
        self.pivots += 1;
    }

    /// Runs simplex iterations over the columns allowed to enter.
    fn run(&mut self, allowed: &[bool], cost_tol: f64) -> Result<()> {
        loop {
            if self.pivots >= MAX_PIVOTS {
                return Err(Error::Lp(format!("no optimum after {MAX_PIVOTS} pivots")));
            }
            let cost = &self.t[self.m];
            let mut enter = None;
            let mut best = -cost_tol;
            'cols: for j in 0..self.ncols {
                if !allowed[j] {
                    continue;
                }
                let d = cost[j];
                for (dj, s) in [(d, 1.0), (self.pair[j].map_or(f64::INFINITY, |cs| cs - d), -1.0)] {
                    if dj >= -cost_tol {
                        continue;
                    }
                    if self.bland {
                        enter = Some((j, s));
                        break 'cols;
                    }
                    if dj < best {
                        best = dj;
                        enter = Some((j, s));
                    }
                }
            }
            let Some((e, s)) = enter else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = s * self.t[r][e];
                if a <= PIVOT_TOL || self.free[self.basis[r].0] {
                    continue;
                }
                let ratio = self.rhs(r).max(0.0) / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((lr, lratio)) => {
                        let tie = (ratio - lratio).abs() <= 1e-12 * (1.0 + lratio.abs());
                        if ratio < lratio && !tie {
                            Some((r, ratio))
                        } else if tie && self.basis[r].0 < self.basis[lr].0 {
                            Some((r, ratio.min(lratio)))
                        } else {
                            Some((lr, lratio))
                        }
                    }
                };
            }
            let Some((r, ratio)) = leave else {
                return Err(Error::Lp("problem is unbounded".into()));
            };
            if ratio <= 1e-12 {
                self.streak += 1;
                if self.streak > DEGENERATE_STREAK {
                    self.bland = true;
                }
            } else {
                self.streak = 0;
            }
            self.pivot(r, e, s);
        }
    }
}

/// Stored columns of `problem`: free variables carry their negative part as
/// the mirror, and a non-negative variable followed by its exact negation
/// (a residual split `u − l`) shares one column with it.
fn stored_columns(problem: &LpProblem) -> Vec<Col> {
    let n = problem.num_vars();
    let a = &problem.a;
    let mut cols = Vec::with_capacity(n);
    let mut j = 0;
    while j < n {
        if problem.free[j] {
            cols.push(Col { plus: (j, 1.0), minus: Some((j, -1.0)), cp: problem.c[j], cm: -problem.c[j] });
            j += 1;
        } else if j + 1 < n && !problem.free[j + 1] && a.column(j).iter().zip(a.column(j + 1).iter()).all(|(x, y)| *x == -*y) {
            cols.push(Col { plus: (j, 1.0), minus: Some((j + 1, 1.0)), cp: problem.c[j], cm: problem.c[j + 1] });
            j += 2;
        } else {
            cols.push(Col { plus: (j, 1.0), minus: None, cp: problem.c[j], cm: 0.0 });
            j += 1;
        }
    }
    cols
}

/// Solves `problem` to optimality.
pub fn lp_solve(problem: &LpProblem) -> Result<LpSolution> {
    problem.validate()?;
    let m = problem.num_constraints();
    let n = problem.num_vars();

    let cols = stored_columns(problem);
    let ns = cols.len();
    let mut a = DMatrix::zeros(m, ns);
    for (k, col) in cols.iter().enumerate() {
        let (j, s) = col.plus;
        for r in 0..m {
            a[(r, k)] = s * problem.a[(r, j)];
        }
    }
    let mut b = problem.b.clone();
    for r in 0..m {
        if b[r] < 0.0 {
            b[r] = -b[r];
            for k in 0..ns {
                a[(r, k)] = -a[(r, k)];
            }
        }
    }

    // Crash basis: a column with a single nonzero can start basic in its
    // row once the row is scaled, using the side whose entry is positive;
    // other rows get an artificial.
    let mut row_basic: Vec<Option<(usize, f64)>> = vec![None; m];
    for k in 0..ns {
        let mut nz = (0..m).filter(|&r| a[(r, k)] != 0.0);
        if let (Some(r), None) = (nz.next(), nz.next()) {
            let s = if a[(r, k)] > 0.0 { 1.0 } else { -1.0 };
            if row_basic[r].is_none() && (s > 0.0 || cols[k].minus.is_some()) {
                row_basic[r] = Some((k, s));
            }
        }
    }
    let artificials: Vec<usize> = (0..m).filter(|&r| row_basic[r].is_none()).collect();
    let ncols = ns + artificials.len();
    let mut t = vec![vec![0.0; ncols + 1]; m + 1];
    let mut basis = vec![(0, 1.0); m];
    for r in 0..m {
        let scale = row_basic[r].map(|(k, s)| s * a[(r, k)]).unwrap_or(1.0);
        for k in 0..ns {
            t[r][k] = a[(r, k)] / scale;
        }
        t[r][ncols] = b[r] / scale;
    }
    for (q, &r) in artificials.iter().enumerate() {
        t[r][ns + q] = 1.0;
        basis[r] = (ns + q, 1.0);
    }
    for r in 0..m {
        if let Some(kb) = row_basic[r] {
            basis[r] = kb;
        }
    }
    let mut tab = Tableau {
        t,
        basis,
        m,
        ncols,
        pair: Vec::new(),
        free: (0..ncols).map(|k| k < ns && problem.free[cols[k].plus.0]).collect(),
        pivots: 0,
        bland: false,
        streak: 0,
    };

    let scale = cols.iter().fold(1.0f64, |acc, c| acc.max(c.cp.abs()).max(c.cm.abs()));
    let cost_tol = 1e-11 * scale;

    if !artificials.is_empty() {
        // phase 1: minimise the sum of artificials
        let mut cost = vec![0.0; ncols + 1];
        for &r in &artificials {
            for k in 0..=ncols {
                cost[k] -= tab.t[r][k];
            }
        }
        for q in 0..artificials.len() {
            cost[ns + q] = 0.0;
        }
        tab.t[m] = cost;
        let allowed = vec![true; ncols];
        tab.pair = cols.iter().map(|c| c.minus.map(|_| 0.0)).collect();
        tab.pair.resize(ncols, None);
        tab.run(&allowed, 1e-11)?;
        let infeas = -tab.t[m][ncols];
        let bscale = 1.0 + b.iter().map(|x| x.abs()).sum::<f64>();
        if infeas > 1e-9 * bscale {
            return Err(Error::Lp(format!("problem is infeasible (phase-one residual {infeas:.3e})")));
        }
        // drive zero-level artificials out of the basis where possible
        for r in 0..m {
            if tab.basis[r].0 < ns {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for k in 0..ns {
                let v = tab.t[r][k].abs();
                if v > PIVOT_TOL && best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((k, v));
                }
            }
            if let Some((k, _)) = best {
                tab.pivot(r, k, 1.0);
            }
        }
    }

    // phase 2
    let mut cost = vec![0.0; ncols + 1];
    for (k, col) in cols.iter().enumerate() {
        cost[k] = col.cp;
    }
    for r in 0..m {
        let (bj, s) = tab.basis[r];
        let cb = if bj < ns { cols[bj].cost(s) } else { 0.0 };
        if cb != 0.0 {
            for k in 0..=ncols {
                cost[k] -= cb * tab.t[r][k];
            }
        }
    }
    tab.t[m] = cost;
    tab.streak = 0;
    let mut allowed = vec![true; ncols];
    for x in allowed.iter_mut().skip(ns) {
        *x = false;
    }
    tab.pair = cols.iter().map(|c| c.minus.map(|_| c.cp + c.cm)).collect();
    tab.pair.resize(ncols, None);
    tab.run(&allowed, cost_tol)?;

    // basic solution from the tableau, then an LU polish on the original rows
    let basic: Vec<(usize, f64)> = tab.basis.iter().copied().filter(|&(k, _)| k < ns).collect();
    let mut vals: Vec<f64> = tab
        .basis
        .iter()
        .enumerate()
        .filter(|(_, &(k, _))| k < ns)
        .map(|(r, &(k, _))| if tab.free[k] { tab.rhs(r) } else { tab.rhs(r).max(0.0) })
        .collect();
    // Rows of a redundant system keep an artificial in the basis; the
    // structural basis columns are then solved over all rows in the
    // least-squares sense, which is exact for a consistent system.
    if !basic.is_empty() {
        let k = basic.len();
        let bm = DMatrix::from_fn(m, k, |r, ci| basic[ci].1 * a[(r, basic[ci].0)]);
        let rhs = DVector::from_column_slice(&b);
        let polished = if k == m {
            bm.lu().solve(&rhs)
        } else {
            let bt = bm.transpose();
            (&bt * &bm).cholesky().map(|ch| ch.solve(&(&bt * &rhs)))
        };
        if let Some(sol) = polished {
            let close = vals.iter().enumerate().all(|(i, v)| (sol[i] - v).abs() <= 1e-6 * (1.0 + v.abs()));
            let feasible = basic.iter().enumerate().all(|(i, &(k, _))| tab.free[k] || sol[i] >= -1e-9);
            if close && feasible {
                for (i, v) in vals.iter_mut().enumerate() {
                    *v = if tab.free[basic[i].0] { sol[i] } else { sol[i].max(0.0) };
                }
            }
        }
    }

    let mut x = vec![0.0; n];
    for (&(k, s), v) in basic.iter().zip(&vals) {
        let (j, sign) = if s > 0.0 { cols[k].plus } else { cols[k].minus.expect("mirror side is basic") };
        x[j] += sign * v;
    }
    Ok(LpSolution {
        objective: problem.objective(&x),
        x,
        iterations: tab.pivots,
    })
}
