//! Largest normalized residual test.

use nalgebra::DVector;

use super::wls::{solve_wls, MeasurementModel, WlsOptions, WlsResult};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LnrOptions {
    pub threshold: f64,
    /// Detect/remove cycles before giving up.
    pub max_cycles: usize,
}

impl Default for LnrOptions {
    fn default() -> Self {
        Self {
            threshold: 3.0,
            max_cycles: 5,
        }
    }
}

/// Outcome of one or more detect/remove cycles.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BadDataReport {
    /// Rows removed, in detection order.
    pub flagged: Vec<usize>,
    /// Largest normalized residual of the last test.
    pub max_nr: f64,
    /// Row holding `max_nr`.
    pub max_index: Option<usize>,
    pub threshold: f64,
    /// Active rows with (numerically) zero residual variance in the last
    /// test. They are never flagged.
    pub untestable: Vec<usize>,
    /// Number of tests run.
    pub cycles: usize,
}

/// `|r_i| / sqrt(Ω_ii)` with `Ω = R − H G⁻¹ Hᵀ`, for active rows with a
/// positive sigma. `None` marks rows that are inactive, exact, or critical.
pub fn normalized_residuals(res: &WlsResult, sigma: &DVector<f64>) -> Result<Vec<Option<f64>>> {
    let h = &res.jacobian;
    let w = &res.weights;
    let m = h.nrows();
    let wh = nalgebra::DMatrix::from_fn(m, h.ncols(), |i, k| w[i] * h[(i, k)]);
    let gain = h.transpose() * &wh;
    let ginv = gain
        .cholesky()
        .ok_or_else(|| Error::Numerical("gain matrix not positive definite in residual test".into()))?
        .inverse();
    let hg = h * &ginv;
    let mut out = vec![None; m];
    for i in 0..m {
        if w[i] == 0.0 || !(sigma[i] > 0.0) {
            continue;
        }
        let r_ii = sigma[i] * sigma[i];
        let omega = r_ii - hg.row(i).dot(&h.row(i));
        if omega > 1e-8 * r_ii {
            out[i] = Some(res.residuals[i].abs() / omega.sqrt());
        }
    }
    Ok(out)
}

/// One test on a converged WLS result. The largest normalized residual is
/// flagged when it exceeds the threshold.
pub fn lnr_test(res: &WlsResult, sigma: &DVector<f64>, threshold: f64) -> Result<BadDataReport> {
    lnr_test_among(res, sigma, threshold, &vec![true; sigma.len()])
}

/// [`lnr_test`] restricted to rows with `eligible[i]`. Other rows still
/// shape the residual covariance but are never flagged; pseudo rows are
/// kept out this way, since removing a prior usually costs observability.
pub fn lnr_test_among(res: &WlsResult, sigma: &DVector<f64>, threshold: f64, eligible: &[bool]) -> Result<BadDataReport> {
    let nr = normalized_residuals(res, sigma)?;
    let mut report = BadDataReport {
        threshold,
        cycles: 1,
        ..Default::default()
    };
    for (i, v) in nr.iter().enumerate() {
        if !eligible[i] {
            continue;
        }
        match v {
            Some(v) if *v > report.max_nr || report.max_index.is_none() => {
                report.max_nr = *v;
                report.max_index = Some(i);
            }
            None if res.weights[i] > 0.0 && sigma[i] > 0.0 => report.untestable.push(i),
            _ => {}
        }
    }
    if let Some(i) = report.max_index {
        if report.max_nr > threshold {
            report.flagged.push(i);
        }
    }
    Ok(report)
}

/// WLS followed by detect/remove cycles over the `eligible` rows. Returns
/// the final solution, the report and the final activity mask.
///
/// A row whose removal leaves the model unobservable, or the solve
/// divergent, is put back, listed as untestable, and ends the cycles.
#[allow(clippy::too_many_arguments)]
pub fn wls_with_lnr<M: MeasurementModel>(
    model: &M,
    z: &DVector<f64>,
    sigma: &DVector<f64>,
    active: &[bool],
    eligible: &[bool],
    x0: &DVector<f64>,
    opts: &WlsOptions,
    lnr: &LnrOptions,
) -> Result<(WlsResult, BadDataReport, Vec<bool>)> {
    let mut mask = active.to_vec();
    let mut res = solve_wls(model, z, sigma, &mask, x0, opts)?;
    let mut flagged = Vec::new();
    let mut cycles = 0;
    loop {
        let mut rep = lnr_test_among(&res, sigma, lnr.threshold, eligible)?;
        cycles += 1;
        let mut stop = true;
        if let Some(&i) = rep.flagged.first() {
            mask[i] = false;
            match solve_wls(model, z, sigma, &mask, &res.x, opts) {
                Ok(r) => {
                    res = r;
                    flagged.push(i);
                    stop = cycles >= lnr.max_cycles;
                }
                Err(Error::Unobservable(_) | Error::Divergence { .. }) => {
                    mask[i] = true;
                    rep.untestable.push(i);
                }
                Err(e) => return Err(e),
            }
        }
        if stop {
            rep.flagged = flagged;
            rep.cycles = cycles;
            return Ok((res, rep, mask));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::LinearMeasurementModel;
    use nalgebra::DMatrix;

    fn scalar(z: &[f64], s: f64) -> (LinearMeasurementModel, DVector<f64>, DVector<f64>) {
        let m = LinearMeasurementModel::new(DMatrix::from_element(z.len(), 1, 1.0));
        (m, DVector::from_column_slice(z), DVector::from_element(z.len(), s))
    }

    #[test]
    fn clean_scalar_not_flagged() {
        let (m, z, s) = scalar(&[1.0, 1.0, 1.0], 0.02);
        let res = solve_wls(&m, &z, &s, &[true; 3], &DVector::zeros(1), &WlsOptions::default()).unwrap();
        let rep = lnr_test(&res, &s, 3.0).unwrap();
        assert!(rep.flagged.is_empty());
        assert!(rep.max_nr < 3.0);
    }

    #[test]
    fn gross_error_removed() {
        let (m, z, s) = scalar(&[1.0, 1.0, 1.6], 0.02);
        let res = solve_wls(&m, &z, &s, &[true; 3], &DVector::zeros(1), &WlsOptions::default()).unwrap();
        // closed form: x = 1.2, r3 = 0.4, Ω33 = σ²(1 − 1/3)
        let nr = normalized_residuals(&res, &s).unwrap();
        let expect = 0.4 / (0.02 * (2.0f64 / 3.0).sqrt());
        assert!((nr[2].unwrap() - expect).abs() < 1e-9);
        let (res, rep, mask) =
            wls_with_lnr(&m, &z, &s, &[true; 3], &[true; 3], &DVector::zeros(1), &WlsOptions::default(), &LnrOptions::default())
                .unwrap();
        assert_eq!(rep.flagged, vec![2]);
        assert_eq!(mask, vec![true, true, false]);
        assert!((res.x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn critical_measurement_untestable() {
        // x0 measured twice, x1 once
        let h = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let m = LinearMeasurementModel::new(h);
        let z = DVector::from_vec(vec![1.0, 1.0, 5.0]);
        let s = DVector::from_element(3, 0.02);
        let res = solve_wls(&m, &z, &s, &[true; 3], &DVector::zeros(2), &WlsOptions::default()).unwrap();
        let rep = lnr_test(&res, &s, 3.0).unwrap();
        assert_eq!(rep.untestable, vec![2]);
        assert!(rep.flagged.is_empty());
    }
}
