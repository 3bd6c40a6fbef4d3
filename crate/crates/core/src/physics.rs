//! Branch and converter physics shared by the power flow and the
//! measurement functions.

use crate::grid::series_admittance;

/// Value and partial derivatives of a two-terminal AC quantity with respect
/// to `(V_from, V_to, θ_from, θ_to)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AcPartials {
    pub value: f64,
    pub dv_from: f64,
    pub dv_to: f64,
    pub dth_from: f64,
    pub dth_to: f64,
}

/// Active and reactive power leaving `from` towards `to` on a series
/// branch `r + jx` (no shunt).
pub fn ac_flow(v_from: f64, v_to: f64, th_from: f64, th_to: f64, r: f64, x: f64) -> (f64, f64) {
    let (p, q) = ac_flow_partials(v_from, v_to, th_from, th_to, r, x);
    (p.value, q.value)
}

pub fn ac_flow_partials(
    vi: f64,
    vj: f64,
    thi: f64,
    thj: f64,
    r: f64,
    x: f64,
) -> (AcPartials, AcPartials) {
    let (g, b) = series_admittance(r, x);
    let (s, c) = (thi - thj).sin_cos();
    let gc_bs = g * c + b * s;
    let gs_bc = g * s - b * c;
    let p = AcPartials {
        value: g * vi * vi - vi * vj * gc_bs,
        dv_from: 2.0 * g * vi - vj * gc_bs,
        dv_to: -vi * gc_bs,
        dth_from: vi * vj * gs_bc,
        dth_to: -vi * vj * gs_bc,
    };
    let q = AcPartials {
        value: -b * vi * vi - vi * vj * gs_bc,
        dv_from: -2.0 * b * vi - vj * gs_bc,
        dv_to: -vi * gs_bc,
        dth_from: -vi * vj * gc_bs,
        dth_to: vi * vj * gc_bs,
    };
    (p, q)
}

/// Power leaving `from` on a DC line: `V_from (V_from - V_to) g`.
pub fn dc_flow(v_from: f64, v_to: f64, g: f64) -> f64 {
    v_from * (v_from - v_to) * g
}

/// `(value, d/dV_from, d/dV_to)` of [`dc_flow`].
pub fn dc_flow_partials(v_from: f64, v_to: f64, g: f64) -> (f64, f64, f64) {
    (
        dc_flow(v_from, v_to, g),
        (2.0 * v_from - v_to) * g,
        -v_from * g,
    )
}

/// Converter loss `d1 + d2 I + d3 I²` with `I = sqrt(P² + Q²) / (√3 V)`.
///
/// Returns `(loss, current)`.
pub fn converter_loss(p: f64, q: f64, v: f64, coeffs: [f64; 3]) -> (f64, f64) {
    let i = p.hypot(q) / (3f64.sqrt() * v);
    let [d1, d2, d3] = coeffs;
    (d1 + d2 * i + d3 * i * i, i)
}

/// `(loss, d/dP, d/dQ, d/dV)` of [`converter_loss`]. The gradient is taken
/// as zero at zero apparent power, where the current is not differentiable.
pub fn converter_loss_partials(p: f64, q: f64, v: f64, coeffs: [f64; 3]) -> (f64, f64, f64, f64) {
    let (loss, i) = converter_loss(p, q, v, coeffs);
    let s = p.hypot(q);
    if s == 0.0 {
        return (loss, 0.0, 0.0, 0.0);
    }
    let dl_di = coeffs[1] + 2.0 * coeffs[2] * i;
    let k = 3f64.sqrt() * v;
    (
        loss,
        dl_di * p / (s * k),
        dl_di * q / (s * k),
        -dl_di * i / v,
    )
}
