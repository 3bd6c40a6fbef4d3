//! Measurement functions `h(x)` and their linearized rows.

use std::collections::BTreeMap;

use super::{ConverterSide, MeasurementKind};
use crate::error::{Error, Result};
use crate::grid::{GridModel, NodeKind};
use crate::physics::{ac_flow_partials, dc_flow_partials};
use crate::powerflow::SystemState;

/// State variable of a node.
///
/// `Mag` is the voltage magnitude `V` in the nonlinear model. In the linear
/// model it is the squared magnitude `U = V²` on AC nodes and stays `V` on
/// DC nodes. `Angle` exists on AC nodes only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    Mag,
    Angle,
}

/// Sparse row: `(node index, variable, coefficient)`, sorted and merged.
pub type Row = Vec<(usize, Var, f64)>;

fn merge(entries: impl IntoIterator<Item = (usize, Var, f64)>) -> Row {
    let mut acc: BTreeMap<(usize, Var), f64> = BTreeMap::new();
    for (n, v, c) in entries {
        *acc.entry((n, v)).or_insert(0.0) += c;
    }
    acc.into_iter().map(|((n, v), c)| (n, v, c)).collect()
}

fn idx(grid: &GridModel, id: crate::grid::NodeId) -> usize {
    grid.node_index(id).expect("kind validated")
}

/// Branch terms a measurement is built from: AC flows (P or Q) leaving the
/// first node, or DC flows, each with a sign.
enum Term {
    Ac { from: usize, to: usize, r: f64, x: f64, reactive: bool },
    Dc { from: usize, to: usize, g: f64 },
    Mag(usize),
}

fn ac_term(grid: &GridModel, from: usize, to: usize, reactive: bool) -> Term {
    let br = grid.ac_branches()[grid.find_ac_branch(from, to).expect("validated")];
    Term::Ac { from, to, r: br.r, x: br.x, reactive }
}

fn injection_terms(grid: &GridModel, n: usize, reactive: bool, sign: f64) -> Vec<(f64, Term)> {
    if grid.nodes()[n].kind == NodeKind::Ac {
        grid.node_ac_branches(n)
            .iter()
            .map(|&bi| {
                let br = grid.ac_branches()[bi];
                let other = if br.from == n { br.to } else { br.from };
                (sign, Term::Ac { from: n, to: other, r: br.r, x: br.x, reactive })
            })
            .collect()
    } else {
        grid.node_dc_branches(n)
            .iter()
            .map(|&bi| {
                let br = grid.dc_branches()[bi];
                let other = if br.from == n { br.to } else { br.from };
                (sign, Term::Dc { from: n, to: other, g: br.g })
            })
            .collect()
    }
}

fn terms(kind: &MeasurementKind, grid: &GridModel) -> Result<Vec<(f64, Term)>> {
    use MeasurementKind::*;
    kind.region(grid)?;
    Ok(match *kind {
        AcPFlow { from, to } => vec![(1.0, ac_term(grid, idx(grid, from), idx(grid, to), false))],
        AcQFlow { from, to } => vec![(1.0, ac_term(grid, idx(grid, from), idx(grid, to), true))],
        DcPFlow { from, to } => {
            let (a, b) = (idx(grid, from), idx(grid, to));
            let br = grid.dc_branches()[grid.find_dc_branch(a, b).expect("validated")];
            vec![(1.0, Term::Dc { from: a, to: b, g: br.g })]
        }
        AcPInj(n) | DcPInj(n) | ZeroPInj(n) => injection_terms(grid, idx(grid, n), false, 1.0),
        AcQInj(n) | ZeroQInj(n) => injection_terms(grid, idx(grid, n), true, 1.0),
        AcVMag(n) | DcVMag(n) => vec![(1.0, Term::Mag(idx(grid, n)))],
        ConvP { converter, side } => {
            let ci = grid.converter_index(converter).expect("validated");
            let (c, i, j) = grid.converter_nodes(ci);
            match side {
                ConverterSide::Ac => vec![(1.0, ac_term(grid, c, i, false))],
                ConverterSide::Dc => injection_terms(grid, j, false, -1.0),
            }
        }
        ConvQ { converter } => {
            let ci = grid.converter_index(converter).expect("validated");
            let (c, i, _) = grid.converter_nodes(ci);
            vec![(1.0, ac_term(grid, c, i, true))]
        }
    })
}

/// Value and gradient of the exact measurement function at `state`.
/// Gradient entries are with respect to `V` and `θ`.
pub fn nonlinear_partials(
    kind: &MeasurementKind,
    state: &SystemState,
    grid: &GridModel,
) -> Result<(f64, Row)> {
    let mut value = 0.0;
    let mut grad = Vec::new();
    for (s, t) in terms(kind, grid)? {
        match t {
            Term::Ac { from, to, r, x, reactive } => {
                let (p, q) = ac_flow_partials(
                    state.v[from],
                    state.v[to],
                    state.theta[from],
                    state.theta[to],
                    r,
                    x,
                );
                let d = if reactive { q } else { p };
                value += s * d.value;
                grad.extend([
                    (from, Var::Mag, s * d.dv_from),
                    (to, Var::Mag, s * d.dv_to),
                    (from, Var::Angle, s * d.dth_from),
                    (to, Var::Angle, s * d.dth_to),
                ]);
            }
            Term::Dc { from, to, g } => {
                let (f, da, db) = dc_flow_partials(state.v[from], state.v[to], g);
                value += s * f;
                grad.extend([(from, Var::Mag, s * da), (to, Var::Mag, s * db)]);
            }
            Term::Mag(n) => {
                value += s * state.v[n];
                grad.push((n, Var::Mag, s));
            }
        }
    }
    if !value.is_finite() {
        return Err(Error::Numerical(format!("{kind}: non-finite value")));
    }
    Ok((value, merge(grad)))
}

pub fn eval_h_nonlinear(kind: &MeasurementKind, state: &SystemState, grid: &GridModel) -> Result<f64> {
    nonlinear_partials(kind, state, grid).map(|(v, _)| v)
}

/// Linearized row `h(x) ≈ row · x + constant` about the flat state.
///
/// AC flows use `(U, θ)` coordinates; DC flows use `P ≈ g (V_i − V_j)`.
/// Voltage rows are `U` (AC) or `V` (DC). Every row of the present model has
/// a zero constant; it is returned for interface completeness.
pub fn linear_row(kind: &MeasurementKind, grid: &GridModel) -> Result<(Row, f64)> {
    let mut row = Vec::new();
    for (s, t) in terms(kind, grid)? {
        match t {
            Term::Ac { from, to, r, x, reactive } => {
                let z2 = r * r + x * x;
                let (cu, ct) = if reactive {
                    (x / (2.0 * z2), -r / z2)
                } else {
                    (r / (2.0 * z2), x / z2)
                };
                row.extend([
                    (from, Var::Mag, s * cu),
                    (to, Var::Mag, -s * cu),
                    (from, Var::Angle, s * ct),
                    (to, Var::Angle, -s * ct),
                ]);
            }
            Term::Dc { from, to, g } => {
                row.extend([(from, Var::Mag, s * g), (to, Var::Mag, -s * g)]);
            }
            Term::Mag(n) => row.push((n, Var::Mag, s)),
        }
    }
    Ok((merge(row), 0.0))
}

/// Evaluates [`linear_row`] at a state given in `(V, θ)`; AC magnitudes are
/// squared before use.
pub fn eval_h_linear(kind: &MeasurementKind, state: &SystemState, grid: &GridModel) -> Result<f64> {
    let (row, c) = linear_row(kind, grid)?;
    // evaluated as deviations from the flat state so that near-flat flows do
    // not lose digits to cancellation
    let mut flat_part = c;
    let mut dev_part = 0.0;
    for &(n, var, coef) in &row {
        let dx = match var {
            Var::Angle => state.theta[n],
            Var::Mag if grid.nodes()[n].kind == NodeKind::Ac => (state.v[n] - 1.0) * (state.v[n] + 1.0),
            Var::Mag => state.v[n] - 1.0,
        };
        if var == Var::Mag {
            flat_part += coef;
        }
        dev_part += coef * dx;
    }
    Ok(flat_part + dev_part)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{cases, ConverterId, NodeId};
    use crate::powerflow::{nodal_injections, solve_powerflow, InjectionProfile, PowerFlowOptions};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn kp(a: u32, b: u32) -> MeasurementKind {
        MeasurementKind::AcPFlow { from: NodeId(a), to: NodeId(b) }
    }
    fn kq(a: u32, b: u32) -> MeasurementKind {
        MeasurementKind::AcQFlow { from: NodeId(a), to: NodeId(b) }
    }

    #[test]
    fn flat_state_values() {
        let g = cases::toy2();
        let flat = SystemState::flat(&g);
        assert_eq!(eval_h_nonlinear(&MeasurementKind::AcVMag(NodeId(2)), &flat, &g).unwrap(), 1.0);
        assert_eq!(eval_h_nonlinear(&kp(1, 2), &flat, &g).unwrap(), 0.0);
    }

    #[test]
    fn linear_hand_evaluation() {
        // toy2 line: R = 0.01, X = 0.02
        let g = cases::toy2();
        let st = SystemState {
            v: vec![1.02f64.sqrt(), 1.0],
            theta: vec![0.01, 0.0],
        };
        assert_relative_eq!(eval_h_linear(&kp(1, 2), &st, &g).unwrap(), 0.6, epsilon = 1e-12);
        assert_relative_eq!(eval_h_linear(&kq(1, 2), &st, &g).unwrap(), 0.2, epsilon = 1e-12);
        let same = SystemState::flat(&g);
        assert_eq!(eval_h_linear(&kp(1, 2), &same, &g).unwrap(), 0.0);
    }

    #[test]
    fn linear_dc_against_exact() {
        let g = cases::hybrid4();
        let k = MeasurementKind::DcPFlow { from: NodeId(3), to: NodeId(4) };
        let mut st = SystemState::flat(&g);
        st.v[2] = 1.0;
        st.v[3] = 0.99;
        assert_relative_eq!(eval_h_linear(&k, &st, &g).unwrap(), 0.1, epsilon = 1e-12);
        assert_relative_eq!(eval_h_nonlinear(&k, &st, &g).unwrap(), 0.1, epsilon = 1e-12);
        st.v[2] = 0.98;
        st.v[3] = 1.0;
        assert_relative_eq!(eval_h_linear(&k, &st, &g).unwrap(), -0.2, epsilon = 1e-12);
        assert_relative_eq!(eval_h_nonlinear(&k, &st, &g).unwrap(), -0.196, epsilon = 1e-12);
    }

    #[test]
    fn solved_toy_flow_is_load_plus_loss() {
        let g = cases::toy2();
        let sol = solve_powerflow(&g, &InjectionProfile::nominal(&g), &PowerFlowOptions::default()).unwrap();
        let p12 = eval_h_nonlinear(&kp(1, 2), &sol.state, &g).unwrap();
        let p21 = eval_h_nonlinear(&kp(2, 1), &sol.state, &g).unwrap();
        assert_relative_eq!(p21, -0.5, epsilon = 1e-8);
        let loss = p12 + p21;
        assert!(loss > 0.0);
        assert_relative_eq!(p12, 0.5 + loss, epsilon = 1e-8);
        let (p, _) = nodal_injections(&g, &sol.state);
        assert_relative_eq!(p12, p[0], epsilon = 1e-12);
    }

    #[test]
    fn injection_row_is_sum_of_flow_rows() {
        let g = cases::toy3();
        let (inj, _) = linear_row(&MeasurementKind::AcPInj(NodeId(2)), &g).unwrap();
        let (a, _) = linear_row(&kp(2, 1), &g).unwrap();
        let (b, _) = linear_row(&kp(2, 3), &g).unwrap();
        assert_eq!(inj, merge(a.into_iter().chain(b)));
    }

    #[test]
    fn converter_rows() {
        let g = cases::hybrid4();
        let sol = solve_powerflow(&g, &InjectionProfile::nominal(&g), &PowerFlowOptions::default()).unwrap();
        let c = sol.converters[0];
        let ac = MeasurementKind::ConvP { converter: ConverterId(1), side: ConverterSide::Ac };
        let dc = MeasurementKind::ConvP { converter: ConverterId(1), side: ConverterSide::Dc };
        let q = MeasurementKind::ConvQ { converter: ConverterId(1) };
        assert_relative_eq!(eval_h_nonlinear(&ac, &sol.state, &g).unwrap(), c.p_vsc, epsilon = 1e-9);
        assert_relative_eq!(eval_h_nonlinear(&dc, &sol.state, &g).unwrap(), c.p_dc, epsilon = 1e-9);
        assert_relative_eq!(eval_h_nonlinear(&q, &sol.state, &g).unwrap(), c.q_vsc, epsilon = 1e-9);
    }

    #[test]
    fn kind_location_mismatch() {
        let g = cases::hybrid4();
        let flat = SystemState::flat(&g);
        assert!(eval_h_nonlinear(&MeasurementKind::AcVMag(NodeId(4)), &flat, &g).is_err());
        assert!(eval_h_nonlinear(&kp(1, 4), &flat, &g).is_err());
    }

    fn random_state(g: &GridModel, seed: &[f64]) -> SystemState {
        let mut st = SystemState::flat(g);
        for i in 0..g.node_count() {
            st.v[i] = 1.0 + 0.03 * seed[(2 * i) % seed.len()];
            if g.nodes()[i].kind == NodeKind::Ac {
                st.theta[i] = 0.02 * seed[(2 * i + 1) % seed.len()];
            }
        }
        st
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10))]
        #[test]
        fn jacobian_matches_finite_differences(seed in proptest::collection::vec(-1.0f64..1.0, 16)) {
            let g = cases::island();
            let st = random_state(&g, &seed);
            let kinds = crate::telemetry::Placement::full(&g).all();
            for k in kinds {
                let (_, grad) = nonlinear_partials(&k, &st, &g).unwrap();
                for (n, var, d) in grad {
                    let h = 1e-6;
                    let mut a = st.clone();
                    let mut b = st.clone();
                    match var {
                        Var::Mag => { a.v[n] += h; b.v[n] -= h; }
                        Var::Angle => { a.theta[n] += h; b.theta[n] -= h; }
                    }
                    let fd = (eval_h_nonlinear(&k, &a, &g).unwrap() - eval_h_nonlinear(&k, &b, &g).unwrap()) / (2.0 * h);
                    prop_assert!((d - fd).abs() <= 1e-5 * d.abs().max(1.0), "{k} {n} {var:?}: {d} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn first_order_accuracy_on_case33() {
        // Operating points of the 33-bus variant inside the |V - 1| <= 0.03,
        // |θi - θj| <= 0.05 box, obtained by scaling the nominal loading.
        let g = cases::case33_hybrid();
        let nominal = InjectionProfile::nominal(&g);
        let mut checked = 0;
        for scale in [0.1, 0.25, 0.4, 0.55, 0.7] {
            let sol = solve_powerflow(&g, &nominal.scaled(scale), &PowerFlowOptions::default()).unwrap();
            let st = &sol.state;
            if st.v.iter().any(|v| (v - 1.0).abs() > 0.03) {
                continue;
            }
            checked += 1;
            for br in g.ac_branches() {
                assert!((st.theta[br.from] - st.theta[br.to]).abs() <= 0.05);
                let (from, to) = (g.nodes()[br.from].id, g.nodes()[br.to].id);
                for k in [kp(from.0, to.0), kq(from.0, to.0), kp(to.0, from.0), kq(to.0, from.0)] {
                    let lin = eval_h_linear(&k, st, &g).unwrap();
                    let non = eval_h_nonlinear(&k, st, &g).unwrap();
                    assert!((lin - non).abs() <= 0.02, "{k} at scale {scale}: {lin} vs {non}");
                }
            }
            for br in g.dc_branches() {
                let (from, to) = (g.nodes()[br.from].id, g.nodes()[br.to].id);
                let k = MeasurementKind::DcPFlow { from, to };
                let lin = eval_h_linear(&k, st, &g).unwrap();
                let non = eval_h_nonlinear(&k, st, &g).unwrap();
                assert!((lin - non).abs() <= 0.02, "{k}: {lin} vs {non}");
            }
        }
        assert!(checked >= 2, "only {checked} operating points inside the box");
    }
}
