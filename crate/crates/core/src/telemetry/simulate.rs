//! Synthetic telemetry and gross-error injection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::functions::{eval_h_linear, eval_h_nonlinear};
use super::{ConverterSide, Measurement, MeasurementKind, MeasurementSet, Source};
use crate::error::{Error, Result};
use crate::grid::{GridModel, NodeKind};
use crate::physics::converter_loss;
use crate::powerflow::{nodal_injections, SystemState};
use nalgebra::{DMatrix, DVector};

/// Update periods (seconds) and accuracies (percent, read as a 3σ bound).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub scada_period: f64,
    pub smart_meter_period: f64,
    pub scada_vmag_pct: f64,
    pub scada_power_pct: f64,
    pub smart_meter_pct: f64,
    /// Lower bound on every reported sigma (p.u.).
    pub sigma_floor: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            scada_period: 900.0,
            smart_meter_period: 3600.0,
            scada_vmag_pct: 1.0,
            scada_power_pct: 2.0,
            smart_meter_pct: 2.0,
            sigma_floor: 1e-4,
        }
    }
}

impl ScheduleConfig {
    /// All accuracies set to zero: measurements equal true values.
    pub fn noiseless() -> Self {
        Self {
            scada_vmag_pct: 0.0,
            scada_power_pct: 0.0,
            smart_meter_pct: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.scada_period > 0.0
            && self.smart_meter_period > 0.0
            && self.scada_vmag_pct >= 0.0
            && self.scada_power_pct >= 0.0
            && self.smart_meter_pct >= 0.0
            && self.sigma_floor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid schedule {self:?}")))
        }
    }

    fn pct(&self, kind: &MeasurementKind, source: Source) -> f64 {
        match (source, kind) {
            (Source::SmartMeter, _) => self.smart_meter_pct,
            (_, MeasurementKind::AcVMag(_) | MeasurementKind::DcVMag(_)) => self.scada_vmag_pct,
            _ => self.scada_power_pct,
        }
    }

    /// `max(pct/3 · |value|, floor)`.
    pub fn sigma(&self, pct: f64, value: f64) -> f64 {
        (pct / 300.0 * value.abs()).max(self.sigma_floor)
    }
}

fn due(t: f64, period: f64) -> bool {
    let k = (t / period).round();
    (t - k * period).abs() < 1e-9
}

/// Which quantities each channel reports.
#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    pub scada: Vec<MeasurementKind>,
    pub smart_meter: Vec<MeasurementKind>,
    /// Virtual zero-injection rows.
    pub zero: Vec<MeasurementKind>,
}

impl Placement {
    /// SCADA at the substation (V, P, Q), on metered AC lines (P, Q at the
    /// `from` end), at every converter (V at both AC nodes, P and Q on the
    /// AC side, DC voltage and P on the DC side) and on every DC line (P).
    /// Smart meters at every load/generation node. Zero injections at
    /// junction nodes.
    pub fn default_for(grid: &GridModel) -> Self {
        use MeasurementKind::*;
        let id = |i: usize| grid.nodes()[i].id;
        let s = grid.slack();
        let mut scada = vec![AcVMag(s), AcPInj(s), AcQInj(s)];
        for l in grid.ac_lines().iter().filter(|l| l.metered) {
            scada.push(AcPFlow { from: l.from, to: l.to });
            scada.push(AcQFlow { from: l.from, to: l.to });
        }
        for c in grid.converters() {
            scada.extend([
                AcVMag(c.ac_node),
                AcVMag(c.aux_node),
                ConvP { converter: c.id, side: ConverterSide::Ac },
                ConvQ { converter: c.id },
                DcVMag(c.dc_node),
                ConvP { converter: c.id, side: ConverterSide::Dc },
            ]);
        }
        for l in grid.dc_lines() {
            scada.push(DcPFlow { from: l.from, to: l.to });
        }
        let mut smart_meter = Vec::new();
        for i in grid.injection_nodes() {
            if grid.nodes()[i].kind == NodeKind::Ac {
                smart_meter.extend([AcPInj(id(i)), AcQInj(id(i))]);
            } else {
                smart_meter.push(DcPInj(id(i)));
            }
        }
        let mut zero = Vec::new();
        for i in grid.junction_nodes() {
            zero.push(ZeroPInj(id(i)));
            if grid.nodes()[i].kind == NodeKind::Ac {
                zero.push(ZeroQInj(id(i)));
            }
        }
        Placement {
            scada,
            smart_meter,
            zero,
        }
    }

    /// Every quantity the model can express, as SCADA: both ends of every
    /// branch, every injection and every voltage, and all converter sides.
    pub fn full(grid: &GridModel) -> Self {
        use MeasurementKind::*;
        let mut scada = Vec::new();
        for br in grid.ac_branches() {
            let (a, b) = (grid.nodes()[br.from].id, grid.nodes()[br.to].id);
            scada.extend([
                AcPFlow { from: a, to: b },
                AcQFlow { from: a, to: b },
                AcPFlow { from: b, to: a },
                AcQFlow { from: b, to: a },
            ]);
        }
        for br in grid.dc_branches() {
            let (a, b) = (grid.nodes()[br.from].id, grid.nodes()[br.to].id);
            scada.extend([DcPFlow { from: a, to: b }, DcPFlow { from: b, to: a }]);
        }
        for n in grid.nodes() {
            match n.kind {
                NodeKind::Ac => scada.extend([AcVMag(n.id), AcPInj(n.id), AcQInj(n.id)]),
                NodeKind::Dc => scada.extend([DcVMag(n.id), DcPInj(n.id)]),
            }
        }
        for c in grid.converters() {
            scada.extend([
                ConvP { converter: c.id, side: ConverterSide::Ac },
                ConvP { converter: c.id, side: ConverterSide::Dc },
                ConvQ { converter: c.id },
            ]);
        }
        let mut p = Self::default_for(grid);
        p.scada = scada;
        p
    }

    pub fn all(&self) -> Vec<MeasurementKind> {
        self.scada
            .iter()
            .chain(&self.smart_meter)
            .chain(&self.zero)
            .copied()
            .collect()
    }
}

fn emit(
    grid: &GridModel,
    truth: &SystemState,
    placement: &Placement,
    schedule: &ScheduleConfig,
    t: f64,
    linear: bool,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<MeasurementSet> {
    schedule.validate()?;
    let mut out = Vec::new();
    let mut channels: Vec<(&[MeasurementKind], Source)> = Vec::new();
    if due(t, schedule.scada_period) {
        channels.push((&placement.scada, Source::Scada));
    }
    if due(t, schedule.smart_meter_period) {
        channels.push((&placement.smart_meter, Source::SmartMeter));
    }
    for (kinds, source) in channels {
        for kind in kinds {
            // voltage magnitudes are reported as V in both models
            let value = if linear && !matches!(kind, MeasurementKind::AcVMag(_)) {
                eval_h_linear(kind, truth, grid)?
            } else {
                eval_h_nonlinear(kind, truth, grid)?
            };
            let pct = schedule.pct(kind, source);
            let sigma = schedule.sigma(pct, value);
            let noise = match rng.as_deref_mut() {
                Some(r) if pct > 0.0 => sigma * r.sample::<f64, _>(StandardNormal),
                _ => 0.0,
            };
            out.push(Measurement::new(*kind, value + noise, sigma, source, t));
        }
    }
    for kind in &placement.zero {
        kind.region(grid)?;
        out.push(Measurement::new(*kind, 0.0, 0.0, Source::VirtualZero, t));
    }
    Ok(MeasurementSet::new(out))
}

/// Noisy telemetry at time `t` from the true state.
///
/// SCADA rows appear when `t` is a multiple of the SCADA period and
/// smart-meter rows when it is a multiple of the smart-meter period; zero
/// injections are always present. Noise is `N(0, σ²)` with
/// `σ = max(pct/3 · |true|, floor)`, drawn in row order from `seed`.
pub fn simulate_measurements(
    grid: &GridModel,
    truth: &SystemState,
    placement: &Placement,
    schedule: &ScheduleConfig,
    t: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    emit(grid, truth, placement, schedule, t, false, Some(&mut rng))
}

/// Noise-free telemetry with the same sigmas as [`simulate_measurements`].
/// With `linear`, values come from the linearized rows, so the set is
/// exactly consistent with the linear model at `truth`.
pub fn exact_measurements(
    grid: &GridModel,
    truth: &SystemState,
    placement: &Placement,
    schedule: &ScheduleConfig,
    t: f64,
    linear: bool,
) -> Result<MeasurementSet> {
    emit(grid, truth, placement, schedule, t, linear, None)
}

/// A state whose linearized telemetry is exactly consistent, converter
/// balance included.
///
/// AC nodes keep `truth`. Each DC region is re-solved with the linear flow
/// model: every converter terminal draws `P_VSC + P_loss` computed from the
/// linearized AC-side rows at `truth`, other DC nodes keep their true
/// injections, and the terminal of the region's lowest-id converter holds
/// its true voltage. The lossless linear balance is closed on the DC node
/// with the largest injection.
pub fn linear_consistent_state(grid: &GridModel, truth: &SystemState) -> Result<SystemState> {
    let mut out = truth.clone();
    let (p_true, _) = nodal_injections(grid, truth);
    for r in 0..grid.regions().len() {
        if grid.region_kind(r) != NodeKind::Dc {
            continue;
        }
        let nodes = grid.region_nodes(r);
        let pos = |n: usize| nodes.iter().position(|&m| m == n).expect("node in region");
        let mut inj: Vec<f64> = nodes.iter().map(|&n| p_true[n]).collect();
        let mut convs = grid.region_converters(r);
        convs.sort_by_key(|&ci| grid.converters()[ci].id);
        for &ci in &convs {
            let c = &grid.converters()[ci];
            let (aux, _, j) = grid.converter_nodes(ci);
            let p = eval_h_linear(&MeasurementKind::ConvP { converter: c.id, side: ConverterSide::Ac }, truth, grid)?;
            let q = eval_h_linear(&MeasurementKind::ConvQ { converter: c.id }, truth, grid)?;
            let (loss, _) = converter_loss(p, q, truth.v[aux], c.loss_coeffs());
            inj[pos(j)] = -(p + loss);
        }
        let Some(&first) = convs.first() else { continue };
        let reference = pos(grid.converter_nodes(first).2);
        let imbalance: f64 = inj.iter().sum();
        let sink = (0..nodes.len())
            .filter(|&k| grid.nodes()[nodes[k]].role.has_injection())
            .max_by(|&a, &b| inj[a].abs().total_cmp(&inj[b].abs()))
            .ok_or_else(|| {
                Error::Validation(format!(
                    "DC region {} has no injection node to close the linear balance",
                    grid.regions()[r].id
                ))
            })?;
        inj[sink] -= imbalance;
        // reduced Laplacian solve with the reference voltage fixed
        let n = nodes.len();
        let mut lap = DMatrix::zeros(n, n);
        for &b in grid.region_dc_branches(r) {
            let br = &grid.dc_branches()[b];
            let (i, k) = (pos(br.from), pos(br.to));
            lap[(i, i)] += br.g;
            lap[(k, k)] += br.g;
            lap[(i, k)] -= br.g;
            lap[(k, i)] -= br.g;
        }
        let v_ref = truth.v[nodes[reference]];
        let keep: Vec<usize> = (0..n).filter(|&k| k != reference).collect();
        let a = DMatrix::from_fn(keep.len(), keep.len(), |i, k| lap[(keep[i], keep[k])]);
        let rhs = DVector::from_fn(keep.len(), |i, _| inj[keep[i]] - lap[(keep[i], reference)] * v_ref);
        let v = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical(format!("singular DC region {}", grid.regions()[r].id)))?;
        out.v[nodes[reference]] = v_ref;
        for (i, &k) in keep.iter().enumerate() {
            out.v[nodes[k]] = v[i];
        }
    }
    Ok(out)
}

/// Gross-error scenarios.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BadDataCase {
    /// One AC line active-flow measurement doubled.
    Case1,
    /// One converter active-power measurement doubled.
    Case2,
    /// The active/reactive flow pair of one AC line negated.
    Case3,
}

impl BadDataCase {
    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Self::Case1),
            2 => Some(Self::Case2),
            3 => Some(Self::Case3),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Self::Case1 => 1,
            Self::Case2 => 2,
            Self::Case3 => 3,
        }
    }
}

/// How the corrupted measurement is chosen among the eligible ones.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSelector {
    /// Largest absolute value; ties go to the earliest row.
    #[default]
    LargestMagnitude,
    /// Uniformly random from the seed.
    Random,
    /// The `k`-th eligible row in set order.
    Nth(usize),
}

/// Corrupts one measurement (Cases 1 and 2) or one P/Q pair (Case 3).
///
/// Eligible rows are SCADA measurements: active flows on AC lines (not
/// converter couplings) for Cases 1 and 3, converter active power on either
/// side for Case 2. Corrupted rows get the audit flag.
pub fn inject_bad_data(
    set: &MeasurementSet,
    grid: &GridModel,
    case: BadDataCase,
    selector: TargetSelector,
    seed: u64,
) -> Result<MeasurementSet> {
    use MeasurementKind::*;
    let is_line = |from, to| {
        let (a, b) = (grid.node_index(from), grid.node_index(to));
        match (a, b) {
            (Some(a), Some(b)) => grid
                .find_ac_branch(a, b)
                .map(|bi| bi < grid.ac_lines().len())
                .unwrap_or(false),
            _ => false,
        }
    };
    let partner = |k: usize| -> Option<usize> {
        let AcPFlow { from, to } = set.measurements[k].kind else {
            return None;
        };
        set.find(&AcQFlow { from, to })
    };
    let eligible: Vec<usize> = set
        .measurements
        .iter()
        .enumerate()
        .filter(|(k, m)| {
            m.source == Source::Scada
                && match (case, m.kind) {
                    (BadDataCase::Case1, AcPFlow { from, to }) => is_line(from, to),
                    (BadDataCase::Case3, AcPFlow { from, to }) => {
                        is_line(from, to) && partner(*k).is_some()
                    }
                    (BadDataCase::Case2, ConvP { .. }) => true,
                    _ => false,
                }
        })
        .map(|(k, _)| k)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Validation(format!(
            "no eligible target for bad-data case {}",
            case.number()
        )));
    }
    let target = match selector {
        TargetSelector::LargestMagnitude => {
            let mut best = eligible[0];
            for &k in &eligible[1..] {
                if set.measurements[k].value.abs() > set.measurements[best].value.abs() {
                    best = k;
                }
            }
            best
        }
        TargetSelector::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            eligible[rng.random_range(0..eligible.len())]
        }
        TargetSelector::Nth(n) => *eligible.get(n).ok_or_else(|| {
            Error::Validation(format!("only {} eligible targets, asked for #{n}", eligible.len()))
        })?,
    };
    let mut out = set.clone();
    let mut corrupt = |k: usize, factor: f64| {
        let m = &mut out.measurements[k];
        m.value *= factor;
        m.corrupted = true;
    };
    match case {
        BadDataCase::Case1 | BadDataCase::Case2 => corrupt(target, 2.0),
        BadDataCase::Case3 => {
            corrupt(target, -1.0);
            corrupt(partner(target).expect("eligible"), -1.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{cases, ConverterId, NodeId};
    use crate::powerflow::{solve_powerflow, InjectionProfile, PowerFlowOptions};

    fn truth(g: &GridModel) -> SystemState {
        solve_powerflow(g, &InjectionProfile::nominal(g), &PowerFlowOptions::default())
            .unwrap()
            .state
    }

    #[test]
    fn zero_pct_is_exact() {
        let g = cases::case33_hybrid();
        let st = truth(&g);
        let p = Placement::default_for(&g);
        let set = simulate_measurements(&g, &st, &p, &ScheduleConfig::noiseless(), 0.0, 1).unwrap();
        for m in set.iter() {
            assert_eq!(m.value, eval_h_nonlinear(&m.kind, &st, &g).unwrap());
        }
    }

    #[test]
    fn timescales() {
        let g = cases::case33_hybrid();
        let st = truth(&g);
        let p = Placement::default_for(&g);
        let s = ScheduleConfig::default();
        let at = |t| simulate_measurements(&g, &st, &p, &s, t, 3).unwrap();
        let m900 = at(900.0);
        assert!(m900.iter().any(|m| m.source == Source::Scada));
        assert!(m900.iter().all(|m| m.source != Source::SmartMeter));
        let m3600 = at(3600.0);
        assert!(m3600.iter().any(|m| m.source == Source::SmartMeter));
        assert_eq!(m3600.len(), p.scada.len() + p.smart_meter.len() + p.zero.len());
        assert!(at(100.0).iter().all(|m| m.source == Source::VirtualZero));
    }

    #[test]
    fn deterministic_per_seed() {
        let g = cases::case33_hybrid();
        let st = truth(&g);
        let p = Placement::default_for(&g);
        let s = ScheduleConfig::default();
        let a = simulate_measurements(&g, &st, &p, &s, 0.0, 11).unwrap();
        let b = simulate_measurements(&g, &st, &p, &s, 0.0, 11).unwrap();
        let c = simulate_measurements(&g, &st, &p, &s, 0.0, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_statistics() {
        let g = cases::hybrid4();
        let st = truth(&g);
        let p = Placement::default_for(&g);
        let s = ScheduleConfig::default();
        let n = 10_000;
        let exact = exact_measurements(&g, &st, &p, &s, 0.0, false).unwrap();
        let mut sumsq = vec![0.0; exact.len()];
        for seed in 0..n {
            let set = simulate_measurements(&g, &st, &p, &s, 0.0, seed).unwrap();
            for (k, m) in set.iter().enumerate() {
                let e = m.value - exact.measurements[k].value;
                sumsq[k] += e * e;
            }
        }
        for (k, m) in exact.iter().enumerate() {
            if m.is_exact() {
                continue;
            }
            let sd = (sumsq[k] / n as f64).sqrt();
            assert!((sd / m.sigma - 1.0).abs() < 0.05, "{}: {sd} vs {}", m.kind, m.sigma);
        }
    }

    fn one(kind: MeasurementKind, value: f64) -> Measurement {
        Measurement::new(kind, value, 0.01, Source::Scada, 0.0)
    }

    #[test]
    fn bad_data_cases() {
        use MeasurementKind::*;
        let g = cases::hybrid4();
        let g3 = cases::toy3();
        let p = AcPFlow { from: NodeId(1), to: NodeId(2) };
        let q = AcQFlow { from: NodeId(1), to: NodeId(2) };
        let set = MeasurementSet::new(vec![one(p, 0.6), one(q, 0.2), one(AcVMag(NodeId(1)), 1.0)]);
        let c1 = inject_bad_data(&set, &g3, BadDataCase::Case1, TargetSelector::default(), 0).unwrap();
        assert_eq!(c1.measurements[0].value, 1.2);
        assert!(c1.measurements[0].corrupted);
        assert_eq!(&c1.measurements[1..], &set.measurements[1..]);
        let c3 = inject_bad_data(&set, &g3, BadDataCase::Case3, TargetSelector::default(), 0).unwrap();
        assert_eq!((c3.measurements[0].value, c3.measurements[1].value), (-0.6, -0.2));
        assert_eq!(c3.measurements[2], set.measurements[2]);

        let conv = ConvP { converter: ConverterId(1), side: ConverterSide::Ac };
        let set = MeasurementSet::new(vec![one(AcVMag(NodeId(1)), 1.0), one(conv, 0.35)]);
        let c2 = inject_bad_data(&set, &g, BadDataCase::Case2, TargetSelector::default(), 0).unwrap();
        assert_eq!(c2.measurements[1].value, 0.7);
        assert!(inject_bad_data(&set, &g, BadDataCase::Case1, TargetSelector::default(), 0).is_err());
    }

    #[test]
    fn linear_consistent_balance() {
        let g = cases::case33_hybrid();
        let sol = solve_powerflow(&g, &InjectionProfile::nominal(&g), &PowerFlowOptions::default()).unwrap();
        let st = linear_consistent_state(&g, &sol.state).unwrap();
        for (ci, c) in g.converters().iter().enumerate() {
            let (aux, _, j) = g.converter_nodes(ci);
            let p = eval_h_linear(&MeasurementKind::ConvP { converter: c.id, side: ConverterSide::Ac }, &st, &g).unwrap();
            let q = eval_h_linear(&MeasurementKind::ConvQ { converter: c.id }, &st, &g).unwrap();
            let pdc = eval_h_linear(&MeasurementKind::ConvP { converter: c.id, side: ConverterSide::Dc }, &st, &g).unwrap();
            let (loss, _) = converter_loss(p, q, st.v[aux], c.loss_coeffs());
            assert!((p + loss - pdc).abs() < 1e-12, "{} {}", p + loss, pdc);
            // close to the nonlinear truth
            assert!((st.v[j] - sol.state.v[j]).abs() < 1e-12);
        }
        for i in 0..g.node_count() {
            assert!((st.v[i] - sol.state.v[i]).abs() < 5e-3);
        }
    }
}
