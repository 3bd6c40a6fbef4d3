use super::*;
use crate::estimation::{solve_wls, LnrOptions, NonlinearModel, RowFn, WlsOptions};
use crate::grid::cases;
use crate::powerflow::{solve_powerflow, InjectionProfile, PowerFlowOptions};
use crate::telemetry::{
    exact_measurements, inject_bad_data, linear_consistent_state, simulate_measurements, BadDataCase, Placement,
    ScheduleConfig, StateLayout, TargetSelector,
};

fn truth(g: &GridModel) -> SystemState {
    solve_powerflow(g, &InjectionProfile::nominal(g), &PowerFlowOptions::default())
        .unwrap()
        .state
}

fn linear_set(g: &GridModel) -> (SystemState, MeasurementSet) {
    let st = linear_consistent_state(g, &truth(g)).unwrap();
    let set = exact_measurements(g, &st, &Placement::default_for(g), &ScheduleConfig::default(), 0.0, true).unwrap();
    (st, set)
}

fn max_err(a: &SystemState, b: &SystemState) -> f64 {
    a.v.iter()
        .zip(&b.v)
        .chain(a.theta.iter().zip(&b.theta))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn serial() -> CoordinationParams {
    CoordinationParams { parallel: false, ..Default::default() }
}

#[test]
fn single_region_exits_after_one_iteration() {
    let g = cases::toy3();
    let (st, set) = linear_set(&g);
    let est = run_drse(&g, &set, &CoordinationParams::default()).unwrap();
    assert_eq!(est.iterations, 1);
    assert!(est.converged);
    assert!(max_err(&est.state, &st) < 1e-9);
}

#[test]
fn hybrid4_noise_free_converges() {
    let g = cases::hybrid4();
    let (st, set) = linear_set(&g);
    let params = CoordinationParams { lambda0: 0.0, xi: 1.0, tau: 1e-4, ..Default::default() };
    let est = run_drse(&g, &set, &params).unwrap();
    assert!(est.converged);
    assert!(est.final_mismatch() <= 1e-4);
    assert!(max_err(&est.state, &st) < 1e-6, "{}", max_err(&est.state, &st));
}

#[test]
fn case33_noise_free_exact() {
    let g = cases::case33_hybrid();
    let (st, set) = linear_set(&g);
    let est = run_drse(&g, &set, &CoordinationParams::default()).unwrap();
    assert!(est.converged, "{:?}", est.mismatch_history());
    assert!(max_err(&est.state, &st) < 1e-6, "{}", max_err(&est.state, &st));
    for r in &est.regions {
        assert!(r.objective <= 1e-9, "{}", r.objective);
    }
}

fn noisy(g: &GridModel, seed: u64) -> (SystemState, MeasurementSet) {
    let st = truth(g);
    let set = simulate_measurements(g, &st, &Placement::default_for(g), &ScheduleConfig::default(), 0.0, seed).unwrap();
    (st, set)
}

fn mae(a: &SystemState, b: &SystemState) -> f64 {
    max_err(a, b)
}

#[test]
fn trace_invariants() {
    let g = cases::case33_hybrid();
    let (_, set) = noisy(&g, 3);
    let params = CoordinationParams { xi: 1e7, ..serial() };
    let est = run_drse(&g, &set, &params).unwrap();
    // λ never decreases
    for c in g.converters() {
        let lams: Vec<f64> = est.trace.iter().filter(|t| t.converter == c.id).map(|t| t.lambda).collect();
        assert!(lams.windows(2).all(|w| w[1] >= w[0]));
    }
    assert_eq!(est.converged, est.final_mismatch() <= params.tau);
    for t in &est.timings {
        let worst = t.regions.iter().cloned().fold(0.0, f64::max);
        assert!(t.total >= worst);
    }
}

#[test]
fn parallel_and_serial_traces_identical() {
    let g = cases::case33_hybrid();
    let (_, set) = noisy(&g, 11);
    for schedule in [Schedule::AcThenDc, Schedule::Jacobi] {
        let p = CoordinationParams { xi: 1e7, schedule, max_iter: 6, ..Default::default() };
        let a = run_drse(&g, &set, &CoordinationParams { parallel: true, ..p }).unwrap();
        let b = run_drse(&g, &set, &CoordinationParams { parallel: false, ..p }).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.packets, b.packets);
        assert_eq!(a.state, b.state);
    }
}

#[test]
fn packets_only_cross_converters() {
    let g = cases::island();
    let (_, set) = linear_set(&g);
    let est = run_drse(&g, &set, &serial()).unwrap();
    assert!(!est.packets.is_empty());
    for p in &est.packets {
        let ci = g.converter_index(p.converter).unwrap();
        let (ac, dc) = g.converter_regions(ci);
        let sender = g.region_index(p.sender).unwrap();
        match p.side {
            ConverterSide::Ac => assert_eq!(sender, ac),
            ConverterSide::Dc => assert_eq!(sender, dc),
        }
    }
    let mut buf = Vec::new();
    est.write_packets_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("iteration,converter,sender,side,p_vsc,q_vsc,p_loss,v_pcc\n"));
}

#[test]
fn regional_solve_ignores_other_regions() {
    // region 0's output depends only on its own rows and the packets it is given
    let g = cases::island();
    let (_, set) = linear_set(&g);
    let split = split_by_region(&g, &set).unwrap();
    let solver = WlavRegion::new(&g, 0, split[0].1.clone()).unwrap();
    let inbox = [Some(BoundaryPacket {
        iteration: 1,
        converter: g.converters()[0].id,
        sender: g.regions()[1].id,
        side: ConverterSide::Dc,
        p_vsc: 0.05,
        q_vsc: 0.0,
        p_loss: 0.011,
        v_pcc: 1.0,
    })];
    let a = solver.solve(&inbox, &[10.0], 2, None).unwrap();
    // scramble every other region's measurements, rebuild, same output
    let mut other = set.clone();
    for (k, m) in other.measurements.iter_mut().enumerate() {
        if !split[0].0.contains(&k) {
            m.value *= 3.0;
        }
    }
    let split2 = split_by_region(&g, &other).unwrap();
    let solver2 = WlavRegion::new(&g, 0, split2[0].1.clone()).unwrap();
    let b = solver2.solve(&inbox, &[10.0], 2, None).unwrap();
    assert_eq!(a.result.x, b.result.x);
    assert_eq!(a.packets, b.packets);
}

#[test]
fn loss_balance_at_convergence() {
    let g = cases::case33_hybrid();
    let (_, set) = noisy(&g, 5);
    let params = CoordinationParams { xi: 1e7, ..Default::default() };
    let est = run_drse(&g, &set, &params).unwrap();
    assert!(est.converged, "{:?}", est.mismatch_history());
    for (ci, c) in g.converters().iter().enumerate() {
        let t = est.trace.iter().rev().find(|t| t.converter == c.id).unwrap();
        let (aux, _, _) = g.converter_nodes(ci);
        let (loss, _) = crate::physics::converter_loss(t.p_vsc_ac, 0.0, 1.0, c.loss_coeffs());
        let _ = (aux, loss);
        assert!(t.mismatch.abs() <= params.tau);
    }
}

#[test]
fn case2_converter_error_rejected() {
    let g = cases::hybrid4();
    let params = CoordinationParams { xi: 1e7, ..Default::default() };
    let (st, set) = noisy(&g, 21);
    let clean = run_drse(&g, &set, &params).unwrap();
    let bad = inject_bad_data(&set, &g, BadDataCase::Case2, TargetSelector::LargestMagnitude, 0).unwrap();
    let k = bad.iter().position(|m| m.corrupted).unwrap();
    let est = run_drse(&g, &bad, &params).unwrap();
    assert!(est.converged);
    let e_clean = mae(&clean.state, &st);
    let e_bad = mae(&est.state, &st);
    assert!(e_bad <= 3.0 * e_clean.max(1e-6), "{e_bad} vs {e_clean}");
    let top = (0..bad.len())
        .max_by(|&a, &b| est.weighted_residuals[a].total_cmp(&est.weighted_residuals[b]))
        .unwrap();
    assert_eq!(top, k);
}

#[test]
fn dwls_noise_free_matches_truth() {
    let g = cases::hybrid4();
    let st = truth(&g);
    let set = exact_measurements(&g, &st, &Placement::default_for(&g), &ScheduleConfig::default(), 0.0, false).unwrap();
    let est = run_dwls(&g, &set, &CoordinationParams::default(), None).unwrap();
    assert!(est.converged);
    assert!(max_err(&est.state, &st) < 1e-6);
    // DRSE on the same nonlinear data differs only by linearization error
    let drse = run_drse(&g, &set, &CoordinationParams { xi: 1e7, ..Default::default() }).unwrap();
    assert!(max_err(&drse.state, &est.state) < 1e-2);
}

#[test]
fn dwls_case1_flagged() {
    let g = cases::case33_hybrid();
    let st = truth(&g);
    let set = exact_measurements(&g, &st, &Placement::default_for(&g), &ScheduleConfig::default(), 0.0, false).unwrap();
    let bad = inject_bad_data(&set, &g, BadDataCase::Case1, TargetSelector::LargestMagnitude, 0).unwrap();
    let k = bad.iter().position(|m| m.corrupted).unwrap();
    let params = CoordinationParams { xi: 1e9, ..Default::default() };
    let est = run_dwls(&g, &bad, &params, Some(&LnrOptions::default())).unwrap();
    assert!(est.removed.contains(&k), "{:?}", est.removed);
    assert!(max_err(&est.state, &st) < 1e-4, "{}", max_err(&est.state, &st));
}

#[test]
fn dwls_unmeasured_region() {
    let g = cases::hybrid4();
    let st = truth(&g);
    let set = exact_measurements(&g, &st, &Placement::default_for(&g), &ScheduleConfig::default(), 0.0, false).unwrap();
    let only_ac: MeasurementSet = set.iter().filter(|m| m.kind.region(&g).unwrap() == 0).copied().collect();
    let err = run_dwls(&g, &only_ac, &CoordinationParams::default(), None).unwrap_err();
    assert!(matches!(&err, Error::Unobservable(msg) if msg.contains("region 1")), "{err}");
}

#[test]
fn drse_underdetermined_region() {
    // a SCADA-only tick leaves fewer AC rows than AC states
    let g = cases::case33_hybrid();
    let set = exact_measurements(&g, &truth(&g), &Placement::default_for(&g), &ScheduleConfig::default(), 900.0, false)
        .unwrap();
    let err = run_drse(&g, &set, &CoordinationParams::default()).unwrap_err();
    assert!(matches!(err, Error::Unobservable(_)), "{err}");
}

#[test]
fn cwls_noise_free_and_single_region() {
    let g = cases::hybrid4();
    let st = truth(&g);
    let set = exact_measurements(&g, &st, &Placement::default_for(&g), &ScheduleConfig::default(), 0.0, false).unwrap();
    let est = run_cwls(&g, &set, &CwlsOptions::default()).unwrap();
    assert!(max_err(&est.state, &st) < 1e-6);

    let g = cases::toy3();
    let st = truth(&g);
    let (_, set) = noisy(&g, 2);
    let est = run_cwls(&g, &set, &CwlsOptions::default()).unwrap();
    let layout = StateLayout::system(&g);
    let model = NonlinearModel::new(&g, layout.clone(), set.iter().map(|m| RowFn::Measurement(m.kind)).collect());
    let z = DVector::from_iterator(set.len(), set.iter().map(|m| m.value));
    let s = DVector::from_iterator(set.len(), set.iter().map(|m| m.sigma));
    let x0 = layout.extract(&g, &SystemState::flat(&g), false);
    let direct = solve_wls(&model, &z, &s, &vec![true; set.len()], &x0, &WlsOptions::default()).unwrap();
    assert_eq!(est.regions[0].x, direct.x);
    let _ = st;
}

