//! Bundled example networks.
//!
//! The same networks ship as JSON under `data/` (see [`bundled_path`]); a
//! test keeps the files byte-identical to the builders here.

use std::path::PathBuf;

use super::*;

/// Path of a bundled grid file, e.g. `bundled_path("case33_hybrid")`.
pub fn bundled_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(format!("{name}.json"))
}

fn node(id: u32, kind: NodeKind, region: u32, role: NodeRole, p: f64, q: f64) -> Node {
    Node {
        id: NodeId(id),
        kind,
        region: RegionId(region),
        role,
        p_nom: p,
        q_nom: q,
        gen_capacity: 0.0,
    }
}

fn ac_line(from: u32, to: u32, r: f64, x: f64, metered: bool) -> AcLine {
    AcLine {
        from: NodeId(from),
        to: NodeId(to),
        r,
        x,
        metered,
    }
}

fn dc_line(from: u32, to: u32, g: f64) -> DcLine {
    DcLine {
        from: NodeId(from),
        to: NodeId(to),
        g,
    }
}

fn converter(id: u32, ac: u32, aux: u32, dc: u32, control: ConverterControl) -> Converter {
    let [d1, d2, d3] = DEFAULT_LOSS_COEFFS;
    Converter {
        id: ConverterId(id),
        ac_node: NodeId(ac),
        aux_node: NodeId(aux),
        dc_node: NodeId(dc),
        coupling_r: 0.0005,
        coupling_x: 0.005,
        d1,
        d2,
        d3,
        control,
        p_max: 1.0,
        q_max: 0.5,
        i_max: 1.0,
    }
}

fn region(id: u32, kind: NodeKind, nodes: &[u32], boundary: &[(u32, Orientation)]) -> Region {
    Region {
        id: RegionId(id),
        kind,
        nodes: nodes.iter().map(|&n| NodeId(n)).collect(),
        boundary: boundary
            .iter()
            .map(|&(c, orientation)| BoundaryLink {
                converter: ConverterId(c),
                orientation,
            })
            .collect(),
    }
}

const SLACK_DC: ConverterControl = ConverterControl::DcSlack {
    v_dc_set: 1.0,
    q_set: 0.0,
};

/// Two AC nodes, one line r=0.01, x=0.02; load 0.5 + j0.2 at node 2.
pub fn toy2() -> GridModel {
    use NodeKind::Ac;
    GridModel::new(
        vec![
            node(1, Ac, 0, NodeRole::Substation, 0.0, 0.0),
            node(2, Ac, 0, NodeRole::Load, -0.5, -0.2),
        ],
        vec![ac_line(1, 2, 0.01, 0.02, true)],
        vec![],
        vec![],
        vec![region(0, Ac, &[1, 2], &[])],
        NodeId(1),
    )
    .expect("toy2 is valid")
}

/// Three-node radial AC feeder 1-2-3 with loads at nodes 2 and 3.
pub fn toy3() -> GridModel {
    use NodeKind::Ac;
    GridModel::new(
        vec![
            node(1, Ac, 0, NodeRole::Substation, 0.0, 0.0),
            node(2, Ac, 0, NodeRole::Load, -0.3, -0.1),
            node(3, Ac, 0, NodeRole::Load, -0.4, -0.15),
        ],
        vec![
            ac_line(1, 2, 0.01, 0.02, true),
            ac_line(2, 3, 0.015, 0.03, true),
        ],
        vec![],
        vec![],
        vec![region(0, Ac, &[1, 2, 3], &[])],
        NodeId(1),
    )
    .expect("toy3 is valid")
}

/// Substation 1, converter aux node 2, DC terminal 3 and DC load 4 (g=10).
pub fn hybrid4() -> GridModel {
    use NodeKind::{Ac, Dc};
    GridModel::new(
        vec![
            node(1, Ac, 0, NodeRole::Substation, 0.0, 0.0),
            node(2, Ac, 0, NodeRole::ConverterAux, 0.0, 0.0),
            node(3, Dc, 1, NodeRole::ConverterAux, 0.0, 0.0),
            node(4, Dc, 1, NodeRole::Load, -0.2, 0.0),
        ],
        vec![],
        vec![dc_line(3, 4, 10.0)],
        vec![converter(1, 1, 2, 3, SLACK_DC)],
        vec![
            region(0, Ac, &[1, 2], &[(1, Orientation::OwnsAcSide)]),
            region(1, Dc, &[3, 4], &[(1, Orientation::OwnsDcSide)]),
        ],
        NodeId(1),
    )
    .expect("hybrid4 is valid")
}

/// Root AC feeder, a DC link region, and an AC island fed through a second
/// converter whose aux node acts as the island's reference.
pub fn island() -> GridModel {
    use NodeKind::{Ac, Dc};
    let pq = ConverterControl::Pq {
        p_set: 0.0,
        q_set: 0.0,
    };
    GridModel::new(
        vec![
            node(1, Ac, 0, NodeRole::Substation, 0.0, 0.0),
            node(2, Ac, 0, NodeRole::Load, -0.1, -0.05),
            node(3, Ac, 0, NodeRole::ConverterAux, 0.0, 0.0),
            node(4, Dc, 1, NodeRole::ConverterAux, 0.0, 0.0),
            node(5, Dc, 1, NodeRole::Load, -0.05, 0.0),
            node(6, Dc, 1, NodeRole::ConverterAux, 0.0, 0.0),
            node(7, Ac, 2, NodeRole::ConverterAux, 0.0, 0.0),
            node(8, Ac, 2, NodeRole::Load, -0.08, -0.03),
            node(9, Ac, 2, NodeRole::Junction, 0.0, 0.0),
        ],
        vec![
            ac_line(1, 2, 0.01, 0.02, true),
            ac_line(8, 9, 0.02, 0.03, false),
        ],
        vec![dc_line(4, 5, 20.0), dc_line(5, 6, 25.0)],
        vec![
            converter(1, 2, 3, 4, SLACK_DC),
            converter(2, 8, 7, 6, pq),
        ],
        vec![
            region(0, Ac, &[1, 2, 3], &[(1, Orientation::OwnsAcSide)]),
            region(
                1,
                Dc,
                &[4, 5, 6],
                &[(1, Orientation::OwnsDcSide), (2, Orientation::OwnsDcSide)],
            ),
            region(2, Ac, &[7, 8, 9], &[(2, Orientation::OwnsAcSide)]),
        ],
        NodeId(1),
    )
    .expect("island is valid")
}

/// Base quantities of the 33-bus feeder: 12.66 kV, 10 MVA.
pub const CASE33_BASE_KV: f64 = 12.66;
pub const CASE33_BASE_MVA: f64 = 10.0;

// (from, to, R ohm, X ohm) of the classic 33-bus radial feeder
const CASE33_LINES: [(u32, u32, f64, f64); 32] = [
    (1, 2, 0.0922, 0.0470),
    (2, 3, 0.4930, 0.2511),
    (3, 4, 0.3660, 0.1864),
    (4, 5, 0.3811, 0.1941),
    (5, 6, 0.8190, 0.7070),
    (6, 7, 0.1872, 0.6188),
    (7, 8, 0.7114, 0.2351),
    (8, 9, 1.0300, 0.7400),
    (9, 10, 1.0440, 0.7400),
    (10, 11, 0.1966, 0.0650),
    (11, 12, 0.3744, 0.1238),
    (12, 13, 1.4680, 1.1550),
    (13, 14, 0.5416, 0.7129),
    (14, 15, 0.5910, 0.5260),
    (15, 16, 0.7463, 0.5450),
    (16, 17, 1.2890, 1.7210),
    (17, 18, 0.7320, 0.5740),
    (2, 19, 0.1640, 0.1565),
    (19, 20, 1.5042, 1.3554),
    (20, 21, 0.4095, 0.4784),
    (21, 22, 0.7089, 0.9373),
    (3, 23, 0.4512, 0.3083),
    (23, 24, 0.8980, 0.7091),
    (24, 25, 0.8960, 0.7011),
    (6, 26, 0.2030, 0.1034),
    (26, 27, 0.2842, 0.1447),
    (27, 28, 1.0590, 0.9337),
    (28, 29, 0.8042, 0.7006),
    (29, 30, 0.5075, 0.2585),
    (30, 31, 0.9744, 0.9630),
    (31, 32, 0.3105, 0.3619),
    (32, 33, 0.3410, 0.5302),
];

// (node, kW, kvar)
const CASE33_LOADS: [(u32, f64, f64); 32] = [
    (2, 100.0, 60.0),
    (3, 90.0, 40.0),
    (4, 120.0, 80.0),
    (5, 60.0, 30.0),
    (6, 60.0, 20.0),
    (7, 200.0, 100.0),
    (8, 200.0, 100.0),
    (9, 60.0, 20.0),
    (10, 60.0, 20.0),
    (11, 45.0, 30.0),
    (12, 60.0, 35.0),
    (13, 60.0, 35.0),
    (14, 120.0, 80.0),
    (15, 60.0, 10.0),
    (16, 60.0, 20.0),
    (17, 60.0, 20.0),
    (18, 90.0, 40.0),
    (19, 90.0, 40.0),
    (20, 90.0, 40.0),
    (21, 90.0, 40.0),
    (22, 90.0, 40.0),
    (23, 90.0, 50.0),
    (24, 420.0, 200.0),
    (25, 420.0, 200.0),
    (26, 60.0, 25.0),
    (27, 60.0, 25.0),
    (28, 60.0, 20.0),
    (29, 120.0, 70.0),
    (30, 200.0, 600.0),
    (31, 150.0, 70.0),
    (32, 210.0, 100.0),
    (33, 60.0, 40.0),
];

// distributed PV (node, kW capacity)
const CASE33_PV: [(u32, f64); 3] = [(9, 150.0), (24, 500.0), (29, 300.0)];

const CASE33_DC_A: [u32; 6] = [13, 14, 15, 16, 17, 18];
const CASE33_DC_B: [u32; 4] = [30, 31, 32, 33];

/// Representative hybrid variant of the 33-bus feeder.
///
/// The classic radial feeder keeps its line and load data. The tail of the
/// main feeder (13-18) and of the 26-33 lateral (30-33) become DC regions,
/// each fed through a DC-slack converter that replaces the original line
/// 12-13 or 29-30. That line's resistance becomes the DC cable from the
/// converter terminal. Nodes 34/35 and 36/37 are the aux and DC terminal
/// nodes of the two converters. Nodes 9, 24 and 29 host PV.
pub fn case33_hybrid() -> GridModel {
    use NodeKind::{Ac, Dc};
    let zbase = CASE33_BASE_KV * CASE33_BASE_KV / CASE33_BASE_MVA;
    let kw = 1000.0 * CASE33_BASE_MVA;
    let is_dc = |n: u32| CASE33_DC_A.contains(&n) || CASE33_DC_B.contains(&n);
    let region_of = |n: u32| {
        if CASE33_DC_A.contains(&n) {
            1
        } else if CASE33_DC_B.contains(&n) {
            2
        } else {
            0
        }
    };

    let mut nodes = vec![node(1, Ac, 0, NodeRole::Substation, 0.0, 0.0)];
    for &(n, p, q) in &CASE33_LOADS {
        let dc = is_dc(n);
        let pv = CASE33_PV.iter().find(|(m, _)| *m == n).map(|(_, c)| *c);
        let mut nd = node(
            n,
            if dc { Dc } else { Ac },
            region_of(n),
            if pv.is_some() {
                NodeRole::Generation
            } else {
                NodeRole::Load
            },
            -p / kw,
            if dc { 0.0 } else { -q / kw },
        );
        nd.gen_capacity = pv.unwrap_or(0.0) / kw;
        nodes.push(nd);
    }
    nodes.push(node(34, Ac, 0, NodeRole::ConverterAux, 0.0, 0.0));
    nodes.push(node(35, Dc, 1, NodeRole::ConverterAux, 0.0, 0.0));
    nodes.push(node(36, Ac, 0, NodeRole::ConverterAux, 0.0, 0.0));
    nodes.push(node(37, Dc, 2, NodeRole::ConverterAux, 0.0, 0.0));

    let metered = [(1, 2), (2, 19), (3, 23), (6, 26)];
    let mut ac_lines = Vec::new();
    let mut dc_lines = Vec::new();
    for &(a, b, r, x) in &CASE33_LINES {
        let (r, x) = (r / zbase, x / zbase);
        match (is_dc(a), is_dc(b)) {
            (false, false) => ac_lines.push(ac_line(a, b, r, x, metered.contains(&(a, b)))),
            (true, true) => dc_lines.push(dc_line(a, b, 1.0 / r)),
            // the line replaced by a converter becomes the terminal cable
            (false, true) => {
                let terminal = if b == 13 { 35 } else { 37 };
                dc_lines.push(dc_line(terminal, b, 1.0 / r));
            }
            (true, false) => unreachable!("DC regions are downstream"),
        }
    }

    let converters = vec![
        converter(1, 12, 34, 35, SLACK_DC),
        converter(2, 29, 36, 37, SLACK_DC),
    ];

    let mut ac_nodes: Vec<u32> = (1..=33).filter(|&n| !is_dc(n)).collect();
    ac_nodes.extend([34, 36]);
    let mut dc_a = vec![35];
    dc_a.extend(CASE33_DC_A);
    let mut dc_b = vec![37];
    dc_b.extend(CASE33_DC_B);

    let regions = vec![
        region(
            0,
            Ac,
            &ac_nodes,
            &[(1, Orientation::OwnsAcSide), (2, Orientation::OwnsAcSide)],
        ),
        region(1, Dc, &dc_a, &[(1, Orientation::OwnsDcSide)]),
        region(2, Dc, &dc_b, &[(2, Orientation::OwnsDcSide)]),
    ];

    GridModel::new(nodes, ac_lines, dc_lines, converters, regions, NodeId(1))
        .expect("case33 hybrid is valid")
}

/// Bundled cases by file name.
pub fn bundled() -> Vec<(&'static str, GridModel)> {
    vec![
        ("toy2", toy2()),
        ("toy3", toy3()),
        ("hybrid4", hybrid4()),
        ("island", island()),
        ("case33_hybrid", case33_hybrid()),
    ]
}
