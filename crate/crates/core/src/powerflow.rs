//! Sequential AC/DC power flow.
//!
//! Each region is solved with Newton–Raphson against fixed boundary
//! injections at the converter terminals; an outer loop alternates DC and
//! AC passes and refreshes converter losses until every converter satisfies
//! `P_VSC + P_loss = P_DC`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_admittance, ConverterControl, GridModel, NodeId, NodeKind, RegionAdmittance};
use crate::physics::{ac_flow, dc_flow};

pub use crate::physics::converter_loss;

/// Specified load/generation injections (generation positive, load negative).
///
/// Nodes without an entry inject nothing. The slack and the converter
/// terminals never carry an entry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InjectionProfile {
    entries: BTreeMap<NodeId, (f64, f64)>,
}

impl InjectionProfile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Nominal injections stored on the grid's nodes.
    pub fn nominal(grid: &GridModel) -> Self {
        let mut profile = Self::new();
        for i in grid.injection_nodes() {
            let n = &grid.nodes()[i];
            profile.entries.insert(n.id, (n.p_nom, n.q_nom));
        }
        profile
    }

    pub fn set(&mut self, node: NodeId, p: f64, q: f64) {
        self.entries.insert(node, (p, q));
    }

    pub fn get(&self, node: NodeId) -> (f64, f64) {
        self.entries.get(&node).copied().unwrap_or((0.0, 0.0))
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, f64, f64)> + '_ {
        self.entries.iter().map(|(&n, &(p, q))| (n, p, q))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(&n, &(p, q))| (n, (p * factor, q * factor)))
                .collect(),
        }
    }

    /// Checks that every entry names a node that may carry an injection.
    pub fn validate(&self, grid: &GridModel) -> Result<()> {
        for (&id, &(p, q)) in &self.entries {
            let i = grid.node_index_or_err(id)?;
            let node = &grid.nodes()[i];
            if !p.is_finite() || !q.is_finite() {
                return Err(Error::Validation(format!("non-finite injection at node {id}")));
            }
            if (p != 0.0 || q != 0.0) && !node.role.has_injection() {
                return Err(Error::Validation(format!(
                    "node {id} ({:?}) cannot carry an injection",
                    node.role
                )));
            }
            if node.kind == NodeKind::Dc && q != 0.0 {
                return Err(Error::Validation(format!("DC node {id} has reactive injection")));
            }
        }
        Ok(())
    }

    /// Dense `(p, q)` vectors indexed by node index.
    pub fn to_vectors(&self, grid: &GridModel) -> (Vec<f64>, Vec<f64>) {
        let mut p = vec![0.0; grid.node_count()];
        let mut q = vec![0.0; grid.node_count()];
        for (&id, &(pi, qi)) in &self.entries {
            if let Some(i) = grid.node_index(id) {
                p[i] = pi;
                q[i] = qi;
            }
        }
        (p, q)
    }

    /// Reads `node_id,P,Q` rows; `Q` may be blank for DC nodes.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            node_id: u32,
            #[serde(rename = "P")]
            p: f64,
            #[serde(rename = "Q")]
            q: Option<f64>,
        }
        let mut profile = Self::new();
        let mut rdr = csv::Reader::from_reader(reader);
        for row in rdr.deserialize() {
            let row: Row = row?;
            let id = NodeId(row.node_id);
            if profile.entries.contains_key(&id) {
                return Err(Error::Parse(format!("duplicate node {id} in injection profile")));
            }
            profile.entries.insert(id, (row.p, row.q.unwrap_or(0.0)));
        }
        Ok(profile)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Writes `node_id,P,Q`, leaving `Q` blank on DC nodes.
    pub fn write_csv<W: Write>(&self, grid: &GridModel, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["node_id", "P", "Q"])?;
        for (&id, &(p, q)) in &self.entries {
            let dc = grid
                .node_index(id)
                .map(|i| grid.nodes()[i].kind == NodeKind::Dc)
                .unwrap_or(false);
            let q = if dc { String::new() } else { q.to_string() };
            w.write_record([id.to_string(), p.to_string(), q])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, grid: &GridModel, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(grid, std::fs::File::create(path)?)
    }
}

/// Voltage magnitude and angle of every node, indexed by node index.
/// DC nodes keep `theta = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
}

impl SystemState {
    pub fn flat(grid: &GridModel) -> Self {
        Self {
            v: vec![1.0; grid.node_count()],
            theta: vec![0.0; grid.node_count()],
        }
    }

    /// Writes `node_id,kind,v,theta` in node order (angles in radians).
    pub fn write_csv<W: Write>(&self, grid: &GridModel, writer: W) -> Result<()> {
        if self.v.len() != grid.node_count() || self.theta.len() != grid.node_count() {
            return Err(Error::Dimension(format!(
                "state covers {} nodes, grid has {}",
                self.v.len(),
                grid.node_count()
            )));
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["node_id", "kind", "v", "theta"])?;
        for (i, n) in grid.nodes().iter().enumerate() {
            let kind = match n.kind {
                NodeKind::Ac => "ac",
                NodeKind::Dc => "dc",
            };
            w.write_record([n.id.to_string(), kind.to_string(), self.v[i].to_string(), self.theta[i].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format of [`SystemState::write_csv`]; every grid node must
    /// appear exactly once.
    pub fn read_csv<R: Read>(grid: &GridModel, reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            node_id: u32,
            v: f64,
            theta: f64,
        }
        let n = grid.node_count();
        let mut seen = vec![false; n];
        let mut st = Self::flat(grid);
        for row in csv::Reader::from_reader(reader).deserialize() {
            let row: Row = row?;
            let i = grid.node_index_or_err(NodeId(row.node_id))?;
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Parse(format!("duplicate node {} in state file", row.node_id)));
            }
            st.v[i] = row.v;
            st.theta[i] = row.theta;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!("state file lacks node {}", grid.nodes()[i].id)));
        }
        Ok(st)
    }
}

/// Solution of a single region.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionState {
    /// Node indices, in region order.
    pub nodes: Vec<usize>,
    pub v: Vec<f64>,
    /// All zero for DC regions.
    pub theta: Vec<f64>,
    /// Net injection the reference node supplies to the region.
    pub reference_p: f64,
    pub reference_q: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConverterSolution {
    /// Active power injected at the aux node into the AC region.
    pub p_vsc: f64,
    pub q_vsc: f64,
    pub p_loss: f64,
    pub i_c: f64,
    /// Voltage at the aux node.
    pub v_c: f64,
    /// Power drawn from the DC terminal, `P_DC,jc`.
    pub p_dc: f64,
}

impl ConverterSolution {
    /// `P_VSC + P_loss − P_DC`.
    pub fn balance_residual(&self) -> f64 {
        self.p_vsc + self.p_loss - self.p_dc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerFlowSolution {
    pub state: SystemState,
    pub converters: Vec<ConverterSolution>,
    pub outer_iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerFlowOptions {
    pub ac_tol: f64,
    pub dc_tol: f64,
    pub max_iter: usize,
    pub max_outer: usize,
    /// Converged when every converter's balance residual is below this.
    pub outer_tol: f64,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            ac_tol: 1e-8,
            dc_tol: 1e-10,
            max_iter: 30,
            max_outer: 20,
            outer_tol: 1e-10,
        }
    }
}

fn check_region(grid: &GridModel, region: usize, kind: NodeKind, p: &[f64]) -> Result<()> {
    if region >= grid.regions().len() {
        return Err(Error::Validation(format!("no region index {region}")));
    }
    if grid.region_kind(region) != kind {
        return Err(Error::Validation(format!(
            "region {} is not {kind:?}",
            grid.regions()[region].id
        )));
    }
    if p.len() != grid.node_count() {
        return Err(Error::Dimension(format!(
            "injection vector has {} entries, grid has {} nodes",
            p.len(),
            grid.node_count()
        )));
    }
    Ok(())
}

fn diverged(iterations: usize, mismatch: f64) -> Error {
    Error::Divergence {
        iterations,
        mismatch,
    }
}

/// Newton–Raphson on one AC region in polar form.
///
/// `p`, `q` are net specified injections indexed by global node index
/// (including any converter injections at aux nodes). `reference` is the
/// global index of the node held at `v_ref∠0`.
pub fn solve_ac_region(
    grid: &GridModel,
    region: usize,
    p: &[f64],
    q: &[f64],
    reference: usize,
    v_ref: f64,
    opts: &PowerFlowOptions,
) -> Result<RegionState> {
    check_region(grid, region, NodeKind::Ac, p)?;
    let RegionAdmittance::Ac { nodes, g, b } = build_admittance(grid, region)? else {
        unreachable!("AC region gives AC admittance");
    };
    let n = nodes.len();
    let r = nodes
        .iter()
        .position(|&x| x == reference)
        .ok_or_else(|| Error::Validation("reference node outside region".into()))?;
    let pv: Vec<usize> = (0..n).filter(|&k| k != r).collect();
    let m = pv.len();
    let mut v = vec![v_ref; n];
    let mut th = vec![0.0; n];

    let calc = |v: &[f64], th: &[f64]| {
        let mut pc = vec![0.0; n];
        let mut qc = vec![0.0; n];
        for i in 0..n {
            for k in 0..n {
                if g[(i, k)] == 0.0 && b[(i, k)] == 0.0 {
                    continue;
                }
                let (s, c) = (th[i] - th[k]).sin_cos();
                pc[i] += v[i] * v[k] * (g[(i, k)] * c + b[(i, k)] * s);
                qc[i] += v[i] * v[k] * (g[(i, k)] * s - b[(i, k)] * c);
            }
        }
        (pc, qc)
    };

    let mut iterations = 0;
    loop {
        let (pc, qc) = calc(&v, &th);
        let mut f = DVector::zeros(2 * m);
        for (a, &i) in pv.iter().enumerate() {
            f[a] = p[nodes[i]] - pc[i];
            f[m + a] = q[nodes[i]] - qc[i];
        }
        let mismatch = f.amax();
        if !mismatch.is_finite() {
            return Err(diverged(iterations, mismatch));
        }
        if mismatch <= opts.ac_tol {
            return Ok(RegionState {
                nodes,
                v,
                theta: th,
                reference_p: pc[r],
                reference_q: qc[r],
                iterations,
            });
        }
        if iterations >= opts.max_iter {
            return Err(diverged(iterations, mismatch));
        }
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for (a, &i) in pv.iter().enumerate() {
            for (c_, &k) in pv.iter().enumerate() {
                if i == k {
                    jac[(a, c_)] = -qc[i] - b[(i, i)] * v[i] * v[i];
                    jac[(a, m + c_)] = pc[i] / v[i] + g[(i, i)] * v[i];
                    jac[(m + a, c_)] = pc[i] - g[(i, i)] * v[i] * v[i];
                    jac[(m + a, m + c_)] = qc[i] / v[i] - b[(i, i)] * v[i];
                } else {
                    let (s, c) = (th[i] - th[k]).sin_cos();
                    let gs_bc = g[(i, k)] * s - b[(i, k)] * c;
                    let gc_bs = g[(i, k)] * c + b[(i, k)] * s;
                    jac[(a, c_)] = v[i] * v[k] * gs_bc;
                    jac[(a, m + c_)] = v[i] * gc_bs;
                    jac[(m + a, c_)] = -v[i] * v[k] * gc_bs;
                    jac[(m + a, m + c_)] = v[i] * gs_bc;
                }
            }
        }
        let dx = jac
            .lu()
            .solve(&f)
            .ok_or_else(|| diverged(iterations, mismatch))?;
        for (a, &i) in pv.iter().enumerate() {
            th[i] += dx[a];
            v[i] += dx[m + a];
            if !(v[i] > 0.0) {
                return Err(diverged(iterations + 1, mismatch));
            }
        }
        iterations += 1;
    }
}

/// Newton–Raphson on one DC region; `reference` is held at `v_ref`.
pub fn solve_dc_region(
    grid: &GridModel,
    region: usize,
    p: &[f64],
    reference: usize,
    v_ref: f64,
    opts: &PowerFlowOptions,
) -> Result<RegionState> {
    check_region(grid, region, NodeKind::Dc, p)?;
    let RegionAdmittance::Dc { nodes, y } = build_admittance(grid, region)? else {
        unreachable!("DC region gives DC admittance");
    };
    let n = nodes.len();
    let r = nodes
        .iter()
        .position(|&x| x == reference)
        .ok_or_else(|| Error::Validation("reference node outside region".into()))?;
    let free: Vec<usize> = (0..n).filter(|&k| k != r).collect();
    let m = free.len();
    let mut v = vec![v_ref; n];
    let mut iterations = 0;
    loop {
        let yv = &y * DVector::from_column_slice(&v);
        let pc: Vec<f64> = (0..n).map(|i| v[i] * yv[i]).collect();
        let f = DVector::from_iterator(m, free.iter().map(|&i| p[nodes[i]] - pc[i]));
        let mismatch = if m == 0 { 0.0 } else { f.amax() };
        if !mismatch.is_finite() {
            return Err(diverged(iterations, mismatch));
        }
        if mismatch <= opts.dc_tol {
            return Ok(RegionState {
                nodes,
                theta: vec![0.0; n],
                v,
                reference_p: pc[r],
                reference_q: 0.0,
                iterations,
            });
        }
        if iterations >= opts.max_iter {
            return Err(diverged(iterations, mismatch));
        }
        let mut jac = DMatrix::zeros(m, m);
        for (a, &i) in free.iter().enumerate() {
            for (c, &k) in free.iter().enumerate() {
                jac[(a, c)] = v[i] * y[(i, k)];
            }
            jac[(a, a)] += yv[i];
        }
        let dx = jac
            .lu()
            .solve(&f)
            .ok_or_else(|| diverged(iterations, mismatch))?;
        for (a, &i) in free.iter().enumerate() {
            v[i] += dx[a];
            if !(v[i] > 0.0) {
                return Err(diverged(iterations + 1, mismatch));
            }
        }
        iterations += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    /// Fixed P/Q at the aux node.
    Pq,
    /// Holds the DC terminal voltage.
    DcSlack,
    /// Aux node is the reference of an AC region reachable only through
    /// converters; P/Q follow that region's balance.
    GridForming,
}

fn converter_roles(grid: &GridModel, controls: &[ConverterControl]) -> Result<Vec<Role>> {
    let mut roles: Vec<Role> = controls
        .iter()
        .map(|c| match c {
            ConverterControl::Pq { .. } => Role::Pq,
            ConverterControl::DcSlack { .. } => Role::DcSlack,
        })
        .collect();
    let root = grid.root_region();
    for region in 0..grid.regions().len() {
        match grid.region_kind(region) {
            NodeKind::Ac if region != root => {
                let aux = grid.angle_reference(region).expect("AC region");
                let ci = grid.converter_at_aux(aux).expect("aux node");
                if roles[ci] == Role::DcSlack {
                    return Err(Error::Validation(format!(
                        "converter {} forms AC region {} and cannot also hold DC voltage",
                        grid.converters()[ci].id,
                        grid.regions()[region].id
                    )));
                }
                roles[ci] = Role::GridForming;
            }
            NodeKind::Dc => {
                let slacks: Vec<usize> = grid
                    .region_converters(region)
                    .into_iter()
                    .filter(|&ci| roles[ci] == Role::DcSlack)
                    .collect();
                if slacks.len() != 1 {
                    return Err(Error::Validation(format!(
                        "DC region {} needs exactly one DC-slack converter, found {}",
                        grid.regions()[region].id,
                        slacks.len()
                    )));
                }
            }
            _ => {}
        }
    }
    Ok(roles)
}

/// Solves the whole grid using the converter setpoints stored in the grid.
pub fn solve_powerflow(
    grid: &GridModel,
    injections: &InjectionProfile,
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution> {
    let controls: Vec<ConverterControl> = grid.converters().iter().map(|c| c.control).collect();
    solve_powerflow_with(grid, injections, &controls, opts)
}

/// Solves the whole grid with explicit converter setpoints.
pub fn solve_powerflow_with(
    grid: &GridModel,
    injections: &InjectionProfile,
    controls: &[ConverterControl],
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution> {
    injections.validate(grid)?;
    if controls.len() != grid.converters().len() {
        return Err(Error::Dimension(format!(
            "{} converter setpoints for {} converters",
            controls.len(),
            grid.converters().len()
        )));
    }
    let roles = converter_roles(grid, controls)?;
    let (p_load, q_load) = injections.to_vectors(grid);
    let nc = controls.len();
    let mut state = SystemState::flat(grid);

    let mut p_vsc: Vec<f64> = controls
        .iter()
        .map(|c| match *c {
            ConverterControl::Pq { p_set, .. } => p_set,
            ConverterControl::DcSlack { .. } => 0.0,
        })
        .collect();
    let mut q_vsc: Vec<f64> = controls.iter().map(|c| c.q_set()).collect();
    let mut loss: Vec<f64> = (0..nc)
        .map(|ci| converter_loss(p_vsc[ci], q_vsc[ci], 1.0, grid.converters()[ci].loss_coeffs()).0)
        .collect();
    let mut p_dc = vec![0.0; nc];
    let mut i_c = vec![0.0; nc];

    for outer in 1..=opts.max_outer {
        // DC pass: converters other than the DC slack draw P_VSC + loss.
        let mut p = p_load.clone();
        for ci in 0..nc {
            let (_, _, j) = grid.converter_nodes(ci);
            if roles[ci] != Role::DcSlack {
                p_dc[ci] = p_vsc[ci] + loss[ci];
                p[j] -= p_dc[ci];
            }
        }
        for region in 0..grid.regions().len() {
            if grid.region_kind(region) != NodeKind::Dc {
                continue;
            }
            let ci = grid
                .region_converters(region)
                .into_iter()
                .find(|&ci| roles[ci] == Role::DcSlack)
                .expect("checked by converter_roles");
            let ConverterControl::DcSlack { v_dc_set, .. } = controls[ci] else {
                unreachable!()
            };
            let (_, _, j) = grid.converter_nodes(ci);
            let rs = solve_dc_region(grid, region, &p, j, v_dc_set, opts)?;
            for (k, &node) in rs.nodes.iter().enumerate() {
                state.v[node] = rs.v[k];
            }
            // The slack terminal's network injection is minus what the
            // converter draws, net of any local injection (none on terminals).
            p_dc[ci] = -(rs.reference_p - p_load[j]);
            p_vsc[ci] = p_dc[ci] - loss[ci];
        }

        // AC pass.
        let mut p = p_load.clone();
        let mut q = q_load.clone();
        for ci in 0..nc {
            let (c, _, _) = grid.converter_nodes(ci);
            p[c] += p_vsc[ci];
            q[c] += q_vsc[ci];
        }
        for region in 0..grid.regions().len() {
            if grid.region_kind(region) != NodeKind::Ac {
                continue;
            }
            let reference = grid.angle_reference(region).expect("AC region");
            let rs = solve_ac_region(grid, region, &p, &q, reference, 1.0, opts)?;
            for (k, &node) in rs.nodes.iter().enumerate() {
                state.v[node] = rs.v[k];
                state.theta[node] = rs.theta[k];
            }
            if let Some(ci) = grid.converter_at_aux(reference) {
                p_vsc[ci] = rs.reference_p;
                q_vsc[ci] = rs.reference_q;
            }
        }

        // Loss refresh and balance check against what the DC pass used.
        let mut residual: f64 = 0.0;
        for ci in 0..nc {
            let (c, _, _) = grid.converter_nodes(ci);
            let (l, i) = converter_loss(
                p_vsc[ci],
                q_vsc[ci],
                state.v[c],
                grid.converters()[ci].loss_coeffs(),
            );
            residual = residual.max((p_vsc[ci] + l - p_dc[ci]).abs());
            loss[ci] = l;
            i_c[ci] = i;
        }
        if residual <= opts.outer_tol {
            let converters = (0..nc)
                .map(|ci| ConverterSolution {
                    p_vsc: p_vsc[ci],
                    q_vsc: q_vsc[ci],
                    p_loss: loss[ci],
                    i_c: i_c[ci],
                    v_c: state.v[grid.converter_nodes(ci).0],
                    p_dc: p_dc[ci],
                })
                .collect();
            return Ok(PowerFlowSolution {
                state,
                converters,
                outer_iterations: outer,
            });
        }
        if outer == opts.max_outer {
            return Err(diverged(outer, residual));
        }
    }
    unreachable!("loop returns on its last pass")
}

/// Net injection at every node recomputed from branch flows at `state`.
/// At an aux node this is the converter's AC output; at a DC terminal it is
/// minus the power the converter draws.
pub fn nodal_injections(grid: &GridModel, state: &SystemState) -> (Vec<f64>, Vec<f64>) {
    let mut p = vec![0.0; grid.node_count()];
    let mut q = vec![0.0; grid.node_count()];
    for br in grid.ac_branches() {
        let (pf, qf) = ac_flow(
            state.v[br.from],
            state.v[br.to],
            state.theta[br.from],
            state.theta[br.to],
            br.r,
            br.x,
        );
        let (pt, qt) = ac_flow(
            state.v[br.to],
            state.v[br.from],
            state.theta[br.to],
            state.theta[br.from],
            br.r,
            br.x,
        );
        p[br.from] += pf;
        q[br.from] += qf;
        p[br.to] += pt;
        q[br.to] += qt;
    }
    for br in grid.dc_branches() {
        p[br.from] += dc_flow(state.v[br.from], state.v[br.to], br.g);
        p[br.to] += dc_flow(state.v[br.to], state.v[br.from], br.g);
    }
    (p, q)
}

/// Power balance of a solved grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyAudit {
    /// Positive external injections, slack included.
    pub generation: f64,
    /// Magnitude of negative external injections.
    pub load: f64,
    pub ac_line_losses: f64,
    pub dc_line_losses: f64,
    pub converter_losses: f64,
}

impl EnergyAudit {
    /// `generation − load − losses`; zero for a consistent solution.
    pub fn imbalance(&self) -> f64 {
        self.generation
            - self.load
            - self.ac_line_losses
            - self.dc_line_losses
            - self.converter_losses
    }
}

pub fn energy_audit(
    grid: &GridModel,
    injections: &InjectionProfile,
    solution: &PowerFlowSolution,
) -> EnergyAudit {
    let st = &solution.state;
    let (p_spec, _) = injections.to_vectors(grid);
    let (p_net, _) = nodal_injections(grid, st);
    let mut external = p_spec;
    let s = grid.slack_index();
    external[s] = p_net[s];
    let (mut generation, mut load) = (0.0, 0.0);
    for x in external {
        if x > 0.0 {
            generation += x;
        } else {
            load -= x;
        }
    }
    let ac_line_losses = grid
        .ac_branches()
        .iter()
        .map(|br| {
            let (a, _) = ac_flow(st.v[br.from], st.v[br.to], st.theta[br.from], st.theta[br.to], br.r, br.x);
            let (b, _) = ac_flow(st.v[br.to], st.v[br.from], st.theta[br.to], st.theta[br.from], br.r, br.x);
            a + b
        })
        .sum();
    let dc_line_losses = grid
        .dc_branches()
        .iter()
        .map(|br| dc_flow(st.v[br.from], st.v[br.to], br.g) + dc_flow(st.v[br.to], st.v[br.from], br.g))
        .sum();
    EnergyAudit {
        generation,
        load,
        ac_line_losses,
        dc_line_losses,
        converter_losses: solution.converters.iter().map(|c| c.p_loss).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::cases;
    use approx::assert_relative_eq;

    fn opts() -> PowerFlowOptions {
        PowerFlowOptions::default()
    }

    fn region_of(grid: &GridModel, id: u32) -> usize {
        grid.region_of(grid.node_index(NodeId(id)).unwrap())
    }

    #[test]
    fn ac_no_load_is_flat() {
        let g = cases::toy3();
        let z = vec![0.0; g.node_count()];
        let rs = solve_ac_region(&g, 0, &z, &z, g.slack_index(), 1.0, &opts()).unwrap();
        assert!(rs.v.iter().all(|&v| v == 1.0));
        assert!(rs.theta.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn ac_two_node_back_substitution() {
        let g = cases::toy2();
        let sol = solve_powerflow(&g, &InjectionProfile::nominal(&g), &opts()).unwrap();
        let (p, q) = nodal_injections(&g, &sol.state);
        let n2 = g.node_index(NodeId(2)).unwrap();
        assert!((p[n2] + 0.5).abs() < 1e-8);
        assert!((q[n2] + 0.2).abs() < 1e-8);
        assert_eq!(sol.state.theta[g.slack_index()], 0.0);
    }

    #[test]
    fn ac_overload_diverges() {
        let g = cases::toy2();
        let mut prof = InjectionProfile::new();
        prof.set(NodeId(2), -100.0, 0.0);
        let err = solve_powerflow(&g, &prof, &opts()).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn dc_two_node_quadratic_root() {
        let g = cases::hybrid4();
        let dc = region_of(&g, 3);
        let mut p = vec![0.0; g.node_count()];
        let n4 = g.node_index(NodeId(4)).unwrap();
        p[n4] = -0.1;
        let n3 = g.node_index(NodeId(3)).unwrap();
        let rs = solve_dc_region(&g, dc, &p, n3, 1.0, &opts()).unwrap();
        // 10 V (V - 1) = -0.1  =>  V² - V + 0.01 = 0, upper root
        let expected = (1.0 + (1.0f64 - 0.04).sqrt()) / 2.0;
        let k = rs.nodes.iter().position(|&x| x == n4).unwrap();
        assert_relative_eq!(rs.v[k], expected, epsilon = 1e-10);
        assert_relative_eq!(rs.v[k], 0.989898, epsilon = 1e-6);
        assert_relative_eq!(rs.reference_p, 10.0 * (1.0 - expected), epsilon = 1e-10);
    }

    #[test]
    fn dc_zero_injection_flat() {
        let g = cases::hybrid4();
        let dc = region_of(&g, 3);
        let p = vec![0.0; g.node_count()];
        let rs = solve_dc_region(&g, dc, &p, g.node_index(NodeId(3)).unwrap(), 1.0, &opts()).unwrap();
        assert!(rs.v.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn dc_overload_diverges() {
        let g = cases::hybrid4();
        let dc = region_of(&g, 3);
        let mut p = vec![0.0; g.node_count()];
        // maximum transferable power on g = 10 from V = 1 is g/4 = 2.5
        p[g.node_index(NodeId(4)).unwrap()] = -3.0;
        let err = solve_dc_region(&g, dc, &p, g.node_index(NodeId(3)).unwrap(), 1.0, &opts()).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn hybrid_lossless_no_load() {
        let g = cases::hybrid4();
        let mut convs = g.converters().to_vec();
        for c in &mut convs {
            (c.d1, c.d2, c.d3) = (0.0, 0.0, 0.0);
        }
        let g = GridModel::new(
            g.nodes().to_vec(),
            g.ac_lines().to_vec(),
            g.dc_lines().to_vec(),
            convs,
            g.regions().to_vec(),
            g.slack(),
        )
        .unwrap();
        let sol = solve_powerflow(&g, &InjectionProfile::new(), &opts()).unwrap();
        assert!(sol.state.v.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(sol.converters[0].p_vsc.abs() < 1e-12);
    }

    #[test]
    fn state_csv_round_trip() {
        let g = cases::hybrid4();
        let st = solve_powerflow(&g, &InjectionProfile::nominal(&g), &opts()).unwrap().state;
        let mut buf = Vec::new();
        st.write_csv(&g, &mut buf).unwrap();
        assert_eq!(SystemState::read_csv(&g, &buf[..]).unwrap(), st);
        let short = "node_id,kind,v,theta\n1,ac,1.0,0.0\n";
        assert!(SystemState::read_csv(&g, short.as_bytes()).unwrap_err().is_validation());
    }

    #[test]
    fn hybrid_conservation() {
        let g = cases::hybrid4();
        let prof = InjectionProfile::nominal(&g);
        let sol = solve_powerflow(&g, &prof, &opts()).unwrap();
        let c = sol.converters[0];
        assert!(c.balance_residual().abs() <= 1e-6);
        assert!(c.p_loss >= 0.011);
        let audit = energy_audit(&g, &prof, &sol);
        assert!(audit.imbalance().abs() <= 1e-6, "{audit:?}");
        // AC side supplies DC load + DC line loss + converter loss
        let supplied = -c.p_vsc;
        assert_relative_eq!(
            supplied,
            0.2 + audit.dc_line_losses + c.p_loss,
            epsilon = 1e-8
        );
        let n3 = g.node_index(NodeId(3)).unwrap();
        assert_eq!(sol.state.v[n3], 1.0);
    }

    #[test]
    fn island_grid_forming_converter() {
        let g = cases::island();
        let prof = InjectionProfile::nominal(&g);
        let sol = solve_powerflow(&g, &prof, &opts()).unwrap();
        for c in &sol.converters {
            assert!(c.balance_residual().abs() <= 1e-6);
        }
        assert!(energy_audit(&g, &prof, &sol).imbalance().abs() <= 1e-6);
        let (p, q) = nodal_injections(&g, &sol.state);
        for (id, pi, qi) in prof.iter() {
            let i = g.node_index(id).unwrap();
            assert!((p[i] - pi).abs() < 1e-8 && (q[i] - qi).abs() < 1e-8);
        }
    }

    #[test]
    fn case33_nominal_audit() {
        let g = cases::case33_hybrid();
        let prof = InjectionProfile::nominal(&g);
        let sol = solve_powerflow(&g, &prof, &opts()).unwrap();
        let (p, q) = nodal_injections(&g, &sol.state);
        for i in 0..g.node_count() {
            if i == g.slack_index() {
                continue;
            }
            let (ps, qs) = prof.get(g.nodes()[i].id);
            let (mut pe, mut qe) = (ps, qs);
            if let Some(ci) = g.converter_at_aux(i) {
                pe += sol.converters[ci].p_vsc;
                qe += sol.converters[ci].q_vsc;
            }
            if let Some(ci) = g.converter_at_terminal(i) {
                pe -= sol.converters[ci].p_dc;
            }
            assert!((p[i] - pe).abs() <= 1e-8, "node {i}: {} vs {pe}", p[i]);
            assert!((q[i] - qe).abs() <= 1e-8);
        }
        assert!(energy_audit(&g, &prof, &sol).imbalance().abs() <= 1e-6);
        let vmin = sol.state.v.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(vmin > 0.85 && vmin < 1.0, "vmin {vmin}");
    }

    #[test]
    fn deterministic() {
        let g = cases::case33_hybrid();
        let prof = InjectionProfile::nominal(&g);
        let a = solve_powerflow(&g, &prof, &opts()).unwrap();
        let b = solve_powerflow(&g, &prof, &opts()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn injection_csv_round_trip() {
        let g = cases::hybrid4();
        let prof = InjectionProfile::nominal(&g);
        let mut buf = Vec::new();
        prof.write_csv(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("node_id,P,Q\n"));
        assert!(text.contains("4,-0.2,\n"));
        assert_eq!(InjectionProfile::read_csv(&buf[..]).unwrap(), prof);
    }

    #[test]
    fn injection_on_junction_rejected() {
        let g = cases::island();
        let mut prof = InjectionProfile::new();
        prof.set(NodeId(9), -0.1, 0.0);
        assert!(solve_powerflow(&g, &prof, &opts()).unwrap_err().is_validation());
    }
}
