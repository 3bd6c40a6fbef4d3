//! Static network model of a hybrid AC/DC distribution grid.
//!
//! A [`GridModel`] is built once (usually through [`load_grid`]) and is
//! immutable afterwards. All electrical values are per-unit on a single
//! system base. Construction validates every structural invariant, so the
//! rest of the crate can index nodes, branches and regions without further
//! checks.

mod admittance;
pub mod cases;
mod io;

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use admittance::{build_admittance, series_admittance, RegionAdmittance};
pub use io::{load_grid, save_grid, to_json_string};

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(
    /// Opaque node identifier; numbering need not be dense.
    NodeId
);
id_type!(RegionId);
id_type!(ConverterId);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Ac,
    Dc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeRole {
    Substation,
    Load,
    Generation,
    Junction,
    /// Converter terminal: the AC auxiliary node `c` or the DC terminal `j`.
    ConverterAux,
}

impl NodeRole {
    /// Whether the node may carry a load or generation injection.
    pub fn has_injection(self) -> bool {
        matches!(self, NodeRole::Load | NodeRole::Generation)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub region: RegionId,
    pub role: NodeRole,
    /// Nominal active injection (generation positive, load negative).
    #[serde(default)]
    pub p_nom: f64,
    /// Nominal reactive injection; always zero on DC nodes.
    #[serde(default)]
    pub q_nom: f64,
    /// Installed distributed-generation capacity, used by the profile generator.
    #[serde(default)]
    pub gen_capacity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcLine {
    pub from: NodeId,
    pub to: NodeId,
    pub r: f64,
    pub x: f64,
    /// Carries SCADA active/reactive flow metering at the `from` end.
    #[serde(default)]
    pub metered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcLine {
    pub from: NodeId,
    pub to: NodeId,
    pub g: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ConverterControl {
    /// Fixed active/reactive output at the AC side.
    Pq { p_set: f64, q_set: f64 },
    /// Holds the DC terminal voltage; active power follows the DC balance.
    DcSlack { v_dc_set: f64, q_set: f64 },
}

impl ConverterControl {
    pub fn q_set(&self) -> f64 {
        match *self {
            ConverterControl::Pq { q_set, .. } | ConverterControl::DcSlack { q_set, .. } => q_set,
        }
    }
}

/// Loss coefficients used when a grid file leaves them unspecified.
pub const DEFAULT_LOSS_COEFFS: [f64; 3] = [0.011, 0.003, 0.004];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Converter {
    pub id: ConverterId,
    pub ac_node: NodeId,
    pub aux_node: NodeId,
    pub dc_node: NodeId,
    pub coupling_r: f64,
    pub coupling_x: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub control: ConverterControl,
    pub p_max: f64,
    pub q_max: f64,
    pub i_max: f64,
}

impl Converter {
    pub fn loss_coeffs(&self) -> [f64; 3] {
        [self.d1, self.d2, self.d3]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    OwnsAcSide,
    OwnsDcSide,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryLink {
    pub converter: ConverterId,
    pub orientation: Orientation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: RegionId,
    pub kind: NodeKind,
    pub nodes: Vec<NodeId>,
    pub boundary: Vec<BoundaryLink>,
}

/// Where an AC branch comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchSource {
    Line(usize),
    /// Series coupling impedance between a converter's aux node and its AC node.
    Coupling(usize),
}

/// Resolved AC branch with node indices (not ids).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcBranch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub region: usize,
    pub source: BranchSource,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcBranch {
    pub from: usize,
    pub to: usize,
    pub g: f64,
    pub region: usize,
    pub line: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct GridIndex {
    node_pos: HashMap<NodeId, usize>,
    region_pos: HashMap<RegionId, usize>,
    converter_pos: HashMap<ConverterId, usize>,
    node_region: Vec<usize>,
    region_nodes: Vec<Vec<usize>>,
    ac_branches: Vec<AcBranch>,
    dc_branches: Vec<DcBranch>,
    region_ac_branches: Vec<Vec<usize>>,
    region_dc_branches: Vec<Vec<usize>>,
    node_ac_branches: Vec<Vec<usize>>,
    node_dc_branches: Vec<Vec<usize>>,
    aux_converter: Vec<Option<usize>>,
    terminal_converter: Vec<Option<usize>>,
    slack: usize,
}

#[derive(Clone, Debug, Deserialize)]
struct RawGrid {
    nodes: Vec<Node>,
    ac_lines: Vec<AcLine>,
    dc_lines: Vec<DcLine>,
    converters: Vec<Converter>,
    regions: Vec<Region>,
    slack: NodeId,
}

/// Validated hybrid AC/DC network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct GridModel {
    nodes: Vec<Node>,
    ac_lines: Vec<AcLine>,
    dc_lines: Vec<DcLine>,
    converters: Vec<Converter>,
    regions: Vec<Region>,
    slack: NodeId,
    #[serde(skip)]
    index: GridIndex,
}

impl TryFrom<RawGrid> for GridModel {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        GridModel::new(
            raw.nodes,
            raw.ac_lines,
            raw.dc_lines,
            raw.converters,
            raw.regions,
            raw.slack,
        )
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

impl GridModel {
    pub fn new(
        nodes: Vec<Node>,
        ac_lines: Vec<AcLine>,
        dc_lines: Vec<DcLine>,
        converters: Vec<Converter>,
        regions: Vec<Region>,
        slack: NodeId,
    ) -> Result<Self> {
        let mut grid = GridModel {
            nodes,
            ac_lines,
            dc_lines,
            converters,
            regions,
            slack,
            index: GridIndex::default(),
        };
        grid.index = grid.validate()?;
        Ok(grid)
    }

    fn validate(&self) -> Result<GridIndex> {
        let mut ix = GridIndex::default();

        for (i, n) in self.nodes.iter().enumerate() {
            if ix.node_pos.insert(n.id, i).is_some() {
                return Err(invalid(format!("duplicate node id {}", n.id)));
            }
            if !(n.p_nom.is_finite() && n.q_nom.is_finite() && n.gen_capacity.is_finite()) {
                return Err(invalid(format!("node {} has non-finite injection data", n.id)));
            }
            if !n.role.has_injection() && (n.p_nom != 0.0 || n.q_nom != 0.0 || n.gen_capacity != 0.0)
            {
                return Err(invalid(format!(
                    "node {} with role {:?} cannot carry load or generation",
                    n.id, n.role
                )));
            }
            if n.kind == NodeKind::Dc && n.q_nom != 0.0 {
                return Err(invalid(format!("DC node {} has reactive injection", n.id)));
            }
        }
        for (i, r) in self.regions.iter().enumerate() {
            if ix.region_pos.insert(r.id, i).is_some() {
                return Err(invalid(format!("duplicate region id {}", r.id)));
            }
        }
        for (i, c) in self.converters.iter().enumerate() {
            if ix.converter_pos.insert(c.id, i).is_some() {
                return Err(invalid(format!("duplicate converter id {}", c.id)));
            }
        }

        // node -> region, consistent with region member lists
        ix.node_region = vec![usize::MAX; self.nodes.len()];
        ix.region_nodes = vec![Vec::new(); self.regions.len()];
        for (ri, r) in self.regions.iter().enumerate() {
            if r.nodes.is_empty() {
                return Err(invalid(format!("region {} is empty", r.id)));
            }
            for id in &r.nodes {
                let ni = *ix
                    .node_pos
                    .get(id)
                    .ok_or_else(|| invalid(format!("region {} lists unknown node {}", r.id, id)))?;
                if ix.node_region[ni] != usize::MAX {
                    return Err(invalid(format!("node {} listed in more than one region", id)));
                }
                let node = &self.nodes[ni];
                if node.region != r.id {
                    return Err(invalid(format!(
                        "node {} declares region {} but is listed in region {}",
                        id, node.region, r.id
                    )));
                }
                if node.kind != r.kind {
                    return Err(invalid(format!(
                        "node {} kind {:?} differs from region {} kind {:?}",
                        id, node.kind, r.id, r.kind
                    )));
                }
                ix.node_region[ni] = ri;
                ix.region_nodes[ri].push(ni);
            }
        }
        if let Some(ni) = ix.node_region.iter().position(|&r| r == usize::MAX) {
            return Err(invalid(format!("node {} belongs to no region", self.nodes[ni].id)));
        }

        let lookup = |id: NodeId, what: &str| -> Result<usize> {
            ix.node_pos
                .get(&id)
                .copied()
                .ok_or_else(|| invalid(format!("{what} references unknown node {id}")))
        };

        ix.node_ac_branches = vec![Vec::new(); self.nodes.len()];
        ix.node_dc_branches = vec![Vec::new(); self.nodes.len()];
        ix.region_ac_branches = vec![Vec::new(); self.regions.len()];
        ix.region_dc_branches = vec![Vec::new(); self.regions.len()];

        for (li, l) in self.ac_lines.iter().enumerate() {
            let (a, b) = (lookup(l.from, "AC line")?, lookup(l.to, "AC line")?);
            if a == b {
                return Err(invalid(format!("AC line {}-{} is a self loop", l.from, l.to)));
            }
            if self.nodes[a].kind != NodeKind::Ac || self.nodes[b].kind != NodeKind::Ac {
                return Err(invalid(format!("AC line {}-{} touches a DC node", l.from, l.to)));
            }
            if ix.node_region[a] != ix.node_region[b] {
                return Err(invalid(format!("AC line {}-{} crosses regions", l.from, l.to)));
            }
            if !(l.r >= 0.0 && l.x > 0.0 && l.r.is_finite() && l.x.is_finite()) {
                return Err(invalid(format!(
                    "AC line {}-{} needs r >= 0 and x > 0",
                    l.from, l.to
                )));
            }
            ix.ac_branches.push(AcBranch {
                from: a,
                to: b,
                r: l.r,
                x: l.x,
                region: ix.node_region[a],
                source: BranchSource::Line(li),
            });
        }

        ix.aux_converter = vec![None; self.nodes.len()];
        ix.terminal_converter = vec![None; self.nodes.len()];
        for (ci, c) in self.converters.iter().enumerate() {
            let i = lookup(c.ac_node, "converter")?;
            let a = lookup(c.aux_node, "converter")?;
            let j = lookup(c.dc_node, "converter")?;
            if self.nodes[i].kind != NodeKind::Ac {
                return Err(invalid(format!("converter {} AC node is not AC", c.id)));
            }
            if self.nodes[j].kind != NodeKind::Dc {
                return Err(invalid(format!("converter {} DC node is not DC", c.id)));
            }
            if self.nodes[a].kind != NodeKind::Ac {
                return Err(invalid(format!("converter {} aux node is not AC", c.id)));
            }
            if a == i || a == j {
                return Err(invalid(format!("converter {} aux node must be distinct", c.id)));
            }
            if self.nodes[a].role != NodeRole::ConverterAux
                || self.nodes[j].role != NodeRole::ConverterAux
            {
                return Err(invalid(format!(
                    "converter {} aux and DC terminal nodes must have role converter-aux",
                    c.id
                )));
            }
            if ix.aux_converter[a].replace(ci).is_some()
                || ix.terminal_converter[j].replace(ci).is_some()
            {
                return Err(invalid(format!("converter {} shares a terminal node", c.id)));
            }
            if ix.node_region[a] != ix.node_region[i] {
                return Err(invalid(format!(
                    "converter {} aux node must sit in the AC node's region",
                    c.id
                )));
            }
            if [c.d1, c.d2, c.d3].iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
                return Err(invalid(format!("converter {} loss coefficients must be >= 0", c.id)));
            }
            if !(c.coupling_r >= 0.0 && c.coupling_x > 0.0) {
                return Err(invalid(format!(
                    "converter {} coupling needs r >= 0 and x > 0",
                    c.id
                )));
            }
            if let ConverterControl::DcSlack { v_dc_set, .. } = c.control {
                if !(v_dc_set > 0.0) {
                    return Err(invalid(format!("converter {} DC voltage setpoint", c.id)));
                }
            }
            ix.ac_branches.push(AcBranch {
                from: a,
                to: i,
                r: c.coupling_r,
                x: c.coupling_x,
                region: ix.node_region[a],
                source: BranchSource::Coupling(ci),
            });
        }
        for (bi, br) in ix.ac_branches.iter().enumerate() {
            ix.node_ac_branches[br.from].push(bi);
            ix.node_ac_branches[br.to].push(bi);
            ix.region_ac_branches[br.region].push(bi);
        }

        for (li, l) in self.dc_lines.iter().enumerate() {
            let (a, b) = (lookup(l.from, "DC line")?, lookup(l.to, "DC line")?);
            if a == b {
                return Err(invalid(format!("DC line {}-{} is a self loop", l.from, l.to)));
            }
            if self.nodes[a].kind != NodeKind::Dc || self.nodes[b].kind != NodeKind::Dc {
                return Err(invalid(format!("DC line {}-{} touches an AC node", l.from, l.to)));
            }
            if ix.node_region[a] != ix.node_region[b] {
                return Err(invalid(format!("DC line {}-{} crosses regions", l.from, l.to)));
            }
            if !(l.g > 0.0 && l.g.is_finite()) {
                return Err(invalid(format!("DC line {}-{} needs g > 0", l.from, l.to)));
            }
            let bi = ix.dc_branches.len();
            ix.dc_branches.push(DcBranch {
                from: a,
                to: b,
                g: l.g,
                region: ix.node_region[a],
                line: li,
            });
            ix.node_dc_branches[a].push(bi);
            ix.node_dc_branches[b].push(bi);
            ix.region_dc_branches[ix.node_region[a]].push(bi);
        }

        // boundary lists: each converter exactly twice, opposite orientations
        let mut seen: Vec<(Option<usize>, Option<usize>)> = vec![(None, None); self.converters.len()];
        for (ri, r) in self.regions.iter().enumerate() {
            for link in &r.boundary {
                let ci = *ix.converter_pos.get(&link.converter).ok_or_else(|| {
                    invalid(format!("region {} lists unknown converter {}", r.id, link.converter))
                })?;
                let c = &self.converters[ci];
                let slot = match link.orientation {
                    Orientation::OwnsAcSide => {
                        if ix.node_region[ix.node_pos[&c.aux_node]] != ri {
                            return Err(invalid(format!(
                                "region {} claims AC side of converter {} but does not hold its aux node",
                                r.id, c.id
                            )));
                        }
                        &mut seen[ci].0
                    }
                    Orientation::OwnsDcSide => {
                        if ix.node_region[ix.node_pos[&c.dc_node]] != ri {
                            return Err(invalid(format!(
                                "region {} claims DC side of converter {} but does not hold its DC node",
                                r.id, c.id
                            )));
                        }
                        &mut seen[ci].1
                    }
                };
                if slot.replace(ri).is_some() {
                    return Err(invalid(format!(
                        "converter {} side listed twice in region boundaries",
                        c.id
                    )));
                }
            }
        }
        for (ci, s) in seen.iter().enumerate() {
            if s.0.is_none() || s.1.is_none() {
                return Err(invalid(format!(
                    "converter {} must appear in exactly two region boundaries",
                    self.converters[ci].id
                )));
            }
        }

        for ri in 0..self.regions.len() {
            if !region_connected(&ix, ri) {
                return Err(invalid(format!(
                    "region {} is not connected",
                    self.regions[ri].id
                )));
            }
        }
        if !regions_connected(&ix, self.regions.len(), &seen) {
            return Err(invalid("region adjacency graph is not connected"));
        }

        let s = *ix
            .node_pos
            .get(&self.slack)
            .ok_or_else(|| invalid(format!("slack {} is not a node", self.slack)))?;
        if self.nodes[s].kind != NodeKind::Ac || self.nodes[s].role != NodeRole::Substation {
            return Err(invalid("slack must be an AC node with role substation"));
        }
        ix.slack = s;
        Ok(ix)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }
    pub fn ac_lines(&self) -> &[AcLine] {
        &self.ac_lines
    }
    pub fn dc_lines(&self) -> &[DcLine] {
        &self.dc_lines
    }
    pub fn converters(&self) -> &[Converter] {
        &self.converters
    }
    pub fn regions(&self) -> &[Region] {
        &self.regions
    }
    pub fn slack(&self) -> NodeId {
        self.slack
    }
    pub fn slack_index(&self) -> usize {
        self.index.slack
    }
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.index.node_pos.get(&id).copied()
    }

    pub fn node_index_or_err(&self, id: NodeId) -> Result<usize> {
        self.node_index(id)
            .ok_or_else(|| Error::Validation(format!("unknown node {id}")))
    }

    pub fn region_index(&self, id: RegionId) -> Option<usize> {
        self.index.region_pos.get(&id).copied()
    }

    pub fn converter_index(&self, id: ConverterId) -> Option<usize> {
        self.index.converter_pos.get(&id).copied()
    }

    /// Region index of a node index.
    pub fn region_of(&self, node: usize) -> usize {
        self.index.node_region[node]
    }

    /// Node indices of a region, in the order listed by the region.
    pub fn region_nodes(&self, region: usize) -> &[usize] {
        &self.index.region_nodes[region]
    }

    /// All AC branches: lines first, then converter couplings.
    pub fn ac_branches(&self) -> &[AcBranch] {
        &self.index.ac_branches
    }
    pub fn dc_branches(&self) -> &[DcBranch] {
        &self.index.dc_branches
    }
    pub fn region_ac_branches(&self, region: usize) -> &[usize] {
        &self.index.region_ac_branches[region]
    }
    pub fn region_dc_branches(&self, region: usize) -> &[usize] {
        &self.index.region_dc_branches[region]
    }
    pub fn node_ac_branches(&self, node: usize) -> &[usize] {
        &self.index.node_ac_branches[node]
    }
    pub fn node_dc_branches(&self, node: usize) -> &[usize] {
        &self.index.node_dc_branches[node]
    }

    /// AC branch index joining two node indices, if any.
    pub fn find_ac_branch(&self, a: usize, b: usize) -> Option<usize> {
        self.index.node_ac_branches[a].iter().copied().find(|&bi| {
            let br = &self.index.ac_branches[bi];
            (br.from == a && br.to == b) || (br.from == b && br.to == a)
        })
    }

    pub fn find_dc_branch(&self, a: usize, b: usize) -> Option<usize> {
        self.index.node_dc_branches[a].iter().copied().find(|&bi| {
            let br = &self.index.dc_branches[bi];
            (br.from == a && br.to == b) || (br.from == b && br.to == a)
        })
    }

    /// AC branch index of a converter's coupling impedance.
    pub fn coupling_branch(&self, converter: usize) -> usize {
        self.ac_lines.len() + converter
    }

    /// Converter whose aux node is `node`.
    pub fn converter_at_aux(&self, node: usize) -> Option<usize> {
        self.index.aux_converter[node]
    }

    /// Converter whose DC terminal is `node`.
    pub fn converter_at_terminal(&self, node: usize) -> Option<usize> {
        self.index.terminal_converter[node]
    }

    /// (aux, ac, dc) node indices of a converter.
    pub fn converter_nodes(&self, converter: usize) -> (usize, usize, usize) {
        let c = &self.converters[converter];
        (
            self.index.node_pos[&c.aux_node],
            self.index.node_pos[&c.ac_node],
            self.index.node_pos[&c.dc_node],
        )
    }

    /// Region indices holding the AC and DC side of a converter.
    pub fn converter_regions(&self, converter: usize) -> (usize, usize) {
        let (a, _, j) = self.converter_nodes(converter);
        (self.region_of(a), self.region_of(j))
    }

    /// Converter indices on a region's boundary, in boundary-list order.
    pub fn region_converters(&self, region: usize) -> Vec<usize> {
        self.regions[region]
            .boundary
            .iter()
            .map(|b| self.index.converter_pos[&b.converter])
            .collect()
    }

    pub fn region_kind(&self, region: usize) -> NodeKind {
        self.regions[region].kind
    }

    /// Region holding the system slack.
    pub fn root_region(&self) -> usize {
        self.region_of(self.index.slack)
    }

    /// Angle reference node of an AC region: the slack for the root region,
    /// otherwise the aux node of the lowest-id converter on its boundary.
    pub fn angle_reference(&self, region: usize) -> Option<usize> {
        if self.regions[region].kind != NodeKind::Ac {
            return None;
        }
        if region == self.root_region() {
            return Some(self.index.slack);
        }
        self.region_converters(region)
            .into_iter()
            .min_by_key(|&ci| self.converters[ci].id)
            .map(|ci| self.converter_nodes(ci).0)
    }

    /// Node indices that carry load or generation.
    pub fn injection_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].role.has_injection())
            .collect()
    }

    /// Junction nodes: structurally zero injection.
    pub fn junction_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].role == NodeRole::Junction)
            .collect()
    }

    /// Number of AC and DC regions.
    pub fn region_counts(&self) -> (usize, usize) {
        let ac = self.regions.iter().filter(|r| r.kind == NodeKind::Ac).count();
        (ac, self.regions.len() - ac)
    }
}

fn region_connected(ix: &GridIndex, region: usize) -> bool {
    let members = &ix.region_nodes[region];
    if members.len() <= 1 {
        return true;
    }
    let set: BTreeSet<usize> = members.iter().copied().collect();
    let mut visited = BTreeSet::new();
    let mut queue = VecDeque::from([members[0]]);
    visited.insert(members[0]);
    while let Some(n) = queue.pop_front() {
        let ac = ix.node_ac_branches[n]
            .iter()
            .map(|&b| (ix.ac_branches[b].from, ix.ac_branches[b].to));
        let dc = ix.node_dc_branches[n]
            .iter()
            .map(|&b| (ix.dc_branches[b].from, ix.dc_branches[b].to));
        for (a, b) in ac.chain(dc) {
            let other = if a == n { b } else { a };
            if set.contains(&other) && visited.insert(other) {
                queue.push_back(other);
            }
        }
    }
    visited.len() == set.len()
}

fn regions_connected(ix: &GridIndex, n: usize, links: &[(Option<usize>, Option<usize>)]) -> bool {
    if n <= 1 {
        return true;
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, d) in links {
        if let (Some(a), Some(d)) = (a, d) {
            adj[a].push(d);
            adj[d].push(a);
        }
    }
    let _ = ix;
    let mut visited = vec![false; n];
    let mut stack = vec![0];
    visited[0] = true;
    while let Some(r) = stack.pop() {
        for &o in &adj[r] {
            if !visited[o] {
                visited[o] = true;
                stack.push(o);
            }
        }
    }
    visited.into_iter().all(|v| v)
}
