//! Measurements: kinds, the nonlinear and linearized measurement functions,
//! noise synthesis on the SCADA and smart-meter timescales, and gross-error
//! injection.

mod csvio;
mod functions;
mod model;
mod simulate;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ConverterId, GridModel, NodeId, NodeKind};

pub use functions::{eval_h_linear, eval_h_nonlinear, linear_row, nonlinear_partials, Row, Var};
pub use model::{build_linear_model, build_region_h, linear_target, nonlinear_eval, LinearModel, StateLayout};
pub use simulate::{
    exact_measurements, inject_bad_data, linear_consistent_state, simulate_measurements, BadDataCase, Placement,
    ScheduleConfig, TargetSelector,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConverterSide {
    Ac,
    Dc,
}

/// What a measurement observes and where.
///
/// Flows are measured at `from`, towards `to`. Converter active power on the
/// AC side is the power injected at the aux node towards the AC node; on the
/// DC side it is the power drawn from the DC terminal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    AcPFlow { from: NodeId, to: NodeId },
    AcQFlow { from: NodeId, to: NodeId },
    AcPInj(NodeId),
    AcQInj(NodeId),
    AcVMag(NodeId),
    DcPFlow { from: NodeId, to: NodeId },
    DcPInj(NodeId),
    DcVMag(NodeId),
    ConvP { converter: ConverterId, side: ConverterSide },
    ConvQ { converter: ConverterId },
    ZeroPInj(NodeId),
    ZeroQInj(NodeId),
}

impl MeasurementKind {
    /// Lower-case name used in CSV files.
    pub fn name(&self) -> &'static str {
        use MeasurementKind::*;
        match self {
            AcPFlow { .. } => "ac_p_flow",
            AcQFlow { .. } => "ac_q_flow",
            AcPInj(_) => "ac_p_inj",
            AcQInj(_) => "ac_q_inj",
            AcVMag(_) => "ac_v_mag",
            DcPFlow { .. } => "dc_p_flow",
            DcPInj(_) => "dc_p_inj",
            DcVMag(_) => "dc_v_mag",
            ConvP { .. } => "conv_p",
            ConvQ { .. } => "conv_q",
            ZeroPInj(_) => "zero_p_inj",
            ZeroQInj(_) => "zero_q_inj",
        }
    }

    pub fn is_injection(&self) -> bool {
        use MeasurementKind::*;
        matches!(
            self,
            AcPInj(_) | AcQInj(_) | DcPInj(_) | ZeroPInj(_) | ZeroQInj(_)
        )
    }

    /// Index of the region holding the measured element, after checking
    /// that the location matches the kind.
    pub fn region(&self, grid: &GridModel) -> Result<usize> {
        use MeasurementKind::*;
        let node = |id: NodeId, kind: Option<NodeKind>| -> Result<usize> {
            let i = grid.node_index_or_err(id)?;
            if let Some(k) = kind {
                if grid.nodes()[i].kind != k {
                    return Err(Error::Validation(format!(
                        "{} expects a {k:?} node, node {id} is {:?}",
                        self.name(),
                        grid.nodes()[i].kind
                    )));
                }
            }
            Ok(i)
        };
        let conv = |id: ConverterId| {
            grid.converter_index(id)
                .ok_or_else(|| Error::Validation(format!("unknown converter {id}")))
        };
        match *self {
            AcPFlow { from, to } | AcQFlow { from, to } => {
                let (a, b) = (node(from, Some(NodeKind::Ac))?, node(to, Some(NodeKind::Ac))?);
                grid.find_ac_branch(a, b)
                    .ok_or_else(|| Error::Validation(format!("no AC branch {from}-{to}")))?;
                Ok(grid.region_of(a))
            }
            DcPFlow { from, to } => {
                let (a, b) = (node(from, Some(NodeKind::Dc))?, node(to, Some(NodeKind::Dc))?);
                grid.find_dc_branch(a, b)
                    .ok_or_else(|| Error::Validation(format!("no DC branch {from}-{to}")))?;
                Ok(grid.region_of(a))
            }
            AcPInj(n) | AcQInj(n) | AcVMag(n) | ZeroQInj(n) => {
                Ok(grid.region_of(node(n, Some(NodeKind::Ac))?))
            }
            DcPInj(n) | DcVMag(n) => Ok(grid.region_of(node(n, Some(NodeKind::Dc))?)),
            ZeroPInj(n) => Ok(grid.region_of(node(n, None)?)),
            ConvP { converter, side } => {
                let (ac, dc) = grid.converter_regions(conv(converter)?);
                Ok(if side == ConverterSide::Ac { ac } else { dc })
            }
            ConvQ { converter } => Ok(grid.converter_regions(conv(converter)?).0),
        }
    }
}

impl fmt::Display for MeasurementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (loc, dir) = csvio::location(self);
        if dir.is_empty() {
            write!(f, "{}({loc})", self.name())
        } else {
            write!(f, "{}({loc} {dir})", self.name())
        }
    }
}

/// Parses the [`Display`](fmt::Display) form, e.g. `ac_p_flow(1-2 fwd)`.
impl std::str::FromStr for MeasurementKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad measurement kind '{s}'"));
        let (name, rest) = s.trim().split_once('(').ok_or_else(bad)?;
        let inner = rest.strip_suffix(')').ok_or_else(bad)?;
        let (loc, dir) = inner.split_once(' ').unwrap_or((inner, ""));
        csvio::parse_kind(name, loc, dir)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Scada,
    SmartMeter,
    Pseudo,
    Dnn,
    VirtualZero,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Scada => "scada",
            Source::SmartMeter => "smart_meter",
            Source::Pseudo => "pseudo",
            Source::Dnn => "dnn",
            Source::VirtualZero => "virtual_zero",
        }
    }

    /// Rows from a meter, as opposed to generated or structural ones. Only
    /// these are candidates for bad-data removal.
    pub fn is_metered(self) -> bool {
        matches!(self, Source::Scada | Source::SmartMeter)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measurement {
    pub kind: MeasurementKind,
    pub value: f64,
    /// Standard deviation; zero on exact virtual measurements.
    pub sigma: f64,
    pub source: Source,
    /// Seconds since scenario start.
    pub timestamp: f64,
    /// Audit flag set by [`inject_bad_data`]. Estimators never read it and
    /// it is not written to CSV.
    pub corrupted: bool,
}

impl Measurement {
    pub fn new(kind: MeasurementKind, value: f64, sigma: f64, source: Source, timestamp: f64) -> Self {
        Self {
            kind,
            value,
            sigma,
            source,
            timestamp,
            corrupted: false,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.source == Source::VirtualZero
    }

    pub fn validate(&self) -> Result<()> {
        if !self.value.is_finite() {
            return Err(Error::Validation(format!("{}: non-finite value", self.kind)));
        }
        if self.is_exact() {
            if !matches!(self.kind, MeasurementKind::ZeroPInj(_) | MeasurementKind::ZeroQInj(_)) {
                return Err(Error::Validation(format!(
                    "{}: only zero-injection rows may be virtual",
                    self.kind
                )));
            }
        } else if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Validation(format!("{}: sigma must be positive", self.kind)));
        }
        Ok(())
    }
}

/// Ordered measurements; order is preserved through every transformation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeasurementSet {
    pub measurements: Vec<Measurement>,
}

impl MeasurementSet {
    pub fn new(measurements: Vec<Measurement>) -> Self {
        Self { measurements }
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Measurement> {
        self.measurements.iter()
    }

    pub fn push(&mut self, m: Measurement) {
        self.measurements.push(m);
    }

    /// Validates every entry against the grid.
    pub fn validate(&self, grid: &GridModel) -> Result<()> {
        for m in &self.measurements {
            m.validate()?;
            m.kind.region(grid)?;
        }
        Ok(())
    }

    /// Measurement indices per region; the lists partition the set.
    pub fn by_region(&self, grid: &GridModel) -> Result<Vec<Vec<usize>>> {
        let mut out = vec![Vec::new(); grid.regions().len()];
        for (k, m) in self.measurements.iter().enumerate() {
            out[m.kind.region(grid)?].push(k);
        }
        Ok(out)
    }

    /// The measurements of one region, in set order.
    pub fn region_subset(&self, grid: &GridModel, region: usize) -> Result<MeasurementSet> {
        let mut out = Vec::new();
        for m in &self.measurements {
            if m.kind.region(grid)? == region {
                out.push(*m);
            }
        }
        Ok(MeasurementSet::new(out))
    }

    pub fn find(&self, kind: &MeasurementKind) -> Option<usize> {
        self.measurements.iter().position(|m| &m.kind == kind)
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        csvio::read(reader)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        csvio::write(self, writer)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

impl FromIterator<Measurement> for MeasurementSet {
    fn from_iter<T: IntoIterator<Item = Measurement>>(iter: T) -> Self {
        Self::new(iter.into_iter().collect())
    }
}
