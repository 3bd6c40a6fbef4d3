//! `kind,location,direction,value,sigma,source,timestamp`
//!
//! Flow locations are written `a-b` with `a < b` and direction `fwd`
//! (measured at `a`) or `rev` (measured at `b`). Converter rows carry the
//! converter id and direction `ac` or `dc`. Node rows leave direction empty.

use std::io::{Read, Write};

use serde::Deserialize;

use super::{ConverterSide, Measurement, MeasurementKind, MeasurementSet, Source};
use crate::error::{Error, Result};
use crate::grid::{ConverterId, NodeId};

pub(super) fn location(kind: &MeasurementKind) -> (String, &'static str) {
    use MeasurementKind::*;
    let flow = |from: NodeId, to: NodeId| {
        if from <= to {
            (format!("{from}-{to}"), "fwd")
        } else {
            (format!("{to}-{from}"), "rev")
        }
    };
    match *kind {
        AcPFlow { from, to } | AcQFlow { from, to } | DcPFlow { from, to } => flow(from, to),
        AcPInj(n) | AcQInj(n) | AcVMag(n) | DcPInj(n) | DcVMag(n) | ZeroPInj(n) | ZeroQInj(n) => {
            (n.to_string(), "")
        }
        ConvP { converter, side } => (
            converter.to_string(),
            if side == ConverterSide::Ac { "ac" } else { "dc" },
        ),
        ConvQ { converter } => (converter.to_string(), "ac"),
    }
}

#[derive(Deserialize)]
struct Row {
    kind: String,
    location: String,
    direction: String,
    value: f64,
    sigma: f64,
    source: String,
    timestamp: f64,
}

fn parse_err(msg: String) -> Error {
    Error::Parse(msg)
}

pub(super) fn parse_kind(kind: &str, location: &str, direction: &str) -> Result<MeasurementKind> {
    use MeasurementKind::*;
    let id = |s: &str| -> Result<u32> {
        s.trim()
            .parse()
            .map_err(|_| parse_err(format!("bad id '{s}' in location '{location}'")))
    };
    let pair = || -> Result<(NodeId, NodeId)> {
        let (a, b) = location
            .split_once('-')
            .ok_or_else(|| parse_err(format!("flow location '{location}' is not a-b")))?;
        let (a, b) = (NodeId(id(a)?), NodeId(id(b)?));
        match direction {
            "fwd" => Ok((a, b)),
            "rev" => Ok((b, a)),
            d => Err(parse_err(format!("flow direction '{d}' is not fwd/rev"))),
        }
    };
    let node = || -> Result<NodeId> { Ok(NodeId(id(location)?)) };
    let side = || -> Result<ConverterSide> {
        match direction {
            "ac" => Ok(ConverterSide::Ac),
            "dc" => Ok(ConverterSide::Dc),
            d => Err(parse_err(format!("converter side '{d}' is not ac/dc"))),
        }
    };
    Ok(match kind {
        "ac_p_flow" => {
            let (from, to) = pair()?;
            AcPFlow { from, to }
        }
        "ac_q_flow" => {
            let (from, to) = pair()?;
            AcQFlow { from, to }
        }
        "dc_p_flow" => {
            let (from, to) = pair()?;
            DcPFlow { from, to }
        }
        "ac_p_inj" => AcPInj(node()?),
        "ac_q_inj" => AcQInj(node()?),
        "ac_v_mag" => AcVMag(node()?),
        "dc_p_inj" => DcPInj(node()?),
        "dc_v_mag" => DcVMag(node()?),
        "zero_p_inj" => ZeroPInj(node()?),
        "zero_q_inj" => ZeroQInj(node()?),
        "conv_p" => ConvP {
            converter: ConverterId(id(location)?),
            side: side()?,
        },
        "conv_q" => {
            if side()? != ConverterSide::Ac {
                return Err(parse_err("conv_q is only defined on the ac side".into()));
            }
            ConvQ {
                converter: ConverterId(id(location)?),
            }
        }
        k => return Err(parse_err(format!("unknown measurement kind '{k}'"))),
    })
}

fn parse_source(s: &str) -> Result<Source> {
    Ok(match s {
        "scada" => Source::Scada,
        "smart_meter" => Source::SmartMeter,
        "pseudo" => Source::Pseudo,
        "dnn" => Source::Dnn,
        "virtual_zero" => Source::VirtualZero,
        s => return Err(parse_err(format!("unknown source '{s}'"))),
    })
}

pub(super) fn read<R: Read>(reader: R) -> Result<MeasurementSet> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: Row = row?;
        let kind = parse_kind(&row.kind, &row.location, &row.direction)?;
        let m = Measurement::new(kind, row.value, row.sigma, parse_source(&row.source)?, row.timestamp);
        m.validate()?;
        out.push(m);
    }
    Ok(MeasurementSet::new(out))
}

pub(super) fn write<W: Write>(set: &MeasurementSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "kind",
        "location",
        "direction",
        "value",
        "sigma",
        "source",
        "timestamp",
    ])?;
    for m in &set.measurements {
        let (loc, dir) = location(&m.kind);
        w.write_record([
            m.kind.name(),
            &loc,
            dir,
            &m.value.to_string(),
            &m.sigma.to_string(),
            m.source.name(),
            &m.timestamp.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_all_kinds() {
        use MeasurementKind::*;
        let kinds = [
            AcPFlow { from: NodeId(2), to: NodeId(1) },
            AcQFlow { from: NodeId(1), to: NodeId(2) },
            AcPInj(NodeId(3)),
            AcQInj(NodeId(3)),
            AcVMag(NodeId(1)),
            DcPFlow { from: NodeId(4), to: NodeId(3) },
            DcPInj(NodeId(4)),
            DcVMag(NodeId(4)),
            ConvP { converter: ConverterId(1), side: ConverterSide::Ac },
            ConvP { converter: ConverterId(1), side: ConverterSide::Dc },
            ConvQ { converter: ConverterId(1) },
        ];
        let mut set: MeasurementSet = kinds
            .iter()
            .enumerate()
            .map(|(k, &kind)| Measurement::new(kind, 0.1 * k as f64 + 1e-17, 0.01 / 3.0, Source::Scada, 900.0))
            .collect();
        set.push(Measurement::new(ZeroPInj(NodeId(9)), 0.0, 0.0, Source::VirtualZero, 0.0));
        set.push(Measurement::new(ZeroQInj(NodeId(9)), 0.0, 0.0, Source::VirtualZero, 0.0));
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("kind,location,direction,value,sigma,source,timestamp\n"));
        assert!(text.contains("ac_p_flow,1-2,rev,"));
        let back = MeasurementSet::read_csv(&buf[..]).unwrap();
        assert_eq!(back, set);
        let mut again = Vec::new();
        back.write_csv(&mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn rejects_unknown_kind() {
        let text = "kind,location,direction,value,sigma,source,timestamp\nac_x,1,,1.0,0.1,scada,0\n";
        assert!(matches!(MeasurementSet::read_csv(text.as_bytes()), Err(Error::Parse(_))));
    }

    #[test]
    fn rejects_non_positive_sigma() {
        let text = "kind,location,direction,value,sigma,source,timestamp\nac_v_mag,1,,1.0,0,scada,0\n";
        assert!(MeasurementSet::read_csv(text.as_bytes()).unwrap_err().is_validation());
    }
}
