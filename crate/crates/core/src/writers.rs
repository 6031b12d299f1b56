//! Deterministic run outputs: a line-delimited structured event log and a
//! trajectory CSV.
//!
//! Numbers are written in shortest round-trip form, so identical runs produce
//! byte-identical files.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::constitutive::FrameEnergy;
use crate::engine::{ImpactEvent, RunResult};
use crate::error::Result;

#[derive(Serialize)]
struct HeaderRecord<'a> {
    record: &'static str,
    coords: &'a [String],
    energy_frames: &'a [String],
}

#[derive(Serialize)]
struct PointRecord {
    t: f64,
    x: Vec<f64>,
}

#[derive(Serialize)]
struct EventRecord<'a> {
    record: &'static str,
    index: usize,
    time: f64,
    point: PointRecord,
    p_left: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    i_act: Option<Vec<f64>>,
    i_react: Vec<f64>,
    p_right: Vec<f64>,
    law: &'a str,
    constraints: &'a [String],
    broken: Vec<&'a str>,
    vperp_norm: f64,
    energy: &'a BTreeMap<String, FrameEnergy>,
    commutation: &'a BTreeMap<String, f64>,
}

/// Write the event log: one header record, then one record per event.
pub fn write_event_log<W: Write>(
    events: &[ImpactEvent],
    coords: &[String],
    energy_frames: &[String],
    out: &mut W,
) -> Result<()> {
    let header = HeaderRecord {
        record: "header",
        coords,
        energy_frames,
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("serializable"))?;
    for ev in events {
        let rec = EventRecord {
            record: "event",
            index: ev.index,
            time: ev.time,
            point: PointRecord {
                t: ev.point.t,
                x: ev.point.x.iter().copied().collect(),
            },
            p_left: ev.p_left.spatial.iter().copied().collect(),
            i_act: ev
                .i_act
                .as_ref()
                .map(|v| v.components.iter().copied().collect()),
            i_react: ev.i_react.components.iter().copied().collect(),
            p_right: ev.p_right.spatial.iter().copied().collect(),
            law: &ev.law,
            constraints: &ev.constraints,
            broken: ev.broken.iter().map(|s| s.as_str()).collect(),
            vperp_norm: ev.vperp_norm,
            energy: &ev.energy,
            commutation: &ev.commutation,
        };
        writeln!(out, "{}", serde_json::to_string(&rec).expect("serializable"))?;
    }
    Ok(())
}

/// Write the trajectory as CSV with header `t,<coords>,<dotted coords>`.
pub fn write_trajectory_csv<W: Write>(
    result: &RunResult,
    coords: &[String],
    out: &mut W,
) -> Result<()> {
    write!(out, "t")?;
    for c in coords {
        write!(out, ",{c}")?;
    }
    for c in coords {
        write!(out, ",{c}dot")?;
    }
    writeln!(out)?;
    for s in &result.samples {
        write!(out, "{}", s.t)?;
        for v in s.x.iter() {
            write!(out, ",{v}")?;
        }
        for v in s.xdot.iter() {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{EndReason, RunResult, Sample};
    use nalgebra::DVector;

    #[test]
    fn zero_event_log_is_header_only() {
        let coords = vec!["x".to_string()];
        let mut buf = Vec::new();
        write_event_log(&[], &coords, &[], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1);
        assert!(lines[0].contains("\"record\":\"header\""));
    }

    #[test]
    fn trajectory_header_lists_coords_then_dots() {
        let coords = vec!["x".to_string(), "th".to_string()];
        let result = RunResult {
            samples: vec![Sample {
                t: 0.5,
                x: DVector::from_row_slice(&[1.0, 2.5]),
                xdot: DVector::from_row_slice(&[-1.0, 0.125]),
            }],
            events: vec![],
            end: EndReason::TimeReached,
            max_drift: 0.0,
            min_margin: f64::INFINITY,
        };
        let mut buf = Vec::new();
        write_trajectory_csv(&result, &coords, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,x,th,xdot,thdot\n0.5,1,2.5,-1,0.125\n");
    }
}
