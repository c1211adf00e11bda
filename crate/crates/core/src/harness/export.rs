//! CSV time series and JSON-lines events.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::harness::metrics::Metrics;
use crate::harness::trace::Trace;
use crate::{Result, Round, UavId};

#[derive(Serialize)]
struct Row {
    round: Round,
    uav: UavId,
    ref_x: f64,
    ref_y: f64,
    ref_z: f64,
    act_x: f64,
    act_y: f64,
    act_z: f64,
    vel: f64,
    target_dist: f64,
}

/// One row per round and UAV, positions at the start of the round.
pub fn write_positions_csv<W: Write>(trace: &Trace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in trace.rounds.iter().filter(|r| !r.uavs.is_empty()) {
        for (i, u) in r.uavs.iter().enumerate() {
            let (p, a) = (u.reference[0], u.actual[0]);
            w.serialize(Row {
                round: r.round,
                uav: i,
                ref_x: p.x,
                ref_y: p.y,
                ref_z: p.z,
                act_x: a.x,
                act_y: a.y,
                act_z: a.z,
                vel: u.speed,
                target_dist: (p - r.targets[i]).norm(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_events_jsonl<W: Write>(trace: &Trace, mut out: W) -> Result<()> {
    for e in trace.events() {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct MetricsRow {
    round: Round,
    dmin: f64,
    dmax: f64,
    min_scaled_distance: f64,
}

pub fn write_metrics_csv<W: Write>(trace: &Trace, metrics: &Metrics, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let rounds = trace.rounds.iter().filter(|r| !r.uavs.is_empty());
    for (i, r) in rounds.enumerate() {
        w.serialize(MetricsRow {
            round: r.round,
            dmin: metrics.min_target_distance[i],
            dmax: metrics.max_target_distance[i],
            min_scaled_distance: metrics.min_pairwise_distance[i],
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Write `positions.csv`, `metrics.csv`, `events.jsonl` and `trace.json`
/// into `dir`, creating it if needed.
pub fn export_all(trace: &Trace, metrics: &Metrics, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let open = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
        Ok(std::io::BufWriter::new(std::fs::File::create(dir.join(name))?))
    };
    write_positions_csv(trace, open("positions.csv")?)?;
    write_metrics_csv(trace, metrics, open("metrics.csv")?)?;
    write_events_jsonl(trace, open("events.jsonl")?)?;
    let mut f = open("trace.json")?;
    f.write_all(&trace.to_json()?)?;
    f.flush()?;
    Ok(())
}
